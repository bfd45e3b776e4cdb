#include <algorithm>
#include <cmath>
#include <numeric>

#include "searchrec/catalog.hpp"
#include "searchrec/rng.hpp"

namespace searchrec {
namespace {

// Raw-unit ranges the normalized log values are mapped back onto.
constexpr double kPriceLo = 4000.0, kPriceHi = 80000.0;
constexpr double kMileageLo = 500.0, kMileageHi = 200000.0;
constexpr double kValueLo = 4000.0, kValueHi = 80000.0;

double from_unit_log(double z, double lo, double hi) {
  return std::exp(std::log(lo) + z * (std::log(hi) - std::log(lo)));
}

// Draws `n` values with sample mean exactly `mean` (before clamping).
Vector centered_draws(Rng& rng, std::size_t n, double mean, double sd) {
  Vector eps(n);
  for (auto& e : eps) e = rng.normal();
  const double m = n ? std::accumulate(eps.begin(), eps.end(), 0.0) / static_cast<double>(n) : 0.0;
  Vector out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = std::clamp(mean + sd * (eps[i] - m), 0.001, 0.999);
  return out;
}

}  // namespace

const std::array<ReferenceSegment, 8>& reference_segments() {
  // Category shares (%), normalized log means and segment sizes of the
  // eight-cluster solution; rows are re-normalized when drawn.
  static const std::array<ReferenceSegment, 8> segments = {{
      {{15, 18, 1, 6, 52, 7, 0, 0}, {100, 0, 0}, {100, 0, 0, 0, 0}, 0.0, {18, 28, 38, 15}, 0.48, 0.86, 0.42, 725},
      {{3, 4, 20, 17, 51, 0, 4, 2}, {100, 0, 0}, {0, 0, 0, 100, 0}, 0.0, {17, 48, 28, 8}, 0.38, 0.85, 0.34, 1270},
      {{10, 28, 26, 7, 25, 2, 0, 2}, {0, 0, 100}, {31, 11, 4, 35, 18}, 0.0, {19, 42, 27, 12}, 0.44, 0.83, 0.39, 445},
      {{8, 12, 14, 13, 51, 0, 1, 2}, {100, 0, 0}, {0, 0, 0, 0, 100}, 0.0, {18, 37, 34, 11}, 0.40, 0.85, 0.38, 380},
      {{1, 4, 34, 16, 41, 0, 0, 4}, {0, 100, 0}, {0, 19, 1, 64, 16}, 0.0, {14, 60, 22, 4}, 0.41, 0.83, 0.36, 427},
      {{2, 7, 3, 59, 24, 0, 1, 4}, {100, 0, 0}, {0, 100, 0, 0, 0}, 0.0, {16, 38, 35, 12}, 0.51, 0.86, 0.45, 445},
      {{1, 0, 1, 78, 0, 19, 0, 1}, {100, 0, 0}, {0, 0, 100, 0, 0}, 0.0, {21, 47, 26, 6}, 0.54, 0.85, 0.47, 161},
      {{6, 10, 15, 23, 40, 1, 2, 2}, {79, 11, 11}, {18, 17, 8, 41, 17}, 1.0, {0, 45, 42, 13}, 0.40, 0.88, 0.36, 287},
  }};
  return segments;
}

SyntheticCatalog generate_reference_catalog(std::uint64_t seed, double scale) {
  require(scale > 0.0, "generate_reference_catalog: scale must be positive");
  const auto& segs = reference_segments();
  SyntheticCatalog out;
  out.clusters = static_cast<int>(segs.size());
  std::size_t largest = 0;
  for (std::size_t c = 0; c < segs.size(); ++c)
    if (segs[c].vehicles > segs[largest].vehicles) largest = c;

  for (std::size_t c = 0; c < segs.size(); ++c) {
    const auto& s = segs[c];
    Rng rng(seed, "catalog.segment", c);
    const auto n = static_cast<std::size_t>(std::max(2.0, std::round(s.vehicles * scale)));
    Vector zp = centered_draws(rng, n, s.log_price, 0.06);
    Vector zm = centered_draws(rng, n, s.log_mileage, 0.035);
    Vector zg = centered_draws(rng, n, s.log_margin, 0.06);
    if (c == largest) {
      // Anchor both ends of every continuous range so min-max maps back onto z.
      zp[0] = zm[0] = zg[0] = 0.0;
      zp[1] = zm[1] = zg[1] = 1.0;
    }
    for (std::size_t i = 0; i < n; ++i) {
      VehicleRecord v;
      v.vehicle_id = "V" + std::to_string(c + 1) + "-" + std::to_string(i + 1);
      v.body_style = std::string(kBodyStyles[rng.categorical(s.body)]);
      v.transmission = std::string(kTransmissions[rng.categorical(s.transmission)]);
      v.drivetrain = std::string(kDrivetrains[rng.categorical(s.drivetrain)]);
      v.num_accidents = rng.uniform() < s.accident_share ? 1 + static_cast<int>(rng.below(2)) : 0;
      const auto owners = rng.categorical(s.owners);
      v.num_owners = owners < 3 ? static_cast<int>(owners) : 3 + static_cast<int>(rng.below(2));
      v.price = from_unit_log(zp[i], kPriceLo, kPriceHi);
      v.mileage = from_unit_log(zm[i], kMileageLo, kMileageHi);
      v.market_value = from_unit_log(zg[i], kValueLo, kValueHi);
      v.year = 2006 + static_cast<int>(rng.below(11));
      out.catalog.records.push_back(std::move(v));
      out.true_cluster.push_back(static_cast<int>(c));
    }
  }
  return out;
}

SyntheticCatalog generate_planted_catalog(int clusters, int per_cluster, std::uint64_t seed, double spread) {
  require(clusters >= 1 && clusters <= 8, "generate_planted_catalog: 1..8 clusters supported");
  require(per_cluster >= 2, "generate_planted_catalog: need at least 2 vehicles per cluster");
  SyntheticCatalog out;
  out.clusters = clusters;
  Rng centers(seed, "planted.centers");
  for (int c = 0; c < clusters; ++c) {
    Rng rng(seed, "planted.cluster", static_cast<std::uint64_t>(c));
    const double cp = 0.1 + 0.8 * (clusters > 1 ? static_cast<double>(c) / (clusters - 1) : 0.5);
    const double cm = 0.2 + 0.6 * centers.uniform();
    const double cg = 0.1 + 0.8 * (clusters > 1 ? static_cast<double>(clusters - 1 - c) / (clusters - 1) : 0.5);
    for (int i = 0; i < per_cluster; ++i) {
      VehicleRecord v;
      v.vehicle_id = "P" + std::to_string(c + 1) + "-" + std::to_string(i + 1);
      v.body_style = std::string(kBodyStyles[c % 8]);
      v.transmission = std::string(kTransmissions[c % 3]);
      v.drivetrain = std::string(kDrivetrains[c % 5]);
      v.num_accidents = c % 2;
      v.num_owners = c % 4;
      auto jitter = [&](double center) { return std::clamp(center + spread * rng.normal(), 0.0, 1.0); };
      v.price = from_unit_log(jitter(cp), kPriceLo, kPriceHi);
      v.mileage = from_unit_log(jitter(cm), kMileageLo, kMileageHi);
      v.market_value = from_unit_log(jitter(cg), kValueLo, kValueHi);
      out.catalog.records.push_back(std::move(v));
      out.true_cluster.push_back(c);
    }
  }
  return out;
}

}  // namespace searchrec
