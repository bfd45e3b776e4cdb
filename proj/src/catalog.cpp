#include "searchrec/catalog.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <nlohmann/json.hpp>
#include <numeric>

#include "csv.hpp"
#include "searchrec/rng.hpp"

namespace searchrec {
namespace {

const std::vector<std::string> kFields = {"vehicle_id", "body_style", "transmission",
                                          "drivetrain", "num_accidents", "num_owners",
                                          "price", "mileage", "market_value", "year"};

template <std::size_t N>
int level_index(const std::array<std::string_view, N>& levels, std::string_view value) {
  for (std::size_t i = 0; i < N; ++i)
    if (levels[i] == value) return static_cast<int>(i);
  return -1;
}

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t");
  return std::string(s.substr(b, e - b + 1));
}

double parse_real(const std::string& s, const std::string& field, std::size_t row) {
  double v = 0.0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size() || !std::isfinite(v))
    throw ValidationError("catalog row " + std::to_string(row) + ": unparseable " + field + " '" +
                          s + "'");
  return v;
}

int parse_count(const std::string& s, const std::string& field, std::size_t row) {
  int v = 0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size() || v < 0)
    throw ValidationError("catalog row " + std::to_string(row) + ": " + field +
                          " must be a nonnegative integer, got '" + s + "'");
  return v;
}

double block_weight(CategoryWeighting w, int levels) {
  switch (w) {
    case CategoryWeighting::inverse_levels: return 1.0 / levels;
    case CategoryWeighting::levels: return static_cast<double>(levels);
    case CategoryWeighting::unit: return 1.0;
  }
  return 1.0;
}

}  // namespace

CatalogSchema CatalogSchema::defaults() { return {}; }

CatalogSchema CatalogSchema::from_json_file(const std::filesystem::path& path) {
  CatalogSchema schema;
  const auto j = nlohmann::json::parse(csv::read_file(path));
  const auto& cols = j.contains("columns") ? j.at("columns") : j;
  for (auto it = cols.begin(); it != cols.end(); ++it) {
    if (std::find(kFields.begin(), kFields.end(), it.key()) == kFields.end())
      throw ValidationError("schema: unknown field '" + it.key() + "'");
    schema.columns[it.key()] = it.value().get<std::string>();
  }
  return schema;
}

std::string CatalogSchema::column(const std::string& field) const {
  auto it = columns.find(field);
  return it == columns.end() ? field : it->second;
}

VehicleCatalog parse_catalog(std::string_view csv_text, const CatalogSchema& schema) {
  const auto rows = csv::parse(csv_text);
  if (rows.empty()) throw ValidationError("catalog: missing header row");
  const auto& header = rows.front();
  std::map<std::string, std::size_t> index;
  for (const auto& field : kFields) {
    const auto name = schema.column(field);
    auto it = std::find_if(header.begin(), header.end(),
                           [&](const std::string& h) { return trim(h) == name; });
    if (it != header.end()) {
      index[field] = static_cast<std::size_t>(it - header.begin());
    } else if (field != "year") {
      throw ValidationError("catalog: missing column '" + name + "' (field " + field + ")");
    }
  }

  VehicleCatalog catalog;
  catalog.records.reserve(rows.size() - 1);
  for (std::size_t r = 1; r < rows.size(); ++r) {
    const auto& row = rows[r];
    auto cell = [&](const std::string& field) {
      const auto i = index.at(field);
      if (i >= row.size())
        throw ValidationError("catalog row " + std::to_string(r) + ": missing value for " + field);
      return trim(row[i]);
    };
    VehicleRecord v;
    v.vehicle_id = cell("vehicle_id");
    if (v.vehicle_id.empty()) throw ValidationError("catalog row " + std::to_string(r) + ": empty vehicle_id");
    v.body_style = cell("body_style");
    v.transmission = cell("transmission");
    v.drivetrain = cell("drivetrain");
    if (level_index(kBodyStyles, v.body_style) < 0)
      throw ValidationError("catalog row " + std::to_string(r) + ": unknown body_style '" + v.body_style + "'");
    if (level_index(kTransmissions, v.transmission) < 0)
      throw ValidationError("catalog row " + std::to_string(r) + ": unknown transmission '" + v.transmission + "'");
    if (level_index(kDrivetrains, v.drivetrain) < 0)
      throw ValidationError("catalog row " + std::to_string(r) + ": unknown drivetrain '" + v.drivetrain + "'");
    v.num_accidents = parse_count(cell("num_accidents"), "num_accidents", r);
    v.num_owners = parse_count(cell("num_owners"), "num_owners", r);
    v.price = parse_real(cell("price"), "price", r);
    v.mileage = parse_real(cell("mileage"), "mileage", r);
    v.market_value = parse_real(cell("market_value"), "market_value", r);
    if (v.price <= 0.0) throw ValidationError("catalog row " + std::to_string(r) + ": price must be > 0");
    if (v.mileage <= 0.0) throw ValidationError("catalog row " + std::to_string(r) + ": mileage must be > 0");
    if (v.market_value <= 0.0)
      throw ValidationError("catalog row " + std::to_string(r) + ": market_value must be > 0");
    if (index.count("year")) {
      const auto y = cell("year");
      if (!y.empty()) v.year = parse_count(y, "year", r);
    }
    catalog.records.push_back(std::move(v));
  }
  return catalog;
}

VehicleCatalog load_catalog(const std::filesystem::path& path, const CatalogSchema& schema) {
  return parse_catalog(csv::read_file(path), schema);
}

void write_catalog(const std::filesystem::path& path, const VehicleCatalog& catalog) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ValidationError("cannot write " + path.string());
  out << "vehicle_id,body_style,transmission,drivetrain,num_accidents,num_owners,price,mileage,"
         "market_value,year\n";
  for (const auto& v : catalog.records) {
    out << csv::escape(v.vehicle_id) << ',' << csv::escape(v.body_style) << ','
        << csv::escape(v.transmission) << ',' << csv::escape(v.drivetrain) << ',' << v.num_accidents
        << ',' << v.num_owners << ',' << csv::format_double(v.price) << ','
        << csv::format_double(v.mileage) << ',' << csv::format_double(v.market_value) << ','
        << (v.year ? std::to_string(*v.year) : std::string()) << '\n';
  }
}

FeatureLayout FeatureLayout::make(CategoryWeighting weighting) {
  FeatureLayout layout;
  auto add = [&](std::string name, std::size_t width, double weight) {
    layout.blocks.push_back({std::move(name), layout.dimension, width, weight});
    layout.dimension += width;
  };
  add("body_style", kBodyStyles.size(), block_weight(weighting, kBodyStyles.size()));
  add("transmission", kTransmissions.size(), block_weight(weighting, kTransmissions.size()));
  add("drivetrain", kDrivetrains.size(), block_weight(weighting, kDrivetrains.size()));
  add("accidents", kAccidentLevels, block_weight(weighting, kAccidentLevels));
  add("owners", kOwnerLevels, block_weight(weighting, kOwnerLevels));
  add("log_price", 1, 0.0);
  add("log_mileage", 1, 0.0);
  add("log_margin", 1, 0.0);
  return layout;
}

const FeatureLayout::Block& FeatureLayout::block(std::string_view name) const {
  for (const auto& b : blocks)
    if (b.name == name) return b;
  throw ValidationError("no feature block named " + std::string(name));
}

Vector min_max_log(std::span<const double> values) {
  Vector logs(values.size());
  double lo = std::numeric_limits<double>::infinity();
  double hi = -lo;
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (!(values[i] > 0.0)) throw ValidationError("log normalization needs strictly positive values");
    logs[i] = std::log(values[i]);
    lo = std::min(lo, logs[i]);
    hi = std::max(hi, logs[i]);
  }
  const double range = hi - lo;
  for (double& x : logs) x = range > 0.0 ? (x - lo) / range : 0.5;
  return logs;
}

std::vector<NormalizedVehicle> normalize(const VehicleCatalog& catalog, const NormalizationSpec& spec) {
  require(!catalog.empty(), "normalize: empty catalog");
  require(spec.margin_rate > 0.0 && spec.margin_rate < 1.0, "normalize: margin rate must be in (0,1)");
  const auto layout = FeatureLayout::make(spec.weighting);
  const std::size_t n = catalog.size();
  Vector price(n), mileage(n), margin(n);
  for (std::size_t i = 0; i < n; ++i) {
    price[i] = catalog.records[i].price;
    mileage[i] = catalog.records[i].mileage;
    margin[i] = spec.margin_rate * catalog.records[i].market_value;
  }
  const Vector np = min_max_log(price), nm = min_max_log(mileage), ng = min_max_log(margin);

  std::vector<NormalizedVehicle> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto& v = catalog.records[i];
    auto& o = out[i];
    o.vehicle_id = v.vehicle_id;
    o.margin = margin[i];
    o.features.assign(layout.dimension, 0.0);
    auto set_level = [&](std::string_view block, int level) {
      const auto& b = layout.block(block);
      o.features[b.offset + static_cast<std::size_t>(level)] = b.weight;
    };
    set_level("body_style", level_index(kBodyStyles, v.body_style));
    set_level("transmission", level_index(kTransmissions, v.transmission));
    set_level("drivetrain", level_index(kDrivetrains, v.drivetrain));
    set_level("accidents", std::min(v.num_accidents, kAccidentLevels - 1));
    set_level("owners", std::min(v.num_owners, kOwnerLevels - 1));
    o.features[layout.block("log_price").offset] = np[i];
    o.features[layout.block("log_mileage").offset] = nm[i];
    o.features[layout.block("log_margin").offset] = ng[i];
  }
  return out;
}

Matrix feature_matrix(const std::vector<NormalizedVehicle>& vehicles) {
  Matrix m;
  m.reserve(vehicles.size());
  for (const auto& v : vehicles) m.push_back(v.features);
  return m;
}

void write_normalized_csv(const std::filesystem::path& path,
                          const std::vector<NormalizedVehicle>& vehicles, CategoryWeighting weighting) {
  const auto layout = FeatureLayout::make(weighting);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ValidationError("cannot write " + path.string());
  out << "vehicle_id";
  for (const auto& b : layout.blocks) {
    if (b.width == 1) {
      out << ',' << b.name;
    } else {
      for (std::size_t i = 0; i < b.width; ++i) out << ',' << b.name << '_' << i;
    }
  }
  out << ",margin\n";
  for (const auto& v : vehicles) {
    out << csv::escape(v.vehicle_id);
    for (double x : v.features) out << ',' << csv::format_double(x);
    out << ',' << csv::format_double(v.margin) << '\n';
  }
}

double percentile(std::span<const double> values, double p) {
  require(!values.empty(), "percentile of empty data");
  Vector sorted(values.begin(), values.end());
  std::sort(sorted.begin(), sorted.end());
  const double pos = p / 100.0 * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, sorted.size() - 1);
  return sorted[lo] + (pos - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

MarginTable compute_margins(const VehicleCatalog& catalog, double rate, double low_pct, double high_pct) {
  require(rate > 0.0 && rate < 1.0, "compute_margins: rate must be in (0,1)");
  require(low_pct >= 0.0 && low_pct < high_pct && high_pct <= 100.0,
          "compute_margins: need 0 <= low < high <= 100");
  require(!catalog.empty(), "compute_margins: empty catalog");
  MarginTable t;
  Vector values(catalog.size());
  for (std::size_t i = 0; i < catalog.size(); ++i) values[i] = catalog.records[i].market_value;
  // Trimming on market value flags the same set as trimming on margin.
  t.low_cut = percentile(values, low_pct);
  t.high_cut = percentile(values, high_pct);
  t.margin.resize(values.size());
  t.excluded.resize(values.size());
  for (std::size_t i = 0; i < values.size(); ++i) {
    t.margin[i] = rate * values[i];
    t.excluded[i] = values[i] < t.low_cut || values[i] > t.high_cut;
  }
  return t;
}

Vector cluster_margins(const MarginTable& margins, std::span<const int> assignments, int k) {
  require(assignments.size() == margins.margin.size(), "cluster_margins: size mismatch");
  Vector kept_sum(k, 0.0), all_sum(k, 0.0);
  std::vector<int> kept_n(k, 0), all_n(k, 0);
  for (std::size_t i = 0; i < assignments.size(); ++i) {
    const int c = assignments[i];
    require(c >= 0 && c < k, "cluster_margins: assignment out of range");
    all_sum[c] += margins.margin[i];
    ++all_n[c];
    if (!margins.excluded[i]) {
      kept_sum[c] += margins.margin[i];
      ++kept_n[c];
    }
  }
  Vector out(k, 0.0);
  for (int c = 0; c < k; ++c) {
    if (kept_n[c] > 0) out[c] = kept_sum[c] / kept_n[c];
    else if (all_n[c] > 0) out[c] = all_sum[c] / all_n[c];
  }
  return out;
}

}  // namespace searchrec
