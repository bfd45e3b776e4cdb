#include <cmath>
#include <numeric>

#include "doctest.h"
#include "searchrec/catalog.hpp"

using namespace searchrec;

namespace {

const char* kHeader = "vehicle_id,body_style,transmission,drivetrain,num_accidents,num_owners,price,mileage,market_value\n";

}  // namespace

TEST_CASE("parse_catalog reads valid rows") {
  std::string text = kHeader;
  text += "a,Sedan,Automatic,AWD,0,1,12000,30000,11000\n";
  text += "b,SUV,Manual,4WD,2,3,25000,80000,23000\n";
  text += "c,Coupe,CVT,NA,0,0,9000,120000,8000\n";
  const auto cat = parse_catalog(text);
  CHECK(cat.size() == 3);
  CHECK(cat.records[1].num_owners == 3);
  CHECK(!cat.records[0].year.has_value());
}

TEST_CASE("parse_catalog rejects bad rows with their index") {
  std::string text = kHeader;
  text += "a,Sedan,Automatic,AWD,0,1,12000,30000,11000\n";
  text += "b,SUV,Manual,4WD,2,3,0,80000,23000\n";
  try {
    parse_catalog(text);
    FAIL("expected rejection");
  } catch (const ValidationError& e) {
    CHECK(std::string(e.what()).find("row 2") != std::string::npos);
  }
  CHECK_THROWS_AS(parse_catalog(std::string(kHeader) + "x,Limo,Automatic,AWD,0,0,1,1,1\n"), ValidationError);
  CHECK_THROWS_AS(parse_catalog("vehicle_id,price\nx,1\n"), ValidationError);
  CHECK_THROWS_AS(parse_catalog(std::string(kHeader) + "x,Sedan,Automatic,AWD,0,0,abc,1,1\n"), ValidationError);
}

TEST_CASE("schema remaps column names") {
  CatalogSchema schema;
  schema.columns["price"] = "list_price";
  const std::string text =
      "vehicle_id,body_style,transmission,drivetrain,num_accidents,num_owners,list_price,mileage,market_value,color\n"
      "a,Sedan,Automatic,AWD,0,1,12000,30000,11000,red\n";
  CHECK(parse_catalog(text, schema).records[0].price == 12000.0);
}

TEST_CASE("min-max log normalization") {
  const Vector v = {std::exp(1.0), std::exp(2.0)};
  const auto n = min_max_log(v);
  CHECK(n[0] == doctest::Approx(0.0).epsilon(1e-15));
  CHECK(n[1] == doctest::Approx(1.0));
  const auto c = min_max_log(Vector{5, 5, 5});
  for (double x : c) CHECK(x == 0.5);
  CHECK_THROWS_AS(min_max_log(Vector{1.0, 0.0}), ValidationError);
}

TEST_CASE("normalize: block weights, ranges and order independence") {
  const auto synth = generate_reference_catalog(7, 0.1);
  const auto out = normalize(synth.catalog);
  const auto layout = FeatureLayout::make(CategoryWeighting::inverse_levels);
  CHECK(layout.dimension == 25);
  for (const auto& v : out) {
    for (const auto& b : layout.blocks) {
      double s = 0.0;
      for (std::size_t i = 0; i < b.width; ++i) s += v.features[b.offset + i];
      if (b.width > 1) {
        CHECK(s == b.weight);
      } else {
        CHECK(s >= 0.0);
        CHECK(s <= 1.0);
      }
    }
  }
  // Reversing the row order yields the same vector per vehicle.
  VehicleCatalog rev = synth.catalog;
  std::reverse(rev.records.begin(), rev.records.end());
  const auto out_rev = normalize(rev);
  for (std::size_t i = 0; i < out.size(); ++i) CHECK(out_rev[out.size() - 1 - i].features == out[i].features);
}

TEST_CASE("normalize is idempotent after mapping back through exp") {
  const Vector raw = {3.0, 17.5, 250.0, 9.0};
  const auto z = min_max_log(raw);
  Vector back(z.size());
  for (std::size_t i = 0; i < z.size(); ++i) back[i] = std::exp(z[i]);
  const auto z2 = min_max_log(back);
  for (std::size_t i = 0; i < z.size(); ++i) CHECK(std::abs(z2[i] - z[i]) <= 1e-12);
}

TEST_CASE("margins and percentile trimming") {
  VehicleCatalog cat;
  for (int i = 1; i <= 100; ++i) {
    VehicleRecord v;
    v.vehicle_id = std::to_string(i);
    v.body_style = "Sedan";
    v.transmission = "Manual";
    v.drivetrain = "AWD";
    v.price = v.mileage = 1.0;
    v.market_value = i == 1 ? 100.0 : 100.0 + i;
    cat.records.push_back(v);
  }
  const auto t = compute_margins(cat);
  CHECK(t.margin[0] == doctest::Approx(30.0));
  CHECK(std::count(t.excluded.begin(), t.excluded.end(), true) == 10);
  CHECK_THROWS_AS(compute_margins(cat, 1.5), ValidationError);
  CHECK_THROWS_AS(compute_margins(cat, 0.3, 50, 10), ValidationError);
}

TEST_CASE("reference catalog reproduces the segment table") {
  const auto synth = generate_reference_catalog(11);
  CHECK(synth.catalog.size() == 4140);
  const auto out = normalize(synth.catalog);
  const auto layout = FeatureLayout::make(CategoryWeighting::inverse_levels);
  const auto price = layout.block("log_price").offset;
  double total = 0.0;
  for (const auto& v : out) total += v.features[price];
  CHECK(total / out.size() == doctest::Approx(0.43).epsilon(0.01 / 0.43));

  // Cluster margins follow the rank order of the segment log-margin means.
  const auto t = compute_margins(synth.catalog);
  const auto m = cluster_margins(t, synth.true_cluster, 8);
  const auto& segs = reference_segments();
  for (int a = 0; a < 8; ++a)
    for (int b = 0; b < 8; ++b)
      if (segs[a].log_margin + 0.015 < segs[b].log_margin) CHECK(m[a] < m[b]);
}
