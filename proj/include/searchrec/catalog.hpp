#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "searchrec/common.hpp"

namespace searchrec {

// Declared categorical level sets. Ingestion rejects anything else.
inline constexpr std::array<std::string_view, 8> kBodyStyles = {
    "Convertible", "Coupe", "Hatchback", "SUV", "Sedan", "Truck", "Van", "Wagon"};
inline constexpr std::array<std::string_view, 3> kTransmissions = {"Automatic", "CVT", "Manual"};
inline constexpr std::array<std::string_view, 5> kDrivetrains = {"Rear WD", "AWD", "4WD", "Front WD",
                                                                 "NA"};
// Accidents and owners enter clustering as categoricals: {0, >=1} and {0, 1, 2, >=3}.
inline constexpr int kAccidentLevels = 2;
inline constexpr int kOwnerLevels = 4;

struct VehicleRecord {
  std::string vehicle_id;
  std::string body_style;
  std::string transmission;
  std::string drivetrain;
  int num_accidents = 0;
  int num_owners = 0;
  double price = 0.0;
  double mileage = 0.0;
  double market_value = 0.0;
  std::optional<int> year;  // ingested, never a clustering feature
};

struct VehicleCatalog {
  std::vector<VehicleRecord> records;

  std::size_t size() const { return records.size(); }
  bool empty() const { return records.empty(); }
};

/// Logical field -> CSV column name. Missing entries fall back to the field name.
struct CatalogSchema {
  std::map<std::string, std::string> columns;

  static CatalogSchema defaults();
  static CatalogSchema from_json_file(const std::filesystem::path& path);
  std::string column(const std::string& field) const;
};

/// Reads a header-row CSV. Throws ValidationError naming the offending row
/// (1-based data row index) on missing columns, bad values, unknown levels or
/// non-positive price/mileage/market value.
VehicleCatalog load_catalog(const std::filesystem::path& path,
                            const CatalogSchema& schema = CatalogSchema::defaults());
VehicleCatalog parse_catalog(std::string_view csv_text,
                             const CatalogSchema& schema = CatalogSchema::defaults());
void write_catalog(const std::filesystem::path& path, const VehicleCatalog& catalog);

enum class CategoryWeighting {
  inverse_levels,  // block weight 1/levels (default)
  levels,          // block weight = levels
  unit,            // plain one-hot
};

struct NormalizationSpec {
  CategoryWeighting weighting = CategoryWeighting::inverse_levels;
  double margin_rate = 0.3;
};

struct NormalizedVehicle {
  std::string vehicle_id;
  Vector features;
  double margin = 0.0;
};

/// Layout of the normalized feature vector.
struct FeatureLayout {
  struct Block {
    std::string name;
    std::size_t offset;
    std::size_t width;
    double weight;  // 0 for continuous features
  };
  std::vector<Block> blocks;
  std::size_t dimension = 0;

  static FeatureLayout make(CategoryWeighting weighting);
  const Block& block(std::string_view name) const;
};

/// Min-max normalization of ln(x). A degenerate range maps every entry to 0.5.
Vector min_max_log(std::span<const double> values);

/// One-hot categoricals scaled by their block weight followed by min-max
/// normalized log price, log mileage and log margin.
std::vector<NormalizedVehicle> normalize(const VehicleCatalog& catalog,
                                         const NormalizationSpec& spec = {});

/// Feature matrix view of normalize(): one row per vehicle.
Matrix feature_matrix(const std::vector<NormalizedVehicle>& vehicles);

void write_normalized_csv(const std::filesystem::path& path,
                          const std::vector<NormalizedVehicle>& vehicles, CategoryWeighting weighting);

struct MarginTable {
  Vector margin;               // rate * market_value, per vehicle
  std::vector<bool> excluded;  // outside the market-value percentile band
  double low_cut = 0.0;
  double high_cut = 0.0;
};

/// Linear-interpolation percentile (p in [0, 100]) of unsorted data.
double percentile(std::span<const double> values, double p);

MarginTable compute_margins(const VehicleCatalog& catalog, double rate = 0.3, double low_pct = 5.0,
                            double high_pct = 95.0);

/// Mean margin of non-excluded members of each cluster (0-based assignment).
/// A cluster whose members are all excluded falls back to the mean over all members.
Vector cluster_margins(const MarginTable& margins, std::span<const int> assignments, int k);

// ---------------------------------------------------------------------------
// Synthetic catalogs

struct SyntheticCatalog {
  VehicleCatalog catalog;
  std::vector<int> true_cluster;  // 0-based generating cluster per vehicle
  int clusters = 0;
};

/// Eight-segment catalog whose category shares, normalized log price/mileage/
/// margin means and segment sizes follow the reference centroid table
/// (4,140 vehicles at scale 1.0).
SyntheticCatalog generate_reference_catalog(std::uint64_t seed, double scale = 1.0);

/// Catalog with `clusters` tight, well separated groups of `per_cluster`
/// vehicles each; used to check that the silhouette sweep recovers the plant.
SyntheticCatalog generate_planted_catalog(int clusters, int per_cluster, std::uint64_t seed,
                                          double spread = 0.02);

/// Normalized-log means (price, mileage, margin) and sizes of the eight reference segments.
struct ReferenceSegment {
  std::array<double, 8> body;
  std::array<double, 3> transmission;
  std::array<double, 5> drivetrain;
  double accident_share;
  std::array<double, 4> owners;
  double log_price;
  double log_mileage;
  double log_margin;
  int vehicles;
};
const std::array<ReferenceSegment, 8>& reference_segments();

}  // namespace searchrec
