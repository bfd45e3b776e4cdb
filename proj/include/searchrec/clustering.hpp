#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "searchrec/catalog.hpp"
#include "searchrec/common.hpp"

namespace searchrec {

/// One k-means solution. Assignments are 0-based internally; files use 1..k.
struct ClusterModel {
  int k = 0;
  std::vector<std::string> vehicle_ids;
  std::vector<int> assignments;
  Matrix centroids;
  double silhouette = 0.0;
  double within_ss = 0.0;
  int iterations = 0;
  Vector within_ss_history;  // objective after initialization and after every Lloyd step

  /// Cluster of a vehicle; throws ValidationError for unknown ids.
  int cluster_of(const std::string& vehicle_id) const;
  std::vector<int> sizes() const;
};

double squared_distance(std::span<const double> a, std::span<const double> b);

/// Full Ward hierarchy (nearest-neighbour chain with Lance-Williams updates on
/// the within-cluster sum-of-squares increase). Merges are stored in
/// non-decreasing cost order so the tree can be cut at any k.
class WardTree {
 public:
  struct Merge {
    std::size_t left;
    std::size_t right;
    double cost;  // increase of the within-cluster sum of squares
  };

  explicit WardTree(const Matrix& points, unsigned workers = 1);

  /// Labels 0..k-1, numbered by first appearance in point order.
  std::vector<int> cut(int k) const;
  const std::vector<Merge>& merges() const { return merges_; }
  std::size_t size() const { return n_; }

 private:
  std::size_t n_ = 0;
  std::vector<Merge> merges_;
};

struct WardOptions {
  /// Above this many points Ward runs on a seeded subsample and the rest are
  /// attached to the nearest subsample centroid.
  std::size_t max_points = 6000;
  std::uint64_t seed = 0;
};

std::vector<int> ward_init(const Matrix& points, int k, const WardOptions& options = {});

struct KMeansOptions {
  int max_iter = 300;
  double tol = 0.0;  // stop when the largest centroid shift falls below tol
  /// After Lloyd converges, try single-point transfers (Hartigan) and resume
  /// Lloyd if any point moved.
  bool hartigan = true;
};

/// Lloyd iterations from `init`. Ties go to the lowest cluster index; empty
/// clusters are reseeded with the point farthest from its centroid. The
/// objective is checked to be non-increasing after every step.
ClusterModel kmeans(const Matrix& points, std::vector<int> init, int k, const KMeansOptions& options = {});

/// Mean silhouette with Euclidean distance; singleton-cluster points score 0.
double silhouette(const Matrix& points, std::span<const int> assignments, unsigned workers = 1);

struct SweepOptions {
  std::uint64_t seed = 0;
  unsigned workers = 1;
  KMeansOptions kmeans;
  WardOptions ward;
};

/// Ward-initialized k-means for every k in [k_min, k_max], scored by silhouette.
std::vector<ClusterModel> sweep(const Matrix& points, int k_min, int k_max, const SweepOptions& options = {});

/// Index into `models` of the largest silhouette (ties: smaller k).
std::size_t best_by_silhouette(const std::vector<ClusterModel>& models);

void save_cluster_models(const std::filesystem::path& path, const std::vector<ClusterModel>& models);
std::vector<ClusterModel> load_cluster_models(const std::filesystem::path& path);

void write_silhouette_csv(const std::filesystem::path& path, const std::vector<ClusterModel>& models);

/// Per-cluster level shares, mean normalized continuous features and sizes.
void write_centroid_table(const std::filesystem::path& path, const ClusterModel& model,
                          CategoryWeighting weighting);

}  // namespace searchrec
