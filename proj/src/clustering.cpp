#include "searchrec/clustering.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <nlohmann/json.hpp>
#include <numeric>
#include <optional>

#include "csv.hpp"
#include "searchrec/parallel.hpp"
#include "searchrec/rng.hpp"

namespace searchrec {
namespace {

class UnionFind {
 public:
  explicit UnionFind(std::size_t n) : parent_(n) { std::iota(parent_.begin(), parent_.end(), 0); }
  std::size_t find(std::size_t x) {
    while (parent_[x] != x) x = parent_[x] = parent_[parent_[x]];
    return x;
  }
  void unite(std::size_t a, std::size_t b) {
    a = find(a);
    b = find(b);
    if (a != b) parent_[std::max(a, b)] = std::min(a, b);
  }

 private:
  std::vector<std::size_t> parent_;
};

std::vector<int> relabel_by_first_appearance(std::span<const int> labels) {
  std::map<int, int> map;
  std::vector<int> out(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) {
    auto [it, inserted] = map.emplace(labels[i], static_cast<int>(map.size()));
    out[i] = it->second;
  }
  return out;
}

Matrix centroids_of(const Matrix& points, std::span<const int> assignments, int k, std::vector<int>& counts) {
  const std::size_t d = points.empty() ? 0 : points[0].size();
  Matrix c(k, Vector(d, 0.0));
  counts.assign(k, 0);
  for (std::size_t i = 0; i < points.size(); ++i) {
    const int a = assignments[i];
    ++counts[a];
    for (std::size_t j = 0; j < d; ++j) c[a][j] += points[i][j];
  }
  for (int a = 0; a < k; ++a)
    if (counts[a] > 0)
      for (double& x : c[a]) x /= counts[a];
  return c;
}

double objective(const Matrix& points, std::span<const int> assignments, const Matrix& centroids) {
  double ss = 0.0;
  for (std::size_t i = 0; i < points.size(); ++i) ss += squared_distance(points[i], centroids[assignments[i]]);
  return ss;
}

int nearest_centroid(std::span<const double> x, const Matrix& centroids) {
  int best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (std::size_t c = 0; c < centroids.size(); ++c) {
    const double d = squared_distance(x, centroids[c]);
    if (d < best_d) {
      best_d = d;
      best = static_cast<int>(c);
    }
  }
  return best;
}

// Moves the point farthest from its own centroid into each empty cluster.
void repair_empty(const Matrix& points, std::vector<int>& assignments, Matrix& centroids, std::vector<int>& counts) {
  const int k = static_cast<int>(centroids.size());
  for (int c = 0; c < k; ++c) {
    if (counts[c] > 0) continue;
    std::size_t far = 0;
    double far_d = -1.0;
    for (std::size_t i = 0; i < points.size(); ++i) {
      if (counts[assignments[i]] <= 1) continue;
      const double d = squared_distance(points[i], centroids[assignments[i]]);
      if (d > far_d) {
        far_d = d;
        far = i;
      }
    }
    if (far_d < 0.0) throw ValidationError("kmeans: cannot repair empty cluster (too few points)");
    assignments[far] = c;
    centroids = centroids_of(points, assignments, k, counts);
  }
}

double checked_step(double before, double after) {
  if (after > before * (1.0 + 1e-12) + 1e-12)
    throw Error("kmeans: within-cluster sum of squares increased (" + std::to_string(before) + " -> " +
                std::to_string(after) + ")");
  return after;
}

// Single-point transfers that lower the objective once the centroid shift of
// both clusters is accounted for. Returns whether any point moved.
bool hartigan_pass(const Matrix& points, std::vector<int>& assignments, Matrix& centroids, std::vector<int>& counts) {
  const int k = static_cast<int>(centroids.size());
  bool moved = false;
  for (std::size_t i = 0; i < points.size(); ++i) {
    const int from = assignments[i];
    const double nf = counts[from];
    if (nf <= 1) continue;
    const double removal = nf / (nf - 1.0) * squared_distance(points[i], centroids[from]);
    int to = from;
    double best = removal * (1.0 - 1e-12);
    for (int c = 0; c < k; ++c) {
      if (c == from) continue;
      const double nc = counts[c];
      const double add = nc / (nc + 1.0) * squared_distance(points[i], centroids[c]);
      if (add < best) {
        best = add;
        to = c;
      }
    }
    if (to == from) continue;
    const double nt = counts[to];
    for (std::size_t d = 0; d < points[i].size(); ++d) {
      centroids[from][d] = (nf * centroids[from][d] - points[i][d]) / (nf - 1.0);
      centroids[to][d] = (nt * centroids[to][d] + points[i][d]) / (nt + 1.0);
    }
    --counts[from];
    ++counts[to];
    assignments[i] = to;
    moved = true;
  }
  if (moved) centroids = centroids_of(points, assignments, k, counts);
  return moved;
}

}  // namespace

double squared_distance(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    s += d * d;
  }
  return s;
}

int ClusterModel::cluster_of(const std::string& vehicle_id) const {
  for (std::size_t i = 0; i < vehicle_ids.size(); ++i)
    if (vehicle_ids[i] == vehicle_id) return assignments[i];
  throw ValidationError("unknown vehicle_id '" + vehicle_id + "'");
}

std::vector<int> ClusterModel::sizes() const {
  std::vector<int> s(k, 0);
  for (int a : assignments) ++s[a];
  return s;
}

WardTree::WardTree(const Matrix& points, unsigned workers) : n_(points.size()) {
  require(n_ >= 1, "ward: no points");
  if (n_ == 1) return;
  const std::size_t n = n_;
  auto at = [n](std::size_t i, std::size_t j) {
    if (i > j) std::swap(i, j);
    return i * n - i * (i + 1) / 2 + (j - i - 1);
  };
  // Ward cost of merging singletons i, j is |x_i - x_j|^2 / 2.
  std::vector<double> dist(n * (n - 1) / 2);
  parallel_for(n, workers, [&](std::size_t i) {
    for (std::size_t j = i + 1; j < n; ++j) dist[at(i, j)] = 0.5 * squared_distance(points[i], points[j]);
  });

  std::vector<double> size(n, 1.0);
  std::vector<char> active(n, 1);
  std::vector<std::size_t> chain;
  chain.reserve(n);
  merges_.reserve(n - 1);
  std::size_t remaining = n;

  while (remaining > 1) {
    if (chain.empty()) {
      std::size_t first = 0;
      while (!active[first]) ++first;
      chain.push_back(first);
    }
    std::size_t x = 0, y = 0;
    double dxy = 0.0;
    for (;;) {
      x = chain.back();
      const std::size_t prev = chain.size() >= 2 ? chain[chain.size() - 2] : n;
      double best = std::numeric_limits<double>::infinity();
      std::size_t arg = n;
      if (prev != n) {
        best = dist[at(x, prev)];
        arg = prev;
      }
      for (std::size_t j = 0; j < n; ++j) {
        if (!active[j] || j == x) continue;
        const double d = dist[at(x, j)];
        if (d < best) {
          best = d;
          arg = j;
        }
      }
      if (arg == prev) {
        y = prev;
        dxy = best;
        chain.pop_back();
        chain.pop_back();
        break;
      }
      chain.push_back(arg);
    }
    const std::size_t keep = std::min(x, y), drop = std::max(x, y);
    merges_.push_back({keep, drop, dxy});
    const double nk = size[keep], nd = size[drop];
    for (std::size_t j = 0; j < n; ++j) {
      if (!active[j] || j == keep || j == drop) continue;
      const double nj = size[j];
      dist[at(keep, j)] = ((nk + nj) * dist[at(keep, j)] + (nd + nj) * dist[at(drop, j)] - nj * dxy) /
                          (nk + nd + nj);
    }
    size[keep] += nd;
    active[drop] = 0;
    --remaining;
  }
  std::stable_sort(merges_.begin(), merges_.end(),
                   [](const Merge& a, const Merge& b) { return a.cost < b.cost; });
}

std::vector<int> WardTree::cut(int k) const {
  require(k >= 1 && static_cast<std::size_t>(k) <= n_, "ward: k must be in [1, number of points]");
  UnionFind uf(n_);
  const std::size_t merges_to_apply = n_ - static_cast<std::size_t>(k);
  for (std::size_t m = 0; m < merges_to_apply; ++m) uf.unite(merges_[m].left, merges_[m].right);
  std::vector<int> roots(n_);
  for (std::size_t i = 0; i < n_; ++i) roots[i] = static_cast<int>(uf.find(i));
  return relabel_by_first_appearance(roots);
}

std::vector<int> ward_init(const Matrix& points, int k, const WardOptions& options) {
  require(k >= 2, "ward_init: k must be >= 2");
  require(static_cast<std::size_t>(k) <= points.size(), "ward_init: k exceeds number of points");
  if (points.size() <= options.max_points) return WardTree(points).cut(k);

  std::vector<std::size_t> idx(points.size());
  std::iota(idx.begin(), idx.end(), 0);
  Rng rng(options.seed, "ward.subsample");
  for (std::size_t i = 0; i < options.max_points; ++i) std::swap(idx[i], idx[i + rng.below(idx.size() - i)]);
  idx.resize(options.max_points);
  std::sort(idx.begin(), idx.end());
  Matrix sub;
  sub.reserve(idx.size());
  for (auto i : idx) sub.push_back(points[i]);
  const auto sub_labels = WardTree(sub).cut(k);
  std::vector<int> counts;
  const Matrix c = centroids_of(sub, sub_labels, k, counts);
  std::vector<int> labels(points.size());
  for (std::size_t i = 0; i < points.size(); ++i) labels[i] = nearest_centroid(points[i], c);
  return labels;
}

ClusterModel kmeans(const Matrix& points, std::vector<int> init, int k, const KMeansOptions& options) {
  require(k >= 1, "kmeans: k must be >= 1");
  require(init.size() == points.size(), "kmeans: init must cover all points");
  require(static_cast<std::size_t>(k) <= points.size(), "kmeans: k exceeds number of points");
  for (int a : init) require(a >= 0 && a < k, "kmeans: init label out of range");

  ClusterModel model;
  model.k = k;
  std::vector<int> counts;
  Matrix centroids = centroids_of(points, init, k, counts);
  repair_empty(points, init, centroids, counts);
  double ss = objective(points, init, centroids);
  model.within_ss_history.push_back(ss);

  std::vector<int> next(points.size());
  int iter = 0;
  for (;;) {
    bool converged = false;
    while (iter < options.max_iter) {
      ++iter;
      bool changed = false;
      for (std::size_t i = 0; i < points.size(); ++i) {
        next[i] = nearest_centroid(points[i], centroids);
        changed |= next[i] != init[i];
      }
      if (!changed) {
        converged = true;
        break;
      }
      init.swap(next);
      Matrix updated = centroids_of(points, init, k, counts);
      repair_empty(points, init, updated, counts);
      double shift = 0.0;
      for (int c = 0; c < k; ++c) shift = std::max(shift, std::sqrt(squared_distance(updated[c], centroids[c])));
      centroids = std::move(updated);
      ss = checked_step(ss, objective(points, init, centroids));
      model.within_ss_history.push_back(ss);
      if (shift < options.tol) break;
    }
    if (!converged || !options.hartigan || !hartigan_pass(points, init, centroids, counts)) break;
    ss = checked_step(ss, objective(points, init, centroids));
    model.within_ss_history.push_back(ss);
  }
  model.iterations = iter;
  model.assignments = std::move(init);
  model.centroids = std::move(centroids);
  model.within_ss = ss;
  return model;
}

double silhouette(const Matrix& points, std::span<const int> assignments, unsigned workers) {
  require(points.size() == assignments.size(), "silhouette: size mismatch");
  int k = 0;
  for (int a : assignments) {
    require(a >= 0, "silhouette: negative label");
    k = std::max(k, a + 1);
  }
  std::vector<int> counts(k, 0);
  for (int a : assignments) ++counts[a];
  for (int c : counts) require(c > 0, "silhouette: empty cluster");
  require(k >= 2, "silhouette: needs at least two clusters");

  Vector score(points.size(), 0.0);
  parallel_for(points.size(), workers, [&](std::size_t i) {
    const int own = assignments[i];
    if (counts[own] == 1) return;
    Vector sum(k, 0.0);
    for (std::size_t j = 0; j < points.size(); ++j) {
      if (j == i) continue;
      sum[assignments[j]] += std::sqrt(squared_distance(points[i], points[j]));
    }
    const double a = sum[own] / (counts[own] - 1);
    double b = std::numeric_limits<double>::infinity();
    for (int c = 0; c < k; ++c)
      if (c != own) b = std::min(b, sum[c] / counts[c]);
    const double denom = std::max(a, b);
    score[i] = denom > 0.0 ? (b - a) / denom : 0.0;
  });
  return std::accumulate(score.begin(), score.end(), 0.0) / static_cast<double>(points.size());
}

std::vector<ClusterModel> sweep(const Matrix& points, int k_min, int k_max, const SweepOptions& options) {
  require(k_min >= 2 && k_min <= k_max, "sweep: need 2 <= k_min <= k_max");
  require(static_cast<std::size_t>(k_max) <= points.size(), "sweep: k_max exceeds number of points");
  const bool subsample = points.size() > options.ward.max_points;
  std::optional<WardTree> tree;
  if (!subsample) tree.emplace(points, options.workers);

  std::vector<ClusterModel> models(static_cast<std::size_t>(k_max - k_min + 1));
  parallel_for(models.size(), options.workers, [&](std::size_t m) {
    const int k = k_min + static_cast<int>(m);
    WardOptions ward = options.ward;
    ward.seed = options.seed;
    auto init = subsample ? ward_init(points, k, ward) : tree->cut(k);
    models[m] = kmeans(points, std::move(init), k, options.kmeans);
    models[m].silhouette = silhouette(points, models[m].assignments);
  });
  return models;
}

std::size_t best_by_silhouette(const std::vector<ClusterModel>& models) {
  require(!models.empty(), "best_by_silhouette: no models");
  std::size_t best = 0;
  for (std::size_t i = 1; i < models.size(); ++i)
    if (models[i].silhouette > models[best].silhouette) best = i;
  return best;
}

void save_cluster_models(const std::filesystem::path& path, const std::vector<ClusterModel>& models) {
  nlohmann::json j;
  j["format"] = "searchrec-clusters";
  j["version"] = 1;
  auto& arr = j["models"] = nlohmann::json::array();
  for (const auto& m : models) {
    nlohmann::json jm;
    jm["k"] = m.k;
    jm["silhouette"] = m.silhouette;
    jm["within_ss"] = m.within_ss;
    jm["iterations"] = m.iterations;
    jm["centroids"] = m.centroids;
    jm["vehicle_ids"] = m.vehicle_ids;
    std::vector<int> one_based(m.assignments.size());
    std::transform(m.assignments.begin(), m.assignments.end(), one_based.begin(), [](int a) { return a + 1; });
    jm["clusters"] = one_based;
    arr.push_back(std::move(jm));
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ValidationError("cannot write " + path.string());
  out << j.dump(1) << '\n';
}

std::vector<ClusterModel> load_cluster_models(const std::filesystem::path& path) {
  const auto j = nlohmann::json::parse(csv::read_file(path));
  if (j.value("format", "") != "searchrec-clusters") throw ValidationError(path.string() + ": not a cluster model file");
  if (j.value("version", 0) != 1) throw ValidationError(path.string() + ": unsupported cluster model version");
  std::vector<ClusterModel> models;
  for (const auto& jm : j.at("models")) {
    ClusterModel m;
    m.k = jm.at("k").get<int>();
    m.silhouette = jm.at("silhouette").get<double>();
    m.within_ss = jm.at("within_ss").get<double>();
    m.iterations = jm.at("iterations").get<int>();
    m.centroids = jm.at("centroids").get<Matrix>();
    m.vehicle_ids = jm.at("vehicle_ids").get<std::vector<std::string>>();
    m.assignments = jm.at("clusters").get<std::vector<int>>();
    for (int& a : m.assignments) {
      require(a >= 1 && a <= m.k, path.string() + ": cluster index out of range");
      --a;
    }
    require(m.assignments.size() == m.vehicle_ids.size(), path.string() + ": ids/clusters length mismatch");
    models.push_back(std::move(m));
  }
  return models;
}

void write_silhouette_csv(const std::filesystem::path& path, const std::vector<ClusterModel>& models) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ValidationError("cannot write " + path.string());
  out << "k,silhouette,within_ss,iterations\n";
  for (const auto& m : models)
    out << m.k << ',' << csv::format_double(m.silhouette) << ',' << csv::format_double(m.within_ss) << ','
        << m.iterations << '\n';
}

void write_centroid_table(const std::filesystem::path& path, const ClusterModel& model, CategoryWeighting weighting) {
  const auto layout = FeatureLayout::make(weighting);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ValidationError("cannot write " + path.string());
  out << "feature";
  for (int c = 0; c < model.k; ++c) out << ",cluster_" << c + 1;
  out << '\n';
  auto level_name = [](const std::string& block, std::size_t i) -> std::string {
    if (block == "body_style") return std::string(kBodyStyles[i]);
    if (block == "transmission") return std::string(kTransmissions[i]);
    if (block == "drivetrain") return std::string(kDrivetrains[i]);
    if (block == "accidents") return i == 0 ? "no accidents" : "at least one accident";
    static const char* owners[] = {"new car", "1 owner", "2 owners", "3 or more owners"};
    return owners[i];
  };
  for (const auto& b : layout.blocks) {
    for (std::size_t i = 0; i < b.width; ++i) {
      out << csv::escape(b.width == 1 ? b.name : b.name + ":" + level_name(b.name, i));
      for (int c = 0; c < model.k; ++c) {
        double v = model.centroids[c][b.offset + i];
        if (b.weight > 0.0) v /= b.weight;  // share of vehicles at this level
        out << ',' << csv::format_double(v);
      }
      out << '\n';
    }
  }
  out << "vehicles";
  for (int s : model.sizes()) out << ',' << s;
  out << '\n';
}

}  // namespace searchrec
