#include <algorithm>
#include <cmath>
#include <limits>
#include <nlohmann/json.hpp>
#include <numeric>
#include <unordered_map>

#include "searchrec/parallel.hpp"
#include "searchrec/policy.hpp"
#include "searchrec/rng.hpp"

namespace searchrec {

using nlohmann::json;

TreeParams TreeParams::boosting_defaults() {
  TreeParams p;
  p.mode = EnsembleMode::boosting;
  p.n_trees = 200;
  p.max_depth = 4;
  p.min_leaf = 5;
  p.learning_rate = 0.1;
  return p;
}

const Vector& Tree::leaf(const Vector& x) const {
  int i = 0;
  while (nodes[i].feature >= 0) i = x[nodes[i].feature] <= nodes[i].threshold ? nodes[i].left : nodes[i].right;
  return values[nodes[i].value];
}

namespace {

// Unique feature rows with per-class counts, plus per-feature bin codes.
struct Binned {
  Matrix x;
  Matrix counts;
  std::vector<std::vector<std::uint8_t>> code;  // code[row][feature]
  Matrix cuts;                                  // cuts[feature]: bin b holds values <= cuts[b]
  std::size_t features = 0;
  int classes = 0;
};

Binned bin_data(const std::vector<Observation>& data, int clusters, int horizon, int max_bins) {
  Binned b;
  b.classes = action_count(clusters);
  b.features = feature_dimension(clusters);
  std::unordered_map<std::string, std::size_t> index;
  std::string key;
  for (const auto& obs : data) {
    require(obs.action >= 0 && obs.action < b.classes, "observation action out of range");
    Vector x = featurize(obs.state, horizon);
    key.assign(reinterpret_cast<const char*>(x.data()), x.size() * sizeof(double));
    auto [it, inserted] = index.emplace(key, b.x.size());
    if (inserted) {
      b.x.push_back(std::move(x));
      b.counts.emplace_back(b.classes, 0.0);
    }
    b.counts[it->second][obs.action] += 1.0;
  }
  const std::size_t rows = b.x.size();
  b.cuts.resize(b.features);
  b.code.assign(rows, std::vector<std::uint8_t>(b.features, 0));
  max_bins = std::clamp(max_bins, 2, 255);
  for (std::size_t f = 0; f < b.features; ++f) {
    Vector vals(rows);
    for (std::size_t r = 0; r < rows; ++r) vals[r] = b.x[r][f];
    std::sort(vals.begin(), vals.end());
    vals.erase(std::unique(vals.begin(), vals.end()), vals.end());
    Vector cuts;
    if (vals.size() <= static_cast<std::size_t>(max_bins)) {
      for (std::size_t i = 0; i + 1 < vals.size(); ++i) cuts.push_back(0.5 * (vals[i] + vals[i + 1]));
    } else {
      for (int q = 1; q < max_bins; ++q) {
        const std::size_t i = q * vals.size() / max_bins;
        cuts.push_back(0.5 * (vals[i - 1] + vals[i]));
      }
      cuts.erase(std::unique(cuts.begin(), cuts.end()), cuts.end());
    }
    for (std::size_t r = 0; r < rows; ++r)
      b.code[r][f] = static_cast<std::uint8_t>(std::lower_bound(cuts.begin(), cuts.end(), b.x[r][f]) - cuts.begin());
    b.cuts[f] = std::move(cuts);
  }
  return b;
}

std::vector<int> choose_features(std::size_t d, int mtry, Rng& rng) {
  std::vector<int> f(d);
  std::iota(f.begin(), f.end(), 0);
  if (mtry <= 0 || static_cast<std::size_t>(mtry) >= d) return f;
  for (int i = 0; i < mtry; ++i) std::swap(f[i], f[i + rng.below(d - i)]);
  f.resize(mtry);
  return f;
}

// Classification tree on weighted class counts (Gini).
struct ClassTreeBuilder {
  const Binned& data;
  const Matrix& weights;  // per row, per class
  const TreeParams& params;
  int mtry;
  Rng& rng;
  Tree tree;

  int make_leaf(const Vector& total) {
    Tree::Node leaf;
    leaf.value = static_cast<int>(tree.values.size());
    const double n = std::accumulate(total.begin(), total.end(), 0.0);
    Vector p(total.size());
    for (std::size_t c = 0; c < p.size(); ++c) p[c] = total[c] / n;
    tree.values.push_back(std::move(p));
    tree.nodes.push_back(leaf);
    return static_cast<int>(tree.nodes.size()) - 1;
  }

  static double score(const Vector& counts, double n) {
    if (n <= 0.0) return 0.0;
    double s = 0.0;
    for (double c : counts) s += c * c;
    return s / n;
  }

  int build(std::vector<std::size_t>& rows, int depth) {
    const int C = data.classes;
    Vector total(C, 0.0);
    for (auto r : rows)
      for (int c = 0; c < C; ++c) total[c] += weights[r][c];
    const double n = std::accumulate(total.begin(), total.end(), 0.0);
    const bool pure = std::count_if(total.begin(), total.end(), [](double v) { return v > 0.0; }) <= 1;
    if (depth >= params.max_depth || pure || n < 2.0 * params.min_leaf) return make_leaf(total);

    const double parent = score(total, n);
    double best_gain = 1e-12;
    int best_f = -1;
    int best_bin = -1;
    std::vector<Vector> hist;
    for (int f : choose_features(data.features, mtry, rng)) {
      const std::size_t bins = data.cuts[f].size() + 1;
      if (bins < 2) continue;
      hist.assign(bins, Vector(C, 0.0));
      for (auto r : rows)
        for (int c = 0; c < C; ++c) hist[data.code[r][f]][c] += weights[r][c];
      Vector left(C, 0.0);
      double nl = 0.0;
      for (std::size_t b = 0; b + 1 < bins; ++b) {
        for (int c = 0; c < C; ++c) left[c] += hist[b][c];
        nl = std::accumulate(left.begin(), left.end(), 0.0);
        const double nr = n - nl;
        if (nl < params.min_leaf || nr < params.min_leaf) continue;
        Vector right(C);
        for (int c = 0; c < C; ++c) right[c] = total[c] - left[c];
        const double gain = score(left, nl) + score(right, nr) - parent;
        if (gain > best_gain) {
          best_gain = gain;
          best_f = f;
          best_bin = static_cast<int>(b);
        }
      }
    }
    if (best_f < 0) return make_leaf(total);

    std::vector<std::size_t> lrows, rrows;
    for (auto r : rows) (data.code[r][best_f] <= best_bin ? lrows : rrows).push_back(r);
    rows.clear();
    rows.shrink_to_fit();
    const int id = static_cast<int>(tree.nodes.size());
    tree.nodes.push_back({best_f, data.cuts[best_f][best_bin], -1, -1, -1});
    const int l = build(lrows, depth + 1);
    const int r = build(rrows, depth + 1);
    tree.nodes[id].left = l;
    tree.nodes[id].right = r;
    return id;
  }
};

// Regression tree on per-row gradient / hessian sums (second-order gain).
struct BoostTreeBuilder {
  const Binned& data;
  const Vector& grad;
  const Vector& hess;
  const Vector& rows_n;
  const TreeParams& params;
  double leaf_scale;
  Tree tree;

  int make_leaf(double g, double h) {
    Tree::Node leaf;
    leaf.value = static_cast<int>(tree.values.size());
    tree.values.push_back({h > 1e-12 ? leaf_scale * g / h : 0.0});
    tree.nodes.push_back(leaf);
    return static_cast<int>(tree.nodes.size()) - 1;
  }

  int build(std::vector<std::size_t>& rows, int depth) {
    double G = 0.0, H = 0.0, N = 0.0;
    for (auto r : rows) {
      G += grad[r];
      H += hess[r];
      N += rows_n[r];
    }
    if (depth >= params.max_depth || N < 2.0 * params.min_leaf || H <= 1e-12) return make_leaf(G, H);
    constexpr double lambda = 1e-6;
    const double parent = G * G / (H + lambda);
    double best_gain = 1e-12;
    int best_f = -1, best_bin = -1;
    for (std::size_t f = 0; f < data.features; ++f) {
      const std::size_t bins = data.cuts[f].size() + 1;
      if (bins < 2) continue;
      Vector hg(bins, 0.0), hh(bins, 0.0), hn(bins, 0.0);
      for (auto r : rows) {
        const auto b = data.code[r][f];
        hg[b] += grad[r];
        hh[b] += hess[r];
        hn[b] += rows_n[r];
      }
      double gl = 0.0, hl = 0.0, nl = 0.0;
      for (std::size_t b = 0; b + 1 < bins; ++b) {
        gl += hg[b];
        hl += hh[b];
        nl += hn[b];
        if (nl < params.min_leaf || N - nl < params.min_leaf) continue;
        const double gr = G - gl, hr = H - hl;
        const double gain = gl * gl / (hl + lambda) + gr * gr / (hr + lambda) - parent;
        if (gain > best_gain) {
          best_gain = gain;
          best_f = static_cast<int>(f);
          best_bin = static_cast<int>(b);
        }
      }
    }
    if (best_f < 0) return make_leaf(G, H);
    std::vector<std::size_t> lrows, rrows;
    for (auto r : rows) (data.code[r][best_f] <= best_bin ? lrows : rrows).push_back(r);
    rows.clear();
    rows.shrink_to_fit();
    const int id = static_cast<int>(tree.nodes.size());
    tree.nodes.push_back({best_f, data.cuts[best_f][best_bin], -1, -1, -1});
    const int l = build(lrows, depth + 1);
    const int r = build(rrows, depth + 1);
    tree.nodes[id].left = l;
    tree.nodes[id].right = r;
    return id;
  }
};

json tree_to_json(const Tree& t) {
  json nodes = json::array();
  for (const auto& n : t.nodes) nodes.push_back({n.feature, n.threshold, n.left, n.right, n.value});
  return json{{"nodes", nodes}, {"values", t.values}};
}

Tree tree_from_json(const json& j) {
  Tree t;
  for (const auto& n : j.at("nodes"))
    t.nodes.push_back({n.at(0).get<int>(), n.at(1).get<double>(), n.at(2).get<int>(), n.at(3).get<int>(),
                       n.at(4).get<int>()});
  t.values = j.at("values").get<Matrix>();
  for (const auto& n : t.nodes) {
    const int count = static_cast<int>(t.nodes.size());
    if (n.feature >= 0)
      require(n.left > 0 && n.left < count && n.right > 0 && n.right < count, "tree: bad child index");
    else
      require(n.value >= 0 && n.value < static_cast<int>(t.values.size()), "tree: bad leaf index");
  }
  require(!t.nodes.empty(), "tree: no nodes");
  return t;
}

}  // namespace

TreeEnsemblePolicy::TreeEnsemblePolicy(int clusters, int horizon, EnsembleMode mode, std::vector<Tree> trees,
                                       Vector base_score, double learning_rate)
    : ConsumerPolicy(clusters, horizon),
      mode_(mode),
      trees_(std::move(trees)),
      base_(std::move(base_score)),
      rate_(learning_rate) {
  require(!trees_.empty() || mode == EnsembleMode::boosting, "forest: no trees");
  if (mode == EnsembleMode::boosting) {
    require(base_.size() == static_cast<std::size_t>(classes()), "boost: base score needs 2K+1 entries");
    require(trees_.size() % static_cast<std::size_t>(classes()) == 0, "boost: tree count must be a multiple of 2K+1");
  }
}

// Base score of classes never observed in training; they predict exactly 0.
constexpr double kAbsentScore = -30.0;

Vector TreeEnsemblePolicy::predict_features(const Vector& x) const {
  const auto C = static_cast<std::size_t>(classes());
  if (mode_ == EnsembleMode::bagging) {
    Vector p(C, 0.0);
    for (const auto& t : trees_) {
      const auto& v = t.leaf(x);
      for (std::size_t c = 0; c < C; ++c) p[c] += v[c];
    }
    for (double& v : p) v /= static_cast<double>(trees_.size());
    return p;
  }
  Vector f = base_;
  for (std::size_t i = 0; i < trees_.size(); ++i) f[i % C] += rate_ * trees_[i].leaf(x)[0];
  const double mx = *std::max_element(f.begin(), f.end());
  double s = 0.0;
  for (std::size_t c = 0; c < C; ++c) {
    f[c] = base_[c] <= kAbsentScore ? 0.0 : std::exp(f[c] - mx);
    s += f[c];
  }
  for (double& v : f) v /= s;
  return f;
}

Vector TreeEnsemblePolicy::predict(const RecState& state) const {
  return predict_features(featurize(state, horizon()));
}

json TreeEnsemblePolicy::model_json() const {
  json trees = json::array();
  for (const auto& t : trees_) trees.push_back(tree_to_json(t));
  return json{{"trees", trees}, {"base", base_}, {"learning_rate", rate_}};
}

std::shared_ptr<TreeEnsemblePolicy> TreeEnsemblePolicy::from_json(int clusters, int horizon, EnsembleMode mode,
                                                                  const json& j) {
  std::vector<Tree> trees;
  for (const auto& t : j.at("trees")) trees.push_back(tree_from_json(t));
  return std::make_shared<TreeEnsemblePolicy>(clusters, horizon, mode, std::move(trees), j.at("base").get<Vector>(),
                                              j.at("learning_rate").get<double>());
}

std::shared_ptr<TreeEnsemblePolicy> fit_tree_ensemble(const std::vector<Observation>& train, int clusters, int horizon,
                                                      const TreeParams& params) {
  require(!train.empty(), "fit_tree_ensemble: empty training set");
  require(params.n_trees >= 1, "fit_tree_ensemble: n_trees must be >= 1");
  require(params.max_depth >= 0 && params.min_leaf >= 1, "fit_tree_ensemble: bad depth or leaf size");
  const Binned data = bin_data(train, clusters, horizon, params.max_bins);
  const std::size_t rows = data.x.size();
  const int C = data.classes;

  if (params.mode == EnsembleMode::bagging) {
    const int mtry = params.mtry > 0 ? params.mtry
                                     : static_cast<int>(std::ceil(std::sqrt(static_cast<double>(data.features))));
    // Observation -> unique row lookup for bootstrap draws.
    std::vector<std::pair<std::size_t, int>> obs;
    obs.reserve(train.size());
    for (std::size_t r = 0; r < rows; ++r)
      for (int c = 0; c < C; ++c)
        for (int m = 0; m < static_cast<int>(data.counts[r][c]); ++m) obs.emplace_back(r, c);
    std::vector<Tree> trees(static_cast<std::size_t>(params.n_trees));
    parallel_for(trees.size(), params.workers, [&](std::size_t i) {
      Rng rng(params.seed, "forest.tree", i);
      Matrix w;
      if (params.bootstrap) {
        w.assign(rows, Vector(C, 0.0));
        for (std::size_t m = 0; m < obs.size(); ++m) {
          const auto& o = obs[rng.below(obs.size())];
          w[o.first][o.second] += 1.0;
        }
      } else {
        w = data.counts;
      }
      std::vector<std::size_t> active;
      for (std::size_t r = 0; r < rows; ++r)
        if (std::accumulate(w[r].begin(), w[r].end(), 0.0) > 0.0) active.push_back(r);
      ClassTreeBuilder b{data, w, params, mtry, rng, {}};
      b.build(active, 0);
      trees[i] = std::move(b.tree);
    });
    auto policy = std::make_shared<TreeEnsemblePolicy>(clusters, horizon, EnsembleMode::bagging, std::move(trees),
                                                       Vector{}, 0.0);
    policy->diagnostics.push_back("unique feature rows: " + std::to_string(rows));
    return policy;
  }

  // Gradient boosting on the multinomial deviance.
  Vector class_tot(C, 0.0), row_n(rows, 0.0);
  for (std::size_t r = 0; r < rows; ++r)
    for (int c = 0; c < C; ++c) {
      class_tot[c] += data.counts[r][c];
      row_n[r] += data.counts[r][c];
    }
  const double n = std::accumulate(class_tot.begin(), class_tot.end(), 0.0);
  Vector base(C);
  for (int c = 0; c < C; ++c) base[c] = class_tot[c] > 0.0 ? std::log(class_tot[c] / n) : kAbsentScore;
  Matrix F(rows, base);
  std::vector<Tree> trees;
  trees.reserve(static_cast<std::size_t>(params.n_trees) * C);
  Vector grad(rows), hess(rows);
  Matrix P(rows, Vector(C));
  const double scale = static_cast<double>(C - 1) / C;
  for (int round = 0; round < params.n_trees; ++round) {
    for (std::size_t r = 0; r < rows; ++r) {
      const double mx = *std::max_element(F[r].begin(), F[r].end());
      double s = 0.0;
      for (int c = 0; c < C; ++c) s += P[r][c] = std::exp(F[r][c] - mx);
      for (int c = 0; c < C; ++c) P[r][c] /= s;
    }
    std::vector<Tree> round_trees(static_cast<std::size_t>(C));
    for (int c = 0; c < C; ++c) {
      if (class_tot[c] <= 0.0) {
        Tree leaf;
        leaf.nodes.push_back({-1, 0.0, -1, -1, 0});
        leaf.values.push_back({0.0});
        round_trees[c] = std::move(leaf);
        continue;
      }
      for (std::size_t r = 0; r < rows; ++r) {
        grad[r] = data.counts[r][c] - row_n[r] * P[r][c];
        hess[r] = row_n[r] * P[r][c] * (1.0 - P[r][c]);
      }
      std::vector<std::size_t> all(rows);
      std::iota(all.begin(), all.end(), 0);
      BoostTreeBuilder b{data, grad, hess, row_n, params, scale, {}};
      b.build(all, 0);
      round_trees[c] = std::move(b.tree);
    }
    for (std::size_t r = 0; r < rows; ++r)
      for (int c = 0; c < C; ++c) F[r][c] += params.learning_rate * round_trees[c].leaf(data.x[r])[0];
    for (auto& t : round_trees) trees.push_back(std::move(t));
  }
  auto policy = std::make_shared<TreeEnsemblePolicy>(clusters, horizon, EnsembleMode::boosting, std::move(trees),
                                                     std::move(base), params.learning_rate);
  policy->diagnostics.push_back("unique feature rows: " + std::to_string(rows));
  return policy;
}

}  // namespace searchrec
