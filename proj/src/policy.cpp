#include "searchrec/policy.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <nlohmann/json.hpp>
#include <numeric>
#include <unordered_map>

#include "csv.hpp"

namespace searchrec {

using nlohmann::json;

int action_index(const ConsumerAction& a, int k) {
  switch (a.kind) {
    case ActionKind::search:
      require(a.cluster >= 0 && a.cluster < k, "search cluster out of range");
      return a.cluster;
    case ActionKind::convert:
      require(a.cluster >= 0 && a.cluster < k, "convert cluster out of range");
      return k + a.cluster;
    case ActionKind::exit:
      return 2 * k;
  }
  return 2 * k;
}

ConsumerAction action_from_index(int index, int k) {
  require(index >= 0 && index <= 2 * k, "action index out of range");
  if (index < k) return ConsumerAction::search(index);
  if (index < 2 * k) return ConsumerAction::convert(index - k);
  return ConsumerAction::exit();
}

ConsumerPolicy::ConsumerPolicy(int clusters, int horizon) : k_(clusters), horizon_(horizon) {
  require(clusters >= 1, "policy: K must be >= 1");
  require(horizon >= 1, "policy: horizon must be >= 1");
  initial_.assign(static_cast<std::size_t>(action_count(clusters)), 0.0);
  for (int k = 0; k < clusters; ++k) initial_[k] = 1.0 / clusters;
}

void ConsumerPolicy::set_initial(Vector initial) {
  require(initial.size() == static_cast<std::size_t>(classes()), "initial distribution needs 2K+1 entries");
  double s = 0.0;
  for (double p : initial) {
    require(p >= 0.0, "initial distribution has a negative entry");
    s += p;
  }
  require(std::abs(s - 1.0) <= 1e-9, "initial distribution must sum to 1");
  initial_ = std::move(initial);
}

Vector featurize(const RecState& state, int horizon) {
  const int k = state.A.dimension() > 0 ? state.A.dimension() : state.R.dimension();
  require(k > 0, "featurize: state carries no dimension");
  Vector x(feature_dimension(k), 0.0);
  x[0] = static_cast<double>(state.t) / horizon;
  x[1 + state.a] = 1.0;
  const std::size_t a0 = 1 + k, r0 = 2 + 2 * k;
  if (state.A.is_empty()) {
    x[a0 + k] = 1.0;
  } else {
    for (int i = 0; i < k; ++i) x[a0 + i] = state.A[i];
  }
  if (state.R.is_empty()) {
    x[r0 + k] = 1.0;
  } else {
    for (int i = 0; i < k; ++i) x[r0 + i] = state.R[i];
  }
  return x;
}

namespace {

void softmax_inplace(Vector& eta, const std::vector<bool>& active) {
  double mx = -std::numeric_limits<double>::infinity();
  for (std::size_t c = 0; c < eta.size(); ++c)
    if (active[c]) mx = std::max(mx, eta[c]);
  double s = 0.0;
  for (std::size_t c = 0; c < eta.size(); ++c) {
    eta[c] = active[c] ? std::exp(eta[c] - mx) : 0.0;
    s += eta[c];
  }
  for (double& p : eta) p /= s;
}

// Observations grouped by identical feature rows.
struct Aggregated {
  Matrix x;       // unique feature rows
  Matrix counts;  // per row, count per class
  Vector totals;
  Vector class_totals;
  double n = 0.0;
};

Aggregated aggregate(const std::vector<Observation>& data, int clusters, int horizon) {
  const int classes = action_count(clusters);
  Aggregated agg;
  agg.class_totals.assign(classes, 0.0);
  std::unordered_map<std::string, std::size_t> index;
  std::string key;
  for (const auto& obs : data) {
    require(obs.action >= 0 && obs.action < classes, "observation action out of range");
    Vector x = featurize(obs.state, horizon);
    key.assign(reinterpret_cast<const char*>(x.data()), x.size() * sizeof(double));
    auto [it, inserted] = index.emplace(key, agg.x.size());
    if (inserted) {
      agg.x.push_back(std::move(x));
      agg.counts.emplace_back(classes, 0.0);
      agg.totals.push_back(0.0);
    }
    agg.counts[it->second][obs.action] += 1.0;
    agg.totals[it->second] += 1.0;
    agg.class_totals[obs.action] += 1.0;
    agg.n += 1.0;
  }
  return agg;
}

struct LogitLayout {
  std::vector<bool> active;
  std::vector<int> free;  // active non-reference classes
  int reference = -1;
};

LogitLayout logit_layout(const Vector& class_totals) {
  LogitLayout l;
  const int classes = static_cast<int>(class_totals.size());
  l.active.resize(classes);
  for (int c = 0; c < classes; ++c) l.active[c] = class_totals[c] > 0.0;
  for (int c = classes - 1; c >= 0; --c)
    if (l.active[c]) {
      l.reference = c;
      break;
    }
  for (int c = 0; c < classes; ++c)
    if (l.active[c] && c != l.reference) l.free.push_back(c);
  return l;
}

}  // namespace

// ---------------------------------------------------------------------------
// Multinomial logit

MultinomialLogitPolicy::MultinomialLogitPolicy(int clusters, int horizon, Matrix coefficients, std::vector<bool> active)
    : ConsumerPolicy(clusters, horizon), coef_(std::move(coefficients)), active_(std::move(active)) {
  require(coef_.size() == static_cast<std::size_t>(classes()), "logit: one coefficient row per class");
  require(active_.size() == coef_.size(), "logit: active mask size");
  for (const auto& row : coef_)
    require(row.size() == feature_dimension(clusters) + 1, "logit: coefficient row length");
  require(std::find(active_.begin(), active_.end(), true) != active_.end(), "logit: no active class");
}

Vector MultinomialLogitPolicy::predict_features(const Vector& x) const {
  Vector eta(coef_.size(), 0.0);
  for (std::size_t c = 0; c < coef_.size(); ++c) {
    if (!active_[c]) continue;
    double v = coef_[c][0];
    for (std::size_t j = 0; j < x.size(); ++j) v += coef_[c][j + 1] * x[j];
    eta[c] = v;
  }
  softmax_inplace(eta, active_);
  return eta;
}

Vector MultinomialLogitPolicy::predict(const RecState& state) const {
  return predict_features(featurize(state, horizon()));
}

json MultinomialLogitPolicy::model_json() const {
  return json{{"coefficients", coef_}, {"active", active_}};
}

std::shared_ptr<MultinomialLogitPolicy> MultinomialLogitPolicy::from_json(int clusters, int horizon, const json& j) {
  return std::make_shared<MultinomialLogitPolicy>(clusters, horizon, j.at("coefficients").get<Matrix>(),
                                                  j.at("active").get<std::vector<bool>>());
}

namespace {

struct LogitProblem {
  Eigen::MatrixXd X;  // rows with leading 1
  Eigen::MatrixXd Y;  // counts per free class... all classes
  Eigen::VectorXd totals;
  double n;
  LogitLayout layout;
  double ridge;
  int classes;

  int dim() const { return static_cast<int>(X.cols()); }
  int params() const { return static_cast<int>(layout.free.size()) * dim(); }

  // Probabilities for all classes (rows of P), reference eta = 0.
  Eigen::MatrixXd probabilities(const Eigen::VectorXd& theta) const {
    const int m = static_cast<int>(layout.free.size());
    const int d = dim();
    Eigen::MatrixXd eta = Eigen::MatrixXd::Zero(X.rows(), classes);
    for (int f = 0; f < m; ++f) eta.col(layout.free[f]) = X * theta.segment(f * d, d);
    Eigen::MatrixXd P(X.rows(), classes);
    for (Eigen::Index r = 0; r < X.rows(); ++r) {
      double mx = -std::numeric_limits<double>::infinity();
      for (int c = 0; c < classes; ++c)
        if (layout.active[c]) mx = std::max(mx, eta(r, c));
      double s = 0.0;
      for (int c = 0; c < classes; ++c) {
        P(r, c) = layout.active[c] ? std::exp(eta(r, c) - mx) : 0.0;
        s += P(r, c);
      }
      P.row(r) /= s;
    }
    return P;
  }

  double penalty(const Eigen::VectorXd& theta) const {
    double s = 0.0;
    const int d = dim();
    for (std::size_t f = 0; f < layout.free.size(); ++f)
      s += theta.segment(static_cast<Eigen::Index>(f) * d + 1, d - 1).squaredNorm();
    return 0.5 * ridge * s;
  }

  double value(const Eigen::VectorXd& theta, const Eigen::MatrixXd& P) const {
    double ll = 0.0;
    for (Eigen::Index r = 0; r < X.rows(); ++r)
      for (int c = 0; c < classes; ++c)
        if (Y(r, c) > 0.0) ll += Y(r, c) * std::log(P(r, c));
    return ll / n - penalty(theta);
  }

  Eigen::VectorXd gradient(const Eigen::VectorXd& theta, const Eigen::MatrixXd& P) const {
    const int d = dim();
    Eigen::VectorXd g(params());
    for (std::size_t f = 0; f < layout.free.size(); ++f) {
      const int c = layout.free[f];
      Eigen::VectorXd resid = Y.col(c) - totals.cwiseProduct(P.col(c));
      Eigen::VectorXd gf = X.transpose() * resid / n;
      Eigen::VectorXd slopes = theta.segment(static_cast<Eigen::Index>(f) * d, d);
      slopes(0) = 0.0;
      g.segment(static_cast<Eigen::Index>(f) * d, d) = gf - ridge * slopes;
    }
    return g;
  }

  // Negative Hessian (positive definite).
  Eigen::MatrixXd neg_hessian(const Eigen::MatrixXd& P) const {
    const int d = dim();
    const int m = static_cast<int>(layout.free.size());
    Eigen::MatrixXd H = Eigen::MatrixXd::Zero(params(), params());
    for (int a = 0; a < m; ++a) {
      for (int b = a; b < m; ++b) {
        const int ca = layout.free[a], cb = layout.free[b];
        Eigen::VectorXd w = totals.cwiseProduct(P.col(ca));
        if (a == b)
          w = w.cwiseProduct(Eigen::VectorXd::Ones(P.rows()) - P.col(ca));
        else
          w = -w.cwiseProduct(P.col(cb));
        Eigen::MatrixXd block = X.transpose() * (X.array().colwise() * w.array()).matrix() / n;
        H.block(a * d, b * d, d, d) = block;
        if (a != b) H.block(b * d, a * d, d, d) = block.transpose();
      }
      for (int j = 1; j < d; ++j) H(a * d + j, a * d + j) += ridge;
    }
    return H;
  }
};

LogitProblem make_problem(const std::vector<Observation>& data, int clusters, int horizon, double ridge) {
  const auto agg = aggregate(data, clusters, horizon);
  LogitProblem p;
  p.classes = action_count(clusters);
  p.layout = logit_layout(agg.class_totals);
  p.ridge = ridge;
  p.n = agg.n;
  const auto rows = static_cast<Eigen::Index>(agg.x.size());
  const auto d = static_cast<Eigen::Index>(feature_dimension(clusters) + 1);
  p.X.resize(rows, d);
  p.Y.resize(rows, p.classes);
  p.totals.resize(rows);
  for (Eigen::Index r = 0; r < rows; ++r) {
    p.X(r, 0) = 1.0;
    for (Eigen::Index j = 1; j < d; ++j) p.X(r, j) = agg.x[r][j - 1];
    for (int c = 0; c < p.classes; ++c) p.Y(r, c) = agg.counts[r][c];
    p.totals(r) = agg.totals[r];
  }
  return p;
}

Eigen::VectorXd pack(const LogitProblem& p, const Matrix& coefficients) {
  const int d = p.dim();
  Eigen::VectorXd theta(p.params());
  for (std::size_t f = 0; f < p.layout.free.size(); ++f) {
    const auto& ref = coefficients[p.layout.reference];
    const auto& row = coefficients[p.layout.free[f]];
    for (int j = 0; j < d; ++j) theta(static_cast<Eigen::Index>(f) * d + j) = row[j] - ref[j];
  }
  return theta;
}

Matrix unpack(const LogitProblem& p, const Eigen::VectorXd& theta) {
  const int d = p.dim();
  Matrix coef(p.classes, Vector(d, 0.0));
  for (std::size_t f = 0; f < p.layout.free.size(); ++f)
    for (int j = 0; j < d; ++j) coef[p.layout.free[f]][j] = theta(static_cast<Eigen::Index>(f) * d + j);
  return coef;
}

}  // namespace

LogitObjective logit_objective(const std::vector<Observation>& train, int clusters, int horizon, const Matrix& coefficients,
                               const std::vector<bool>& active, double ridge) {
  auto p = make_problem(train, clusters, horizon, ridge);
  require(active == p.layout.active, "logit_objective: active classes differ from the data");
  const Eigen::VectorXd theta = pack(p, coefficients);
  const Eigen::MatrixXd P = p.probabilities(theta);
  const Eigen::VectorXd g = p.gradient(theta, P);
  return {p.value(theta, P), Vector(g.data(), g.data() + g.size())};
}

std::shared_ptr<MultinomialLogitPolicy> fit_multinomial_logit(const std::vector<Observation>& train, int clusters,
                                                              int horizon, const LogitOptions& options) {
  require(!train.empty(), "fit_multinomial_logit: empty training set");
  require(options.ridge >= 0.0, "fit_multinomial_logit: ridge must be >= 0");
  auto p = make_problem(train, clusters, horizon, options.ridge);
  std::vector<std::string> notes;
  for (int c = 0; c < p.classes; ++c)
    if (!p.layout.active[c])
      notes.push_back("class " + std::to_string(c) + " absent from training data; collapsed to probability 0");

  Eigen::VectorXd theta = Eigen::VectorXd::Zero(p.params());
  // Start from the intercept-only optimum.
  const int d = p.dim();
  const double ref_total = p.Y.col(p.layout.reference).sum();
  for (std::size_t f = 0; f < p.layout.free.size(); ++f)
    theta(static_cast<Eigen::Index>(f) * d) = std::log(p.Y.col(p.layout.free[f]).sum() / ref_total);

  Eigen::MatrixXd P = p.probabilities(theta);
  double f = p.value(theta, P);
  Eigen::VectorXd g = p.gradient(theta, P);
  int iter = 0;
  while (g.norm() >= options.tolerance) {
    if (iter >= options.max_iter)
      throw ConvergenceError("fit_multinomial_logit: no convergence after " + std::to_string(iter) +
                                 " iterations (gradient norm " + std::to_string(g.norm()) + ")",
                             g.norm());
    ++iter;
    const Eigen::MatrixXd H = p.neg_hessian(P);
    Eigen::VectorXd step = H.ldlt().solve(g);
    if (!step.allFinite()) step = g;
    double alpha = 1.0;
    bool accepted = false;
    for (int ls = 0; ls < 60; ++ls) {
      const Eigen::VectorXd cand = theta + alpha * step;
      const Eigen::MatrixXd Pc = p.probabilities(cand);
      const double fc = p.value(cand, Pc);
      if (fc >= f + 1e-4 * alpha * g.dot(step) || (fc >= f && alpha < 1e-6)) {
        theta = cand;
        P = Pc;
        f = fc;
        accepted = true;
        break;
      }
      alpha *= 0.5;
    }
    g = p.gradient(theta, P);
    if (!accepted) {
      // The objective is flat to rounding along the Newton direction.
      if (g.norm() < std::sqrt(options.tolerance)) break;
      throw ConvergenceError("fit_multinomial_logit: line search failed (gradient norm " +
                                 std::to_string(g.norm()) + ")",
                             g.norm());
    }
  }
  auto policy = std::make_shared<MultinomialLogitPolicy>(clusters, horizon, unpack(p, theta), p.layout.active);
  policy->diagnostics = std::move(notes);
  policy->diagnostics.push_back("newton iterations: " + std::to_string(iter));
  policy->diagnostics.push_back("final gradient norm: " + std::to_string(g.norm()));
  return policy;
}

// ---------------------------------------------------------------------------
// Utility truth

UtilityParams UtilityParams::calibrated(int clusters) {
  UtilityParams p;
  p.search_base.assign(clusters, 0.0);
  p.convert_base.assign(clusters, -3.93);
  for (int k = 0; k < clusters; ++k) {
    const double spread = clusters > 1 ? static_cast<double>(k) / (clusters - 1) : 0.5;
    p.search_base[k] = 0.3 - 0.4 * spread;
  }
  // Tuned at K = 4, T = 22 under a 0.75-diagonal status quo: about 6.7
  // pageviews and 2.4% conversion per session.
  p.exit_base = 3.17 - std::log(static_cast<double>(clusters));
  p.exit_time = 1.47;
  p.exit_match = -3.74;
  p.stay = 1.14;
  p.history = 0.2;
  p.rec_search = 3.39;
  p.current = 0.27;
  p.rec_convert = -0.83;
  p.match = 2.11;
  p.history_convert = 0.3;
  return p;
}

json UtilityParams::to_json() const {
  return json{{"search_base", search_base}, {"convert_base", convert_base}, {"exit_base", exit_base},
              {"exit_time", exit_time},     {"exit_match", exit_match},     {"stay", stay},
              {"history", history},         {"rec_search", rec_search},     {"current", current},
              {"rec_convert", rec_convert}, {"match", match},               {"history_convert", history_convert},
              {"initial", initial}};
}

UtilityParams UtilityParams::from_json(const json& j) {
  UtilityParams p;
  if (j.contains("clusters")) p = calibrated(j.at("clusters").get<int>());
  auto get = [&](const char* name, auto& field) {
    if (j.contains(name)) j.at(name).get_to(field);
  };
  get("search_base", p.search_base);
  get("convert_base", p.convert_base);
  get("exit_base", p.exit_base);
  get("exit_time", p.exit_time);
  get("exit_match", p.exit_match);
  get("stay", p.stay);
  get("history", p.history);
  get("rec_search", p.rec_search);
  get("current", p.current);
  get("rec_convert", p.rec_convert);
  get("match", p.match);
  get("history_convert", p.history_convert);
  get("initial", p.initial);
  require(!p.search_base.empty() && p.search_base.size() == p.convert_base.size(),
          "utility truth: search_base and convert_base must have K entries");
  return p;
}

UtilityTruthPolicy::UtilityTruthPolicy(int clusters, int horizon, UtilityParams params)
    : ConsumerPolicy(clusters, horizon), params_(std::move(params)) {
  require(params_.search_base.size() == static_cast<std::size_t>(clusters) &&
              params_.convert_base.size() == static_cast<std::size_t>(clusters),
          "utility truth: bases must have K entries");
  if (!params_.initial.empty()) {
    set_initial(params_.initial);
  } else {
    Vector eta(static_cast<std::size_t>(classes()));
    for (int k = 0; k < clusters; ++k) {
      eta[k] = params_.search_base[k];
      eta[clusters + k] = params_.convert_base[k];
    }
    eta[2 * clusters] = params_.exit_base;
    softmax_inplace(eta, std::vector<bool>(eta.size(), true));
    set_initial(eta);
  }
}

Vector UtilityTruthPolicy::predict(const RecState& s) const {
  const int K = clusters();
  const auto& p = params_;
  Vector eta(static_cast<std::size_t>(classes()));
  const double tt = static_cast<double>(s.t) / horizon();
  for (int k = 0; k < K; ++k) {
    const double here = s.a == k ? 1.0 : 0.0;
    eta[k] = p.search_base[k] + p.stay * here + p.history * s.A[k] + p.rec_search * s.R[k];
    eta[K + k] = p.convert_base[k] + p.current * here + p.rec_convert * s.R[k] + p.match * here * s.R[k] +
                 p.history_convert * s.A[k];
  }
  eta[2 * K] = p.exit_base + p.exit_time * tt + p.exit_match * s.R[s.a];
  softmax_inplace(eta, std::vector<bool>(eta.size(), true));
  return eta;
}

json UtilityTruthPolicy::model_json() const { return params_.to_json(); }

FunctionPolicy::FunctionPolicy(int clusters, int horizon, Fn fn, std::string tag)
    : ConsumerPolicy(clusters, horizon), fn_(std::move(fn)), tag_(std::move(tag)) {}

json FunctionPolicy::model_json() const { throw ValidationError("policy '" + tag_ + "' cannot be serialized"); }

// ---------------------------------------------------------------------------
// Serialization

json policy_to_json(const ConsumerPolicy& policy) {
  return json{{"format", "searchrec-policy"}, {"version", 1},
              {"method", policy.method()},    {"clusters", policy.clusters()},
              {"horizon", policy.horizon()},  {"initial", policy.initial()},
              {"diagnostics", policy.diagnostics}, {"model", policy.model_json()}};
}

void save_policy(const std::filesystem::path& path, const ConsumerPolicy& policy) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ValidationError("cannot write " + path.string());
  out << policy_to_json(policy).dump() << '\n';
}

PolicyPtr policy_from_json(const json& j) {
  if (j.value("format", "") != "searchrec-policy") throw ValidationError("not a policy file");
  if (j.value("version", 0) != 1) throw ValidationError("unsupported policy version");
  const int k = j.at("clusters").get<int>();
  const int horizon = j.at("horizon").get<int>();
  const auto method = j.at("method").get<std::string>();
  std::shared_ptr<ConsumerPolicy> out;
  if (method == "logit") {
    out = MultinomialLogitPolicy::from_json(k, horizon, j.at("model"));
  } else if (method == "forest") {
    out = TreeEnsemblePolicy::from_json(k, horizon, EnsembleMode::bagging, j.at("model"));
  } else if (method == "boost") {
    out = TreeEnsemblePolicy::from_json(k, horizon, EnsembleMode::boosting, j.at("model"));
  } else if (method == "utility") {
    out = std::make_shared<UtilityTruthPolicy>(k, horizon, UtilityParams::from_json(j.at("model")));
  } else {
    throw ValidationError("unknown policy method '" + method + "'");
  }
  out->set_initial(j.at("initial").get<Vector>());
  if (j.contains("diagnostics")) out->diagnostics = j.at("diagnostics").get<std::vector<std::string>>();
  return out;
}

PolicyPtr load_policy(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot read " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw ValidationError(path.string() + ": " + e.what());
  }
  return policy_from_json(j);
}

// ---------------------------------------------------------------------------
// Metrics

FitReport evaluate_predictions(const Matrix& predicted, const std::vector<int>& observed) {
  require(predicted.size() == observed.size(), "evaluate: size mismatch");
  require(!observed.empty(), "evaluate: empty holdout");
  FitReport r;
  r.n = observed.size();
  const std::size_t classes = predicted.front().size();
  const double n = static_cast<double>(r.n);
  double correct = 0.0, ll = 0.0, hell = 0.0;
  Vector freq(classes, 0.0);
  for (std::size_t i = 0; i < observed.size(); ++i) {
    const auto& p = predicted[i];
    require(p.size() == classes, "evaluate: ragged predictions");
    const int y = observed[i];
    require(y >= 0 && static_cast<std::size_t>(y) < classes, "evaluate: class out of range");
    freq[y] += 1.0;
    const auto arg = static_cast<int>(std::max_element(p.begin(), p.end()) - p.begin());
    if (arg == y) correct += 1.0;
    double py = p[y];
    if (py < 1e-12) {
      py = 1e-12;
      ++r.clamped;
    }
    ll += std::log(py);
    for (std::size_t c = 0; c < classes; ++c) {
      const double d = (static_cast<int>(c) == y ? 1.0 : 0.0) - std::sqrt(std::max(0.0, p[c]));
      hell += d * d;
    }
  }
  r.accuracy = correct / n;
  r.log_loss = -ll / n;
  r.hellinger = hell / n;
  r.lift = r.accuracy * static_cast<double>(classes);
  double ll0 = 0.0;
  for (double f : freq)
    if (f > 0.0) ll0 += f * std::log(f / n);
  // Likelihood ratios in log space; L^(2/N) = exp(2 ln L / N).
  const double denom = 1.0 - std::exp(2.0 * ll0 / n);
  r.nagelkerke_r2 = denom > 0.0 ? (1.0 - std::exp(2.0 * (ll0 - ll) / n)) / denom : 0.0;
  return r;
}

FitReport evaluate(const ConsumerPolicy& policy, const std::vector<Observation>& holdout) {
  Matrix predicted;
  std::vector<int> observed;
  predicted.reserve(holdout.size());
  observed.reserve(holdout.size());
  for (const auto& o : holdout) {
    predicted.push_back(policy.predict(o.state));
    observed.push_back(o.action);
  }
  return evaluate_predictions(predicted, observed);
}

std::size_t select_model(const std::vector<FitCell>& grid) {
  require(!grid.empty(), "select_model: empty grid");
  std::size_t best = 0;
  for (std::size_t i = 1; i < grid.size(); ++i) {
    const auto& a = grid[i];
    const auto& b = grid[best];
    if (a.report.lift != b.report.lift) {
      if (a.report.lift > b.report.lift) best = i;
    } else if (a.report.nagelkerke_r2 != b.report.nagelkerke_r2) {
      if (a.report.nagelkerke_r2 > b.report.nagelkerke_r2) best = i;
    } else if (a.silhouette > b.silhouette) {
      best = i;
    }
  }
  return best;
}

void write_fit_grid_csv(const std::filesystem::path& path, const std::vector<FitCell>& grid) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ValidationError("cannot write " + path.string());
  out << "method,k,accuracy,log_loss,hellinger,lift,nagelkerke_r2,silhouette,n,clamped\n";
  for (const auto& c : grid) {
    out << c.method << ',' << c.k << ',' << csv::format_double(c.report.accuracy) << ','
        << csv::format_double(c.report.log_loss) << ',' << csv::format_double(c.report.hellinger) << ','
        << csv::format_double(c.report.lift) << ',' << csv::format_double(c.report.nagelkerke_r2) << ','
        << csv::format_double(c.silhouette) << ',' << c.report.n << ',' << c.report.clamped << '\n';
  }
}

Vector estimate_initial(const std::vector<int>& first_actions, int clusters) {
  require(!first_actions.empty(), "estimate_initial: no sessions");
  Vector p(static_cast<std::size_t>(action_count(clusters)), 0.0);
  for (int a : first_actions) {
    require(a >= 0 && a < action_count(clusters), "estimate_initial: action out of range");
    p[a] += 1.0;
  }
  for (double& x : p) x /= static_cast<double>(first_actions.size());
  return p;
}

}  // namespace searchrec
