#include "searchrec/counterfactual.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>

#include "csv.hpp"
#include "searchrec/parallel.hpp"

namespace searchrec {

namespace {

const std::vector<std::pair<Scenario, const char*>>& scenario_table() {
  static const std::vector<std::pair<Scenario, const char*>> table = {
      {Scenario::status_quo, "status_quo"},
      {Scenario::static_matrix_opt, "static_matrix_opt"},
      {Scenario::dynamic_matrix_opt, "dynamic_matrix_opt"},
      {Scenario::prev_actions_only, "prev_actions_only"},
      {Scenario::prev_actions_and_recs, "prev_actions_and_recs"},
      {Scenario::ignore_margins, "ignore_margins"},
      {Scenario::ignore_churn, "ignore_churn"},
      {Scenario::one_step_lookahead, "one_step_lookahead"},
      {Scenario::first_best, "first_best"},
  };
  return table;
}

bool better(double candidate, double incumbent) {
  return candidate > incumbent + 1e-12 * std::max(1.0, std::abs(incumbent));
}

}  // namespace

const std::vector<Scenario>& all_scenarios() {
  static const std::vector<Scenario> all = [] {
    std::vector<Scenario> v;
    for (const auto& [s, name] : scenario_table()) v.push_back(s);
    return v;
  }();
  return all;
}

std::string scenario_name(Scenario s) {
  for (const auto& [x, name] : scenario_table())
    if (x == s) return name;
  throw ValidationError("unknown scenario");
}

Scenario parse_scenario(std::string_view name) {
  for (const auto& [x, n] : scenario_table())
    if (name == n) return x;
  throw ValidationError("unknown scenario '" + std::string(name) + "'");
}

std::vector<Scenario> parse_scenario_list(std::string_view list) {
  if (list == "all") return all_scenarios();
  std::vector<Scenario> out;
  std::size_t pos = 0;
  while (pos <= list.size()) {
    const std::size_t comma = std::min(list.find(',', pos), list.size());
    const auto item = list.substr(pos, comma - pos);
    if (item.empty()) throw ValidationError("empty scenario name in list");
    const Scenario s = parse_scenario(item);
    if (std::find(out.begin(), out.end(), s) == out.end()) out.push_back(s);
    pos = comma + 1;
  }
  return out;
}

// ---------------------------------------------------------------------------

std::size_t feature_group(const StateSpace& space, const FeatureMask& mask, int t, std::size_t s) {
  const auto key = space.key(t, s);
  const std::size_t P = space.lattice().point_count();
  std::size_t g = mask.a ? static_cast<std::size_t>(key.a) : 0;
  if (mask.A) g = g * P + key.A;
  if (mask.R) g = g * P + key.R;
  return g;
}

namespace {

std::size_t group_count(const StateSpace& space, const FeatureMask& mask) {
  const std::size_t P = space.lattice().point_count();
  return (mask.a ? static_cast<std::size_t>(space.clusters()) : 1) * (mask.A ? P : 1) * (mask.R ? P : 1);
}

// One backward sweep. With weights, each group picks the action maximizing the
// weight-averaged Q (continuation under the new rule); groups without mass, and
// the first sweep, use uniform weights.
LatticePolicy restricted_sweep(const PlanningModel& model, const FeatureMask& mask, const std::vector<Vector>* weights,
                               const LatticePolicy* old) {
  const auto& space = model.space();
  const int T = space.horizon(), K = space.clusters();
  const std::size_t nA = space.actions().size();
  const std::size_t G = group_count(space, mask);
  LatticePolicy out;
  out.deterministic.resize(T);
  Vector next_V, V;
  Vector scratch(static_cast<std::size_t>(K) + 1);
  for (int t = T; t >= 1; --t) {
    const std::size_t n = space.size(t);
    Vector Q(n * nA);
    Vector weighted(G * nA, 0.0), uniform(G * nA, 0.0), mass(G, 0.0);
    std::vector<char> seen(G, 0);
    std::vector<std::uint32_t> incumbent(G, 0);
    for (std::size_t s = 0; s < n; ++s) {
      const std::size_t g = feature_group(space, mask, t, s);
      if (!seen[g] && old) incumbent[g] = old->deterministic[t - 1][s];
      seen[g] = 1;
      const double w = weights ? (*weights)[t - 1][s] : 0.0;
      mass[g] += w;
      for (std::size_t r = 0; r < nA; ++r) {
        const double* e = model.entry(t, s, r, scratch.data());
        double q = e[0];
        if (t < T)
          for (int k = 0; k < K; ++k)
            if (e[1 + k] > 0.0) q += e[1 + k] * next_V[space.next_state(t, s, r, k)];
        Q[s * nA + r] = q;
        uniform[g * nA + r] += q;
        weighted[g * nA + r] += w * q;
      }
    }
    std::vector<std::uint32_t> choice(G, 0);
    for (std::size_t g = 0; g < G; ++g) {
      if (!seen[g]) continue;
      const double* score = (weights && mass[g] > 0.0 ? weighted.data() : uniform.data()) + g * nA;
      std::uint32_t arg = old ? incumbent[g] : 0;
      double best = score[arg];
      for (std::size_t r = 0; r < nA; ++r)
        if (better(score[r], best)) {
          best = score[r];
          arg = static_cast<std::uint32_t>(r);
        }
      choice[g] = arg;
    }
    auto& act = out.deterministic[t - 1];
    act.resize(n);
    V.assign(n, 0.0);
    for (std::size_t s = 0; s < n; ++s) {
      act[s] = choice[feature_group(space, mask, t, s)];
      V[s] = Q[s * nA + act[s]];
    }
    next_V.swap(V);
  }
  return out;
}

}  // namespace

LatticePolicy restricted_plan(const PlanningModel& model, const FeatureMask& mask, const RestrictedOptions& options,
                              const LatticePolicy* start) {
  if (!mask.t) throw ValidationError("feature mask leaves no usable feature set: the time index must be kept");
  require(options.iterations >= 0, "restricted planner: iterations must be >= 0");
  if (start) require(start->is_deterministic(), "restricted planner: start rule must be deterministic");
  LatticePolicy cur = start ? *start : restricted_sweep(model, mask, nullptr, nullptr);
  for (int i = 0; i < options.iterations; ++i) {
    const auto occ = occupancy(model, cur);
    cur = restricted_sweep(model, mask, &occ, &cur);
  }
  return cur;
}

// ---------------------------------------------------------------------------

namespace {

// d/dp_j of the multiset probability of r under row p.
void multiset_gradient(const Vector& p, const RecAction& r, double scale, Vector& grad) {
  const auto& s = r.slots;
  const double coef = s[0] == s[2] ? 1.0 : (s[0] == s[1] || s[1] == s[2]) ? 3.0 : 6.0;
  grad[s[0]] += scale * coef * p[s[1]] * p[s[2]];
  grad[s[1]] += scale * coef * p[s[0]] * p[s[2]];
  grad[s[2]] += scale * coef * p[s[0]] * p[s[1]];
}

void check_matrices(const std::vector<Matrix>& m, int K, int T) {
  require(m.size() == 1 || m.size() == static_cast<std::size_t>(T), "matrix policy: need 1 or T matrices");
  for (const auto& x : m) {
    require(x.size() == static_cast<std::size_t>(K), "matrix policy: need K rows");
    for (const auto& row : x) require(row.size() == static_cast<std::size_t>(K), "matrix policy: need K columns");
  }
}

std::vector<Matrix> project_rows(std::vector<Matrix> m) {
  for (auto& x : m)
    for (auto& row : x) row = project_to_simplex(row);
  return m;
}

}  // namespace

MatrixValue matrix_value(const PlanningModel& model, const std::vector<Matrix>& matrices, bool with_gradient) {
  const auto& space = model.space();
  const int T = space.horizon(), K = space.clusters();
  check_matrices(matrices, K, T);
  const auto& actions = space.actions();
  const std::size_t nA = actions.size();
  auto mat = [&](int t) -> const Matrix& { return matrices.size() == 1 ? matrices[0] : matrices[t - 1]; };

  // P[t-1][a][r]
  std::vector<Matrix> P(T, Matrix(K, Vector(nA)));
  for (int t = 1; t <= T; ++t)
    for (int a = 0; a < K; ++a)
      for (std::size_t r = 0; r < nA; ++r) P[t - 1][a][r] = multiset_probability(mat(t)[a], actions[r]);

  Vector scratch(static_cast<std::size_t>(K) + 1);
  std::vector<Vector> mu;
  if (with_gradient) {
    mu.resize(T);
    mu[0].assign(space.size(1), 0.0);
    for (int a = 0; a < K; ++a) mu[0][a] = model.initial()[a];
    for (int t = 1; t < T; ++t) {
      mu[t].assign(space.size(t + 1), 0.0);
      for (std::size_t s = 0; s < space.size(t); ++s) {
        const double m = mu[t - 1][s];
        if (m == 0.0) continue;
        const auto& row = P[t - 1][space.key(t, s).a];
        for (std::size_t r = 0; r < nA; ++r) {
          if (row[r] == 0.0) continue;
          const double* e = model.entry(t, s, r, scratch.data());
          for (int k = 0; k < K; ++k)
            if (e[1 + k] > 0.0) mu[t][space.next_state(t, s, r, k)] += m * row[r] * e[1 + k];
        }
      }
    }
  }

  // Backward: V and the occupancy-weighted Q per (t, a, r).
  std::vector<Matrix> G;
  if (with_gradient) G.assign(T, Matrix(K, Vector(nA, 0.0)));
  Vector next_V, V;
  for (int t = T; t >= 1; --t) {
    V.assign(space.size(t), 0.0);
    for (std::size_t s = 0; s < space.size(t); ++s) {
      const int a = space.key(t, s).a;
      const auto& row = P[t - 1][a];
      const double m = with_gradient ? mu[t - 1][s] : 0.0;
      double v = 0.0;
      for (std::size_t r = 0; r < nA; ++r) {
        if (row[r] == 0.0 && m == 0.0) continue;
        const double* e = model.entry(t, s, r, scratch.data());
        double q = e[0];
        if (t < T)
          for (int k = 0; k < K; ++k)
            if (e[1 + k] > 0.0) q += e[1 + k] * next_V[space.next_state(t, s, r, k)];
        v += row[r] * q;
        if (m != 0.0) G[t - 1][a][r] += m * q;
      }
      V[s] = v;
    }
    next_V.swap(V);
  }

  MatrixValue out;
  out.value = model.initial_profit();
  for (int a = 0; a < K; ++a) out.value += model.initial()[a] * next_V[a];
  if (!with_gradient) return out;

  out.gradient.assign(matrices.size(), Matrix(K, Vector(K, 0.0)));
  for (int t = 1; t <= T; ++t) {
    Matrix& g = out.gradient[matrices.size() == 1 ? 0 : t - 1];
    for (int a = 0; a < K; ++a)
      for (std::size_t r = 0; r < nA; ++r)
        if (G[t - 1][a][r] != 0.0) multiset_gradient(mat(t)[a], actions[r], G[t - 1][a][r], g[a]);
  }
  return out;
}

namespace {

double sup_diff(const std::vector<Matrix>& x, const std::vector<Matrix>& y) {
  double d = 0.0;
  for (std::size_t m = 0; m < x.size(); ++m)
    for (std::size_t i = 0; i < x[m].size(); ++i)
      for (std::size_t j = 0; j < x[m][i].size(); ++j) d = std::max(d, std::abs(x[m][i][j] - y[m][i][j]));
  return d;
}

double inner(const std::vector<Matrix>& x, const std::vector<Matrix>& y) {
  double d = 0.0;
  for (std::size_t m = 0; m < x.size(); ++m)
    for (std::size_t i = 0; i < x[m].size(); ++i)
      for (std::size_t j = 0; j < x[m][i].size(); ++j) d += x[m][i][j] * y[m][i][j];
  return d;
}

std::vector<Matrix> axpy(const std::vector<Matrix>& x, double alpha, const std::vector<Matrix>& g) {
  auto out = x;
  for (std::size_t m = 0; m < x.size(); ++m)
    for (std::size_t i = 0; i < x[m].size(); ++i)
      for (std::size_t j = 0; j < x[m][i].size(); ++j) out[m][i][j] += alpha * g[m][i][j];
  return out;
}

// Rows reached by little probability mass have proportionally small
// gradients; rescale each row by the value it carries (sum_k phi_k g_k).
std::vector<Matrix> row_scaled(const std::vector<Matrix>& phi, const std::vector<Matrix>& g) {
  auto out = g;
  std::vector<double> flow;
  double top = 0.0;
  for (std::size_t m = 0; m < phi.size(); ++m)
    for (std::size_t i = 0; i < phi[m].size(); ++i) {
      double f = 0.0;
      for (std::size_t j = 0; j < phi[m][i].size(); ++j) f += phi[m][i][j] * g[m][i][j];
      flow.push_back(std::abs(f));
      top = std::max(top, std::abs(f));
    }
  std::size_t r = 0;
  for (auto& m : out)
    for (auto& row : m) {
      const double c = top / std::max(flow[r++], 1e-6 * top);
      for (double& x : row) x *= c;
    }
  return out;
}

std::vector<Matrix> minus(const std::vector<Matrix>& x, const std::vector<Matrix>& y) {
  auto out = x;
  for (std::size_t m = 0; m < x.size(); ++m)
    for (std::size_t i = 0; i < x[m].size(); ++i)
      for (std::size_t j = 0; j < x[m][i].size(); ++j) out[m][i][j] -= y[m][i][j];
  return out;
}

}  // namespace

MatrixOptimum optimize_matrix(const PlanningModel& model, const std::vector<Matrix>& start, bool dynamic,
                              const MatrixOptimizeOptions& options) {
  const int T = model.horizon(), K = model.clusters();
  check_matrices(start, K, T);
  std::vector<Matrix> phi;
  if (dynamic) {
    phi = start.size() == 1 ? std::vector<Matrix>(T, start[0]) : start;
  } else {
    require(start.size() == 1, "static matrix optimization needs a single start matrix");
    phi = start;
  }
  phi = project_rows(std::move(phi));

  MatrixOptimum out;
  MatrixValue cur = matrix_value(model, phi);
  // Steps and the stationarity measure are taken relative to the objective's scale.
  const auto scale = [](double w) { return 1.0 / std::max(std::abs(w), 1e-12); };
  double alpha = scale(cur.value);
  for (int it = 0; it < options.max_iter; ++it) {
    out.stationarity = sup_diff(project_rows(axpy(phi, scale(cur.value), cur.gradient)), phi);
    out.iterations = it;
    if (out.stationarity < options.tolerance) {
      out.converged = true;
      break;
    }
    bool accepted = false;
    const auto direction = row_scaled(phi, cur.gradient);
    for (int halvings = 0; halvings < 60; ++halvings) {
      auto trial = project_rows(axpy(phi, alpha, direction));
      const double gain = inner(cur.gradient, minus(trial, phi));
      const double w = matrix_value(model, trial, false).value;
      if (w >= cur.value + options.armijo * gain && gain > 0.0) {
        phi = std::move(trial);
        cur = matrix_value(model, phi);
        accepted = true;
        alpha *= 2.0;
        break;
      }
      alpha *= 0.5;
    }
    if (!accepted) break;  // no ascent step is representable: numerically stationary
  }
  out.matrices = std::move(phi);
  out.value = cur.value;
  return out;
}

// ---------------------------------------------------------------------------

namespace {

// Free parameterization: the first K-1 entries of every row.
struct FreeMap {
  std::size_t matrices, K;
  std::size_t size() const { return matrices * K * (K - 1); }

  Eigen::VectorXd to_free(const std::vector<Matrix>& phi) const {
    Eigen::VectorXd x(static_cast<Eigen::Index>(size()));
    Eigen::Index i = 0;
    for (const auto& m : phi)
      for (const auto& row : m)
        for (std::size_t j = 0; j + 1 < K; ++j) x[i++] = row[j];
    return x;
  }
  std::vector<Matrix> from_free(const Eigen::VectorXd& x) const {
    std::vector<Matrix> phi(matrices, Matrix(K, Vector(K)));
    Eigen::Index i = 0;
    for (auto& m : phi)
      for (auto& row : m) {
        double rest = 1.0;
        for (std::size_t j = 0; j + 1 < K; ++j) {
          row[j] = x[i++];
          rest -= row[j];
        }
        row[K - 1] = rest;
      }
    return phi;
  }
  // Chain rule: d/dx_j = dW/dphi_j - dW/dphi_last within each row.
  Eigen::VectorXd free_gradient(const std::vector<Matrix>& g) const {
    Eigen::VectorXd out(static_cast<Eigen::Index>(size()));
    Eigen::Index i = 0;
    for (const auto& m : g)
      for (const auto& row : m)
        for (std::size_t j = 0; j + 1 < K; ++j) out[i++] = row[j] - row[K - 1];
    return out;
  }
};

QuadraticStep finish_step(const MatrixObjective& W, const std::vector<Matrix>& phi0, const FreeMap& map,
                          const Eigen::VectorXd& x0, const Eigen::VectorXd& D, Eigen::MatrixXd H) {
  H = 0.5 * (H + H.transpose());
  const double w0 = W(phi0);
  QuadraticStep out;
  out.matrices = phi0;
  out.value = w0;
  const Eigen::LLT<Eigen::MatrixXd> llt(-H);
  std::vector<Matrix> candidate;
  if (llt.info() == Eigen::Success) {
    const Eigen::VectorXd x = x0 + llt.solve(D);
    if (x.allFinite()) {
      candidate = project_rows(map.from_free(x));
      out.newton = true;
    }
  }
  if (!out.newton) {
    // Gradient fallback: projected step along D, first move capped at 1 per
    // coordinate, halved until W improves.
    const double dmax = D.cwiseAbs().maxCoeff();
    if (dmax > 0.0) {
      for (double alpha = 1.0 / dmax; alpha > 1e-12 / dmax; alpha *= 0.5) {
        auto trial = project_rows(map.from_free(x0 + alpha * D));
        if (W(trial) > w0) {
          candidate = std::move(trial);
          break;
        }
      }
    }
  }
  if (!candidate.empty()) {
    const double w = W(candidate);
    if (w >= w0) {
      out.matrices = std::move(candidate);
      out.value = w;
      out.improved = true;
    }
  }
  return out;
}

FreeMap free_map(const std::vector<Matrix>& phi0) {
  require(!phi0.empty() && !phi0[0].empty(), "quadratic step: empty matrix");
  const std::size_t K = phi0[0].size();
  require(K >= 2, "quadratic step: need K >= 2");
  for (const auto& m : phi0) {
    require(m.size() == K, "quadratic step: matrices must be K x K");
    for (const auto& row : m) require(row.size() == K, "quadratic step: matrices must be K x K");
  }
  return {phi0.size(), K};
}

}  // namespace

QuadraticStep quadratic_step(const MatrixObjective& W, const std::vector<Matrix>& phi0, double h) {
  require(h > 0.0, "quadratic step: h must be positive");
  const FreeMap map = free_map(phi0);
  const Eigen::VectorXd x0 = map.to_free(phi0);
  const auto n = static_cast<Eigen::Index>(map.size());
  auto f = [&](const Eigen::VectorXd& x) { return W(map.from_free(x)); };
  const double f0 = f(x0);
  Eigen::VectorXd D(n), fp(n), fm(n);
  Eigen::MatrixXd H(n, n);
  for (Eigen::Index j = 0; j < n; ++j) {
    Eigen::VectorXd x = x0;
    x[j] += h;
    fp[j] = f(x);
    x[j] = x0[j] - h;
    fm[j] = f(x);
    D[j] = (fp[j] - fm[j]) / (2.0 * h);
    H(j, j) = (fp[j] - 2.0 * f0 + fm[j]) / (h * h);
  }
  for (Eigen::Index j = 0; j < n; ++j)
    for (Eigen::Index k = j + 1; k < n; ++k) {
      Eigen::VectorXd x = x0;
      x[j] += h;
      x[k] += h;
      const double pp = f(x);
      x[k] = x0[k] - h;
      const double pm = f(x);
      x[j] = x0[j] - h;
      const double mm = f(x);
      x[k] = x0[k] + h;
      const double mp = f(x);
      H(j, k) = H(k, j) = (pp - pm - mp + mm) / (4.0 * h * h);
    }
  return finish_step(W, phi0, map, x0, D, H);
}

QuadraticStep quadratic_step(const MatrixObjective& W, const MatrixGradient& grad, const std::vector<Matrix>& phi0,
                             double h) {
  require(h > 0.0, "quadratic step: h must be positive");
  const FreeMap map = free_map(phi0);
  const Eigen::VectorXd x0 = map.to_free(phi0);
  const auto n = static_cast<Eigen::Index>(map.size());
  const Eigen::VectorXd D = map.free_gradient(grad(phi0));
  Eigen::MatrixXd H(n, n);
  for (Eigen::Index j = 0; j < n; ++j) {
    Eigen::VectorXd x = x0;
    x[j] += h;
    const Eigen::VectorXd gp = map.free_gradient(grad(map.from_free(x)));
    x[j] = x0[j] - h;
    const Eigen::VectorXd gm = map.free_gradient(grad(map.from_free(x)));
    H.col(j) = (gp - gm) / (2.0 * h);
  }
  return finish_step(W, phi0, map, x0, D, H);
}

QuadraticStep quadratic_step(const PlanningModel& model, const std::vector<Matrix>& phi0, double h) {
  check_matrices(phi0, model.clusters(), model.horizon());
  return quadratic_step([&](const std::vector<Matrix>& m) { return matrix_value(model, m, false).value; },
                        [&](const std::vector<Matrix>& m) { return matrix_value(model, m, true).gradient; }, phi0, h);
}

// ---------------------------------------------------------------------------

namespace {

class Suite {
 public:
  Suite(PolicyPtr policy, const Vector& margins, std::shared_ptr<const StateSpace> space, const Matrix& status_quo,
        const SuiteOptions& options, const WarmStart* warm)
      : policy_(std::move(policy)),
        margins_(margins),
        space_(std::move(space)),
        status_quo_(status_quo),
        options_(options),
        warm_(warm),
        base_(policy_, margins_, space_, {}, model_options()),
        fingerprint_(base_.fingerprint()) {
    validate_stochastic(status_quo_);
    require(status_quo_.size() == static_cast<std::size_t>(space_->clusters()), "status quo matrix: need K rows");
  }

  ScenarioOutcome run(Scenario s) {
    ScenarioOutcome out;
    out.scenario = s;
    switch (s) {
      case Scenario::status_quo: {
        out.matrices = {status_quo_};
        out.rule = LatticePolicy::from_matrix(MatrixRecPolicy(status_quo_), base_.space());
        break;
      }
      case Scenario::static_matrix_opt: {
        out.matrices = static_optimum(out.note);
        out.rule = LatticePolicy::from_matrix(MatrixRecPolicy(out.matrices[0]), base_.space());
        break;
      }
      case Scenario::dynamic_matrix_opt: {
        if (warm_) {
          const auto step = quadratic_step(base_, warm_->dynamic_opt);
          out.matrices = step.matrices;
          out.note = fast_path_note(step);
        } else {
          std::string ignored;
          const auto opt = optimize_matrix(base_, static_optimum(ignored), true, options_.matrix);
          out.matrices = opt.matrices;
          out.note = optimizer_note(opt);
        }
        out.rule = LatticePolicy::from_matrix(MatrixRecPolicy(out.matrices), base_.space());
        break;
      }
      case Scenario::prev_actions_only:
        out.rule = prev_actions_only();
        break;
      case Scenario::prev_actions_and_recs: {
        const LatticePolicy start = prev_actions_only();
        out.rule = restricted_plan(base_, {.t = true, .a = false, .A = true, .R = true}, options_.restricted, &start);
        break;
      }
      case Scenario::ignore_margins:
        out.table = solve_with({.uniform_margins = true});
        break;
      case Scenario::ignore_churn:
        out.table = solve_with({.zero_exit = true});
        break;
      case Scenario::one_step_lookahead:
        out.table = solve_with({.one_step = true});
        break;
      case Scenario::first_best:
        out.table = bellman_solve(base_, options_.workers);
        break;
    }
    if (out.table) out.rule = LatticePolicy::from_table(*out.table);
    out.profit = evaluate(*out.rule);
    return out;
  }

 private:
  ModelOptions model_options() const { return {options_.workers, options_.cache_bytes}; }

  // Every evaluation reads the same, undistorted model.
  double evaluate(const LatticePolicy& rule) const {
    if (base_.fingerprint() != fingerprint_ || base_.modifiers().zero_exit || base_.modifiers().uniform_margins ||
        base_.modifiers().one_step)
      throw Error("evaluation model changed between scenarios");
    return evaluate_exact(base_, rule).expected_profit;
  }

  ValueTable solve_with(ScenarioModifiers mods) const {
    const PlanningModel plan(policy_, margins_, space_, mods, model_options());
    return bellman_solve(plan, options_.workers);
  }

  const std::vector<Matrix>& static_optimum(std::string& note) {
    if (!static_) {
      if (warm_) {
        const auto step = quadratic_step(base_, warm_->static_opt);
        static_ = step.matrices;
        static_note_ = fast_path_note(step);
      } else {
        const auto opt = optimize_matrix(base_, {status_quo_}, false, options_.matrix);
        static_ = opt.matrices;
        static_note_ = optimizer_note(opt);
      }
    }
    note = static_note_;
    return *static_;
  }

  const LatticePolicy& prev_actions_only() {
    if (!prev_only_)
      prev_only_ = restricted_plan(base_, {.t = true, .a = false, .A = true, .R = false}, options_.restricted);
    return *prev_only_;
  }

  static std::string optimizer_note(const MatrixOptimum& o) {
    return (o.converged ? "converged" : "not converged") + std::string(" after ") + std::to_string(o.iterations) +
           " iterations, stationarity " + csv::format_double(o.stationarity);
  }
  static std::string fast_path_note(const QuadraticStep& s) {
    if (!s.improved) return "fast path kept the nominal optimum";
    return s.newton ? "fast path: newton step" : "fast path: gradient fallback";
  }

  PolicyPtr policy_;
  Vector margins_;
  std::shared_ptr<const StateSpace> space_;
  Matrix status_quo_;
  SuiteOptions options_;
  const WarmStart* warm_;
  PlanningModel base_;
  std::uint64_t fingerprint_;
  std::optional<std::vector<Matrix>> static_;
  std::string static_note_;
  std::optional<LatticePolicy> prev_only_;
};

}  // namespace

std::vector<ScenarioOutcome> run_scenarios(PolicyPtr policy, const Vector& margins,
                                           std::shared_ptr<const StateSpace> space, const Matrix& status_quo,
                                           const std::vector<Scenario>& scenarios, const SuiteOptions& options,
                                           const WarmStart* warm) {
  Suite suite(std::move(policy), margins, std::move(space), status_quo, options, warm);
  std::vector<ScenarioOutcome> out;
  out.reserve(scenarios.size());
  for (Scenario s : scenarios) out.push_back(suite.run(s));
  return out;
}

ScenarioOutcome run_scenario(Scenario s, PolicyPtr policy, const Vector& margins, std::shared_ptr<const StateSpace> space,
                             const Matrix& status_quo, const SuiteOptions& options) {
  return run_scenarios(std::move(policy), margins, std::move(space), status_quo, {s}, options).front();
}

// ---------------------------------------------------------------------------

PolicyPtr estimate_policy(const std::vector<Session>& sessions, int clusters, int horizon, const EstimatorSpec& spec) {
  const TrainingData data = extract_observations(sessions, clusters);
  require(!data.observations.empty(), "estimate_policy: no training observations");
  std::shared_ptr<ConsumerPolicy> policy;
  if (spec.method == "logit") {
    policy = fit_multinomial_logit(data.observations, clusters, horizon, spec.logit);
  } else if (spec.method == "forest" || spec.method == "boost") {
    TreeParams p = spec.method == "forest" ? spec.trees : spec.boost;
    p.mode = spec.method == "forest" ? EnsembleMode::bagging : EnsembleMode::boosting;
    policy = fit_tree_ensemble(data.observations, clusters, horizon, p);
  } else {
    throw ValidationError("unknown estimation method '" + spec.method + "'");
  }
  policy->set_initial(estimate_initial(data.first_actions, clusters));
  return policy;
}

std::vector<ScenarioResult> normalize(const std::vector<ScenarioOutcome>& outcomes) {
  const auto sq = std::find_if(outcomes.begin(), outcomes.end(),
                               [](const ScenarioOutcome& o) { return o.scenario == Scenario::status_quo; });
  require(sq != outcomes.end(), "normalization needs the status_quo scenario");
  require(sq->profit > 0.0, "status quo profit must be positive to normalize");
  std::vector<ScenarioResult> out;
  for (const auto& o : outcomes) {
    ScenarioResult r;
    r.scenario = o.scenario;
    r.raw = o.profit;
    r.normalized = 100.0 * (o.profit / sq->profit);
    out.push_back(r);
  }
  return out;
}

BootstrapReport bootstrap(const std::vector<Session>& sessions, int clusters, const Vector& margins,
                          std::shared_ptr<const StateSpace> space, const EstimatorSpec& spec,
                          const std::vector<Scenario>& scenarios, const BootstrapOptions& options) {
  require(options.replications == 0 || options.replications >= 2, "bootstrap: need B = 0 or B >= 2");
  require(!scenarios.empty(), "bootstrap: no scenarios");
  const int T = space->horizon();

  // Status quo is always evaluated: it anchors the normalization.
  std::vector<Scenario> run = scenarios;
  if (std::find(run.begin(), run.end(), Scenario::status_quo) == run.end()) run.insert(run.begin(), Scenario::status_quo);

  BootstrapReport report;
  report.status_quo = extract_status_quo_matrix(sessions, clusters).matrix;
  const PolicyPtr point = estimate_policy(sessions, clusters, T, spec);
  const auto outcomes = run_scenarios(point, margins, space, report.status_quo, run, options.suite);
  auto results = normalize(outcomes);
  const double point_sq = outcomes[static_cast<std::size_t>(
                                       std::find(run.begin(), run.end(), Scenario::status_quo) - run.begin())]
                              .profit;

  WarmStart warm;
  for (const auto& o : outcomes) {
    if (o.scenario == Scenario::static_matrix_opt) warm.static_opt = o.matrices;
    if (o.scenario == Scenario::dynamic_matrix_opt) warm.dynamic_opt = o.matrices;
  }
  if (warm.static_opt.empty()) warm.static_opt = {report.status_quo};
  if (warm.dynamic_opt.empty()) warm.dynamic_opt = std::vector<Matrix>(T, warm.static_opt[0]);

  const auto B = static_cast<std::size_t>(options.replications);
  std::vector<std::optional<Vector>> profits(B);
  std::vector<std::string> errors(B);
  SuiteOptions inner = options.suite;
  inner.workers = 1;
  EstimatorSpec inner_spec = spec;
  inner_spec.trees.workers = 1;
  inner_spec.boost.workers = 1;
  parallel_for(B, options.workers, [&](std::size_t b) {
    try {
      const auto sample = resample_sessions(sessions, options.seed, options.identical_resamples ? 0 : b);
      const PolicyPtr policy = estimate_policy(sample, clusters, T, inner_spec);
      const auto reps = run_scenarios(policy, margins, space, report.status_quo, run, inner, &warm);
      Vector v;
      for (const auto& o : reps) v.push_back(o.profit);
      profits[b] = std::move(v);
    } catch (const std::exception& e) {
      errors[b] = e.what();
    }
  });
  for (std::size_t b = 0; b < B; ++b)
    if (!profits[b]) report.failures.push_back("replication " + std::to_string(b + 1) + ": " + errors[b]);

  for (std::size_t i = 0; i < run.size(); ++i) {
    double n = 0.0, mean = 0.0, m2 = 0.0;
    for (const auto& p : profits) {
      if (!p) continue;
      const double x = 100.0 * ((*p)[i] / point_sq);
      n += 1.0;
      const double d = x - mean;
      mean += d / n;
      m2 += d * (x - mean);
    }
    results[i].replications = static_cast<std::size_t>(n);
    results[i].std_dev = n >= 2.0 ? std::sqrt(m2 / (n - 1.0)) : 0.0;
  }
  // Report in the caller's order.
  for (Scenario s : scenarios)
    for (const auto& r : results)
      if (r.scenario == s) report.results.push_back(r);
  return report;
}

void write_results_csv(const std::filesystem::path& path, const std::vector<ScenarioResult>& results) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ValidationError("cannot write " + path.string());
  out << "scenario,expected_profit_normalized,std_dev,raw_profit\n";
  for (const auto& r : results)
    out << scenario_name(r.scenario) << ',' << csv::format_double(r.normalized) << ','
        << csv::format_double(r.std_dev) << ',' << csv::format_double(r.raw) << '\n';
}

std::vector<ScenarioResult> read_results_csv(const std::filesystem::path& path) {
  const auto rows = csv::parse(csv::read_file(path));
  require(!rows.empty() && rows[0].size() == 4 && rows[0][0] == "scenario", path.string() + ": not a results table");
  std::vector<ScenarioResult> out;
  for (std::size_t i = 1; i < rows.size(); ++i) {
    const auto& row = rows[i];
    if (row.size() == 1 && row[0].empty()) continue;
    require(row.size() == 4, path.string() + ": row " + std::to_string(i + 1) + " needs 4 fields");
    ScenarioResult r;
    r.scenario = parse_scenario(row[0]);
    try {
      r.normalized = std::stod(row[1]);
      r.std_dev = std::stod(row[2]);
      r.raw = std::stod(row[3]);
    } catch (const std::exception&) {
      throw ValidationError(path.string() + ": row " + std::to_string(i + 1) + " has a non-numeric field");
    }
    out.push_back(r);
  }
  return out;
}

}  // namespace searchrec
