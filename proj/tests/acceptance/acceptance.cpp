// Acceptance run: one PASS/FAIL line per criterion, exit status 1 if any hard
// criterion fails. Criterion 10 is reported as WARN when it does not hold.
#include <Eigen/Dense>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "searchrec/catalog.hpp"
#include "searchrec/clickstream.hpp"
#include "searchrec/clustering.hpp"
#include "searchrec/counterfactual.hpp"
#include "searchrec/dpsolver.hpp"
#include "searchrec/pipeline.hpp"
#include "searchrec/rng.hpp"

using namespace searchrec;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

namespace {

struct Outcome {
  bool pass = true;
  std::string detail;
  std::vector<std::string> info;
};

std::string fmt(const char* f, double a) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, a);
  return buf;
}

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

Matrix diagonal_matrix(int K, double diag) {
  Matrix m(K, Vector(K, (1.0 - diag) / (K - 1)));
  for (int k = 0; k < K; ++k) m[k][k] = diag;
  return m;
}

double tv(const Vector& p, const Vector& q) {
  double d = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) d += std::abs(p[i] - q[i]);
  return 0.5 * d;
}

// ---------------------------------------------------------------------------
// 1. Game-tree oracle. Histories are snapped to the lattice after every
// transition, exactly the discretized problem the solver faces, but the tree
// is walked with the public state primitives instead of the state tables.

struct TreeCheck {
  const ConsumerPolicy& policy;
  const Vector& margins;
  const StateSpace& space;
  const ValueTable& table;
  double worst_value = 0.0;
  std::size_t nodes = 0, action_mismatch = 0;

  double visit(const RecState& st) {
    const int K = policy.clusters(), T = policy.horizon();
    const auto& actions = space.actions();
    std::vector<double> q(actions.size());
    for (std::size_t r = 0; r < actions.size(); ++r) {
      RecState post = st;
      post.R = post_recommendation(st, actions[r]);
      const Vector p = policy.predict(post);
      double v = 0.0;
      for (int k = 0; k < K; ++k) v += margins[k] * p[K + k];
      if (st.t < T)
        for (int k = 0; k < K; ++k) {
          if (p[k] <= 0.0) continue;
          RecState next = transition(st, k, actions[r]);
          next.A = space.lattice().snap(next.A);
          next.R = space.lattice().snap(next.R);
          v += p[k] * visit(next);
        }
      q[r] = v;
    }
    std::size_t arg = 0;
    for (std::size_t r = 1; r < q.size(); ++r)
      if (q[r] > q[arg] + 1e-12 * std::max(1.0, std::abs(q[arg]))) arg = r;
    const std::size_t s = space.locate(st);
    ++nodes;
    worst_value = std::max(worst_value, std::abs(table.value[st.t - 1][s] - q[arg]));
    if (table.action[st.t - 1][s] != arg) ++action_mismatch;
    return q[arg];
  }
};

Outcome criterion1() {
  const int K = 2, T = 3, G = 2;
  auto truth = std::make_shared<UtilityTruthPolicy>(K, T, UtilityParams::calibrated(K));
  const Vector margins{1.0, 1.8};
  auto space = std::make_shared<StateSpace>(K, G, T);
  const auto t0 = Clock::now();
  const PlanningModel model(truth, margins, space);
  const ValueTable table = bellman_solve(model);
  TreeCheck tree{*truth, margins, *space, table};
  double total = 0.0;
  for (int k = 0; k < K; ++k) total += truth->initial()[K + k] * margins[k];
  for (int a = 0; a < K; ++a) total += truth->initial()[a] * tree.visit(initial_state(K, a));
  const double secs = seconds_since(t0);
  const double diff = std::abs(total - table.expected_profit);
  Outcome o;
  o.pass = diff <= 1e-9 && tree.worst_value <= 1e-9 && tree.action_mismatch == 0 && secs < 10.0;
  o.detail = "V diff " + fmt("%.2e", diff) + ", worst node diff " + fmt("%.2e", tree.worst_value) + ", " +
             std::to_string(tree.action_mismatch) + "/" + std::to_string(tree.nodes) + " argmax mismatches, " +
             fmt("%.2fs", secs);
  return o;
}

// ---------------------------------------------------------------------------

Outcome criterion2() {
  const int K = 4, T = 8, G = 3;
  auto policy = std::make_shared<UtilityTruthPolicy>(K, T, UtilityParams::calibrated(K));
  Vector margins(K);
  for (int k = 0; k < K; ++k) margins[k] = 1.0 + 0.26 * k;
  auto space = std::make_shared<StateSpace>(K, G, T);
  const auto t0 = Clock::now();
  const auto out = run_scenarios(policy, margins, space, diagonal_matrix(K, 0.75), all_scenarios());
  const double secs = seconds_since(t0);
  std::map<Scenario, double> v;
  for (const auto& x : out) v[x.scenario] = x.profit;
  const double tol = 1e-8;
  std::vector<std::string> broken;
  auto ge = [&](Scenario a, Scenario b) {
    if (v[a] < v[b] - tol) broken.push_back(scenario_name(a) + " < " + scenario_name(b));
  };
  ge(Scenario::first_best, Scenario::dynamic_matrix_opt);
  ge(Scenario::dynamic_matrix_opt, Scenario::static_matrix_opt);
  ge(Scenario::static_matrix_opt, Scenario::status_quo);
  for (Scenario s : {Scenario::one_step_lookahead, Scenario::ignore_churn, Scenario::ignore_margins,
                     Scenario::prev_actions_and_recs})
    ge(Scenario::first_best, s);
  ge(Scenario::prev_actions_and_recs, Scenario::prev_actions_only);
  Outcome o;
  o.pass = broken.empty() && secs < 300.0;
  std::ostringstream d;
  for (const auto& r : normalize(out)) d << scenario_name(r.scenario) << " " << fmt("%.2f", r.normalized) << ", ";
  d << fmt("%.1fs", secs);
  for (const auto& b : broken) d << "; violated: " << b;
  o.detail = d.str();
  return o;
}

// ---------------------------------------------------------------------------

struct Calibrated {
  int K = 4, T = 22, G = 3;
  std::shared_ptr<UtilityTruthPolicy> truth;
  Vector margins;
  std::vector<Session> sessions;
  Matrix status_quo;
  std::shared_ptr<StateSpace> space;
  std::optional<ValueTable> first_best;
};

Calibrated& calibrated() {
  static Calibrated c = [] {
    Calibrated c;
    c.truth = std::make_shared<UtilityTruthPolicy>(c.K, c.T, UtilityParams::calibrated(c.K));
    c.margins.resize(c.K);
    for (int k = 0; k < c.K; ++k) c.margins[k] = 1.0 + 0.26 * k;
    GenerateOptions g;
    g.horizon = c.T;
    g.seed = 1;
    c.sessions = generate_synthetic(*c.truth, MatrixRecPolicy(diagonal_matrix(c.K, 0.75)), 20000, g);
    c.status_quo = extract_status_quo_matrix(c.sessions, c.K).matrix;
    c.space = std::make_shared<StateSpace>(c.K, c.G, c.T);
    return c;
  }();
  return c;
}

Outcome criterion3() {
  const auto t0 = Clock::now();
  auto& c = calibrated();
  const auto sum = summarize(c.sessions);
  const std::vector<Scenario> sc = {Scenario::status_quo, Scenario::prev_actions_only,
                                    Scenario::prev_actions_and_recs, Scenario::one_step_lookahead,
                                    Scenario::first_best};
  const auto out = run_scenarios(c.truth, c.margins, c.space, c.status_quo, sc);
  for (const auto& x : out)
    if (x.scenario == Scenario::first_best) c.first_best = x.table;
  const auto res = normalize(out);
  std::map<Scenario, double> v;
  for (const auto& r : res) v[r.scenario] = r.normalized;
  const bool moments = sum.mean_pageviews >= 6 && sum.mean_pageviews <= 8 && sum.conversion_rate >= 0.02 &&
                       sum.conversion_rate <= 0.04;
  const bool order = v[Scenario::prev_actions_only] < v[Scenario::status_quo] &&
                     v[Scenario::status_quo] < v[Scenario::prev_actions_and_recs] &&
                     v[Scenario::prev_actions_and_recs] < v[Scenario::first_best] &&
                     v[Scenario::one_step_lookahead] < v[Scenario::first_best];
  const double truth_secs = seconds_since(t0);

  Outcome o;
  std::ostringstream d;
  d << "pageviews " << fmt("%.2f", sum.mean_pageviews) << ", conversion " << fmt("%.4f", sum.conversion_rate)
    << "; prev_actions_only " << fmt("%.2f", v[Scenario::prev_actions_only]) << " < status_quo 100 < prev_actions_and_recs "
    << fmt("%.2f", v[Scenario::prev_actions_and_recs]) << " < first_best " << fmt("%.2f", v[Scenario::first_best])
    << ", one_step_lookahead " << fmt("%.2f", v[Scenario::one_step_lookahead]) << " (planning on the generating model), "
    << fmt("%.1fs", truth_secs);
  o.detail = d.str();

  // Same suite planned on a forest estimated from the sessions, scored under the generating model.
  const auto t1 = Clock::now();
  EstimatorSpec spec;
  spec.method = "forest";
  spec.trees.seed = 1;
  const auto est = estimate_policy(c.sessions, c.K, c.T, spec);
  const auto est_out = run_scenarios(est, c.margins, c.space, c.status_quo, sc);
  const PlanningModel true_model(c.truth, c.margins, c.space);
  std::ostringstream e;
  e << "estimated forest, rules scored under the generating model:";
  double sq = 0.0;
  for (const auto& x : est_out)
    if (x.scenario == Scenario::status_quo) sq = evaluate_exact(true_model, *x.rule).expected_profit;
  for (const auto& x : est_out)
    e << " " << scenario_name(x.scenario) << " " << fmt("%.2f", 100.0 * evaluate_exact(true_model, *x.rule).expected_profit / sq);
  e << " (" << fmt("%.1fs", seconds_since(t1)) << ")";
  o.info.push_back(e.str());

  o.pass = moments && order && seconds_since(t0) < 900.0;
  return o;
}

// ---------------------------------------------------------------------------

Outcome criterion4() {
  const int K = 3, T = 10;
  const int C = action_count(K);
  const std::size_t d = feature_dimension(K);
  Rng rng(4, "logit.truth");
  // Columns: intercept, then the features. Exit is the reference class.
  Matrix coef(C, Vector(d + 1, 0.0));
  for (int c = 0; c + 1 < C; ++c) {
    coef[c][0] = c < K ? 1.2 : -2.0;
    for (std::size_t j = 1; j <= d; ++j) coef[c][j] = 0.4 * rng.normal();
  }
  auto truth = std::make_shared<MultinomialLogitPolicy>(K, T, coef, std::vector<bool>(C, true));
  truth->set_initial({0.4, 0.35, 0.25, 0, 0, 0, 0});
  const auto t0 = Clock::now();
  GenerateOptions g;
  g.horizon = T;
  g.seed = 5;
  const Matrix sq = diagonal_matrix(K, 0.6);
  const auto sessions = generate_synthetic(*truth, MatrixRecPolicy(sq), 100000, g);
  const auto data = extract_observations(sessions, K).observations;
  const auto fit = fit_multinomial_logit(data, K, T);

  // 1000 reachable states from an independent draw.
  g.seed = 6;
  const auto fresh = extract_observations(generate_synthetic(*truth, MatrixRecPolicy(sq), 2000, g), K).observations;
  Rng pick(7, "logit.states");
  double worst = 0.0, mean = 0.0;
  const int n = 1000;
  for (int i = 0; i < n; ++i) {
    const auto& st = fresh[pick.below(fresh.size())].state;
    const double x = tv(fit->predict(st), truth->predict(st));
    worst = std::max(worst, x);
    mean += x / n;
  }
  const double secs = seconds_since(t0);
  Outcome o;
  o.pass = worst < 0.02 && secs < 120.0;
  o.detail = std::to_string(data.size()) + " observations; TV over " + std::to_string(n) + " states: max " +
             fmt("%.4f", worst) + ", mean " + fmt("%.4f", mean) + ", " + fmt("%.1fs", secs);
  return o;
}

// ---------------------------------------------------------------------------

Outcome criterion5() {
  std::vector<std::string> bad;
  auto near = [&](const std::string& what, double got, double want) {
    if (!(std::abs(got - want) <= 1e-12)) bad.push_back(what + " = " + fmt("%.15g", got));
  };
  auto r = evaluate_predictions({{0.25, 0.75}}, {0});
  near("hellinger", r.hellinger, std::pow(1.0 - std::sqrt(0.25), 2) + std::pow(0.0 - std::sqrt(0.75), 2));
  near("hellinger vs 1", r.hellinger, 1.0);
  const Vector u(5, 0.2);
  r = evaluate_predictions({u, u, u, u, u}, {0, 1, 2, 3, 4});
  near("uniform lift", r.lift, 1.0);
  r = evaluate_predictions({{1, 0, 0}, {0, 1, 0}, {0, 0, 1}, {1, 0, 0}}, {0, 1, 2, 0});
  near("perfect log-loss", r.log_loss, 0.0);
  near("perfect nagelkerke", r.nagelkerke_r2, 1.0);
  // The statistic is at most 1 for any predictor and at least 0 whenever the
  // predictor's likelihood is no worse than the empirical-frequency null.
  Rng rng(5, "metrics");
  int out_of_bounds = 0, checked_lower = 0;
  for (int trial = 0; trial < 200; ++trial) {
    const int C = 2 + static_cast<int>(rng.below(6));
    Matrix pred(50, Vector(C));
    std::vector<int> obs(50);
    for (std::size_t i = 0; i < pred.size(); ++i) {
      double s = 0.0;
      for (double& p : pred[i]) s += (p = rng.uniform() + 1e-3);
      for (double& p : pred[i]) p /= s;
      obs[i] = static_cast<int>(rng.below(C));
    }
    // Null: empirical class frequencies.
    Vector freq(C, 0.0);
    for (int y : obs) freq[y] += 1.0 / obs.size();
    double ll = 0.0, ll0 = 0.0;
    for (std::size_t i = 0; i < obs.size(); ++i) {
      ll += std::log(pred[i][obs[i]]);
      ll0 += std::log(freq[obs[i]]);
    }
    const double n2 = evaluate_predictions(pred, obs).nagelkerke_r2;
    if (!(n2 <= 1.0)) ++out_of_bounds;
    if (ll >= ll0) {
      ++checked_lower;
      if (!(n2 >= 0.0)) ++out_of_bounds;
    }
    // Half null, half the observed outcome: beats the null on every observation.
    // The null itself scores exactly 0.
    Matrix mixed(obs.size(), Vector(C));
    for (std::size_t i = 0; i < obs.size(); ++i)
      for (int c = 0; c < C; ++c) mixed[i][c] = 0.5 * freq[c] + 0.5 * (c == obs[i] ? 1.0 : 0.0);
    const double m2 = evaluate_predictions(mixed, obs).nagelkerke_r2;
    const double z2 = evaluate_predictions(Matrix(obs.size(), freq), obs).nagelkerke_r2;
    if (!(m2 >= 0.0 && m2 <= 1.0)) ++out_of_bounds;
    if (!(std::abs(z2) <= 1e-12)) ++out_of_bounds;
  }
  if (out_of_bounds) bad.push_back(std::to_string(out_of_bounds) + " nagelkerke bound violations");
  Outcome o;
  o.pass = bad.empty();
  o.detail = bad.empty() ? "hellinger 1.0, uniform lift 1.0, perfect log-loss 0, nagelkerke <= 1 on 600 predictors and >= 0 on the " +
                               std::to_string(checked_lower + 400) + " that match or beat the null"
                         : "failed: " + bad.front();
  return o;
}

// ---------------------------------------------------------------------------

double partition_ss(const Matrix& pts, const std::vector<int>& labels, int k) {
  Matrix c(k, Vector(pts[0].size(), 0.0));
  std::vector<int> n(k, 0);
  for (std::size_t i = 0; i < pts.size(); ++i) {
    ++n[labels[i]];
    for (std::size_t d = 0; d < pts[i].size(); ++d) c[labels[i]][d] += pts[i][d];
  }
  double ss = 0.0;
  for (std::size_t i = 0; i < pts.size(); ++i)
    for (std::size_t d = 0; d < pts[i].size(); ++d) {
      const double m = c[labels[i]][d] / n[labels[i]];
      ss += (pts[i][d] - m) * (pts[i][d] - m);
    }
  return ss;
}

bool monotone(const ClusterModel& m) {
  for (std::size_t i = 1; i < m.within_ss_history.size(); ++i)
    if (m.within_ss_history[i] > m.within_ss_history[i - 1]) return false;
  return true;
}

Outcome criterion6() {
  const auto t0 = Clock::now();
  std::vector<std::string> bad;
  std::size_t runs = 0;

  // 8 points, k = 2: brute force over every labelling, asserted on the fixed
  // instances 1..10. Lloyd from a Ward start is a local method, so the hit rate
  // over 200 instances at k = 2 and 3 is reported as information.
  int brute_ok = 0, brute_total = 0;
  std::map<int, int> rate_ok, rate_total;
  for (std::uint64_t seed = 1; seed <= 200; ++seed) {
    Rng rng(seed);
    Matrix pts(8, Vector(2));
    for (std::size_t i = 0; i < pts.size(); ++i)
      for (double& x : pts[i]) x = (i % 2 ? 1.0 : 0.0) + 0.4 * rng.normal();
    for (int k : {2, 3}) {
      double best = std::numeric_limits<double>::infinity();
      std::vector<int> labels(8, 0);
      std::function<void(int, int)> rec = [&](int i, int used) {
        if (i == 8) {
          if (used == k) best = std::min(best, partition_ss(pts, labels, k));
          return;
        }
        for (int c = 0; c <= std::min(used, k - 1); ++c) {
          labels[i] = c;
          rec(i + 1, std::max(used, c + 1));
        }
      };
      rec(0, 0);
      const auto model = kmeans(pts, ward_init(pts, k), k);
      ++runs;
      if (!monotone(model)) bad.push_back("within-SS increased");
      const bool hit = std::abs(model.within_ss - best) <= 1e-12 * std::max(1.0, best);
      ++rate_total[k];
      rate_ok[k] += hit;
      if (k == 2 && seed <= 10) {
        ++brute_total;
        brute_ok += hit;
      }
    }
  }
  if (brute_ok != brute_total) bad.push_back("brute force " + std::to_string(brute_ok) + "/" + std::to_string(brute_total));

  std::ostringstream found;
  for (int k_star : {3, 5, 8}) {
    const auto synth = generate_planted_catalog(k_star, 40, 100 + k_star);
    const auto pts = feature_matrix(normalize(synth.catalog));
    SweepOptions opts;
    opts.seed = 5;
    const auto models = sweep(pts, 2, 10, opts);
    for (const auto& m : models) {
      ++runs;
      if (!monotone(m)) bad.push_back("within-SS increased in sweep");
    }
    const int got = models[best_by_silhouette(models)].k;
    found << (k_star == 3 ? "" : ", ") << k_star << "->" << got;
    if (got != k_star) bad.push_back("planted " + std::to_string(k_star) + " recovered as " + std::to_string(got));
  }
  const double secs = seconds_since(t0);
  Outcome o;
  o.pass = bad.empty() && secs < 60.0;
  o.detail = "monotone within-SS in " + std::to_string(runs) + " runs, 8-point k = 2 brute force " + std::to_string(brute_ok) + "/" +
             std::to_string(brute_total) + ", planted K* " + found.str() + ", " + fmt("%.1fs", secs);
  if (!bad.empty()) o.detail += "; " + bad.front();
  o.info.push_back("8-point global optimum over 200 instances: k = 2 " + std::to_string(rate_ok[2]) + "/" +
                   std::to_string(rate_total[2]) + ", k = 3 " + std::to_string(rate_ok[3]) + "/" +
                   std::to_string(rate_total[3]));
  return o;
}

// ---------------------------------------------------------------------------

Outcome criterion7() {
  const auto t0 = Clock::now();
  // W = 3 - (x - x*)' A (x - x*) over the free entries of a 3 x 3 matrix.
  const Matrix target{{0.5, 0.3, 0.2}, {0.1, 0.6, 0.3}, {0.25, 0.25, 0.5}};
  Rng rng(4, "quadratic");
  Eigen::MatrixXd B(6, 6);
  for (int i = 0; i < 6; ++i)
    for (int j = 0; j < 6; ++j) B(i, j) = rng.normal();
  const Eigen::MatrixXd A = B * B.transpose() + Eigen::MatrixXd::Identity(6, 6);
  auto free = [](const std::vector<Matrix>& m) {
    Eigen::VectorXd x(6);
    int i = 0;
    for (const auto& row : m[0])
      for (int j = 0; j < 2; ++j) x[i++] = row[j];
    return x;
  };
  const Eigen::VectorXd xs = free({target});
  const MatrixObjective W = [&](const std::vector<Matrix>& m) {
    const Eigen::VectorXd d = free(m) - xs;
    return 3.0 - d.dot(A * d);
  };
  const auto step = quadratic_step(W, {Matrix(3, Vector(3, 1.0 / 3))}, 1e-3);
  double err = 0.0;
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) err = std::max(err, std::abs(step.matrices[0][i][j] - target[i][j]));

  // Micro-instance: perturb the consumer policy by at most 5% TV.
  const int K = 2, T = 3;
  auto space = std::make_shared<StateSpace>(K, 2, T);
  UtilityParams p = UtilityParams::calibrated(K);
  p.exit_base = -1.5;
  for (int k = 0; k < K; ++k) p.convert_base[k] = -2.5 + 0.2 * k;
  PolicyPtr base = std::make_shared<UtilityTruthPolicy>(K, T, p);
  const Vector margins{1.0, 1.7};
  const PlanningModel nominal(base, margins, space);
  const auto opt0 = optimize_matrix(nominal, {diagonal_matrix(K, 0.9)}, false);
  const auto dyn0 = optimize_matrix(nominal, opt0.matrices, true);
  double worst_ratio = 1.0;
  for (double eps : {0.01, 0.03, 0.05}) {
    auto shifted_policy = std::make_shared<FunctionPolicy>(K, T, [base, eps, K](const RecState& s) {
      Vector q = base->predict(s);
      for (int j = 0; j < 2 * K + 1; ++j) q[j] = (1.0 - eps) * q[j] + eps * (j == 2 * K ? 0.0 : 1.0 / (2 * K));
      return q;
    });
    shifted_policy->set_initial(base->initial());
    const PlanningModel shifted(shifted_policy, margins, space);
    for (const auto* phi0 : {&opt0.matrices, &dyn0.matrices}) {
      const auto fast = quadratic_step(shifted, *phi0);
      const auto exact = optimize_matrix(shifted, *phi0, phi0->size() > 1);
      worst_ratio = std::min(worst_ratio, fast.value / exact.value);
    }
  }
  const double secs = seconds_since(t0);
  Outcome o;
  o.pass = err <= 1e-9 && worst_ratio >= 0.99 && secs < 120.0;
  o.detail = "quadratic maximizer error " + fmt("%.2e", err) + ", fast path / re-optimized >= " +
             fmt("%.6f", worst_ratio) + " at TV <= 0.05, " + fmt("%.1fs", secs);
  return o;
}

// ---------------------------------------------------------------------------

Outcome criterion8() {
  std::vector<std::string> bad;
  auto same = [&](const std::string& what, const FreqVector& v, const Vector& want, double tol = 1e-15) {
    if (v.is_empty() || v.dimension() != static_cast<int>(want.size())) {
      bad.push_back(what);
      return;
    }
    for (std::size_t i = 0; i < want.size(); ++i)
      if (std::abs(v[static_cast<int>(i)] - want[i]) > tol) bad.push_back(what);
  };
  // First click on cluster 3, one recommendation of cluster 1.
  const auto s1 = initial_state(3, 2);
  const std::vector<int> view{2}, rec{0};
  same("A2", update_freq(s1.A, 0, view), {0, 0, 1});
  same("R2", update_freq(s1.R, 0, rec), {1, 0, 0});
  // Browse 3, shown {3, 2, 2}, move to 1.
  const auto s2 = transition(s1, 0, RecAction::make(2, 1, 1));
  if (s2.t != 2 || s2.a != 0) bad.push_back("theta2 t/a");
  same("theta2 A", s2.A, {0, 0, 1});
  same("theta2 R", s2.R, {0, 2.0 / 3.0, 1.0 / 3.0});
  same("theta2 R rounded", s2.R, {0, 0.66, 0.33}, 0.01);

  std::size_t checked = 0;
  double worst = 0.0;
  for (int g : {2, 4, 8}) {
    const SimplexLattice lat(3, g);
    for (std::size_t i = 0; i < lat.size(); ++i)
      if (lat.snap_index(lat.point(i)) != i) bad.push_back("lattice point moved");
    // Every frequency vector with denominator up to 60.
    for (int n = 1; n <= 60; ++n)
      for (int a = 0; a <= n; ++a)
        for (int b = 0; a + b <= n; ++b) {
          const std::vector<int> counts{a, b, n - a - b};
          const auto v = FreqVector::from_counts(counts);
          const auto p = lat.snap(v);
          if (!(lat.snap(p) == p)) bad.push_back("snap not idempotent");
          double linf = 0.0;
          for (int i = 0; i < 3; ++i) linf = std::max(linf, std::abs(v[i] - p[i]));
          worst = std::max(worst, linf * g);
          if (linf > 1.0 / g + 1e-12) bad.push_back("snap further than 1/G");
          ++checked;
        }
  }
  Outcome o;
  o.pass = bad.empty();
  o.detail = "worked sequences exact; " + std::to_string(checked) + " snaps, max G*|v - snap(v)|_inf = " +
             fmt("%.4f", worst);
  if (!bad.empty()) o.detail += "; failed: " + bad.front();
  return o;
}

// ---------------------------------------------------------------------------

std::vector<std::string> artifact_hashes(const Manifest& m) {
  std::vector<std::string> out;
  for (const auto& s : m.stages)
    for (const auto& a : s.artifacts) out.push_back(s.name + "/" + a.path + "=" + a.sha256);
  return out;
}

Outcome criterion9() {
  Outcome o;
  const fs::path root = fs::temp_directory_path() / "searchrec_acceptance";
  fs::remove_all(root);
  const auto t0 = Clock::now();
  nlohmann::json cfg = load_config(fs::path(SEARCHREC_SOURCE_DIR) / "configs" / "tiny.json");
  cfg["seed"] = 17;
  const auto a = artifact_hashes(run_pipeline(cfg, root / "a"));
  const auto b = artifact_hashes(run_pipeline(cfg, root / "b"));
  const bool identical = a == b && a.size() > 0;
  const double pipe_secs = seconds_since(t0);

  // Bootstrap at desk scale: the desk config's sessions, K chosen by the pipeline's clustering.
  nlohmann::json desk = load_config(fs::path(SEARCHREC_SOURCE_DIR) / "configs" / "desk.json");
  desk["seed"] = 17;
  run_stages(desk, root / "desk", {Stage::cluster, Stage::recode, Stage::estimate, Stage::select});
  const auto sel = nlohmann::json::parse(std::ifstream(root / "desk" / "selection.json"));
  const int K = sel.at("k").get<int>();
  const int T = desk["dp"]["horizon"].get<int>();
  const auto sessions = load_clickstream(root / "desk" / ("sessions_k" + std::to_string(K) + ".jsonl"), K);
  const Vector margins =
      nlohmann::json::parse(std::ifstream(root / "desk" / ("margins_k" + std::to_string(K) + ".json"))).get<Vector>();
  EstimatorSpec spec;
  spec.method = sel.at("method").get<std::string>();
  auto space = std::make_shared<StateSpace>(K, desk["dp"]["grid"].get<int>(), T);
  BootstrapOptions bo;
  bo.replications = 50;
  bo.seed = 17;
  const auto t1 = Clock::now();
  bo.workers = 1;
  const auto one = bootstrap(sessions, K, margins, space, spec, all_scenarios(), bo);
  const double boot_secs = seconds_since(t1);
  bo.workers = 4;
  const auto four = bootstrap(sessions, K, margins, space, spec, all_scenarios(), bo);
  bool same = one.results.size() == four.results.size();
  for (std::size_t i = 0; same && i < one.results.size(); ++i)
    same = one.results[i].normalized == four.results[i].normalized && one.results[i].std_dev == four.results[i].std_dev &&
           one.results[i].replications == four.results[i].replications;
  fs::remove_all(root);

  o.pass = identical && same && boot_secs < 1800.0;
  o.detail = std::string(identical ? "identical" : "DIFFERENT") + " artifact hashes over " + std::to_string(a.size()) +
             " artifacts (" + fmt("%.1fs", pipe_secs) + "); bootstrap B=50 on " + std::to_string(sessions.size()) +
             " sessions, K=" + std::to_string(K) + ", " + spec.method + ": " + fmt("%.1fs", boot_secs) +
             " with 1 worker, results " + (same ? "identical" : "DIFFERENT") + " with 4 workers";
  return o;
}

// ---------------------------------------------------------------------------

Outcome criterion10() {
  auto& c = calibrated();
  Outcome o;
  const PlanningModel model(c.truth, c.margins, c.space);
  if (!c.first_best) c.first_best = bellman_solve(model);
  const auto sum = summarize_policy(*c.first_best, *c.space, &model);
  const int T = c.T;
  const double reach_2 = sum.reachable_concentration[1][0], reach_end = sum.reachable_concentration[T - 2][0];
  const double unif_2 = sum.concentration[1][0], unif_end = sum.concentration[T - 2][0];
  o.pass = reach_end >= reach_2;
  o.detail = "all-same-cluster share of first-best sets, reachable-weighted: t=2 " + fmt("%.3f", reach_2) + ", t=T-1 " +
             fmt("%.3f", reach_end) + "; uniform over states: t=2 " + fmt("%.3f", unif_2) + ", t=T-1 " +
             fmt("%.3f", unif_end);
  return o;
}

}  // namespace

// Usage: acceptance [N ...] runs the listed criteria only.
int main(int argc, char** argv) {
  const std::vector<std::function<Outcome()>> criteria = {criterion1, criterion2, criterion3, criterion4, criterion5,
                                                          criterion6, criterion7, criterion8, criterion9, criterion10};
  std::vector<bool> selected(criteria.size(), argc == 1);
  for (int i = 1; i < argc; ++i) {
    const int n = std::atoi(argv[i]);
    if (n < 1 || n > static_cast<int>(criteria.size())) {
      std::fprintf(stderr, "unknown criterion %s\n", argv[i]);
      return 2;
    }
    selected[n - 1] = true;
  }
  int failed = 0, hard = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    if (!selected[i]) continue;
    const int n = static_cast<int>(i) + 1;
    if (n != 10) ++hard;
    Outcome o;
    try {
      o = criteria[i]();
    } catch (const std::exception& e) {
      o.pass = false;
      o.detail = std::string("exception: ") + e.what();
    }
    const bool soft = n == 10;
    const char* status = o.pass ? "PASS" : (soft ? "WARN" : "FAIL");
    if (!o.pass && !soft) ++failed;
    std::printf("criterion %d: %s  %s\n", n, status, o.detail.c_str());
    for (const auto& line : o.info) std::printf("  info: %s\n", line.c_str());
    std::fflush(stdout);
  }
  std::printf("%d of %d hard criteria failed\n", failed, hard);
  return failed ? 1 : 0;
}
