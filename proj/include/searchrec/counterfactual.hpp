#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "searchrec/clickstream.hpp"
#include "searchrec/dpsolver.hpp"

namespace searchrec {

enum class Scenario {
  status_quo,
  static_matrix_opt,
  dynamic_matrix_opt,
  prev_actions_only,
  prev_actions_and_recs,
  ignore_margins,
  ignore_churn,
  one_step_lookahead,
  first_best,
};

/// All nine, in report order.
const std::vector<Scenario>& all_scenarios();
std::string scenario_name(Scenario s);
Scenario parse_scenario(std::string_view name);
/// "all" or a comma-separated list of names.
std::vector<Scenario> parse_scenario_list(std::string_view list);

// ---------------------------------------------------------------------------
// Restricted-information planners

/// Features the decision rule may condition on. The time index must be kept.
struct FeatureMask {
  bool t = true;
  bool a = true;
  bool A = true;
  bool R = true;
};

struct RestrictedOptions {
  /// Occupancy-reweighting passes after the initial uniform-weight sweep.
  int iterations = 2;
};

/// Deterministic lattice rule constant on groups of states that agree on the
/// unmasked features. Each pass reweights states by their occupancy under the
/// previous rule and picks, per group, the action with the largest weighted
/// value; the expected profit never decreases from one pass to the next.
/// `start`, when given, replaces the initial uniform-weight sweep.
LatticePolicy restricted_plan(const PlanningModel& model, const FeatureMask& mask, const RestrictedOptions& options = {},
                              const LatticePolicy* start = nullptr);

/// Group index of state s at time t under the mask (dense, 0-based).
std::size_t feature_group(const StateSpace& space, const FeatureMask& mask, int t, std::size_t s);

// ---------------------------------------------------------------------------
// Matrix policies

/// Expected profit of a matrix policy (one K x K matrix, or one per period)
/// and its gradient with respect to every matrix entry. Rows are used as
/// given, so the value is the polynomial extension off the simplex.
struct MatrixValue {
  double value = 0.0;
  std::vector<Matrix> gradient;  // same shape as the input
};
MatrixValue matrix_value(const PlanningModel& model, const std::vector<Matrix>& matrices, bool with_gradient = true);

struct MatrixOptimizeOptions {
  double tolerance = 1e-6;  // sup norm of the projected-gradient step
  int max_iter = 5000;
  double armijo = 1e-4;
};

struct MatrixOptimum {
  std::vector<Matrix> matrices;  // 1 (static) or T (dynamic)
  double value = 0.0;
  int iterations = 0;
  double stationarity = 0.0;
  bool converged = false;
};

/// Projected-gradient ascent over row-stochastic matrices from `start`
/// (a single matrix is broadcast to every period when dynamic).
MatrixOptimum optimize_matrix(const PlanningModel& model, const std::vector<Matrix>& start, bool dynamic,
                              const MatrixOptimizeOptions& options = {});

/// Second-order fast path around a nominal optimum. Rows are parameterized by
/// their first K-1 entries; D and H come from central differences, the step
/// is phi0 - H^-1 D and each row is projected back onto the simplex. When H
/// is not negative definite a projected gradient step with backtracking is
/// taken instead. The start is returned if the step does not improve W.
struct QuadraticStep {
  std::vector<Matrix> matrices;
  double value = 0.0;
  bool newton = false;    // false: gradient fallback
  bool improved = false;  // false: phi0 returned
};

using MatrixObjective = std::function<double(const std::vector<Matrix>&)>;
using MatrixGradient = std::function<std::vector<Matrix>(const std::vector<Matrix>&)>;

/// Generic form: D and H both by central differences of W with step h.
QuadraticStep quadratic_step(const MatrixObjective& W, const std::vector<Matrix>& phi0, double h = 1e-4);
/// D from the gradient, H by central differences of the gradient.
QuadraticStep quadratic_step(const MatrixObjective& W, const MatrixGradient& grad, const std::vector<Matrix>& phi0,
                             double h = 1e-4);
/// Fast path for a planning model.
QuadraticStep quadratic_step(const PlanningModel& model, const std::vector<Matrix>& phi0, double h = 1e-4);

// ---------------------------------------------------------------------------
// Scenario suite

struct SuiteOptions {
  unsigned workers = 1;
  RestrictedOptions restricted;
  MatrixOptimizeOptions matrix;
  std::size_t cache_bytes = std::size_t{2} << 30;
};

struct ScenarioOutcome {
  Scenario scenario = Scenario::status_quo;
  double profit = 0.0;  // exact expected profit under the true model
  std::optional<ValueTable> table;            // planners that solve a Bellman problem
  std::optional<LatticePolicy> rule;          // the evaluated rule
  std::vector<Matrix> matrices;               // matrix scenarios
  std::string note;
};

/// Plans every requested scenario and evaluates it under the unmodified
/// model. Throws Error if an evaluation sees different model contents.
/// `warm` holds nominal matrix optima; when given, matrix scenarios take the
/// quadratic fast path from them instead of re-optimizing.
struct WarmStart {
  std::vector<Matrix> static_opt;
  std::vector<Matrix> dynamic_opt;
};
std::vector<ScenarioOutcome> run_scenarios(PolicyPtr policy, const Vector& margins,
                                           std::shared_ptr<const StateSpace> space, const Matrix& status_quo,
                                           const std::vector<Scenario>& scenarios, const SuiteOptions& options = {},
                                           const WarmStart* warm = nullptr);

ScenarioOutcome run_scenario(Scenario s, PolicyPtr policy, const Vector& margins, std::shared_ptr<const StateSpace> space,
                             const Matrix& status_quo, const SuiteOptions& options = {});

// ---------------------------------------------------------------------------
// Estimation and bootstrap

struct EstimatorSpec {
  std::string method = "forest";  // logit | forest | boost
  LogitOptions logit;
  TreeParams trees;                                   // forest
  TreeParams boost = TreeParams::boosting_defaults();  // boost
};

/// Fits the consumer policy and the first-event distribution on sessions.
PolicyPtr estimate_policy(const std::vector<Session>& sessions, int clusters, int horizon, const EstimatorSpec& spec);

struct ScenarioResult {
  Scenario scenario = Scenario::status_quo;
  double normalized = 0.0;  // 100 * profit / status quo profit (point estimate)
  double std_dev = 0.0;     // over bootstrap replications, same scale
  double raw = 0.0;         // point-estimate profit
  std::size_t replications = 0;
};

struct BootstrapReport {
  std::vector<ScenarioResult> results;
  std::vector<std::string> failures;  // "replication b: reason"
  Matrix status_quo;
};

struct BootstrapOptions {
  int replications = 50;
  std::uint64_t seed = 0;
  unsigned workers = 1;  // replications run in parallel; each replication is single-threaded
  SuiteOptions suite;
  /// Fixed resample seeds per replication (tests); default derives them from `seed`.
  bool identical_resamples = false;
};

/// Point estimate on all sessions, then B session-level resamples with the
/// policy re-estimated each time. The status quo matrix is extracted once
/// from the full sample. Matrix scenarios in replications use the quadratic
/// fast path around the point-estimate optima.
BootstrapReport bootstrap(const std::vector<Session>& sessions, int clusters, const Vector& margins,
                          std::shared_ptr<const StateSpace> space, const EstimatorSpec& spec,
                          const std::vector<Scenario>& scenarios, const BootstrapOptions& options);

/// Point-estimate results without replications (std_dev = 0).
std::vector<ScenarioResult> normalize(const std::vector<ScenarioOutcome>& outcomes);

/// scenario,expected_profit_normalized,std_dev,raw_profit
void write_results_csv(const std::filesystem::path& path, const std::vector<ScenarioResult>& results);
std::vector<ScenarioResult> read_results_csv(const std::filesystem::path& path);

}  // namespace searchrec
