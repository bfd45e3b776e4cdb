#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <vector>

#include "searchrec/common.hpp"
#include "searchrec/policy.hpp"
#include "searchrec/recpolicy.hpp"
#include "searchrec/staterec.hpp"

namespace searchrec {

/// Planning distortions. Evaluation always uses an undistorted model.
struct ScenarioModifiers {
  bool zero_exit = false;        // exit probability set to 0, the rest rescaled
  bool uniform_margins = false;  // every margin replaced by the mean margin
  bool one_step = false;         // maximize the immediate expected margin only
};

struct ModelOptions {
  unsigned workers = 1;
  /// Upper bound on the (t, state, action) cache; beyond it entries are computed on demand.
  std::size_t cache_bytes = std::size_t{2} << 30;
};

/// pi = sum_k margin_k * Pr(convert k | state).
double instantaneous_profit(const RecState& state, const ConsumerPolicy& policy, std::span<const double> margins);

/// Consumer responses on the lattice: for every (t, state, action) the
/// immediate expected margin and the K search probabilities, evaluated at the
/// unsnapped post-recommendation state.
class PlanningModel {
 public:
  PlanningModel(PolicyPtr policy, Vector margins, std::shared_ptr<const StateSpace> space,
                ScenarioModifiers modifiers = {}, ModelOptions options = {});

  const StateSpace& space() const { return *space_; }
  std::shared_ptr<const StateSpace> space_ptr() const { return space_; }
  const ConsumerPolicy& policy() const { return *policy_; }
  PolicyPtr policy_ptr() const { return policy_; }
  int clusters() const { return space_->clusters(); }
  int horizon() const { return space_->horizon(); }
  const ScenarioModifiers& modifiers() const { return modifiers_; }
  /// Margins as used by this model (uniform when the modifier is set).
  const Vector& margins() const { return margins_; }
  const Vector& true_margins() const { return raw_margins_; }
  /// First-event distribution over the 2K+1 actions.
  const Vector& initial() const { return policy_->initial(); }
  bool cached() const { return !cache_.empty(); }

  /// K+1 values: immediate expected margin, then Pr(search k). Returns a
  /// pointer into the cache or into `scratch` (K+1 doubles).
  const double* entry(int t, std::size_t s, std::size_t r, double* scratch) const;

  /// Full 2K+1 action distribution at (t, s) after action r (modifiers applied).
  Vector response(int t, std::size_t s, std::size_t r) const;

  /// Expected margin of conversions on the first event.
  double initial_profit() const;

  /// Content hash of everything evaluation reads (responses, margins, initial distribution).
  std::uint64_t fingerprint() const { return fingerprint_; }

 private:
  void compute(int t, std::size_t s, std::size_t r, double* out) const;

  PolicyPtr policy_;
  Vector raw_margins_;
  Vector margins_;
  std::shared_ptr<const StateSpace> space_;
  ScenarioModifiers modifiers_;
  std::size_t stride_;
  std::vector<std::vector<double>> cache_;  // [t-1][(s * nA + r) * (K+1) + j]
  std::uint64_t fingerprint_ = 0;
};

/// Backward-induction solution on the lattice.
struct ValueTable {
  int clusters = 0;
  int granularity = 0;
  int horizon = 0;
  std::vector<Vector> value;                       // [t-1][state]
  std::vector<std::vector<std::uint32_t>> action;  // [t-1][state], index into enumerate_actions(K)
  double expected_profit = 0.0;                    // under the model's initial distribution
};

ValueTable bellman_solve(const PlanningModel& model, unsigned workers = 1);

/// Versioned binary file with an embedded lattice descriptor (K, G, T and the lattice points).
void save_value_table(const std::filesystem::path& path, const ValueTable& table);
ValueTable load_value_table(const std::filesystem::path& path);

/// Recommendation rule on the lattice: a deterministic action per (t, state),
/// or a distribution over actions per (t, current cluster).
struct LatticePolicy {
  std::vector<std::vector<std::uint32_t>> deterministic;  // [t-1][state]
  std::vector<Matrix> by_current;                         // [t-1][a][action]

  static LatticePolicy from_table(const ValueTable& table);
  static LatticePolicy from_matrix(const MatrixRecPolicy& policy, const StateSpace& space);
  bool is_deterministic() const { return !deterministic.empty(); }
  /// Probability of action r at (t, s) with current cluster a.
  double probability(int t, std::size_t s, int a, std::size_t r) const;
};

/// Deterministic lattice rule as a RecPolicy (states are snapped to the lattice).
class TableRecPolicy : public RecPolicy {
 public:
  TableRecPolicy(std::shared_ptr<const StateSpace> space, std::vector<std::vector<std::uint32_t>> actions,
                 std::string kind = "first_best");
  std::string kind() const override { return kind_; }
  RecAction sample(const RecState& state, Rng& rng) const override;

 private:
  std::shared_ptr<const StateSpace> space_;
  std::vector<std::vector<std::uint32_t>> actions_;
  std::string kind_;
};

struct Evaluation {
  double expected_profit = 0.0;
  double std_error = 0.0;  // 0 in exact mode
  std::size_t simulations = 0;
};

/// Exact expected profit by pushing state mass forward from the initial distribution.
Evaluation evaluate_exact(const PlanningModel& model, const LatticePolicy& policy);
/// Same quantity by backward recursion; also returns per-state values.
double evaluate_backward(const PlanningModel& model, const LatticePolicy& policy, std::vector<Vector>* values = nullptr);
/// State occupancy (probability of reaching each lattice state) under `policy`.
std::vector<Vector> occupancy(const PlanningModel& model, const LatticePolicy& policy);

/// Monte-Carlo mean realized margin over simulated sessions on the lattice dynamics.
Evaluation evaluate_simulated(const PlanningModel& model, const LatticePolicy& policy, std::size_t n_sims,
                              std::uint64_t seed, unsigned workers = 1);

struct PolicySummary {
  Matrix matrix;                  // K x K: share of cluster j in actions at states with current cluster i
  Matrix per_period;              // [t-1][k]: share of cluster k among recommended slots at t
  Matrix concentration;           // [t-1][d-1]: share of actions with d distinct clusters (d = 1, 2, 3)
  Matrix reachable_concentration; // same, weighted by reachability under the policy itself
};

/// Diagnostics averaged uniformly over lattice states (per t, per current cluster).
PolicySummary summarize_policy(const ValueTable& table, const StateSpace& space,
                               const PlanningModel* model_for_reachability = nullptr);

}  // namespace searchrec
