#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <nlohmann/json_fwd.hpp>
#include <string>
#include <vector>

#include "searchrec/common.hpp"
#include "searchrec/staterec.hpp"

namespace searchrec {

// Consumer actions are indexed 0..2K: search k -> k, convert k -> K + k, exit -> 2K.
enum class ActionKind { search, convert, exit };

struct ConsumerAction {
  ActionKind kind = ActionKind::exit;
  int cluster = -1;  // -1 for exit

  static ConsumerAction search(int k) { return {ActionKind::search, k}; }
  static ConsumerAction convert(int k) { return {ActionKind::convert, k}; }
  static ConsumerAction exit() { return {ActionKind::exit, -1}; }
  bool operator==(const ConsumerAction&) const = default;
};

inline int action_count(int k) { return 2 * k + 1; }
int action_index(const ConsumerAction& a, int k);
ConsumerAction action_from_index(int index, int k);

/// Pr(action | post-recommendation state) over the 2K+1 consumer actions.
/// The first click of a session is drawn from initial(), a distribution over
/// the same 2K+1 actions with no recommendations on screen.
class ConsumerPolicy {
 public:
  ConsumerPolicy(int clusters, int horizon);
  virtual ~ConsumerPolicy() = default;

  int clusters() const { return k_; }
  int horizon() const { return horizon_; }
  int classes() const { return action_count(k_); }

  /// `state.R` already includes the recommendations on screen.
  virtual Vector predict(const RecState& state) const = 0;
  virtual std::string method() const = 0;
  /// Model parameters only; save_policy adds the common envelope.
  virtual nlohmann::json model_json() const = 0;

  const Vector& initial() const { return initial_; }
  void set_initial(Vector initial);

  /// Free-form training notes (collapsed classes, iterations, ...).
  std::vector<std::string> diagnostics;

 private:
  int k_;
  int horizon_;
  Vector initial_;
};

using PolicyPtr = std::shared_ptr<const ConsumerPolicy>;

/// [t/T, one-hot a (K), A (K), A empty flag, R (K), R empty flag]; 3K + 3 entries.
Vector featurize(const RecState& state, int horizon);
inline std::size_t feature_dimension(int k) { return static_cast<std::size_t>(3 * k + 3); }

/// One supervised example: consumer action taken at a post-recommendation state.
struct Observation {
  RecState state;
  int action = 0;
};

// ---------------------------------------------------------------------------
// Estimators

class MultinomialLogitPolicy : public ConsumerPolicy {
 public:
  /// coefficients[c] holds (intercept, slopes...) for class c; the reference
  /// class has zeros. Classes with active[c] == false get probability 0.
  MultinomialLogitPolicy(int clusters, int horizon, Matrix coefficients, std::vector<bool> active);

  Vector predict(const RecState& state) const override;
  Vector predict_features(const Vector& x) const;
  std::string method() const override { return "logit"; }
  nlohmann::json model_json() const override;
  static std::shared_ptr<MultinomialLogitPolicy> from_json(int clusters, int horizon, const nlohmann::json& j);

  const Matrix& coefficients() const { return coef_; }
  const std::vector<bool>& active() const { return active_; }

 private:
  Matrix coef_;
  std::vector<bool> active_;
};

struct LogitOptions {
  double ridge = 1e-4;  // penalty on slopes; intercepts are not penalized
  int max_iter = 100;
  double tolerance = 1e-8;  // gradient norm of the mean penalized log-likelihood
};

/// Newton ascent with backtracking. Throws ConvergenceError (carrying the
/// final gradient norm) when max_iter is reached first.
std::shared_ptr<MultinomialLogitPolicy> fit_multinomial_logit(const std::vector<Observation>& train, int clusters,
                                                              int horizon, const LogitOptions& options = {});

/// Mean penalized log-likelihood and its gradient (same layout as the
/// coefficients of the active non-reference classes, flattened).
struct LogitObjective {
  double value;
  Vector gradient;
};
LogitObjective logit_objective(const std::vector<Observation>& train, int clusters, int horizon, const Matrix& coefficients,
                               const std::vector<bool>& active, double ridge);

enum class EnsembleMode { bagging, boosting };

struct TreeParams {
  EnsembleMode mode = EnsembleMode::bagging;
  int n_trees = 100;
  int max_depth = 12;
  int min_leaf = 5;
  int max_bins = 32;
  double learning_rate = 0.1;  // boosting only
  bool bootstrap = true;       // bagging only
  int mtry = 0;                // features tried per split; 0 = ceil(sqrt(d)) for bagging, all for boosting
  std::uint64_t seed = 0;
  unsigned workers = 1;

  static TreeParams boosting_defaults();
};

/// Flat binary tree. Leaves carry a value vector (class distribution for
/// bagging, additive score for boosting).
struct Tree {
  struct Node {
    int feature = -1;  // -1 for a leaf
    double threshold = 0.0;
    int left = -1;
    int right = -1;
    int value = -1;  // row of `values` for leaves
  };
  std::vector<Node> nodes;
  Matrix values;

  const Vector& leaf(const Vector& x) const;
};

class TreeEnsemblePolicy : public ConsumerPolicy {
 public:
  TreeEnsemblePolicy(int clusters, int horizon, EnsembleMode mode, std::vector<Tree> trees, Vector base_score,
                     double learning_rate);

  Vector predict(const RecState& state) const override;
  Vector predict_features(const Vector& x) const;
  std::string method() const override { return mode_ == EnsembleMode::bagging ? "forest" : "boost"; }
  nlohmann::json model_json() const override;
  static std::shared_ptr<TreeEnsemblePolicy> from_json(int clusters, int horizon, EnsembleMode mode,
                                                       const nlohmann::json& j);

  const std::vector<Tree>& trees() const { return trees_; }

 private:
  EnsembleMode mode_;
  std::vector<Tree> trees_;
  Vector base_;  // boosting: initial log-odds per class
  double rate_;
};

std::shared_ptr<TreeEnsemblePolicy> fit_tree_ensemble(const std::vector<Observation>& train, int clusters, int horizon,
                                                      const TreeParams& params);

// ---------------------------------------------------------------------------
// Synthetic ground truth

/// Multinomial logit over hand-set utilities. With R' the post-recommendation
/// frequencies and A the browsing history:
///   exit      : exit_base + exit_time * t/T + exit_match * R'_a
///   search k  : search_base[k] + stay * [a = k] + history * A_k + rec_search * R'_k
///   convert k : convert_base[k] + current * [a = k] + rec_convert * R'_k
///               + match * [a = k] * R'_k + history_convert * A_k
struct UtilityParams {
  Vector search_base;
  Vector convert_base;
  double exit_base = 0.0;
  double exit_time = 0.0;
  double exit_match = 0.0;
  double stay = 0.0;
  double history = 0.0;
  double rec_search = 0.0;
  double current = 0.0;
  double rec_convert = 0.0;
  double match = 0.0;
  double history_convert = 0.0;
  Vector initial;  // 2K+1 first-event distribution; empty = derived from the bases

  nlohmann::json to_json() const;
  static UtilityParams from_json(const nlohmann::json& j);
  /// Moderate defaults used by the generator and the calibrated test model.
  static UtilityParams calibrated(int clusters);
};

class UtilityTruthPolicy : public ConsumerPolicy {
 public:
  UtilityTruthPolicy(int clusters, int horizon, UtilityParams params);

  Vector predict(const RecState& state) const override;
  std::string method() const override { return "utility"; }
  nlohmann::json model_json() const override;
  const UtilityParams& params() const { return params_; }

 private:
  UtilityParams params_;
};

/// Adapter around a callable; used by tests and for hand-built truths.
class FunctionPolicy : public ConsumerPolicy {
 public:
  using Fn = std::function<Vector(const RecState&)>;
  FunctionPolicy(int clusters, int horizon, Fn fn, std::string tag = "function");

  Vector predict(const RecState& state) const override { return fn_(state); }
  std::string method() const override { return tag_; }
  nlohmann::json model_json() const override;

 private:
  Fn fn_;
  std::string tag_;
};

/// Versioned JSON envelope {format, version, method, clusters, horizon, initial, model}.
void save_policy(const std::filesystem::path& path, const ConsumerPolicy& policy);
nlohmann::json policy_to_json(const ConsumerPolicy& policy);
PolicyPtr policy_from_json(const nlohmann::json& j);
PolicyPtr load_policy(const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// Fit metrics and model selection

struct FitReport {
  double accuracy = 0.0;
  double log_loss = 0.0;  // -mean ln p(observed); smaller is better
  double hellinger = 0.0;
  double lift = 0.0;
  double nagelkerke_r2 = 0.0;
  std::size_t n = 0;
  std::size_t clamped = 0;  // observations whose predicted probability was clamped at 1e-12
};

/// Metrics from predicted probability rows and observed classes. The
/// intercept-only baseline for the pseudo-R2 uses the empirical class
/// frequencies of `observed`.
FitReport evaluate_predictions(const Matrix& predicted, const std::vector<int>& observed);
FitReport evaluate(const ConsumerPolicy& policy, const std::vector<Observation>& holdout);

struct FitCell {
  std::string method;
  int k = 0;
  FitReport report;
  double silhouette = 0.0;
};

/// Largest lift, then largest pseudo-R2, then largest silhouette; first cell wins exact ties.
std::size_t select_model(const std::vector<FitCell>& grid);
void write_fit_grid_csv(const std::filesystem::path& path, const std::vector<FitCell>& grid);

/// Empirical distribution of first events (2K+1 entries).
Vector estimate_initial(const std::vector<int>& first_actions, int clusters);

}  // namespace searchrec
