#pragma once

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "searchrec/common.hpp"
#include "searchrec/rng.hpp"
#include "searchrec/staterec.hpp"

namespace searchrec {

/// Recommendation rule: RecState -> RecAction (possibly randomized).
class RecPolicy {
 public:
  virtual ~RecPolicy() = default;
  virtual std::string kind() const = 0;
  virtual RecAction sample(const RecState& state, Rng& rng) const = 0;
};

using RecPolicyPtr = std::shared_ptr<const RecPolicy>;

/// Probability that three i.i.d. draws from `row` form the multiset `r`.
double multiset_probability(std::span<const double> row, const RecAction& r);

/// Euclidean projection of a vector onto the probability simplex.
Vector project_to_simplex(std::span<const double> v);

/// Three i.i.d. draws from row M[a] (static) or M_t[a] (dynamic).
class MatrixRecPolicy : public RecPolicy {
 public:
  explicit MatrixRecPolicy(Matrix m);
  /// One matrix per period t = 1..T.
  explicit MatrixRecPolicy(std::vector<Matrix> per_period);

  std::string kind() const override { return dynamic() ? "dynamic_matrix" : "static_matrix"; }
  RecAction sample(const RecState& state, Rng& rng) const override;

  bool dynamic() const { return matrices_.size() > 1; }
  int clusters() const { return static_cast<int>(matrices_.front().size()); }
  std::size_t periods() const { return matrices_.size(); }
  /// Matrix used at period t (1-based); static policies ignore t.
  const Matrix& matrix(int t) const;
  const std::vector<Matrix>& matrices() const { return matrices_; }
  double action_probability(int t, int a, const RecAction& r) const {
    return multiset_probability(matrix(t)[static_cast<std::size_t>(a)], r);
  }

 private:
  std::vector<Matrix> matrices_;
};

void validate_stochastic(const Matrix& m, double tol = 1e-9);

class FixedRecPolicy : public RecPolicy {
 public:
  explicit FixedRecPolicy(RecAction action) : action_(action) {}
  std::string kind() const override { return "fixed"; }
  RecAction sample(const RecState&, Rng&) const override { return action_; }

 private:
  RecAction action_;
};

class FunctionRecPolicy : public RecPolicy {
 public:
  using Fn = std::function<RecAction(const RecState&, Rng&)>;
  explicit FunctionRecPolicy(Fn fn) : fn_(std::move(fn)) {}
  std::string kind() const override { return "custom"; }
  RecAction sample(const RecState& s, Rng& rng) const override { return fn_(s, rng); }

 private:
  Fn fn_;
};

}  // namespace searchrec
