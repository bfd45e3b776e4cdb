#pragma once

#include <array>
#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "searchrec/common.hpp"

namespace searchrec {

/// Number of recommendation slots shown after every click.
inline constexpr int kRecSlots = 3;

/// Relative frequencies over K clusters, or the EMPTY sentinel (no history).
/// EMPTY is a state of its own and is not the uniform vector.
class FreqVector {
 public:
  FreqVector() = default;
  static FreqVector empty(int k);
  /// Validates nonnegativity and unit sum (1e-12).
  static FreqVector of(Vector values);
  static FreqVector from_counts(std::span<const int> counts);

  bool is_empty() const { return empty_; }
  int dimension() const { return k_; }
  const Vector& values() const { return values_; }
  double operator[](int i) const { return empty_ ? 0.0 : values_[static_cast<std::size_t>(i)]; }

  bool operator==(const FreqVector&) const = default;

 private:
  int k_ = 0;
  bool empty_ = true;
  Vector values_;
};

/// out_k = (n_prev * prev_k + count_k(items)) / (n_prev + |items|).
/// `prev` must be EMPTY exactly when n_prev == 0.
FreqVector update_freq(const FreqVector& prev, int n_prev, std::span<const int> items);

/// Three recommended clusters as a canonical (sorted) multiset.
struct RecAction {
  std::array<int, kRecSlots> slots{};

  static RecAction make(int a, int b, int c);
  std::span<const int> items() const { return slots; }
  int distinct() const;
  bool operator==(const RecAction&) const = default;
  auto operator<=>(const RecAction&) const = default;
};

/// All multisets of size 3 over K clusters in lexicographic order; C(K+2, 3) of them.
std::vector<RecAction> enumerate_actions(int k);

/// Recommendation-system state {t, a, A, R}. t is 1-based; a is a 0-based cluster.
struct RecState {
  int t = 1;
  int a = 0;
  FreqVector A;
  FreqVector R;

  bool operator==(const RecState&) const = default;
};

/// Cold-start state after the first click.
RecState initial_state(int k, int first_click);

/// R after showing `rec` at state s (the consumer's decision input).
FreqVector post_recommendation(const RecState& s, const RecAction& rec);

/// Consumer searches cluster `next_click` after seeing `rec`:
/// t+1, a <- next_click, A absorbs the previous a, R absorbs rec.
RecState transition(const RecState& s, int next_click, const RecAction& rec, int horizon = 0);

/// Exact integer-count replay of a session; frequencies are formed only on request.
class HistoryTracker {
 public:
  HistoryTracker(int k, int first_click);

  RecState state() const;
  /// State passed to the consumer policy: R includes the recommendations on screen.
  RecState decision_state(const RecAction& rec) const;
  void advance(const RecAction& rec, int next_click);

  int t() const { return t_; }
  const std::vector<int>& view_counts() const { return views_; }
  const std::vector<int>& rec_counts() const { return recs_; }

 private:
  int k_;
  int t_ = 1;
  int a_;
  std::vector<int> views_;
  std::vector<int> recs_;
  int n_views_ = 0;
  int n_recs_ = 0;
};

/// All count vectors n with n_i >= 0 and sum n_i = G, i.e. frequency vectors
/// on the 1/G grid, plus the EMPTY point (index empty_index()).
class SimplexLattice {
 public:
  SimplexLattice(int k, int granularity);

  int dimension() const { return k_; }
  int granularity() const { return g_; }
  /// Non-empty lattice points.
  std::size_t size() const { return points_.size(); }
  /// size() + 1, counting EMPTY.
  std::size_t point_count() const { return points_.size() + 1; }
  std::size_t empty_index() const { return points_.size(); }

  const std::vector<int>& counts(std::size_t i) const { return points_[i]; }
  FreqVector point(std::size_t i) const;
  std::size_t index_of(std::span<const int> counts) const;

  /// Nearest point in L2, ties to the lexicographically smallest count vector.
  std::size_t snap_index(const FreqVector& v) const;
  FreqVector snap(const FreqVector& v) const { return point(snap_index(v)); }

 private:
  std::uint64_t encode(std::span<const int> counts) const;

  int k_;
  int g_;
  std::vector<std::vector<int>> points_;
  std::unordered_map<std::uint64_t, std::uint32_t> index_;
};

std::uint64_t binomial(int n, int r);

/// Nearest-lattice-point lookup into a table indexed like SimplexLattice
/// (point_count() entries, EMPTY last).
double interpolate_value(const SimplexLattice& lattice, const FreqVector& v, std::span<const double> table);

/// Discretized DP state space. At t = 1 the states are the K first clicks
/// with A = R = EMPTY; for t >= 2 a state is (a, A point, R point).
class StateSpace {
 public:
  struct Key {
    int a;
    std::size_t A;  // lattice index, empty_index() at t = 1
    std::size_t R;
  };

  StateSpace(int k, int granularity, int horizon);

  int clusters() const { return k_; }
  int horizon() const { return horizon_; }
  const SimplexLattice& lattice() const { return lattice_; }
  const std::vector<RecAction>& actions() const { return actions_; }

  std::size_t size(int t) const;
  Key key(int t, std::size_t s) const;
  std::size_t index(int t, int a, std::size_t A, std::size_t R) const;
  RecState state(int t, std::size_t s) const;
  /// Lattice state nearest to an arbitrary state at the same t.
  std::size_t locate(const RecState& s) const;

  /// Unsnapped R after showing actions()[r] in state s at time t.
  FreqVector post_rec(int t, std::size_t s, std::size_t r) const;
  /// Successor when the consumer then searches cluster k (requires t < horizon).
  std::size_t next_state(int t, std::size_t s, std::size_t r, int k) const;

 private:
  int k_;
  int horizon_;
  SimplexLattice lattice_;
  std::vector<RecAction> actions_;
  std::size_t L_;
  // next_A_[t][a * (L+1) + A], next_R_[t][R * nA + r]; indices into the lattice.
  std::vector<std::vector<std::uint32_t>> next_A_;
  std::vector<std::vector<std::uint32_t>> next_R_;
};

/// Number of lattice states reachable at each t = 1..T under some
/// recommendation and search sequence.
std::vector<std::size_t> reachable_state_counts(const StateSpace& space);

}  // namespace searchrec
