#include "searchrec/staterec.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace searchrec {

FreqVector FreqVector::empty(int k) {
  FreqVector v;
  v.k_ = k;
  v.empty_ = true;
  return v;
}

FreqVector FreqVector::of(Vector values) {
  require(!values.empty(), "FreqVector: no entries");
  double sum = 0.0;
  for (double x : values) {
    require(x >= 0.0 && std::isfinite(x), "FreqVector: entries must be finite and nonnegative");
    sum += x;
  }
  require(std::abs(sum - 1.0) <= 1e-12, "FreqVector: entries must sum to 1");
  FreqVector v;
  v.k_ = static_cast<int>(values.size());
  v.empty_ = false;
  v.values_ = std::move(values);
  return v;
}

FreqVector FreqVector::from_counts(std::span<const int> counts) {
  const long total = std::accumulate(counts.begin(), counts.end(), 0L);
  if (total == 0) return empty(static_cast<int>(counts.size()));
  Vector p(counts.size());
  for (std::size_t i = 0; i < counts.size(); ++i) p[i] = static_cast<double>(counts[i]) / static_cast<double>(total);
  FreqVector v;
  v.k_ = static_cast<int>(counts.size());
  v.empty_ = false;
  v.values_ = std::move(p);
  return v;
}

FreqVector update_freq(const FreqVector& prev, int n_prev, std::span<const int> items) {
  require(n_prev >= 0, "update_freq: negative count");
  require(prev.is_empty() == (n_prev == 0), "update_freq: EMPTY must pair with a zero count");
  const int k = prev.dimension();
  require(k > 0, "update_freq: dimension unknown");
  if (items.empty()) return prev;
  Vector out(static_cast<std::size_t>(k), 0.0);
  if (!prev.is_empty())
    for (int i = 0; i < k; ++i) out[i] = n_prev * prev[i];
  for (int c : items) {
    require(c >= 0 && c < k, "update_freq: cluster out of range");
    out[c] += 1.0;
  }
  const double total = static_cast<double>(n_prev) + static_cast<double>(items.size());
  for (double& x : out) x /= total;
  // Renormalize away rounding so the unit-sum invariant holds to 1e-12.
  const double sum = std::accumulate(out.begin(), out.end(), 0.0);
  for (double& x : out) x /= sum;
  return FreqVector::of(std::move(out));
}

RecAction RecAction::make(int a, int b, int c) {
  RecAction r;
  r.slots = {a, b, c};
  std::sort(r.slots.begin(), r.slots.end());
  return r;
}

int RecAction::distinct() const {
  return 1 + (slots[1] != slots[0]) + (slots[2] != slots[1]);
}

std::vector<RecAction> enumerate_actions(int k) {
  require(k >= 1, "enumerate_actions: K must be >= 1");
  std::vector<RecAction> out;
  for (int a = 0; a < k; ++a)
    for (int b = a; b < k; ++b)
      for (int c = b; c < k; ++c) out.push_back(RecAction{{a, b, c}});
  return out;
}

RecState initial_state(int k, int first_click) {
  require(first_click >= 0 && first_click < k, "initial_state: cluster out of range");
  return RecState{1, first_click, FreqVector::empty(k), FreqVector::empty(k)};
}

FreqVector post_recommendation(const RecState& s, const RecAction& rec) {
  return update_freq(s.R, kRecSlots * (s.t - 1), rec.items());
}

RecState transition(const RecState& s, int next_click, const RecAction& rec, int horizon) {
  if (horizon > 0 && s.t >= horizon)
    throw ValidationError("transition: state at t = " + std::to_string(s.t) + " is at the horizon");
  const int k = s.A.dimension();
  require(next_click >= 0 && next_click < k, "transition: cluster out of range");
  RecState next;
  next.t = s.t + 1;
  next.a = next_click;
  const int viewed[1] = {s.a};
  next.A = update_freq(s.A, s.t - 1, viewed);
  next.R = post_recommendation(s, rec);
  return next;
}

HistoryTracker::HistoryTracker(int k, int first_click)
    : k_(k), a_(first_click), views_(static_cast<std::size_t>(k), 0), recs_(static_cast<std::size_t>(k), 0) {
  require(first_click >= 0 && first_click < k, "HistoryTracker: cluster out of range");
}

RecState HistoryTracker::state() const {
  return RecState{t_, a_, FreqVector::from_counts(views_), FreqVector::from_counts(recs_)};
}

RecState HistoryTracker::decision_state(const RecAction& rec) const {
  std::vector<int> recs = recs_;
  for (int c : rec.slots) ++recs[c];
  return RecState{t_, a_, FreqVector::from_counts(views_), FreqVector::from_counts(recs)};
}

void HistoryTracker::advance(const RecAction& rec, int next_click) {
  require(next_click >= 0 && next_click < k_, "HistoryTracker: cluster out of range");
  ++views_[a_];
  ++n_views_;
  for (int c : rec.slots) ++recs_[c];
  n_recs_ += kRecSlots;
  a_ = next_click;
  ++t_;
}

std::uint64_t binomial(int n, int r) {
  if (r < 0 || r > n) return 0;
  std::uint64_t out = 1;
  for (int i = 1; i <= r; ++i) out = out * static_cast<std::uint64_t>(n - r + i) / static_cast<std::uint64_t>(i);
  return out;
}

SimplexLattice::SimplexLattice(int k, int granularity) : k_(k), g_(granularity) {
  require(k >= 1, "SimplexLattice: K must be >= 1");
  require(granularity >= 1, "SimplexLattice: G must be >= 1");
  require(std::pow(static_cast<double>(granularity + 1), k) < 1.8e19, "SimplexLattice: too large");
  require(binomial(granularity + k - 1, k - 1) < (1u << 31), "SimplexLattice: too many points");
  std::vector<int> cur(static_cast<std::size_t>(k), 0);
  // Lexicographic enumeration of compositions of G into K parts.
  auto rec = [&](auto&& self, int pos, int left) -> void {
    if (pos == k - 1) {
      cur[pos] = left;
      points_.push_back(cur);
      return;
    }
    for (int v = 0; v <= left; ++v) {
      cur[pos] = v;
      self(self, pos + 1, left - v);
    }
  };
  rec(rec, 0, granularity);
  for (std::size_t i = 0; i < points_.size(); ++i) index_.emplace(encode(points_[i]), static_cast<std::uint32_t>(i));
}

std::uint64_t SimplexLattice::encode(std::span<const int> counts) const {
  std::uint64_t code = 0;
  for (int c : counts) code = code * static_cast<std::uint64_t>(g_ + 1) + static_cast<std::uint64_t>(c);
  return code;
}

FreqVector SimplexLattice::point(std::size_t i) const {
  if (i == empty_index()) return FreqVector::empty(k_);
  return FreqVector::from_counts(points_.at(i));
}

std::size_t SimplexLattice::index_of(std::span<const int> counts) const {
  auto it = index_.find(encode(counts));
  require(it != index_.end(), "SimplexLattice: not a lattice point");
  return it->second;
}

std::size_t SimplexLattice::snap_index(const FreqVector& v) const {
  if (v.is_empty()) return empty_index();
  require(v.dimension() == k_, "snap: dimension mismatch");
  std::vector<int> n(static_cast<std::size_t>(k_));
  std::vector<double> frac(static_cast<std::size_t>(k_));
  int total = 0;
  for (int i = 0; i < k_; ++i) {
    const double y = v[i] * g_;
    double fl = std::floor(y);
    // Treat values within rounding of an integer as that integer.
    if (y - fl > 1.0 - 1e-9) fl += 1.0;
    n[i] = static_cast<int>(fl);
    frac[i] = std::max(0.0, y - fl);
    total += n[i];
  }
  int deficit = g_ - total;
  std::vector<int> order(static_cast<std::size_t>(k_));
  std::iota(order.begin(), order.end(), 0);
  // Larger fractional part first; among ties the higher index receives the
  // unit so earlier coordinates stay small (lexicographically smallest).
  std::stable_sort(order.begin(), order.end(), [&](int x, int y) {
    if (std::abs(frac[x] - frac[y]) > 1e-9) return frac[x] > frac[y];
    return x > y;
  });
  if (deficit > 0) {
    for (int j = 0; j < deficit && j < k_; ++j) ++n[order[j]];
  } else if (deficit < 0) {
    // Only reachable through rounding; remove from the smallest fractions.
    for (int j = k_ - 1; j >= 0 && deficit < 0; --j)
      if (n[order[j]] > 0) {
        --n[order[j]];
        ++deficit;
      }
  }
  return index_of(n);
}

double interpolate_value(const SimplexLattice& lattice, const FreqVector& v, std::span<const double> table) {
  require(table.size() == lattice.point_count(), "interpolate_value: table size must equal lattice point count");
  return table[lattice.snap_index(v)];
}

StateSpace::StateSpace(int k, int granularity, int horizon)
    : k_(k), horizon_(horizon), lattice_(k, granularity), actions_(enumerate_actions(k)), L_(lattice_.size()) {
  require(horizon >= 1, "StateSpace: horizon must be >= 1");
  const std::size_t nA = actions_.size();
  next_A_.resize(static_cast<std::size_t>(horizon) + 1);
  next_R_.resize(static_cast<std::size_t>(horizon) + 1);
  for (int t = 1; t < horizon; ++t) {
    auto& na = next_A_[t];
    na.assign(static_cast<std::size_t>(k) * (L_ + 1), 0);
    for (int a = 0; a < k; ++a) {
      for (std::size_t A = 0; A <= L_; ++A) {
        if ((t == 1) != (A == lattice_.empty_index())) continue;
        const int viewed[1] = {a};
        na[a * (L_ + 1) + A] = static_cast<std::uint32_t>(lattice_.snap_index(update_freq(lattice_.point(A), t - 1, viewed)));
      }
    }
    auto& nr = next_R_[t];
    nr.assign((L_ + 1) * nA, 0);
    for (std::size_t R = 0; R <= L_; ++R) {
      if ((t == 1) != (R == lattice_.empty_index())) continue;
      const FreqVector base = lattice_.point(R);
      for (std::size_t r = 0; r < nA; ++r)
        nr[R * nA + r] = static_cast<std::uint32_t>(
            lattice_.snap_index(update_freq(base, kRecSlots * (t - 1), actions_[r].items())));
    }
  }
}

std::size_t StateSpace::size(int t) const {
  require(t >= 1 && t <= horizon_, "StateSpace: t out of range");
  return t == 1 ? static_cast<std::size_t>(k_) : static_cast<std::size_t>(k_) * L_ * L_;
}

StateSpace::Key StateSpace::key(int t, std::size_t s) const {
  if (t == 1) return {static_cast<int>(s), lattice_.empty_index(), lattice_.empty_index()};
  const std::size_t R = s % L_;
  const std::size_t rest = s / L_;
  return {static_cast<int>(rest / L_), rest % L_, R};
}

std::size_t StateSpace::index(int t, int a, std::size_t A, std::size_t R) const {
  if (t == 1) return static_cast<std::size_t>(a);
  return (static_cast<std::size_t>(a) * L_ + A) * L_ + R;
}

RecState StateSpace::state(int t, std::size_t s) const {
  const Key key_ = key(t, s);
  return RecState{t, key_.a, lattice_.point(key_.A), lattice_.point(key_.R)};
}

std::size_t StateSpace::locate(const RecState& s) const {
  require(s.t >= 1 && s.t <= horizon_, "StateSpace: t out of range");
  if (s.t == 1) return static_cast<std::size_t>(s.a);
  return index(s.t, s.a, lattice_.snap_index(s.A), lattice_.snap_index(s.R));
}

FreqVector StateSpace::post_rec(int t, std::size_t s, std::size_t r) const {
  const Key k = key(t, s);
  return update_freq(lattice_.point(k.R), kRecSlots * (t - 1), actions_[r].items());
}

std::size_t StateSpace::next_state(int t, std::size_t s, std::size_t r, int k) const {
  const Key key_ = key(t, s);
  const std::size_t A = next_A_[t][static_cast<std::size_t>(key_.a) * (L_ + 1) + key_.A];
  const std::size_t R = next_R_[t][key_.R * actions_.size() + r];
  return index(t + 1, k, A, R);
}

std::vector<std::size_t> reachable_state_counts(const StateSpace& space) {
  const int T = space.horizon();
  std::vector<std::size_t> counts(static_cast<std::size_t>(T), 0);
  std::vector<char> cur(space.size(1), 1);
  counts[0] = cur.size();
  for (int t = 1; t < T; ++t) {
    std::vector<char> next(space.size(t + 1), 0);
    for (std::size_t s = 0; s < cur.size(); ++s) {
      if (!cur[s]) continue;
      for (std::size_t r = 0; r < space.actions().size(); ++r)
        for (int k = 0; k < space.clusters(); ++k) next[space.next_state(t, s, r, k)] = 1;
    }
    counts[t] = static_cast<std::size_t>(std::count(next.begin(), next.end(), 1));
    cur.swap(next);
  }
  return counts;
}

}  // namespace searchrec
