#include <cmath>
#include <numeric>

#include "doctest.h"
#include "searchrec/rng.hpp"
#include "searchrec/staterec.hpp"

using namespace searchrec;

namespace {

void check_freq(const FreqVector& v, const Vector& expected, double tol = 1e-15) {
  REQUIRE(!v.is_empty());
  REQUIRE(v.dimension() == static_cast<int>(expected.size()));
  for (std::size_t i = 0; i < expected.size(); ++i) CHECK(std::abs(v[static_cast<int>(i)] - expected[i]) <= tol);
}

// All frequency vectors (i/N, j/N, ...) on a fine grid.
std::vector<FreqVector> fine_grid(int k, int n) {
  std::vector<FreqVector> out;
  std::vector<int> c(static_cast<std::size_t>(k));
  auto rec = [&](auto&& self, int pos, int left) -> void {
    if (pos == k - 1) {
      c[pos] = left;
      out.push_back(FreqVector::from_counts(c));
      return;
    }
    for (int v = 0; v <= left; ++v) {
      c[pos] = v;
      self(self, pos + 1, left - v);
    }
  };
  rec(rec, 0, n);
  return out;
}

double l2(const FreqVector& a, const FreqVector& b) {
  double s = 0.0;
  for (int i = 0; i < a.dimension(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return s;
}

}  // namespace

TEST_CASE("update_freq: browsing and recommendation histories") {
  // Views of clusters 1,1,1,2,3 (0-based 0,0,0,1,2).
  const std::vector<int> views = {0, 0, 0, 1, 2};
  check_freq(update_freq(FreqVector::empty(3), 0, views), {0.6, 0.2, 0.2});

  const std::vector<int> first = {2, 1, 1};
  const auto r2 = update_freq(FreqVector::empty(3), 0, first);
  check_freq(r2, {0.0, 2.0 / 3.0, 1.0 / 3.0});

  // One recommendation per step: {3} then {1}.
  const std::vector<int> s1 = {2}, s2 = {0};
  const auto a = update_freq(FreqVector::empty(3), 0, s1);
  check_freq(update_freq(a, 1, s2), {0.5, 0.0, 0.5});

  // Adding a multiset with the same empirical distribution is a fixed point.
  const auto p = FreqVector::of({0.5, 0.25, 0.25});
  const std::vector<int> same = {0, 0, 1, 2};
  check_freq(update_freq(p, 8, same), {0.5, 0.25, 0.25});

  CHECK_THROWS_AS(update_freq(FreqVector::empty(3), 2, s1), ValidationError);
  CHECK_THROWS_AS(FreqVector::of({0.5, 0.6}), ValidationError);
}

TEST_CASE("update_freq output always sums to one") {
  Rng rng(3);
  FreqVector v = FreqVector::empty(5);
  int n = 0;
  for (int step = 0; step < 200; ++step) {
    std::vector<int> items(3);
    for (auto& x : items) x = static_cast<int>(rng.below(5));
    v = update_freq(v, n, items);
    n += 3;
    double s = 0.0;
    for (int i = 0; i < 5; ++i) s += v[i];
    CHECK(std::abs(s - 1.0) <= 1e-12);
  }
}

TEST_CASE("transition follows the decision sequence") {
  // First click on cluster 3, single recommendation of cluster 1, consumer moves to 1.
  const auto s1 = initial_state(3, 2);
  CHECK(s1.A.is_empty());
  CHECK(s1.R.is_empty());
  const std::vector<int> views = {2};
  const std::vector<int> rec = {0};
  const auto A2 = update_freq(s1.A, 0, views);
  const auto R2 = update_freq(s1.R, 0, rec);
  check_freq(A2, {0, 0, 1});
  check_freq(R2, {1, 0, 0});

  // Same with three identical slots through transition().
  const auto t2 = transition(s1, 0, RecAction::make(0, 0, 0));
  CHECK(t2.t == 2);
  CHECK(t2.a == 0);
  check_freq(t2.A, {0, 0, 1});
  check_freq(t2.R, {1, 0, 0});

  // Browse cluster 3, shown {3,2,2}, then visit cluster 1.
  const auto w2 = transition(s1, 0, RecAction::make(2, 1, 1));
  CHECK(w2.t == 2);
  CHECK(w2.a == 0);
  check_freq(w2.A, {0, 0, 1});
  check_freq(w2.R, {0, 2.0 / 3.0, 1.0 / 3.0});
  CHECK(std::abs(w2.R[1] - 0.66) < 0.01);
  CHECK(std::abs(w2.R[2] - 0.33) < 0.01);
  CHECK(transition(s1, 0, RecAction::make(2, 1, 1)) == w2);

  CHECK_THROWS_AS(transition(w2, 1, RecAction::make(0, 0, 0), 2), ValidationError);
}

TEST_CASE("HistoryTracker replays exact frequencies") {
  Rng rng(11);
  for (int trial = 0; trial < 50; ++trial) {
    const int k = 4;
    int first = static_cast<int>(rng.below(k));
    HistoryTracker h(k, first);
    RecState s = initial_state(k, first);
    std::vector<int> views(k, 0), recs(k, 0);
    int a = first;
    for (int t = 1; t < 8; ++t) {
      const auto r = RecAction::make(static_cast<int>(rng.below(k)), static_cast<int>(rng.below(k)),
                                     static_cast<int>(rng.below(k)));
      const int next = static_cast<int>(rng.below(k));
      const auto exact = h.decision_state(r).R, chained = post_recommendation(s, r);
      for (int i = 0; i < k; ++i) CHECK(std::abs(exact[i] - chained[i]) <= 1e-12);
      h.advance(r, next);
      s = transition(s, next, r);
      ++views[a];
      for (int c : r.slots) ++recs[c];
      a = next;
      const auto hs = h.state();
      CHECK(hs.t == s.t);
      for (int i = 0; i < k; ++i) {
        CHECK(std::abs(hs.A[i] - static_cast<double>(views[i]) / t) <= 1e-15);
        CHECK(std::abs(hs.R[i] - static_cast<double>(recs[i]) / (3 * t)) <= 1e-15);
        CHECK(std::abs(s.A[i] - hs.A[i]) <= 1e-12);
        CHECK(std::abs(s.R[i] - hs.R[i]) <= 1e-12);
      }
    }
  }
}

TEST_CASE("enumerate_actions counts and order") {
  CHECK(enumerate_actions(1).size() == 1);
  CHECK(enumerate_actions(2).size() == 4);
  CHECK(enumerate_actions(8).size() == 120);
  const auto acts = enumerate_actions(5);
  for (std::size_t i = 1; i < acts.size(); ++i) CHECK(acts[i - 1] < acts[i]);
  CHECK(RecAction::make(2, 0, 1).slots == std::array<int, 3>{0, 1, 2});
  CHECK(RecAction::make(1, 1, 1).distinct() == 1);
  CHECK(RecAction::make(1, 2, 1).distinct() == 2);
}

TEST_CASE("lattice size and snapping") {
  for (int k = 1; k <= 5; ++k)
    for (int g = 1; g <= 6; ++g) CHECK(SimplexLattice(k, g).point_count() == binomial(g + k - 1, k - 1) + 1);

  const SimplexLattice l22(2, 2);
  check_freq(l22.snap(FreqVector::of({0.6, 0.4})), {0.5, 0.5});
  CHECK(l22.snap(FreqVector::empty(2)).is_empty());
  CHECK(l22.snap_index(FreqVector::empty(2)) == l22.empty_index());
  // Equidistant between (0,1) and (0.5,0.5): the lexicographically smaller wins.
  check_freq(l22.snap(FreqVector::of({0.25, 0.75})), {0.0, 1.0});
}

TEST_CASE("snap is nearest, idempotent and within 1/G at K=3") {
  for (int g : {2, 4, 8}) {
    const SimplexLattice lat(3, g);
    for (std::size_t i = 0; i < lat.size(); ++i) CHECK(lat.snap_index(lat.point(i)) == i);
    for (const auto& v : fine_grid(3, 48)) {
      const auto idx = lat.snap_index(v);
      const auto p = lat.point(idx);
      CHECK(lat.snap_index(p) == idx);
      double linf = 0.0;
      for (int i = 0; i < 3; ++i) linf = std::max(linf, std::abs(v[i] - p[i]));
      CHECK(linf <= 1.0 / g + 1e-12);
      // Brute-force nearest, ties to the lexicographically smallest count vector.
      std::size_t best = 0;
      for (std::size_t j = 1; j < lat.size(); ++j) {
        const double dj = l2(v, lat.point(j)), db = l2(v, lat.point(best));
        if (dj < db - 1e-12 || (std::abs(dj - db) <= 1e-12 && lat.counts(j) < lat.counts(best))) best = j;
      }
      CHECK(idx == best);
    }
  }
}

TEST_CASE("interpolate_value") {
  const SimplexLattice lat(3, 4);
  Vector constant(lat.point_count(), 7.5);
  CHECK(interpolate_value(lat, FreqVector::of({0.1, 0.3, 0.6}), constant) == 7.5);
  Vector table(lat.point_count());
  for (std::size_t i = 0; i < table.size(); ++i) table[i] = static_cast<double>(i);
  for (std::size_t i = 0; i < lat.size(); ++i) CHECK(interpolate_value(lat, lat.point(i), table) == table[i]);
  CHECK(interpolate_value(lat, FreqVector::empty(3), table) == table.back());
  CHECK_THROWS_AS(interpolate_value(lat, FreqVector::empty(3), Vector(3)), ValidationError);

  // Lipschitz test function: maximum error roughly halves when G doubles.
  auto f = [](const FreqVector& v) { return std::abs(v[0] - 0.3) + 2.0 * v[1]; };
  double prev = 0.0;
  for (int g : {4, 8, 16}) {
    const SimplexLattice lg(3, g);
    Vector tab(lg.point_count(), 0.0);
    for (std::size_t i = 0; i < lg.size(); ++i) tab[i] = f(lg.point(i));
    double err = 0.0;
    for (const auto& v : fine_grid(3, 96)) err = std::max(err, std::abs(interpolate_value(lg, v, tab) - f(v)));
    if (prev > 0.0) CHECK(err <= prev / 1.8);
    prev = err;
  }
}

TEST_CASE("state space indexing and successors") {
  const StateSpace space(3, 2, 4);
  CHECK(space.size(1) == 3);
  CHECK(space.size(2) == 3 * 6 * 6);
  for (int t = 2; t <= 4; ++t)
    for (std::size_t s = 0; s < space.size(t); ++s) {
      const auto k = space.key(t, s);
      CHECK(space.index(t, k.a, k.A, k.R) == s);
      CHECK(space.locate(space.state(t, s)) == s);
    }
  // Successor equals snapping the exact transition.
  for (int t = 1; t < 4; ++t)
    for (std::size_t s = 0; s < space.size(t); ++s)
      for (std::size_t r = 0; r < space.actions().size(); ++r) {
        const auto st = space.state(t, s);
        if (t > 1 && (st.A.is_empty() || st.R.is_empty())) continue;
        const auto next = transition(st, 1, space.actions()[r]);
        CHECK(space.next_state(t, s, r, 1) == space.locate(next));
        CHECK(space.post_rec(t, s, r) == post_recommendation(st, space.actions()[r]));
      }
  const auto counts = reachable_state_counts(space);
  CHECK(counts.size() == 4);
  CHECK(counts[0] == 3);
  for (std::size_t t = 1; t < counts.size(); ++t) CHECK(counts[t] <= space.size(static_cast<int>(t) + 1));
}
