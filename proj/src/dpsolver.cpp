#include "searchrec/dpsolver.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>

#include "searchrec/parallel.hpp"

namespace searchrec {

namespace {

std::uint64_t hash_bytes(std::uint64_t h, const void* data, std::size_t n) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

// Candidate value beats the incumbent only by more than rounding noise, so
// ties resolve to the earlier (lexicographically smaller) action.
bool better(double candidate, double incumbent) {
  return candidate > incumbent + 1e-12 * std::max(1.0, std::abs(incumbent));
}

}  // namespace

double instantaneous_profit(const RecState& state, const ConsumerPolicy& policy, std::span<const double> margins) {
  require(margins.size() == static_cast<std::size_t>(policy.clusters()), "instantaneous_profit: need K margins");
  const Vector p = policy.predict(state);
  double pi = 0.0;
  for (int k = 0; k < policy.clusters(); ++k) pi += margins[k] * p[policy.clusters() + k];
  return pi;
}

PlanningModel::PlanningModel(PolicyPtr policy, Vector margins, std::shared_ptr<const StateSpace> space,
                             ScenarioModifiers modifiers, ModelOptions options)
    : policy_(std::move(policy)),
      raw_margins_(std::move(margins)),
      space_(std::move(space)),
      modifiers_(modifiers) {
  require(policy_ && space_, "PlanningModel: null policy or state space");
  const int K = space_->clusters();
  require(policy_->clusters() == K, "PlanningModel: policy and state space disagree on K");
  require(raw_margins_.size() == static_cast<std::size_t>(K), "PlanningModel: need K margins");
  for (double m : raw_margins_) require(std::isfinite(m), "PlanningModel: non-finite margin");
  margins_ = raw_margins_;
  if (modifiers_.uniform_margins) {
    const double mean = std::accumulate(raw_margins_.begin(), raw_margins_.end(), 0.0) / K;
    std::fill(margins_.begin(), margins_.end(), mean);
  }
  stride_ = static_cast<std::size_t>(K) + 1;
  const std::size_t nA = space_->actions().size();
  std::size_t total = 0;
  for (int t = 1; t <= space_->horizon(); ++t) total += space_->size(t) * nA * stride_;

  std::uint64_t h = 0xcbf29ce484222325ULL;
  h = hash_bytes(h, margins_.data(), margins_.size() * sizeof(double));
  h = hash_bytes(h, initial().data(), initial().size() * sizeof(double));
  const std::uint8_t flags[3] = {modifiers_.zero_exit, modifiers_.uniform_margins, modifiers_.one_step};
  h = hash_bytes(h, flags, sizeof flags);
  if (total * sizeof(double) <= options.cache_bytes) {
    cache_.resize(static_cast<std::size_t>(space_->horizon()));
    for (int t = 1; t <= space_->horizon(); ++t) {
      auto& slice = cache_[t - 1];
      slice.resize(space_->size(t) * nA * stride_);
      parallel_for(space_->size(t), options.workers, [&](std::size_t s) {
        for (std::size_t r = 0; r < nA; ++r) compute(t, s, r, slice.data() + (s * nA + r) * stride_);
      });
      h = hash_bytes(h, slice.data(), slice.size() * sizeof(double));
    }
  } else {
    // Uncached: fingerprint a deterministic sample of entries.
    Vector buf(stride_);
    for (int t = 1; t <= space_->horizon(); ++t)
      for (std::size_t s = 0; s < space_->size(t); s += 1 + space_->size(t) / 16) {
        compute(t, s, 0, buf.data());
        h = hash_bytes(h, buf.data(), buf.size() * sizeof(double));
      }
  }
  fingerprint_ = h;
}

Vector PlanningModel::response(int t, std::size_t s, std::size_t r) const {
  const auto key = space_->key(t, s);
  const auto& lat = space_->lattice();
  RecState st{t, key.a, lat.point(key.A), space_->post_rec(t, s, r)};
  Vector p = policy_->predict(st);
  const int K = clusters();
  if (modifiers_.zero_exit && p[2 * K] < 1.0) {
    const double keep = 1.0 - p[2 * K];
    p[2 * K] = 0.0;
    for (int j = 0; j < 2 * K; ++j) p[j] /= keep;
  }
  return p;
}

void PlanningModel::compute(int t, std::size_t s, std::size_t r, double* out) const {
  const Vector p = response(t, s, r);
  const int K = clusters();
  double pi = 0.0;
  for (int k = 0; k < K; ++k) {
    pi += margins_[k] * p[K + k];
    out[1 + k] = p[k];
  }
  out[0] = pi;
}

const double* PlanningModel::entry(int t, std::size_t s, std::size_t r, double* scratch) const {
  if (!cache_.empty()) return cache_[t - 1].data() + (s * space_->actions().size() + r) * stride_;
  compute(t, s, r, scratch);
  return scratch;
}

double PlanningModel::initial_profit() const {
  const int K = clusters();
  double pi = 0.0;
  for (int k = 0; k < K; ++k) pi += raw_margins_[k] * initial()[K + k];
  return pi;
}

// ---------------------------------------------------------------------------

ValueTable bellman_solve(const PlanningModel& model, unsigned workers) {
  const auto& space = model.space();
  const int T = space.horizon();
  const int K = space.clusters();
  const std::size_t nA = space.actions().size();
  ValueTable table;
  table.clusters = K;
  table.granularity = space.lattice().granularity();
  table.horizon = T;
  table.value.resize(T);
  table.action.resize(T);
  for (int t = T; t >= 1; --t) {
    auto& V = table.value[t - 1];
    auto& act = table.action[t - 1];
    V.assign(space.size(t), 0.0);
    act.assign(space.size(t), 0);
    const Vector* next = t < T ? &table.value[t] : nullptr;
    parallel_for(space.size(t), workers, [&](std::size_t s) {
      Vector scratch(static_cast<std::size_t>(K) + 1);
      double best = -std::numeric_limits<double>::infinity();
      double best_value = 0.0;
      std::uint32_t arg = 0;
      for (std::size_t r = 0; r < nA; ++r) {
        const double* e = model.entry(t, s, r, scratch.data());
        double q = e[0];
        if (next)
          for (int k = 0; k < K; ++k)
            if (e[1 + k] > 0.0) q += e[1 + k] * (*next)[space.next_state(t, s, r, k)];
        const double objective = model.modifiers().one_step ? e[0] : q;
        if (r == 0 || better(objective, best)) {
          best = objective;
          best_value = q;
          arg = static_cast<std::uint32_t>(r);
        }
      }
      V[s] = best_value;
      act[s] = arg;
    });
  }
  double total = model.initial_profit();
  for (int a = 0; a < K; ++a) total += model.initial()[a] * table.value[0][space.index(1, a, 0, 0)];
  table.expected_profit = total;
  return table;
}

namespace {

constexpr char kMagic[8] = {'S', 'R', 'V', 'T', 'A', 'B', 'L', 'E'};
constexpr std::uint32_t kVersion = 1;

template <class T>
void put(std::ostream& out, const T& v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof v);
}
template <class T>
T get(std::istream& in) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof v);
  if (!in) throw ValidationError("value table: truncated file");
  return v;
}

}  // namespace

void save_value_table(const std::filesystem::path& path, const ValueTable& table) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ValidationError("cannot write " + path.string());
  out.write(kMagic, sizeof kMagic);
  put(out, kVersion);
  put(out, static_cast<std::int32_t>(table.clusters));
  put(out, static_cast<std::int32_t>(table.granularity));
  put(out, static_cast<std::int32_t>(table.horizon));
  const SimplexLattice lat(table.clusters, table.granularity);
  put(out, static_cast<std::uint64_t>(lat.size()));
  for (std::size_t i = 0; i < lat.size(); ++i)
    for (int c : lat.counts(i)) put(out, static_cast<std::int32_t>(c));
  put(out, table.expected_profit);
  for (int t = 0; t < table.horizon; ++t) {
    put(out, static_cast<std::uint64_t>(table.value[t].size()));
    out.write(reinterpret_cast<const char*>(table.value[t].data()),
              static_cast<std::streamsize>(table.value[t].size() * sizeof(double)));
    out.write(reinterpret_cast<const char*>(table.action[t].data()),
              static_cast<std::streamsize>(table.action[t].size() * sizeof(std::uint32_t)));
  }
}

ValueTable load_value_table(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot read " + path.string());
  char magic[8];
  in.read(magic, sizeof magic);
  if (!in || std::memcmp(magic, kMagic, sizeof magic) != 0) throw ValidationError("not a value table file");
  if (get<std::uint32_t>(in) != kVersion) throw ValidationError("unsupported value table version");
  ValueTable t;
  t.clusters = get<std::int32_t>(in);
  t.granularity = get<std::int32_t>(in);
  t.horizon = get<std::int32_t>(in);
  require(t.clusters >= 1 && t.granularity >= 1 && t.horizon >= 1, "value table: bad header");
  const SimplexLattice lat(t.clusters, t.granularity);
  if (get<std::uint64_t>(in) != lat.size()) throw ValidationError("value table: lattice size mismatch");
  for (std::size_t i = 0; i < lat.size(); ++i)
    for (int c : lat.counts(i))
      if (get<std::int32_t>(in) != c) throw ValidationError("value table: lattice descriptor mismatch");
  t.expected_profit = get<double>(in);
  t.value.resize(t.horizon);
  t.action.resize(t.horizon);
  for (int p = 0; p < t.horizon; ++p) {
    const auto n = get<std::uint64_t>(in);
    const std::uint64_t expected = p == 0 ? static_cast<std::uint64_t>(t.clusters)
                                          : static_cast<std::uint64_t>(t.clusters) * lat.size() * lat.size();
    if (n != expected) throw ValidationError("value table: slice size mismatch");
    t.value[p].resize(n);
    t.action[p].resize(n);
    in.read(reinterpret_cast<char*>(t.value[p].data()), static_cast<std::streamsize>(n * sizeof(double)));
    in.read(reinterpret_cast<char*>(t.action[p].data()), static_cast<std::streamsize>(n * sizeof(std::uint32_t)));
    if (!in) throw ValidationError("value table: truncated file");
  }
  return t;
}

// ---------------------------------------------------------------------------

LatticePolicy LatticePolicy::from_table(const ValueTable& table) {
  LatticePolicy p;
  p.deterministic = table.action;
  return p;
}

LatticePolicy LatticePolicy::from_matrix(const MatrixRecPolicy& policy, const StateSpace& space) {
  require(policy.clusters() == space.clusters(), "matrix policy: K mismatch");
  require(!policy.dynamic() || policy.periods() == static_cast<std::size_t>(space.horizon()),
          "dynamic matrix policy needs one matrix per period");
  LatticePolicy p;
  const int K = space.clusters();
  const auto& actions = space.actions();
  p.by_current.resize(space.horizon());
  for (int t = 1; t <= space.horizon(); ++t) {
    auto& m = p.by_current[t - 1];
    m.assign(K, Vector(actions.size()));
    for (int a = 0; a < K; ++a)
      for (std::size_t r = 0; r < actions.size(); ++r) m[a][r] = policy.action_probability(t, a, actions[r]);
  }
  return p;
}

double LatticePolicy::probability(int t, std::size_t s, int a, std::size_t r) const {
  if (is_deterministic()) return deterministic[t - 1][s] == r ? 1.0 : 0.0;
  return by_current[t - 1][a][r];
}

TableRecPolicy::TableRecPolicy(std::shared_ptr<const StateSpace> space, std::vector<std::vector<std::uint32_t>> actions,
                               std::string kind)
    : space_(std::move(space)), actions_(std::move(actions)), kind_(std::move(kind)) {
  require(actions_.size() == static_cast<std::size_t>(space_->horizon()), "table policy: one slice per period");
}

RecAction TableRecPolicy::sample(const RecState& state, Rng&) const {
  const int t = std::min(state.t, space_->horizon());
  RecState s = state;
  s.t = t;
  return space_->actions()[actions_[t - 1][space_->locate(s)]];
}

namespace {

// Visits every (action, probability) pair with positive probability.
template <class Fn>
void for_each_action(const LatticePolicy& policy, int t, std::size_t s, int a, std::size_t nA, Fn&& fn) {
  if (policy.is_deterministic()) {
    fn(static_cast<std::size_t>(policy.deterministic[t - 1][s]), 1.0);
    return;
  }
  const auto& row = policy.by_current[t - 1][a];
  for (std::size_t r = 0; r < nA; ++r)
    if (row[r] > 0.0) fn(r, row[r]);
}

void check_policy_shape(const PlanningModel& model, const LatticePolicy& policy) {
  const auto T = static_cast<std::size_t>(model.horizon());
  if (policy.is_deterministic()) {
    require(policy.deterministic.size() == T, "lattice policy: wrong number of periods");
    for (int t = 1; t <= model.horizon(); ++t)
      require(policy.deterministic[t - 1].size() == model.space().size(t), "lattice policy: wrong slice size");
  } else {
    require(policy.by_current.size() == T, "lattice policy: wrong number of periods");
  }
}

}  // namespace

std::vector<Vector> occupancy(const PlanningModel& model, const LatticePolicy& policy) {
  check_policy_shape(model, policy);
  const auto& space = model.space();
  const int T = space.horizon(), K = space.clusters();
  const std::size_t nA = space.actions().size();
  std::vector<Vector> mass(T);
  mass[0].assign(space.size(1), 0.0);
  for (int a = 0; a < K; ++a) mass[0][a] = model.initial()[a];
  Vector scratch(static_cast<std::size_t>(K) + 1);
  for (int t = 1; t < T; ++t) {
    mass[t].assign(space.size(t + 1), 0.0);
    for (std::size_t s = 0; s < space.size(t); ++s) {
      const double m = mass[t - 1][s];
      if (m == 0.0) continue;
      const int a = space.key(t, s).a;
      for_each_action(policy, t, s, a, nA, [&](std::size_t r, double q) {
        const double* e = model.entry(t, s, r, scratch.data());
        for (int k = 0; k < K; ++k)
          if (e[1 + k] > 0.0) mass[t][space.next_state(t, s, r, k)] += m * q * e[1 + k];
      });
    }
  }
  return mass;
}

Evaluation evaluate_exact(const PlanningModel& model, const LatticePolicy& policy) {
  const auto mass = occupancy(model, policy);
  const auto& space = model.space();
  const int K = space.clusters();
  const std::size_t nA = space.actions().size();
  Vector scratch(static_cast<std::size_t>(K) + 1);
  double total = 0.0;
  for (int t = 1; t <= space.horizon(); ++t) {
    double slice = 0.0;
    for (std::size_t s = 0; s < space.size(t); ++s) {
      const double m = mass[t - 1][s];
      if (m == 0.0) continue;
      const int a = space.key(t, s).a;
      for_each_action(policy, t, s, a, nA,
                      [&](std::size_t r, double q) { slice += m * q * model.entry(t, s, r, scratch.data())[0]; });
    }
    total += slice;
  }
  return {model.initial_profit() + total, 0.0, 0};
}

double evaluate_backward(const PlanningModel& model, const LatticePolicy& policy, std::vector<Vector>* values) {
  check_policy_shape(model, policy);
  const auto& space = model.space();
  const int T = space.horizon(), K = space.clusters();
  const std::size_t nA = space.actions().size();
  std::vector<Vector> V(T);
  Vector scratch(static_cast<std::size_t>(K) + 1);
  for (int t = T; t >= 1; --t) {
    V[t - 1].assign(space.size(t), 0.0);
    for (std::size_t s = 0; s < space.size(t); ++s) {
      const int a = space.key(t, s).a;
      double v = 0.0;
      for_each_action(policy, t, s, a, nA, [&](std::size_t r, double q) {
        const double* e = model.entry(t, s, r, scratch.data());
        double x = e[0];
        if (t < T)
          for (int k = 0; k < K; ++k)
            if (e[1 + k] > 0.0) x += e[1 + k] * V[t][space.next_state(t, s, r, k)];
        v += q * x;
      });
      V[t - 1][s] = v;
    }
  }
  double total = model.initial_profit();
  for (int a = 0; a < K; ++a) total += model.initial()[a] * V[0][a];
  if (values) *values = std::move(V);
  return total;
}

Evaluation evaluate_simulated(const PlanningModel& model, const LatticePolicy& policy, std::size_t n_sims,
                              std::uint64_t seed, unsigned workers) {
  check_policy_shape(model, policy);
  require(n_sims >= 2, "evaluate_simulated: need at least 2 simulations");
  const auto& space = model.space();
  const int T = space.horizon(), K = space.clusters();
  const std::size_t nA = space.actions().size();
  const auto& margins = model.true_margins();
  Vector profit(n_sims, 0.0);
  parallel_for(n_sims, workers, [&](std::size_t i) {
    Rng rng(seed, "evaluate.session", i);
    const int first = static_cast<int>(rng.categorical(model.initial()));
    if (first >= K) {
      if (first < 2 * K) profit[i] = margins[first - K];
      return;
    }
    std::size_t s = static_cast<std::size_t>(first);
    Vector q(nA);
    for (int t = 1; t <= T; ++t) {
      const int a = space.key(t, s).a;
      std::size_t r = 0;
      if (policy.is_deterministic()) {
        r = policy.deterministic[t - 1][s];
      } else {
        r = rng.categorical(policy.by_current[t - 1][a]);
      }
      const Vector p = model.response(t, s, r);
      const int act = static_cast<int>(rng.categorical(p));
      if (act >= K) {
        if (act < 2 * K) profit[i] = margins[act - K];
        return;
      }
      if (t == T) return;
      s = space.next_state(t, s, r, act);
    }
  });
  const double n = static_cast<double>(n_sims);
  const double mean = std::accumulate(profit.begin(), profit.end(), 0.0) / n;
  double var = 0.0;
  for (double x : profit) var += (x - mean) * (x - mean);
  var /= n - 1.0;
  return {mean, std::sqrt(var / n), n_sims};
}

PolicySummary summarize_policy(const ValueTable& table, const StateSpace& space, const PlanningModel* model) {
  require(table.horizon == space.horizon() && table.clusters == space.clusters(), "summarize_policy: shape mismatch");
  const int K = space.clusters(), T = space.horizon();
  const auto& actions = space.actions();
  PolicySummary out;
  out.matrix.assign(K, Vector(K, 0.0));
  out.per_period.assign(T, Vector(K, 0.0));
  out.concentration.assign(T, Vector(3, 0.0));
  Vector row_states(K, 0.0);
  for (int t = 1; t <= T; ++t) {
    const double n = static_cast<double>(space.size(t));
    for (std::size_t s = 0; s < space.size(t); ++s) {
      const auto& r = actions[table.action[t - 1][s]];
      const int a = space.key(t, s).a;
      row_states[a] += 1.0;
      for (int c : r.slots) {
        out.matrix[a][c] += 1.0 / kRecSlots;
        out.per_period[t - 1][c] += 1.0 / (kRecSlots * n);
      }
      out.concentration[t - 1][r.distinct() - 1] += 1.0 / n;
    }
  }
  for (int a = 0; a < K; ++a)
    for (double& x : out.matrix[a]) x /= row_states[a];
  if (model) {
    const auto mass = occupancy(*model, LatticePolicy::from_table(table));
    out.reachable_concentration.assign(T, Vector(3, 0.0));
    for (int t = 1; t <= T; ++t) {
      const double total = std::accumulate(mass[t - 1].begin(), mass[t - 1].end(), 0.0);
      if (total <= 0.0) continue;
      for (std::size_t s = 0; s < space.size(t); ++s)
        out.reachable_concentration[t - 1][actions[table.action[t - 1][s]].distinct() - 1] += mass[t - 1][s] / total;
    }
  }
  return out;
}

}  // namespace searchrec
