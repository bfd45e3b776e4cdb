#include "doctest.h"

#include <cmath>
#include <filesystem>
#include <nlohmann/json.hpp>

#include "searchrec/clickstream.hpp"
#include "searchrec/policy.hpp"

using namespace searchrec;

namespace {

std::vector<Observation> sample_data(int K, int T, std::size_t n_sessions, std::uint64_t seed,
                                     double convert_base = -3.93) {
  auto params = UtilityParams::calibrated(K);
  params.convert_base.assign(K, convert_base);
  auto truth = std::make_shared<UtilityTruthPolicy>(K, T, params);
  GenerateOptions opts{.horizon = T, .seed = seed};
  const auto sessions = generate_synthetic(*truth, MatrixRecPolicy(Matrix(K, Vector(K, 1.0 / K))), n_sessions, opts);
  return extract_observations(sessions, K).observations;
}

double tv(const Vector& p, const Vector& q) {
  double d = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) d += std::abs(p[i] - q[i]);
  return 0.5 * d;
}

}  // namespace

TEST_CASE("action indexing") {
  const int K = 4;
  for (int i = 0; i < action_count(K); ++i) CHECK(action_index(action_from_index(i, K), K) == i);
  CHECK(action_index(ConsumerAction::exit(), K) == 8);
  CHECK(action_index(ConsumerAction::convert(1), K) == 5);
  CHECK_THROWS_AS(action_from_index(9, K), ValidationError);
}

TEST_CASE("featurize layout") {
  RecState s = initial_state(3, 1);
  const Vector x0 = featurize(s, 10);
  REQUIRE(x0.size() == feature_dimension(3));
  CHECK(x0[0] == doctest::Approx(0.1));
  CHECK(x0[2] == 1.0);
  CHECK(x0[7] == 1.0);   // A empty flag
  CHECK(x0[11] == 1.0);  // R empty flag
  s = transition(s, 2, RecAction::make(0, 0, 1), 10);
  const Vector x1 = featurize(s, 10);
  CHECK(x1[3] == 1.0);
  CHECK(x1[5] == 1.0);  // A = {0, 1, 0}
  CHECK(x1[7] == 0.0);
  CHECK(x1[8] == doctest::Approx(2.0 / 3));
}

TEST_CASE("logit objective gradient matches finite differences") {
  const int K = 2, T = 4;
  const auto data = sample_data(K, T, 300, 1, -1.5);  // every class observed
  const int C = action_count(K);
  const std::size_t d = feature_dimension(K);
  Rng rng(5, "coef");
  Matrix coef(C, Vector(d + 1, 0.0));
  for (int c = 0; c + 1 < C; ++c)
    for (auto& b : coef[c]) b = 0.3 * rng.normal();
  const std::vector<bool> active(C, true);
  const auto obj = logit_objective(data, K, T, coef, active, 1e-2);
  const double h = 1e-6;
  std::size_t idx = 0;
  for (int c = 0; c + 1 < C; ++c)
    for (std::size_t j = 0; j <= d; ++j, ++idx) {
      Matrix up = coef, dn = coef;
      up[c][j] += h;
      dn[c][j] -= h;
      const double fd = (logit_objective(data, K, T, up, active, 1e-2).value -
                         logit_objective(data, K, T, dn, active, 1e-2).value) /
                        (2 * h);
      CHECK(obj.gradient[idx] == doctest::Approx(fd).epsilon(1e-5).scale(1e-8));
    }
  CHECK(idx == obj.gradient.size());
}

TEST_CASE("intercept-only design reproduces class frequencies") {
  const int K = 1, T = 3;
  RecState s = initial_state(K, 0);
  s.R = post_recommendation(s, RecAction::make(0, 0, 0));
  std::vector<Observation> data;
  // Frequencies 0.5 search, 0.2 convert, 0.3 exit at a single feature row.
  for (int i = 0; i < 50; ++i) data.push_back({s, 0});
  for (int i = 0; i < 20; ++i) data.push_back({s, 1});
  for (int i = 0; i < 30; ++i) data.push_back({s, 2});
  const auto fit = fit_multinomial_logit(data, K, T, {.ridge = 1e-10});
  const Vector p = fit->predict(s);
  CHECK(p[0] == doctest::Approx(0.5).epsilon(1e-6));
  CHECK(p[1] == doctest::Approx(0.2).epsilon(1e-6));
  CHECK(p[2] == doctest::Approx(0.3).epsilon(1e-6));
}

TEST_CASE("absent classes get probability zero") {
  const int K = 2, T = 3;
  RecState s = initial_state(K, 0);
  s.R = post_recommendation(s, RecAction::make(0, 1, 1));
  std::vector<Observation> data;
  for (int i = 0; i < 10; ++i) data.push_back({s, 0});
  for (int i = 0; i < 5; ++i) data.push_back({s, 4});
  const auto fit = fit_multinomial_logit(data, K, T);
  const Vector p = fit->predict(s);
  CHECK(p[1] == 0.0);
  CHECK(p[2] == 0.0);
  CHECK(p[3] == 0.0);
  CHECK(p[0] == doctest::Approx(2.0 / 3).epsilon(1e-3));
  CHECK_FALSE(fit->diagnostics.empty());
}

TEST_CASE("logit recovers a logit truth") {
  const int K = 2, T = 5;
  const int C = action_count(K);
  const std::size_t d = feature_dimension(K);
  Rng rng(2, "truth");
  Matrix coef(C, Vector(d + 1, 0.0));
  for (int c = 0; c + 1 < C; ++c)
    for (auto& b : coef[c]) b = 0.7 * rng.normal();
  auto truth = std::make_shared<MultinomialLogitPolicy>(K, T, coef, std::vector<bool>(C, true));
  truth->set_initial({0.5, 0.5, 0, 0, 0});
  GenerateOptions opts{.horizon = T, .seed = 3};
  const auto sessions = generate_synthetic(*truth, MatrixRecPolicy(Matrix{{0.5, 0.5}, {0.5, 0.5}}), 20000, opts);
  const auto data = extract_observations(sessions, K).observations;
  const auto fit = fit_multinomial_logit(data, K, T);
  double worst = 0.0;
  for (std::size_t i = 0; i < data.size(); i += 97) worst = std::max(worst, tv(fit->predict(data[i].state), truth->predict(data[i].state)));
  CHECK(worst < 0.05);
}

TEST_CASE("trees capture an interaction a logit cannot") {
  const int K = 2, T = 4;
  // Search 0 when (a == 0) xor (A_0 > 1/2), otherwise convert 0.
  std::vector<Observation> train;
  Rng rng(1, "xor");
  for (int i = 0; i < 2000; ++i) {
    const int a = static_cast<int>(rng.below(2));
    const int h = static_cast<int>(rng.below(2));
    RecState s{2, a, FreqVector::of(h ? Vector{1.0, 0.0} : Vector{0.0, 1.0}),
               FreqVector::of(Vector{0.5, 0.5})};
    train.push_back({s, ((a == 0) != (h == 1)) ? 0 : 2});
  }
  const auto logit = fit_multinomial_logit(train, K, T);
  TreeParams params;
  params.n_trees = 20;
  params.seed = 3;
  const auto forest = fit_tree_ensemble(train, K, T, params);
  auto boost_params = TreeParams::boosting_defaults();
  boost_params.n_trees = 30;
  const auto boost = fit_tree_ensemble(train, K, T, boost_params);
  const auto rl = evaluate(*logit, train);
  const auto rf = evaluate(*forest, train);
  const auto rb = evaluate(*boost, train);
  CHECK(rl.accuracy < 0.7);
  CHECK(rf.accuracy == 1.0);
  CHECK(rb.accuracy == 1.0);
  for (const auto* p : {static_cast<const ConsumerPolicy*>(forest.get()), static_cast<const ConsumerPolicy*>(boost.get())}) {
    const Vector q = p->predict(train[0].state);
    double s = 0.0;
    for (double x : q) {
      CHECK(x >= 0.0);
      s += x;
    }
    CHECK(s == doctest::Approx(1.0));
    CHECK(q[1] == 0.0);  // never observed
  }
}

TEST_CASE("forest fit is independent of the worker count") {
  const auto data = sample_data(2, 4, 300, 4);
  TreeParams p;
  p.n_trees = 12;
  p.seed = 9;
  p.workers = 1;
  const auto a = fit_tree_ensemble(data, 2, 4, p);
  p.workers = 3;
  const auto b = fit_tree_ensemble(data, 2, 4, p);
  CHECK(a->model_json() == b->model_json());
}

TEST_CASE("metrics on hand-computed cases") {
  // Observed class 0, predicted (0.25, 0.75).
  auto r = evaluate_predictions({{0.25, 0.75}}, {0});
  CHECK(r.hellinger == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(r.log_loss == doctest::Approx(std::log(4.0)).epsilon(1e-12));

  // Perfect predictor.
  r = evaluate_predictions({{1, 0, 0}, {0, 1, 0}, {0, 0, 1}}, {0, 1, 2});
  CHECK(r.log_loss == 0.0);
  CHECK(r.accuracy == 1.0);
  CHECK(r.lift == 3.0);
  CHECK(std::abs(r.nagelkerke_r2 - 1.0) < 1e-12);

  // Uniform predictor on balanced outcomes.
  const Vector u(4, 0.25);
  r = evaluate_predictions({u, u, u, u}, {0, 1, 2, 3});
  CHECK(std::abs(r.lift - 1.0) < 1e-12);
  CHECK(std::abs(r.nagelkerke_r2) < 1e-12);

  r = evaluate_predictions({{0.0, 1.0}}, {0});
  CHECK(r.clamped == 1);
  CHECK_THROWS_AS(evaluate_predictions({{0.5, 0.5}}, {2}), ValidationError);
}

TEST_CASE("policy serialization round trips") {
  const int K = 2, T = 4;
  const auto data = sample_data(K, T, 400, 6);
  std::vector<PolicyPtr> models;
  auto logit = fit_multinomial_logit(data, K, T);
  logit->set_initial({0.4, 0.3, 0.1, 0.1, 0.1});
  models.push_back(logit);
  TreeParams p;
  p.n_trees = 5;
  models.push_back(fit_tree_ensemble(data, K, T, p));
  auto bp = TreeParams::boosting_defaults();
  bp.n_trees = 10;
  models.push_back(fit_tree_ensemble(data, K, T, bp));
  models.push_back(std::make_shared<UtilityTruthPolicy>(K, T, UtilityParams::calibrated(K)));
  const auto path = std::filesystem::temp_directory_path() / "searchrec_policy_test.json";
  for (const auto& m : models) {
    save_policy(path, *m);
    const auto back = load_policy(path);
    CHECK(back->method() == m->method());
    CHECK(back->initial() == m->initial());
    for (std::size_t i = 0; i < data.size(); i += 31) CHECK(back->predict(data[i].state) == m->predict(data[i].state));
  }
  std::filesystem::remove(path);

  auto j = policy_to_json(*logit);
  j["version"] = 99;
  CHECK_THROWS_AS(policy_from_json(j), ValidationError);
  FunctionPolicy f(K, T, [](const RecState&) { return Vector(5, 0.2); });
  CHECK_THROWS_AS(policy_to_json(f), ValidationError);
}

TEST_CASE("model selection order and initial distribution") {
  std::vector<FitCell> grid(3);
  grid[0].report.lift = 2.0;
  grid[1].report.lift = 2.5;
  grid[1].report.nagelkerke_r2 = 0.1;
  grid[2].report.lift = 2.5;
  grid[2].report.nagelkerke_r2 = 0.2;
  CHECK(select_model(grid) == 2);
  grid[2].report.nagelkerke_r2 = 0.1;
  grid[2].silhouette = 0.5;
  CHECK(select_model(grid) == 2);
  grid[2].silhouette = 0.0;
  CHECK(select_model(grid) == 1);

  const Vector p = estimate_initial({0, 0, 1, 4}, 2);
  CHECK(p == Vector{0.5, 0.25, 0.0, 0.0, 0.25});
}
