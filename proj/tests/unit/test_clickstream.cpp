#include "doctest.h"

#include <cmath>
#include <filesystem>
#include <set>

#include "searchrec/clickstream.hpp"

using namespace searchrec;

namespace {

PolicyPtr utility_truth(int K, int T) {
  return std::make_shared<UtilityTruthPolicy>(K, T, UtilityParams::calibrated(K));
}

}  // namespace

TEST_CASE("jsonl round trip is exact") {
  const int K = 3;
  GenerateOptions opts;
  opts.horizon = 6;
  opts.seed = 1;
  const auto sessions = generate_synthetic(*utility_truth(K, 6), MatrixRecPolicy(Matrix(K, Vector(K, 1.0 / K))), 200, opts);
  const std::string text = format_clickstream(sessions);
  const auto back = parse_clickstream(text, K);
  CHECK(back == sessions);
  CHECK(format_clickstream(back) == text);

  const auto path = std::filesystem::temp_directory_path() / "searchrec_clicks_test.jsonl";
  save_clickstream(path, sessions);
  CHECK(load_clickstream(path, K) == sessions);
  std::filesystem::remove(path);
}

TEST_CASE("generated sessions are valid, deterministic and worker independent") {
  const int K = 3, T = 5;
  auto truth = utility_truth(K, T);
  const MatrixRecPolicy rec(Matrix(K, Vector(K, 1.0 / K)));
  GenerateOptions a{.horizon = T, .seed = 3, .workers = 1};
  GenerateOptions b{.horizon = T, .seed = 3, .workers = 3};
  const auto x = generate_synthetic(*truth, rec, 300, a);
  const auto y = generate_synthetic(*truth, rec, 300, b);
  CHECK(x == y);
  for (const auto& s : x) {
    CHECK_NOTHROW(validate_session(s, K));
    CHECK(s.events.size() <= static_cast<std::size_t>(T + 1));
    if (s.terminal() == Terminal::censored) CHECK(s.events.size() == static_cast<std::size_t>(T + 1));
  }
  a.seed = 4;
  CHECK(generate_synthetic(*truth, rec, 300, a) != x);
}

TEST_CASE("validation errors name the session") {
  const int K = 2;
  auto err = [&](const std::string& text) {
    try {
      parse_clickstream(text, K);
    } catch (const ValidationError& e) {
      return std::string(e.what());
    }
    return std::string();
  };
  CHECK(err(R"({"sid":"x","t":1,"action":{"search":1},"recs":[]}
{"sid":"x","t":3,"action":"exit","recs":[1,1,2]})")
            .find("session x: gap in t") != std::string::npos);
  CHECK(err(R"({"sid":"y","t":1,"action":"exit","recs":[]}
{"sid":"y","t":2,"action":"exit","recs":[1,1,2]})")
            .find("after terminal") != std::string::npos);
  CHECK(err(R"({"sid":"z","t":1,"action":{"search":1},"recs":[]}
{"sid":"z","t":2,"action":"exit","recs":[1,2]})")
            .find("expected 3 recommendations") != std::string::npos);
  CHECK(err(R"({"sid":"w","t":1,"action":{"search":3},"recs":[]})").find("out of range") != std::string::npos);
  CHECK(err(R"({"sid":"v","t":1,"action":{"search":1},"recs":[]}
{"sid":"u","t":1,"action":"exit","recs":[]}
{"sid":"v","t":2,"action":"exit","recs":[1,1,1]})")
            .find("not contiguous") != std::string::npos);
  CHECK(err(R"({"sid":"q","t":1,"action":"leave","recs":[]})").find("unknown action") != std::string::npos);
  CHECK(err("{not json").find("line 1") != std::string::npos);
}

TEST_CASE("pageviews follow the geometric law under a constant exit hazard") {
  const int K = 2, T = 6;
  const double q = 0.3;
  auto policy = std::make_shared<FunctionPolicy>(K, T, [q](const RecState&) {
    return Vector{(1 - q) / 2, (1 - q) / 2, 0.0, 0.0, q};
  });
  policy->set_initial({0.5, 0.5, 0.0, 0.0, 0.0});
  GenerateOptions opts{.horizon = T, .seed = 8};
  const std::size_t n = 200000;
  const auto sessions = generate_synthetic(*policy, MatrixRecPolicy(Matrix{{1, 0}, {0, 1}}), n, opts);
  const auto sum = summarize(sessions);
  // Searches at events 1..T+1, each after the first surviving with prob 1 - q.
  const double mean = (1.0 - std::pow(1.0 - q, T + 1)) / q;
  double var = 0.0;
  for (int j = 1; j <= T + 1; ++j) {
    const double pj = j <= T ? std::pow(1 - q, j - 1) * q : std::pow(1 - q, T);
    var += pj * (j - mean) * (j - mean);
  }
  CHECK(std::abs(sum.mean_pageviews - mean) < 4.0 * std::sqrt(var / n));
  const double censored = std::pow(1.0 - q, T);
  CHECK(std::abs(sum.censored_rate - censored) < 4.0 * std::sqrt(censored * (1 - censored) / n));
  CHECK(sum.conversion_rate == 0.0);
}

TEST_CASE("status quo extraction recovers the generating matrix") {
  const int K = 3, T = 8;
  const Matrix M{{0.6, 0.3, 0.1}, {0.2, 0.5, 0.3}, {0.1, 0.1, 0.8}};
  GenerateOptions opts{.horizon = T, .seed = 2};
  const auto sessions = generate_synthetic(*utility_truth(K, T), MatrixRecPolicy(M), 20000, opts);
  const auto sq = extract_status_quo_matrix(sessions, K);
  for (int i = 0; i < K; ++i) {
    CHECK_FALSE(sq.unviewed[i]);
    double s = 0.0;
    for (int j = 0; j < K; ++j) {
      CHECK(std::abs(sq.matrix[i][j] - M[i][j]) < 0.02);
      s += sq.matrix[i][j];
    }
    CHECK(s == doctest::Approx(1.0));
  }
}

TEST_CASE("status quo: hand counts and unviewed rows") {
  const auto sessions = parse_clickstream(R"({"sid":"a","t":1,"action":{"search":1},"recs":[]}
{"sid":"a","t":2,"action":{"search":1},"recs":[1,2,2]}
{"sid":"a","t":3,"action":{"convert":2},"recs":[2,2,2]})",
                                          3);
  const auto sq = extract_status_quo_matrix(sessions, 3);
  CHECK(sq.matrix[0][0] == doctest::Approx(1.0 / 6));
  CHECK(sq.matrix[0][1] == doctest::Approx(5.0 / 6));
  CHECK(sq.impressions[0] == 2.0);  // two screens after views of cluster 1
  CHECK(sq.unviewed[1]);
  CHECK(sq.matrix[1][2] == doctest::Approx(1.0 / 3));
}

TEST_CASE("observations, splits and resampling") {
  const int K = 2, T = 4;
  GenerateOptions opts{.horizon = T, .seed = 6};
  const auto sessions =
      generate_synthetic(*utility_truth(K, T), MatrixRecPolicy(Matrix{{0.5, 0.5}, {0.5, 0.5}}), 500, opts);
  const auto data = extract_observations(sessions, K);
  std::size_t events = 0;
  for (const auto& s : sessions) events += s.events.size() - 1;
  CHECK(data.observations.size() == events);
  CHECK(data.first_actions.size() == sessions.size());
  for (const auto& o : data.observations) {
    CHECK(o.state.t >= 1);
    CHECK(o.state.t <= T);
    CHECK_FALSE(o.state.R.is_empty());
  }

  const auto split = split_sessions(sessions, 0.2, 1);
  CHECK(split.holdout.size() == 100);
  CHECK(split.train.size() == 400);
  std::set<std::string> ids;
  for (const auto& s : split.train) ids.insert(s.id);
  for (const auto& s : split.holdout) CHECK(ids.count(s.id) == 0);
  CHECK_THROWS_AS(split_sessions(sessions, 1.0, 1), ValidationError);

  const auto r1 = resample_sessions(sessions, 3, 7);
  CHECK(r1.size() == sessions.size());
  CHECK(resample_sessions(sessions, 3, 7) == r1);
  CHECK(resample_sessions(sessions, 3, 8) != r1);
}

TEST_CASE("truncation censors long sessions") {
  const auto sessions = parse_clickstream(R"({"sid":"a","t":1,"action":{"search":1},"recs":[]}
{"sid":"a","t":2,"action":{"search":2},"recs":[1,2,2]}
{"sid":"a","t":3,"action":{"search":1},"recs":[2,2,2]}
{"sid":"a","t":4,"action":{"convert":2},"recs":[2,2,2]})",
                                          2);
  const auto cut = truncate_sessions(sessions, 2);
  REQUIRE(cut[0].events.size() == 3);
  CHECK(cut[0].terminal() == Terminal::censored);
  CHECK(truncate_sessions(sessions, 5) == sessions);
}

TEST_CASE("raw sessions recode through the cluster model") {
  ClusterModel model;
  model.k = 2;
  model.vehicle_ids = {"v1", "v2", "v3"};
  model.assignments = {0, 1, 1};
  const auto raw = parse_raw_clickstream(R"({"sid":"s","t":1,"action":{"search":"v1"},"recs":[]}
{"sid":"s","t":2,"action":{"convert":"v3"},"recs":["v1","v2","v3"]})");
  const auto coded = recode_to_clusters(raw, model);
  REQUIRE(coded.size() == 1);
  CHECK(coded[0].events[1].action == ConsumerAction::convert(1));
  CHECK(coded[0].events[1].recs == std::vector<int>{0, 1, 1});
  const auto bad = parse_raw_clickstream(R"({"sid":"s","t":1,"action":{"search":"v9"},"recs":[]})");
  CHECK_THROWS_AS(recode_to_clusters(bad, model), ValidationError);
}
