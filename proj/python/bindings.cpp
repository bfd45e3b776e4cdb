#include <pybind11/functional.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "searchrec/clickstream.hpp"
#include "searchrec/clustering.hpp"
#include "searchrec/counterfactual.hpp"
#include "searchrec/digest.hpp"
#include "searchrec/dpsolver.hpp"
#include "searchrec/pipeline.hpp"
#include "searchrec/policy.hpp"
#include "searchrec/recpolicy.hpp"
#include "searchrec/staterec.hpp"

namespace py = pybind11;
using namespace searchrec;
using json = nlohmann::json;

// JSON crosses the boundary as text; the Python wrapper does the (de)serialization.
namespace {

json parse_json(const std::string& text) { return text.empty() ? json::object() : json::parse(text); }

std::vector<int> rec_tuple(const RecAction& a) { return {a.slots.begin(), a.slots.end()}; }

RecAction rec_from(const std::vector<int>& v) {
  if (v.size() != kRecSlots) throw ValidationError("a recommendation has exactly 3 clusters");
  return RecAction::make(v[0], v[1], v[2]);
}

py::object freq_value(const FreqVector& f) {
  if (f.is_empty()) return py::none();
  return py::cast(f.values());
}

FreqVector freq_from(int k, const py::object& o) {
  if (o.is_none()) return FreqVector::empty(k);
  return FreqVector::of(o.cast<Vector>());
}

py::dict outcome_dict(const ScenarioOutcome& o) {
  py::dict d;
  d["scenario"] = scenario_name(o.scenario);
  d["profit"] = o.profit;
  d["matrices"] = o.matrices;
  d["note"] = o.note;
  return d;
}

}  // namespace

PYBIND11_MODULE(_searchrec, m) {
  m.doc() = "Search-based recommendation planning: clustering, consumer models, DP solver, counterfactuals";

  // Translators run newest first, so the base class goes first.
  auto base = py::register_exception<Error>(m, "Error", PyExc_RuntimeError);
  py::register_exception<ValidationError>(m, "ValidationError", PyExc_ValueError);
  py::register_exception<ConvergenceError>(m, "ConvergenceError", base.ptr());
  py::register_exception<StageError>(m, "StageError", base.ptr());

  m.def("sha256_hex", [](const std::string& s) { return sha256_hex(s); });

  // --- state mechanics -------------------------------------------------------
  m.def("enumerate_actions", [](int k) {
    std::vector<std::vector<int>> out;
    for (const auto& a : enumerate_actions(k)) out.push_back(rec_tuple(a));
    return out;
  });
  m.def(
      "update_freq",
      [](int k, const py::object& prev, int n_prev, const std::vector<int>& items) {
        return freq_value(update_freq(freq_from(k, prev), n_prev, items));
      },
      py::arg("k"), py::arg("prev"), py::arg("n_prev"), py::arg("items"));

  py::class_<RecState>(m, "RecState")
      .def_static("initial", &initial_state, py::arg("k"), py::arg("first_click"))
      .def_readonly("t", &RecState::t)
      .def_readonly("a", &RecState::a)
      .def_property_readonly("A", [](const RecState& s) { return freq_value(s.A); })
      .def_property_readonly("R", [](const RecState& s) { return freq_value(s.R); })
      .def("post_recommendation",
           [](const RecState& s, const std::vector<int>& rec) { return freq_value(post_recommendation(s, rec_from(rec))); })
      .def(
          "transition",
          [](const RecState& s, int next_click, const std::vector<int>& rec, int horizon) {
            return transition(s, next_click, rec_from(rec), horizon);
          },
          py::arg("next_click"), py::arg("rec"), py::arg("horizon") = 0)
      .def("__eq__", [](const RecState& a, const RecState& b) { return a == b; })
      .def("__repr__", [](const RecState& s) {
        return "RecState(t=" + std::to_string(s.t) + ", a=" + std::to_string(s.a) + ")";
      });

  py::class_<StateSpace, std::shared_ptr<StateSpace>>(m, "StateSpace")
      .def(py::init<int, int, int>(), py::arg("k"), py::arg("granularity"), py::arg("horizon"))
      .def_property_readonly("clusters", &StateSpace::clusters)
      .def_property_readonly("horizon", &StateSpace::horizon)
      .def("reachable_counts", [](const StateSpace& s) { return reachable_state_counts(s); });

  // --- consumer models -------------------------------------------------------
  py::class_<ConsumerPolicy, std::shared_ptr<ConsumerPolicy>>(m, "ConsumerPolicy")
      .def_property_readonly("clusters", &ConsumerPolicy::clusters)
      .def_property_readonly("horizon", &ConsumerPolicy::horizon)
      .def_property_readonly("method", &ConsumerPolicy::method)
      .def_property_readonly("initial", &ConsumerPolicy::initial)
      .def_readonly("diagnostics", &ConsumerPolicy::diagnostics)
      .def("predict", &ConsumerPolicy::predict, "Action probabilities (2K+1) at a post-recommendation state")
      .def("_to_json", [](const ConsumerPolicy& p) { return policy_to_json(p).dump(); })
      .def("save", [](const ConsumerPolicy& p, const std::filesystem::path& path) { save_policy(path, p); });

  m.def("_policy_from_json", [](const std::string& text) {
    return std::const_pointer_cast<ConsumerPolicy>(policy_from_json(json::parse(text)));
  });
  m.def("load_policy",
        [](const std::filesystem::path& p) { return std::const_pointer_cast<ConsumerPolicy>(load_policy(p)); });
  m.def(
      "_truth_policy",
      [](int k, int horizon, const std::string& params) {
        json j = parse_json(params);
        const UtilityParams p = j.empty() ? UtilityParams::calibrated(k) : [&] {
          j["clusters"] = k;
          return UtilityParams::from_json(j);
        }();
        return std::shared_ptr<ConsumerPolicy>(std::make_shared<UtilityTruthPolicy>(k, horizon, p));
      },
      py::arg("k"), py::arg("horizon"), py::arg("params") = "");
  m.def("_calibrated_params", [](int k) { return UtilityParams::calibrated(k).to_json().dump(); });

  // --- sessions --------------------------------------------------------------
  m.def(
      "generate_sessions",
      [](const std::shared_ptr<ConsumerPolicy>& truth, const Matrix& status_quo, std::size_t n, int horizon,
         std::uint64_t seed) {
        GenerateOptions o;
        o.horizon = horizon;
        o.seed = seed;
        return format_clickstream(generate_synthetic(*truth, MatrixRecPolicy(status_quo), n, o));
      },
      py::arg("truth"), py::arg("status_quo"), py::arg("n"), py::arg("horizon"), py::arg("seed"),
      "Synthetic sessions as cluster-level JSONL text");
  m.def(
      "summarize_sessions",
      [](const std::string& jsonl, int k) {
        const auto s = summarize(parse_clickstream(jsonl, k));
        py::dict d;
        d["sessions"] = s.sessions;
        d["mean_pageviews"] = s.mean_pageviews;
        d["conversion_rate"] = s.conversion_rate;
        d["exit_rate"] = s.exit_rate;
        d["censored_rate"] = s.censored_rate;
        return d;
      },
      py::arg("jsonl"), py::arg("k"));
  m.def(
      "status_quo_matrix",
      [](const std::string& jsonl, int k) { return extract_status_quo_matrix(parse_clickstream(jsonl, k), k).matrix; },
      py::arg("jsonl"), py::arg("k"));
  m.def(
      "estimate_policy",
      [](const std::string& jsonl, int k, int horizon, const std::string& method, std::uint64_t seed) {
        EstimatorSpec spec;
        spec.method = method;
        spec.trees.seed = seed;
        spec.boost.seed = seed;
        return std::const_pointer_cast<ConsumerPolicy>(
            estimate_policy(parse_clickstream(jsonl, k), k, horizon, spec));
      },
      py::arg("jsonl"), py::arg("k"), py::arg("horizon"), py::arg("method") = "logit", py::arg("seed") = 0);

  // --- clustering ------------------------------------------------------------
  m.def(
      "cluster_sweep",
      [](const Matrix& points, int k_min, int k_max) {
        py::list out;
        for (const auto& c : sweep(points, k_min, k_max)) {
          py::dict d;
          d["k"] = c.k;
          d["assignments"] = c.assignments;
          d["centroids"] = c.centroids;
          d["silhouette"] = c.silhouette;
          d["within_ss"] = c.within_ss;
          out.append(d);
        }
        return out;
      },
      py::arg("points"), py::arg("k_min"), py::arg("k_max"));
  m.def(
      "silhouette", [](const Matrix& points, const std::vector<int>& a) { return silhouette(points, a); },
      py::arg("points"), py::arg("assignments"));

  // --- planning --------------------------------------------------------------
  m.def(
      "solve_first_best",
      [](const std::shared_ptr<ConsumerPolicy>& policy, const Vector& margins, int granularity, unsigned workers) {
        auto space = std::make_shared<StateSpace>(policy->clusters(), granularity, policy->horizon());
        const PlanningModel model(policy, margins, space);
        ValueTable t;
        {
          py::gil_scoped_release release;
          t = bellman_solve(model, workers);
        }
        py::dict d;
        d["expected_profit"] = t.expected_profit;
        d["value"] = t.value;
        d["action"] = t.action;
        return d;
      },
      py::arg("policy"), py::arg("margins"), py::arg("granularity"), py::arg("workers") = 1);
  m.def("scenario_names", [] {
    std::vector<std::string> out;
    for (Scenario s : all_scenarios()) out.push_back(scenario_name(s));
    return out;
  });
  m.def(
      "run_scenarios",
      [](const std::shared_ptr<ConsumerPolicy>& policy, const Vector& margins, int granularity, const Matrix& status_quo,
         const std::string& scenarios, unsigned workers) {
        auto space = std::make_shared<StateSpace>(policy->clusters(), granularity, policy->horizon());
        SuiteOptions o;
        o.workers = workers;
        std::vector<ScenarioOutcome> out;
        {
          py::gil_scoped_release release;
          out = run_scenarios(policy, margins, space, status_quo, parse_scenario_list(scenarios), o);
        }
        const auto norm = normalize(out);
        py::list rows;
        for (std::size_t i = 0; i < out.size(); ++i) {
          auto d = outcome_dict(out[i]);
          for (const auto& r : norm)
            if (r.scenario == out[i].scenario) d["normalized"] = r.normalized;
          rows.append(d);
        }
        return rows;
      },
      py::arg("policy"), py::arg("margins"), py::arg("granularity"), py::arg("status_quo"),
      py::arg("scenarios") = "all", py::arg("workers") = 1);

  // --- pipeline --------------------------------------------------------------
  m.def("_default_config", [] { return default_config().dump(); });
  m.def("_validate_config", [](const std::string& c) { validate_config(json::parse(c)); });
  m.def(
      "_run_stages",
      [](const std::string& config, const std::filesystem::path& dir, const std::vector<std::string>& stages,
         bool resume, const std::optional<std::string>& rerun_from, const std::function<void(std::string)>& log) {
        json c = default_config();
        merge_config(c, json::parse(config));
        std::vector<Stage> list;
        for (const auto& s : stages) list.push_back(parse_stage(s));
        if (list.empty()) list = pipeline_stages();
        RunOptions o;
        o.resume = resume;
        if (rerun_from) o.rerun_from = parse_stage(*rerun_from);
        if (log) o.log = [&log](const std::string& line) {
          py::gil_scoped_acquire acquire;
          log(line);
        };
        py::gil_scoped_release release;
        return run_stages(c, dir, list, o).to_json().dump();
      },
      py::arg("config"), py::arg("dir"), py::arg("stages"), py::arg("resume"), py::arg("rerun_from"), py::arg("log"));
  m.def("render_report", [](const std::filesystem::path& dir) { return render_report(dir); });
}
