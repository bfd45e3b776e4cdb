// searchrec command line: generate, cluster, estimate, solve, counterfactual,
// report and pipeline. Exit codes: 0 ok, 2 validation error, 3 stage failure.

#include <CLI11.hpp>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <nlohmann/json.hpp>
#include <optional>
#include <string>
#include <vector>

#include "csv.hpp"
#include "searchrec/clickstream.hpp"
#include "searchrec/counterfactual.hpp"
#include "searchrec/pipeline.hpp"
#include "searchrec/rng.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace searchrec;

namespace {

struct Common {
  std::string config_file;
  std::vector<std::string> sets;
  std::string out_dir;
  std::optional<std::uint64_t> seed;
  std::optional<unsigned> workers;
  bool quiet = false;
};

void add_common(CLI::App* app, Common& c) {
  app->add_option("--config", c.config_file, "JSON run configuration (defaults fill the rest)");
  app->add_option("--set", c.sets, "override a config field, e.g. --set dp.grid=4")->take_all();
  app->add_option("--out-dir", c.out_dir, "output directory (default: $SEARCHREC_OUTPUT_ROOT, then paths.output)");
  app->add_option("--workers", c.workers, "worker threads");
  app->add_flag("--quiet", c.quiet, "no progress messages");
}

json build_config(const Common& c) {
  json cfg = c.config_file.empty() ? default_config() : load_config(c.config_file);
  for (const auto& s : c.sets) set_config_value(cfg, s);
  if (c.seed) cfg["seed"] = *c.seed;
  if (c.workers) cfg["workers"] = *c.workers;
  validate_config(cfg);
  return cfg;
}

RunOptions run_options(const Common& c) {
  RunOptions o;
  if (!c.quiet) o.log = [](const std::string& s) { std::cerr << "[searchrec] " << s << '\n'; };
  return o;
}

Vector read_margins(const fs::path& path) {
  const std::string text = csv::read_file(path);
  try {
    const auto j = json::parse(text);
    return j.get<Vector>();
  } catch (const json::exception&) {
  }
  Vector out;
  for (const auto& row : csv::parse(text))
    for (const auto& f : row) {
      if (f.empty()) continue;
      try {
        out.push_back(std::stod(f));
      } catch (const std::exception&) {
        if (!out.empty()) throw ValidationError(path.string() + ": not a margin list");
      }
    }
  require(!out.empty(), path.string() + ": no margins");
  return out;
}

void write_file(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ValidationError("cannot write " + path.string());
  out << text;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Dynamic recommendation planning from clickstream data"};
  app.require_subcommand(1);

  Common common;

  // generate
  auto* gen = app.add_subcommand("generate", "write a synthetic catalog and vehicle-level clickstream");
  add_common(gen, common);
  gen->add_option("--seed", common.seed, "root seed");
  std::optional<int> gen_sessions, gen_clusters, gen_horizon;
  gen->add_option("--sessions", gen_sessions, "number of sessions");
  gen->add_option("--clusters", gen_clusters, "planted clusters");
  gen->add_option("--horizon", gen_horizon, "maximum searches per session");

  // cluster
  auto* clu = app.add_subcommand("cluster", "k-means sweep with silhouette selection");
  add_common(clu, common);
  clu->add_option("--seed", common.seed, "root seed");
  std::string catalog_path, clicks_path;
  clu->add_option("--catalog", catalog_path, "vehicle catalog CSV");
  clu->add_option("--clickstream", clicks_path, "vehicle-level clickstream JSONL");

  // estimate
  auto* est = app.add_subcommand("estimate", "recode sessions, fit the estimator grid and select a model");
  add_common(est, common);
  est->add_option("--seed", common.seed, "root seed");
  est->add_option("--catalog", catalog_path, "vehicle catalog CSV");
  est->add_option("--clickstream", clicks_path, "vehicle-level clickstream JSONL");
  std::vector<std::string> methods;
  est->add_option("--methods", methods, "estimators to compare (logit, forest, boost)")->delimiter(',');

  // solve
  auto* sol = app.add_subcommand("solve", "first-best backward induction");
  add_common(sol, common);
  std::string policy_path, margins_path, solve_out;
  std::optional<int> horizon, grid;
  bool solve_report = false, dump_states = false;
  sol->add_option("--policy", policy_path, "consumer policy JSON (default: the selected model in the output dir)");
  sol->add_option("--margins", margins_path, "per-cluster margins (JSON array or CSV)");
  sol->add_option("--horizon", horizon, "planning horizon T (must match the policy)");
  sol->add_option("--grid", grid, "lattice granularity G");
  sol->add_option("--out", solve_out, "directory for the value table and reports");
  sol->add_flag("--report", solve_report, "print the solve tables");
  sol->add_flag("--dump-states", dump_states, "write reachable-state counts per t");

  // counterfactual
  auto* cf = app.add_subcommand("counterfactual", "scenario suite with bootstrap standard deviations");
  add_common(cf, common);
  cf->add_option("--seed", common.seed, "root seed");
  std::string scenarios, cf_out, sessions_path, method;
  std::optional<int> boot, clusters;
  cf->add_option("--scenarios", scenarios, "all or a comma-separated list");
  cf->add_option("--boot", boot, "bootstrap replications (0 or >= 2)");
  cf->add_option("--out", cf_out, "results CSV path");
  cf->add_option("--sessions", sessions_path, "cluster-level sessions JSONL (standalone mode)");
  cf->add_option("--clusters", clusters, "cluster count of --sessions");
  cf->add_option("--margins", margins_path, "per-cluster margins (standalone mode)");
  cf->add_option("--method", method, "estimator (standalone mode)");
  cf->add_option("--horizon", horizon, "planning horizon T");
  cf->add_option("--grid", grid, "lattice granularity G");

  // report
  auto* rep = app.add_subcommand("report", "render the tables of a run");
  add_common(rep, common);

  // pipeline
  auto* pipe = app.add_subcommand("pipeline", "run every stage, resuming unchanged ones");
  add_common(pipe, common);
  pipe->add_option("--seed", common.seed, "root seed")->required();
  pipe->add_option("--catalog", catalog_path, "vehicle catalog CSV (synthetic data when omitted)");
  pipe->add_option("--clickstream", clicks_path, "vehicle-level clickstream JSONL");
  bool no_resume = false;
  std::string from;
  pipe->add_flag("--no-resume", no_resume, "rerun every stage");
  pipe->add_option("--from", from, "rerun this stage and every later one");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    json cfg = build_config(common);
    if (!catalog_path.empty()) cfg["paths"]["catalog"] = catalog_path;
    if (!clicks_path.empty()) cfg["paths"]["clickstream"] = clicks_path;
    if (horizon) cfg["dp"]["horizon"] = *horizon;
    if (grid) cfg["dp"]["grid"] = *grid;
    if (!scenarios.empty()) cfg["counterfactual"]["scenarios"] = scenarios;
    if (boot) cfg["counterfactual"]["bootstrap"] = *boot;
    if (dump_states) cfg["dp"]["dump_states"] = true;
    if (!methods.empty()) cfg["estimation"]["methods"] = methods;
    if (gen_sessions) cfg["generate"]["sessions"] = *gen_sessions;
    if (gen_clusters) cfg["generate"]["clusters"] = *gen_clusters;
    if (gen_horizon) cfg["generate"]["horizon"] = *gen_horizon;
    validate_config(cfg);
    const fs::path dir = resolve_output_dir(cfg, common.out_dir);
    RunOptions opts = run_options(common);

    if (*gen) {
      fs::create_directories(dir);
      Manifest m = load_manifest(dir);
      m.config = cfg;
      m.generated = generate_inputs(cfg, dir);
      save_manifest(dir, m);
      for (const auto& a : m.generated->artifacts) std::cout << (dir / a.path).string() << "  " << a.sha256 << '\n';
    } else if (*clu) {
      run_stages(cfg, dir, {Stage::cluster}, opts);
      std::cout << csv::read_file(dir / "cluster_choice.json");
    } else if (*est) {
      run_stages(cfg, dir, {Stage::recode, Stage::estimate, Stage::select}, opts);
      std::cout << csv::read_file(dir / "selection.json");
    } else if (*sol) {
      if (policy_path.empty()) {
        require(margins_path.empty(), "--margins needs --policy");
        run_stages(cfg, dir, {Stage::solve}, opts);
        if (!solve_out.empty()) throw ValidationError("--out applies to --policy mode; pipeline artifacts stay in the output dir");
      } else {
        require(!margins_path.empty(), "--policy needs --margins");
        const auto policy = load_policy(policy_path);
        if (horizon && *horizon != policy->horizon())
          throw ValidationError("--horizon " + std::to_string(*horizon) + " differs from the policy horizon " +
                                std::to_string(policy->horizon()));
        const fs::path out = solve_out.empty() ? dir : fs::path(solve_out);
        fs::create_directories(out);
        try {
          solve_to_dir(cfg, out, policy, read_margins(margins_path), cfg["dp"]["grid"].get<int>(),
                       cfg["dp"]["dump_states"].get<bool>());
        } catch (const ValidationError&) {
          throw;
        } catch (const std::exception& e) {
          throw StageError("solve", e.what());
        }
        if (solve_report) {
          std::cout << csv::read_file(out / "solve.json");
          std::cout << csv::read_file(out / "first_best_matrix.csv");
          std::cout << csv::read_file(out / "concentration.csv");
        }
        return 0;
      }
      if (solve_report) std::cout << render_report(dir);
    } else if (*cf) {
      if (sessions_path.empty()) {
        run_stages(cfg, dir, {Stage::counterfactual}, opts);
        if (!cf_out.empty()) fs::copy_file(dir / "results.csv", cf_out, fs::copy_options::overwrite_existing);
        std::cout << csv::read_file(dir / "results.csv");
      } else {
        require(clusters.has_value(), "--sessions needs --clusters");
        require(!margins_path.empty(), "--sessions needs --margins");
        const auto sessions = truncate_sessions(load_clickstream(sessions_path, *clusters), cfg["dp"]["horizon"].get<int>());
        auto list = parse_scenario_list(cfg["counterfactual"]["scenarios"].get<std::string>());
        if (std::find(list.begin(), list.end(), Scenario::status_quo) == list.end()) list.insert(list.begin(), Scenario::status_quo);
        auto space = std::make_shared<StateSpace>(*clusters, cfg["dp"]["grid"].get<int>(), cfg["dp"]["horizon"].get<int>());
        EstimatorSpec spec;
        spec.method = method.empty() ? "forest" : method;
        spec.trees.seed = derive_seed(cfg["seed"].get<std::uint64_t>(), "estimate.forest");
        spec.boost.seed = derive_seed(cfg["seed"].get<std::uint64_t>(), "estimate.boost");
        spec.trees.workers = spec.boost.workers = cfg["workers"].get<unsigned>();
        BootstrapOptions bo;
        bo.replications = cfg["counterfactual"]["bootstrap"].get<int>();
        bo.seed = derive_seed(cfg["seed"].get<std::uint64_t>(), "bootstrap");
        bo.workers = bo.suite.workers = cfg["workers"].get<unsigned>();
        BootstrapReport report;
        try {
          report = bootstrap(sessions, *clusters, read_margins(margins_path), space, spec, list, bo);
        } catch (const ValidationError&) {
          throw;
        } catch (const std::exception& e) {
          throw StageError("counterfactual", e.what());
        }
        const fs::path out = cf_out.empty() ? dir / "results.csv" : fs::path(cf_out);
        if (out.has_parent_path()) fs::create_directories(out.parent_path());
        write_results_csv(out, report.results);
        for (const auto& f : report.failures) std::cerr << "[searchrec] " << f << '\n';
        std::cout << csv::read_file(out);
      }
    } else if (*rep) {
      const std::string text = render_report(dir);
      write_file(dir / "report.txt", text);
      std::cout << text;
    } else if (*pipe) {
      opts.resume = !no_resume;
      if (!from.empty()) opts.rerun_from = parse_stage(from);
      const Manifest m = run_pipeline(cfg, dir, opts);
      for (const auto& s : m.stages)
        for (const auto& a : s.artifacts) std::cout << s.name << "  " << a.path << "  " << a.sha256 << '\n';
    }
    return 0;
  } catch (const StageError& e) {
    std::cerr << "searchrec: " << e.what() << '\n';
    return e.validation() ? 2 : 3;
  } catch (const ValidationError& e) {
    std::cerr << "searchrec: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "searchrec: " << e.what() << '\n';
    return 3;
  }
}
