#include "searchrec/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <ctime>
#include <fstream>
#include <iomanip>
#include <map>
#include <set>
#include <sstream>

#include "csv.hpp"
#include "searchrec/catalog.hpp"
#include "searchrec/clickstream.hpp"
#include "searchrec/clustering.hpp"
#include "searchrec/counterfactual.hpp"
#include "searchrec/digest.hpp"
#include "searchrec/dpsolver.hpp"
#include "searchrec/rng.hpp"

namespace searchrec {

using json = nlohmann::json;
namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// Configuration

json default_config() {
  return json::parse(R"({
    "seed": 0,
    "workers": 1,
    "paths": {"catalog": "", "clickstream": "", "output": "searchrec-out"},
    "generate": {"clusters": 4, "per_cluster": 60, "spread": 0.02, "sessions": 4000, "horizon": 22,
                 "status_quo_diagonal": 0.75, "truth": {}},
    "clustering": {"k_min": 2, "k_max": 6, "k": 0, "weighting": "inverse_levels"},
    "margins": {"rate": 0.3, "low_percentile": 5.0, "high_percentile": 95.0},
    "estimation": {"methods": ["logit", "forest", "boost"], "holdout": 0.4, "k_values": [],
                   "logit": {"ridge": 1e-4, "max_iter": 100},
                   "forest": {"n_trees": 100, "max_depth": 12, "min_leaf": 5, "mtry": 0},
                   "boost": {"n_trees": 200, "max_depth": 4, "min_leaf": 5, "learning_rate": 0.1}},
    "dp": {"horizon": 22, "grid": 3, "cache_mb": 2048, "dump_states": false},
    "counterfactual": {"scenarios": "all", "bootstrap": 0, "restricted_iterations": 2,
                       "matrix_tolerance": 1e-6, "matrix_max_iter": 5000}
  })");
}

namespace {

void merge_into(json& base, const json& patch, const std::string& where) {
  for (auto it = patch.begin(); it != patch.end(); ++it) {
    const std::string key = where.empty() ? it.key() : where + "." + it.key();
    if (!base.contains(it.key())) throw ValidationError("unknown config key '" + key + "'");
    json& slot = base[it.key()];
    // An empty default object is free-form (e.g. generate.truth).
    if (slot.is_object() && !slot.empty()) {
      if (!it->is_object()) throw ValidationError("config key '" + key + "' must be an object");
      merge_into(slot, *it, key);
    } else {
      slot = *it;
    }
  }
}

}  // namespace

void merge_config(json& config, const json& patch) {
  if (!patch.is_object()) throw ValidationError("config must be a JSON object");
  merge_into(config, patch, "");
}

json load_config(const fs::path& path) {
  json cfg = default_config();
  json file;
  try {
    file = json::parse(csv::read_file(path));
  } catch (const json::exception& e) {
    throw ValidationError(path.string() + ": " + e.what());
  }
  merge_config(cfg, file);
  return cfg;
}

void set_config_value(json& config, std::string_view assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string_view::npos || eq == 0) throw ValidationError("expected key=value, got '" + std::string(assignment) + "'");
  const std::string key(assignment.substr(0, eq));
  const std::string text(assignment.substr(eq + 1));
  json value;
  try {
    value = json::parse(text);
  } catch (const json::exception&) {
    value = text;
  }
  json patch = value;
  std::string rest = key;
  std::vector<std::string> parts;
  for (std::size_t p; (p = rest.find('.')) != std::string::npos; rest = rest.substr(p + 1)) parts.push_back(rest.substr(0, p));
  parts.push_back(rest);
  for (auto it = parts.rbegin(); it != parts.rend(); ++it) patch = json{{*it, patch}};
  merge_config(config, patch);
}

void validate_config(const json& c) {
  try {
    const double holdout = c.at("estimation").at("holdout").get<double>();
    require(holdout > 0.0 && holdout < 1.0, "estimation.holdout must be in (0, 1)");
    require(c.at("dp").at("horizon").get<int>() >= 1, "dp.horizon must be >= 1");
    require(c.at("dp").at("grid").get<int>() >= 1, "dp.grid must be >= 1");
    const int B = c.at("counterfactual").at("bootstrap").get<int>();
    require(B >= 0, "counterfactual.bootstrap must be >= 0");
    require(B != 1, "counterfactual.bootstrap must be 0 or >= 2");
    const auto& cl = c.at("clustering");
    const int kmin = cl.at("k_min").get<int>(), kmax = cl.at("k_max").get<int>(), k = cl.at("k").get<int>();
    require(kmin >= 2 && kmin <= kmax, "clustering needs 2 <= k_min <= k_max");
    require(k == 0 || (k >= kmin && k <= kmax), "clustering.k must be 0 or within [k_min, k_max]");
    const auto w = cl.at("weighting").get<std::string>();
    require(w == "inverse_levels" || w == "levels" || w == "unit", "clustering.weighting: unknown value '" + w + "'");
    const auto& est = c.at("estimation");
    require(!est.at("methods").empty(), "estimation.methods is empty");
    for (const auto& m : est.at("methods")) {
      const auto name = m.get<std::string>();
      require(name == "logit" || name == "forest" || name == "boost", "estimation.methods: unknown method '" + name + "'");
    }
    for (const auto& k2 : est.at("k_values")) {
      const int v = k2.get<int>();
      require(v >= kmin && v <= kmax, "estimation.k_values must lie within [k_min, k_max]");
    }
    parse_scenario_list(c.at("counterfactual").at("scenarios").get<std::string>());
    require(c.at("counterfactual").at("restricted_iterations").get<int>() >= 0,
            "counterfactual.restricted_iterations must be >= 0");
    const auto& g = c.at("generate");
    require(g.at("clusters").get<int>() >= 1, "generate.clusters must be >= 1");
    require(g.at("per_cluster").get<int>() >= 1, "generate.per_cluster must be >= 1");
    require(g.at("sessions").get<int>() >= 1, "generate.sessions must be >= 1");
    require(g.at("horizon").get<int>() >= 1, "generate.horizon must be >= 1");
    const double d = g.at("status_quo_diagonal").get<double>();
    require(d >= 0.0 && d <= 1.0, "generate.status_quo_diagonal must be in [0, 1]");
    const auto& m = c.at("margins");
    require(m.at("rate").get<double>() > 0.0, "margins.rate must be positive");
    require(c.at("workers").get<int>() >= 1, "workers must be >= 1");
  } catch (const json::exception& e) {
    throw ValidationError(std::string("config: ") + e.what());
  }
}

// ---------------------------------------------------------------------------
// Manifest

const std::vector<Stage>& pipeline_stages() {
  static const std::vector<Stage> all = {Stage::cluster, Stage::recode, Stage::estimate,
                                         Stage::select,  Stage::solve,  Stage::counterfactual};
  return all;
}

std::string stage_name(Stage s) {
  switch (s) {
    case Stage::cluster: return "cluster";
    case Stage::recode: return "recode";
    case Stage::estimate: return "estimate";
    case Stage::select: return "select";
    case Stage::solve: return "solve";
    case Stage::counterfactual: return "counterfactual";
  }
  return "?";
}

Stage parse_stage(std::string_view name) {
  for (Stage s : pipeline_stages())
    if (stage_name(s) == name) return s;
  throw ValidationError("unknown stage '" + std::string(name) + "'");
}

const StageRecord* Manifest::find(std::string_view stage) const {
  for (const auto& s : stages)
    if (s.name == stage) return &s;
  return nullptr;
}

void Manifest::put(StageRecord record) {
  auto rank = [](const std::string& n) {
    return static_cast<int>(parse_stage(n));
  };
  stages.erase(std::remove_if(stages.begin(), stages.end(), [&](const StageRecord& s) { return s.name == record.name; }),
               stages.end());
  stages.push_back(std::move(record));
  std::stable_sort(stages.begin(), stages.end(),
                   [&](const StageRecord& a, const StageRecord& b) { return rank(a.name) < rank(b.name); });
}

namespace {

json artifact_json(const ArtifactRecord& a) { return {{"path", a.path}, {"sha256", a.sha256}, {"bytes", a.bytes}}; }
ArtifactRecord artifact_from(const json& j) {
  return {j.at("path").get<std::string>(), j.at("sha256").get<std::string>(), j.at("bytes").get<std::uintmax_t>()};
}
json record_json(const StageRecord& s) {
  json arts = json::array();
  for (const auto& a : s.artifacts) arts.push_back(artifact_json(a));
  return {{"name", s.name},
          {"fingerprint", s.fingerprint},
          {"completed_at", s.completed_at},
          {"seconds", s.seconds},
          {"artifacts", arts}};
}
StageRecord record_from(const json& j) {
  StageRecord s;
  s.name = j.at("name").get<std::string>();
  s.fingerprint = j.at("fingerprint").get<std::string>();
  s.completed_at = j.at("completed_at").get<std::string>();
  s.seconds = j.at("seconds").get<double>();
  for (const auto& a : j.at("artifacts")) s.artifacts.push_back(artifact_from(a));
  return s;
}

}  // namespace

json Manifest::to_json() const {
  json j{{"format", "searchrec-manifest"}, {"version", 1}, {"config", config}};
  j["generated"] = generated ? record_json(*generated) : json(nullptr);
  j["inputs"] = json::array();
  for (const auto& a : inputs) j["inputs"].push_back(artifact_json(a));
  j["stages"] = json::array();
  for (const auto& s : stages) j["stages"].push_back(record_json(s));
  return j;
}

Manifest Manifest::from_json(const json& j) {
  if (j.value("format", "") != "searchrec-manifest") throw ValidationError("not a manifest file");
  if (j.value("version", 0) != 1) throw ValidationError("unsupported manifest version");
  Manifest m;
  m.config = j.at("config");
  if (!j.at("generated").is_null()) m.generated = record_from(j.at("generated"));
  for (const auto& a : j.at("inputs")) m.inputs.push_back(artifact_from(a));
  for (const auto& s : j.at("stages")) m.stages.push_back(record_from(s));
  return m;
}

Manifest load_manifest(const fs::path& dir) {
  const fs::path p = dir / kManifestFile;
  if (!fs::exists(p)) return {};
  try {
    return Manifest::from_json(json::parse(csv::read_file(p)));
  } catch (const json::exception& e) {
    throw ValidationError(p.string() + ": " + e.what());
  }
}

void save_manifest(const fs::path& dir, const Manifest& manifest) {
  const fs::path p = dir / kManifestFile;
  const fs::path tmp = dir / "manifest.json.tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw ValidationError("cannot write " + tmp.string());
    out << manifest.to_json().dump(2) << '\n';
  }
  fs::rename(tmp, p);
}

fs::path resolve_output_dir(const json& config, const std::string& explicit_dir) {
  if (!explicit_dir.empty()) return explicit_dir;
  if (const char* env = std::getenv("SEARCHREC_OUTPUT_ROOT"); env && *env) return env;
  return config.at("paths").at("output").get<std::string>();
}

void write_matrix_csv(const fs::path& path, const std::string& row_label, const std::vector<std::string>& columns,
                      const std::vector<std::string>& row_names, const Matrix& m) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ValidationError("cannot write " + path.string());
  out << csv::escape(row_label);
  for (const auto& c : columns) out << ',' << csv::escape(c);
  out << '\n';
  for (std::size_t i = 0; i < m.size(); ++i) {
    out << csv::escape(row_names.at(i));
    for (double v : m[i]) out << ',' << csv::format_double(v);
    out << '\n';
  }
}

// ---------------------------------------------------------------------------
// Stages

namespace {

std::string now_utc() {
  const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  std::ostringstream s;
  s << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
  return s.str();
}

std::uint64_t root_seed(const json& c) { return c.at("seed").get<std::uint64_t>(); }
unsigned workers_of(const json& c) { return c.at("workers").get<unsigned>(); }

CategoryWeighting weighting_of(const json& c) {
  const auto w = c.at("clustering").at("weighting").get<std::string>();
  if (w == "levels") return CategoryWeighting::levels;
  if (w == "unit") return CategoryWeighting::unit;
  return CategoryWeighting::inverse_levels;
}

std::string cluster_label(int i) { return "cluster_" + std::to_string(i + 1); }
std::vector<std::string> cluster_labels(int k) {
  std::vector<std::string> out;
  for (int i = 0; i < k; ++i) out.push_back(cluster_label(i));
  return out;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ValidationError("cannot write " + path.string());
  out << text;
}

json read_json(const fs::path& path) {
  try {
    return json::parse(csv::read_file(path));
  } catch (const json::exception& e) {
    throw ValidationError(path.string() + ": " + e.what());
  }
}

EstimatorSpec estimator_spec(const json& c, const std::string& method) {
  const auto& e = c.at("estimation");
  EstimatorSpec spec;
  spec.method = method;
  spec.logit.ridge = e.at("logit").at("ridge").get<double>();
  spec.logit.max_iter = e.at("logit").at("max_iter").get<int>();
  const auto& f = e.at("forest");
  spec.trees.n_trees = f.at("n_trees").get<int>();
  spec.trees.max_depth = f.at("max_depth").get<int>();
  spec.trees.min_leaf = f.at("min_leaf").get<int>();
  spec.trees.mtry = f.at("mtry").get<int>();
  spec.trees.seed = derive_seed(root_seed(c), "estimate.forest");
  spec.trees.workers = workers_of(c);
  const auto& b = e.at("boost");
  spec.boost.n_trees = b.at("n_trees").get<int>();
  spec.boost.max_depth = b.at("max_depth").get<int>();
  spec.boost.min_leaf = b.at("min_leaf").get<int>();
  spec.boost.learning_rate = b.at("learning_rate").get<double>();
  spec.boost.seed = derive_seed(root_seed(c), "estimate.boost");
  spec.boost.workers = workers_of(c);
  return spec;
}

// Paths of the raw inputs, either configured or generated into the output dir.
struct Inputs {
  fs::path catalog;
  fs::path clickstream;
};

class Runner {
 public:
  Runner(const json& config, fs::path dir, const RunOptions& options)
      : config_(config), dir_(std::move(dir)), options_(options) {
    validate_config(config_);
    fs::create_directories(dir_);
    manifest_ = load_manifest(dir_);
    manifest_.config = config_;
  }

  Manifest run(const std::vector<Stage>& requested) {
    prepare_inputs();
    std::set<Stage> wanted(requested.begin(), requested.end());
    for (Stage s : pipeline_stages()) {
      if (!wanted.count(s)) continue;
      const std::string name = stage_name(s);
      const std::string fp = fingerprint(s);
      const bool forced = options_.rerun_from && static_cast<int>(s) >= static_cast<int>(*options_.rerun_from);
      if (options_.resume && !forced && intact(manifest_.find(name), fp)) {
        log("skip " + name + " (up to date)");
        continue;
      }
      log("run " + name);
      const auto start = std::chrono::steady_clock::now();
      StageRecord rec;
      rec.name = name;
      rec.fingerprint = fp;
      try {
        rec.artifacts = execute(s);
      } catch (const std::exception& e) {
        save_manifest(dir_, manifest_);
        const bool validation = dynamic_cast<const ValidationError*>(&e) != nullptr;
        throw StageError(name, e.what(), validation);
      }
      rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
      rec.completed_at = now_utc();
      manifest_.put(std::move(rec));
      save_manifest(dir_, manifest_);
    }
    save_manifest(dir_, manifest_);
    return manifest_;
  }

 private:
  void log(const std::string& s) const {
    if (options_.log) options_.log(s);
  }

  ArtifactRecord record(const fs::path& rel) const {
    const fs::path full = rel.is_absolute() ? rel : dir_ / rel;
    return {rel.generic_string(), sha256_file(full), fs::file_size(full)};
  }

  bool intact(const StageRecord* rec, const std::string& fp) const {
    if (!rec || rec->fingerprint != fp) return false;
    for (const auto& a : rec->artifacts) {
      const fs::path full = fs::path(a.path).is_absolute() ? fs::path(a.path) : dir_ / a.path;
      if (!fs::exists(full) || sha256_file(full) != a.sha256) return false;
    }
    return true;
  }

  void prepare_inputs() {
    const auto& paths = config_.at("paths");
    inputs_.catalog = paths.at("catalog").get<std::string>();
    inputs_.clickstream = paths.at("clickstream").get<std::string>();
    if (inputs_.catalog.empty() != inputs_.clickstream.empty())
      throw ValidationError("paths.catalog and paths.clickstream must be given together");
    if (inputs_.catalog.empty()) {
      const std::string fp = sha256_hex(json{{"generate", config_.at("generate")}, {"seed", config_.at("seed")}}.dump());
      if (!(options_.resume && manifest_.generated && intact(&*manifest_.generated, fp))) {
        log("generate synthetic inputs");
        StageRecord g = generate_inputs(config_, dir_);
        g.fingerprint = fp;
        manifest_.generated = std::move(g);
      }
      inputs_.catalog = dir_ / "catalog.csv";
      inputs_.clickstream = dir_ / "clicks.jsonl";
    } else {
      manifest_.generated.reset();
    }
    manifest_.inputs.clear();
    for (const auto& p : {inputs_.catalog, inputs_.clickstream}) {
      if (!fs::exists(p)) throw ValidationError("input not found: " + p.string());
      manifest_.inputs.push_back({p.generic_string(), sha256_file(p), fs::file_size(p)});
    }
    save_manifest(dir_, manifest_);
  }

  // Settings and upstream hashes a stage depends on.
  std::string fingerprint(Stage s) const {
    json j{{"stage", stage_name(s)}, {"seed", config_.at("seed")}};
    json up = json::array();
    auto add_stage = [&](Stage u) {
      if (const auto* r = manifest_.find(stage_name(u)))
        for (const auto& a : r->artifacts) up.push_back(a.sha256);
      else
        up.push_back("missing:" + stage_name(u));
    };
    switch (s) {
      case Stage::cluster:
        j["clustering"] = config_.at("clustering");
        up.push_back(manifest_.inputs.at(0).sha256);
        break;
      case Stage::recode:
        j["clustering"] = config_.at("clustering");
        j["margins"] = config_.at("margins");
        j["k_values"] = config_.at("estimation").at("k_values");
        j["horizon"] = config_.at("dp").at("horizon");
        for (const auto& a : manifest_.inputs) up.push_back(a.sha256);
        add_stage(Stage::cluster);
        break;
      case Stage::estimate:
      case Stage::select:
        j["estimation"] = config_.at("estimation");
        j["horizon"] = config_.at("dp").at("horizon");
        add_stage(Stage::recode);
        if (s == Stage::select) add_stage(Stage::estimate);
        break;
      case Stage::solve:
        j["dp"] = config_.at("dp");
        add_stage(Stage::recode);
        add_stage(Stage::select);
        break;
      case Stage::counterfactual:
        j["horizon"] = config_.at("dp").at("horizon");
        j["grid"] = config_.at("dp").at("grid");
        j["estimation"] = config_.at("estimation");
        j["counterfactual"] = config_.at("counterfactual");
        add_stage(Stage::recode);
        add_stage(Stage::select);
        break;
    }
    j["upstream"] = up;
    return sha256_hex(j.dump());
  }

  void need(Stage s) const {
    if (!manifest_.find(stage_name(s)))
      throw ValidationError("missing artifacts of stage '" + stage_name(s) + "'; run `searchrec " + stage_name(s) +
                            "` first");
  }

  std::vector<ArtifactRecord> execute(Stage s) {
    switch (s) {
      case Stage::cluster: return run_cluster();
      case Stage::recode: return run_recode();
      case Stage::estimate: return run_estimate();
      case Stage::select: return run_select();
      case Stage::solve: return run_solve();
      case Stage::counterfactual: return run_counterfactual();
    }
    return {};
  }

  // -- cluster --------------------------------------------------------------
  std::vector<ArtifactRecord> run_cluster() {
    const auto catalog = load_catalog(inputs_.catalog);
    const auto vehicles = normalize(catalog, {weighting_of(config_), config_.at("margins").at("rate").get<double>()});
    const Matrix X = feature_matrix(vehicles);
    const auto& cl = config_.at("clustering");
    SweepOptions opts;
    opts.seed = derive_seed(root_seed(config_), "cluster");
    opts.ward.seed = opts.seed;
    opts.workers = workers_of(config_);
    auto models = sweep(X, cl.at("k_min").get<int>(), cl.at("k_max").get<int>(), opts);
    for (auto& m : models) {
      m.vehicle_ids.clear();
      for (const auto& v : vehicles) m.vehicle_ids.push_back(v.vehicle_id);
    }
    const int fixed = cl.at("k").get<int>();
    const ClusterModel& chosen =
        fixed ? *std::find_if(models.begin(), models.end(), [&](const ClusterModel& m) { return m.k == fixed; })
              : models[best_by_silhouette(models)];
    save_cluster_models(dir_ / "clusters.json", models);
    write_silhouette_csv(dir_ / "silhouette.csv", models);
    write_centroid_table(dir_ / "centroids.csv", chosen, weighting_of(config_));
    write_text(dir_ / "cluster_choice.json", json{{"k", chosen.k}, {"silhouette", chosen.silhouette}}.dump(2) + "\n");
    log("  selected k = " + std::to_string(chosen.k) + " (silhouette " + csv::format_double(chosen.silhouette) + ")");
    return {record("clusters.json"), record("silhouette.csv"), record("centroids.csv"), record("cluster_choice.json")};
  }

  std::vector<int> k_values() const {
    std::vector<int> ks;
    for (const auto& k : config_.at("estimation").at("k_values")) ks.push_back(k.get<int>());
    if (ks.empty()) ks.push_back(read_json(dir_ / "cluster_choice.json").at("k").get<int>());
    std::sort(ks.begin(), ks.end());
    ks.erase(std::unique(ks.begin(), ks.end()), ks.end());
    return ks;
  }

  static std::string sessions_file(int k) { return "sessions_k" + std::to_string(k) + ".jsonl"; }
  static std::string margins_file(int k) { return "margins_k" + std::to_string(k) + ".json"; }

  // -- recode ---------------------------------------------------------------
  std::vector<ArtifactRecord> run_recode() {
    need(Stage::cluster);
    const auto models = load_cluster_models(dir_ / "clusters.json");
    const auto raw = load_raw_clickstream(inputs_.clickstream);
    const auto catalog = load_catalog(inputs_.catalog);
    const auto& mc = config_.at("margins");
    const auto margins = compute_margins(catalog, mc.at("rate").get<double>(), mc.at("low_percentile").get<double>(),
                                         mc.at("high_percentile").get<double>());
    const int T = config_.at("dp").at("horizon").get<int>();
    std::vector<ArtifactRecord> out;
    json summary = json::object();
    for (int k : k_values()) {
      const auto it = std::find_if(models.begin(), models.end(), [&](const ClusterModel& m) { return m.k == k; });
      require(it != models.end(), "no clustering with k = " + std::to_string(k));
      // Margins follow catalog order; the cluster model lists the same vehicles.
      require(it->vehicle_ids.size() == catalog.size(), "cluster model and catalog differ in size");
      const auto sessions = truncate_sessions(recode_to_clusters(raw, *it), T);
      save_clickstream(dir_ / sessions_file(k), sessions);
      const Vector m = cluster_margins(margins, it->assignments, k);
      write_text(dir_ / margins_file(k), json(m).dump() + "\n");
      const auto sq = extract_status_quo_matrix(sessions, k);
      const std::string sq_file = "status_quo_k" + std::to_string(k) + ".csv";
      write_matrix_csv(dir_ / sq_file, "viewed", cluster_labels(k), cluster_labels(k), sq.matrix);
      const auto s = summarize(sessions);
      summary[std::to_string(k)] = {{"sessions", s.sessions},
                                    {"mean_pageviews", s.mean_pageviews},
                                    {"conversion_rate", s.conversion_rate},
                                    {"exit_rate", s.exit_rate},
                                    {"censored_rate", s.censored_rate},
                                    {"unviewed_rows", sq.unviewed}};
      for (const auto& f : {sessions_file(k), margins_file(k), sq_file}) out.push_back(record(f));
    }
    write_text(dir_ / "clickstream_summary.json", summary.dump(2) + "\n");
    out.push_back(record("clickstream_summary.json"));
    return out;
  }

  // -- estimate -------------------------------------------------------------
  std::vector<ArtifactRecord> run_estimate() {
    need(Stage::recode);
    const int T = config_.at("dp").at("horizon").get<int>();
    const double holdout = config_.at("estimation").at("holdout").get<double>();
    std::map<int, double> sil;
    for (const auto& m : load_cluster_models(dir_ / "clusters.json")) sil[m.k] = m.silhouette;
    fs::create_directories(dir_ / "models");
    std::vector<FitCell> grid;
    json failures = json::array();
    std::vector<ArtifactRecord> out;
    for (int k : k_values()) {
      const auto sessions = load_clickstream(dir_ / sessions_file(k), k);
      const auto split = split_sessions(sessions, holdout, derive_seed(root_seed(config_), "estimate.split"));
      const auto test = extract_observations(split.holdout, k).observations;
      require(!test.empty(), "holdout sample has no observations");
      for (const auto& mj : config_.at("estimation").at("methods")) {
        const auto method = mj.get<std::string>();
        try {
          const auto policy = estimate_policy(split.train, k, T, estimator_spec(config_, method));
          FitCell cell{method, k, evaluate(*policy, test), sil[k]};
          grid.push_back(cell);
          const std::string file = "models/" + method + "_k" + std::to_string(k) + ".json";
          save_policy(dir_ / file, *policy);
          out.push_back(record(file));
          log("  " + method + " k=" + std::to_string(k) + ": lift " + csv::format_double(cell.report.lift));
        } catch (const ConvergenceError& e) {
          failures.push_back({{"method", method}, {"k", k}, {"error", e.what()}});
          log("  " + method + " k=" + std::to_string(k) + " failed: " + e.what());
        }
      }
    }
    write_text(dir_ / "estimate_failures.json", failures.dump(2) + "\n");
    if (grid.empty()) throw Error("every estimation method failed; see estimate_failures.json");
    write_fit_grid_csv(dir_ / "fit_grid.csv", grid);
    out.insert(out.begin(), {record("fit_grid.csv"), record("estimate_failures.json")});
    return out;
  }

  // -- select ---------------------------------------------------------------
  std::vector<ArtifactRecord> run_select() {
    need(Stage::estimate);
    const auto rows = csv::parse(csv::read_file(dir_ / "fit_grid.csv"));
    require(rows.size() >= 2, "fit_grid.csv has no cells");
    std::vector<FitCell> grid;
    for (std::size_t i = 1; i < rows.size(); ++i) {
      const auto& r = rows[i];
      FitCell c;
      c.method = r.at(0);
      c.k = std::stoi(r.at(1));
      c.report.accuracy = std::stod(r.at(2));
      c.report.log_loss = std::stod(r.at(3));
      c.report.hellinger = std::stod(r.at(4));
      c.report.lift = std::stod(r.at(5));
      c.report.nagelkerke_r2 = std::stod(r.at(6));
      c.silhouette = std::stod(r.at(7));
      grid.push_back(c);
    }
    const FitCell& best = grid[select_model(grid)];
    const int T = config_.at("dp").at("horizon").get<int>();
    // Final model: the selected method refit on every session.
    const auto sessions = load_clickstream(dir_ / sessions_file(best.k), best.k);
    const auto policy = estimate_policy(sessions, best.k, T, estimator_spec(config_, best.method));
    save_policy(dir_ / "policy.json", *policy);
    write_text(dir_ / "selection.json", json{{"method", best.method},
                                             {"k", best.k},
                                             {"lift", best.report.lift},
                                             {"nagelkerke_r2", best.report.nagelkerke_r2},
                                             {"silhouette", best.silhouette}}
                                                .dump(2) +
                                            "\n");
    log("  selected " + best.method + " at k = " + std::to_string(best.k));
    return {record("policy.json"), record("selection.json")};
  }

  // -- solve ----------------------------------------------------------------
  std::vector<ArtifactRecord> run_solve() {
    need(Stage::select);
    const int k = read_json(dir_ / "selection.json").at("k").get<int>();
    const auto policy = load_policy(dir_ / "policy.json");
    const Vector margins = read_json(dir_ / margins_file(k)).get<Vector>();
    const auto& dp = config_.at("dp");
    return solve_to_dir(config_, dir_, policy, margins, dp.at("grid").get<int>(), dp.at("dump_states").get<bool>());
  }

  // -- counterfactual -------------------------------------------------------
  std::vector<ArtifactRecord> run_counterfactual() {
    need(Stage::select);
    const auto sel = read_json(dir_ / "selection.json");
    const int k = sel.at("k").get<int>();
    const auto sessions = load_clickstream(dir_ / sessions_file(k), k);
    const Vector margins = read_json(dir_ / margins_file(k)).get<Vector>();
    const auto& cf = config_.at("counterfactual");
    auto scenarios = parse_scenario_list(cf.at("scenarios").get<std::string>());
    if (std::find(scenarios.begin(), scenarios.end(), Scenario::status_quo) == scenarios.end())
      scenarios.insert(scenarios.begin(), Scenario::status_quo);
    const auto& dp = config_.at("dp");
    auto space = std::make_shared<StateSpace>(k, dp.at("grid").get<int>(), dp.at("horizon").get<int>());
    BootstrapOptions opts;
    opts.replications = cf.at("bootstrap").get<int>();
    opts.seed = derive_seed(root_seed(config_), "bootstrap");
    opts.workers = workers_of(config_);
    opts.suite.workers = workers_of(config_);
    opts.suite.cache_bytes = dp.at("cache_mb").get<std::size_t>() << 20;
    opts.suite.restricted.iterations = cf.at("restricted_iterations").get<int>();
    opts.suite.matrix.tolerance = cf.at("matrix_tolerance").get<double>();
    opts.suite.matrix.max_iter = cf.at("matrix_max_iter").get<int>();
    const auto report =
        bootstrap(sessions, k, margins, space, estimator_spec(config_, sel.at("method").get<std::string>()), scenarios, opts);
    write_results_csv(dir_ / "results.csv", report.results);
    write_text(dir_ / "counterfactual.json", json{{"replications", opts.replications},
                                                  {"failures", report.failures},
                                                  {"status_quo", report.status_quo}}
                                                 .dump(2) +
                                                 "\n");
    for (const auto& f : report.failures) log("  " + f);
    return {record("results.csv"), record("counterfactual.json")};
  }

  json config_;
  fs::path dir_;
  RunOptions options_;
  Manifest manifest_;
  Inputs inputs_;
};

}  // namespace

std::vector<ArtifactRecord> solve_to_dir(const json& config, const fs::path& dir, PolicyPtr policy, const Vector& margins,
                                         int grid, bool dump_states) {
  auto rec = [&](const fs::path& rel) -> ArtifactRecord {
    return {rel.generic_string(), sha256_file(dir / rel), fs::file_size(dir / rel)};
  };
  const int K = policy->clusters(), T = policy->horizon();
  require(static_cast<int>(margins.size()) == K, "margins do not match the policy's cluster count");
  auto space = std::make_shared<StateSpace>(K, grid, T);
  const unsigned workers = workers_of(config);
  const PlanningModel model(policy, margins, space, {},
                            {workers, config.at("dp").at("cache_mb").get<std::size_t>() << 20});
  const ValueTable table = bellman_solve(model, workers);
  save_value_table(dir / "values.bin", table);
  const PolicySummary sum = summarize_policy(table, *space, &model);
  write_matrix_csv(dir / "first_best_matrix.csv", "current", cluster_labels(K), cluster_labels(K), sum.matrix);
  std::vector<std::string> periods;
  for (int t = 1; t <= T; ++t) periods.push_back(std::to_string(t));
  write_matrix_csv(dir / "recommendations_by_period.csv", "t", cluster_labels(K), periods, sum.per_period);
  Matrix conc;
  for (int t = 0; t < T; ++t) {
    Vector row = sum.concentration[t];
    row.insert(row.end(), sum.reachable_concentration[t].begin(), sum.reachable_concentration[t].end());
    conc.push_back(row);
  }
  write_matrix_csv(dir / "concentration.csv", "t",
                   {"one_cluster", "two_clusters", "three_clusters", "reachable_one_cluster",
                    "reachable_two_clusters", "reachable_three_clusters"},
                   periods, conc);
  write_text(dir / "solve.json", json{{"expected_profit", table.expected_profit},
                                      {"clusters", K},
                                      {"horizon", T},
                                      {"grid", grid},
                                      {"states", space->size(1) * static_cast<std::size_t>(T)},
                                      {"actions", space->actions().size()}}
                                         .dump(2) +
                                     "\n");
  std::vector<ArtifactRecord> out = {rec("values.bin"), rec("first_best_matrix.csv"),
                                     rec("recommendations_by_period.csv"), rec("concentration.csv"),
                                     rec("solve.json")};
  if (dump_states) {
    const auto counts = reachable_state_counts(*space);
    std::ofstream f(dir / "state_counts.csv", std::ios::binary);
    if (!f) throw ValidationError("cannot write state_counts.csv");
    f << "t,reachable,lattice\n";
    for (int t = 1; t <= T; ++t) f << t << ',' << counts[t - 1] << ',' << space->size(t) << '\n';
    f.close();
    out.push_back(rec("state_counts.csv"));
  }
  return out;
}

StageRecord generate_inputs(const json& config, const fs::path& dir) {
  validate_config(config);
  fs::create_directories(dir);
  const auto& g = config.at("generate");
  const std::uint64_t seed = root_seed(config);
  const int K = g.at("clusters").get<int>();
  const int T = g.at("horizon").get<int>();
  const auto start = std::chrono::steady_clock::now();

  const auto cat = generate_planted_catalog(K, g.at("per_cluster").get<int>(), derive_seed(seed, "generate.catalog"),
                                            g.at("spread").get<double>());
  write_catalog(dir / "catalog.csv", cat.catalog);

  json truth_json = g.at("truth");
  truth_json["clusters"] = K;
  auto truth = std::make_shared<UtilityTruthPolicy>(K, T, UtilityParams::from_json(truth_json));
  save_policy(dir / "truth.json", *truth);

  const double d = g.at("status_quo_diagonal").get<double>();
  Matrix M(K, Vector(K, K > 1 ? (1.0 - d) / (K - 1) : 1.0));
  for (int i = 0; i < K; ++i) M[i][i] = K > 1 ? d : 1.0;
  GenerateOptions go;
  go.horizon = T;
  go.seed = derive_seed(seed, "generate.sessions");
  go.workers = workers_of(config);
  const auto sessions = generate_synthetic(*truth, MatrixRecPolicy(M), g.at("sessions").get<std::size_t>(), go);
  std::vector<std::vector<std::string>> members(K);
  for (std::size_t i = 0; i < cat.catalog.size(); ++i)
    members[cat.true_cluster[i]].push_back(cat.catalog.records[i].vehicle_id);
  save_raw_clickstream(dir / "clicks.jsonl", assign_vehicles(sessions, members, derive_seed(seed, "generate.vehicles")));

  StageRecord rec;
  rec.name = "generate";
  for (const char* f : {"catalog.csv", "clicks.jsonl", "truth.json"})
    rec.artifacts.push_back({f, sha256_file(dir / f), fs::file_size(dir / f)});
  rec.completed_at = now_utc();
  rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return rec;
}

Manifest run_stages(const json& config, const fs::path& dir, const std::vector<Stage>& stages,
                    const RunOptions& options) {
  Runner runner(config, dir, options);
  return runner.run(stages);
}

// ---------------------------------------------------------------------------
// Report

namespace {

// Rounds a probability row to `decimals` so that the rounded entries keep the
// row's rounded total (largest-remainder rule).
Vector round_row(const Vector& row, int decimals) {
  const double scale = std::pow(10.0, decimals);
  double total = 0.0;
  for (double v : row) total += v;
  const auto target = static_cast<long long>(std::llround(total * scale));
  std::vector<long long> fl(row.size());
  std::vector<std::pair<double, std::size_t>> rem;
  long long sum = 0;
  for (std::size_t i = 0; i < row.size(); ++i) {
    fl[i] = static_cast<long long>(std::floor(row[i] * scale));
    sum += fl[i];
    rem.push_back({row[i] * scale - static_cast<double>(fl[i]), i});
  }
  std::stable_sort(rem.begin(), rem.end(), [](const auto& a, const auto& b) { return a.first > b.first; });
  for (std::size_t j = 0; sum < target && j < rem.size(); ++j, ++sum) ++fl[rem[j].second];
  Vector out(row.size());
  for (std::size_t i = 0; i < row.size(); ++i) out[i] = static_cast<double>(fl[i]) / scale;
  return out;
}

std::string fixed(double v, int decimals) {
  std::ostringstream s;
  s << std::fixed << std::setprecision(decimals) << v;
  return s.str();
}

bool numeric(const std::string& s, double& v) {
  if (s.empty()) return false;
  char* end = nullptr;
  v = std::strtod(s.c_str(), &end);
  return end && *end == '\0';
}

// Aligned text table from CSV; `stochastic_rows` rounds rows to sum-preserving 3 decimals.
std::string table_from_csv(const fs::path& path, bool stochastic_rows, int decimals = 3) {
  auto rows = csv::parse(csv::read_file(path));
  if (rows.empty()) return "";
  if (stochastic_rows) {
    for (std::size_t i = 1; i < rows.size(); ++i) {
      Vector v;
      for (std::size_t j = 1; j < rows[i].size(); ++j) v.push_back(std::stod(rows[i][j]));
      v = round_row(v, 3);
      for (std::size_t j = 1; j < rows[i].size(); ++j) rows[i][j] = fixed(v[j - 1], 3);
    }
  } else {
    // A column with any fractional entry is printed at fixed precision throughout.
    const std::size_t cols = rows[0].size();
    for (std::size_t j = 1; j < cols; ++j) {
      bool fractional = false;
      double v;
      for (std::size_t i = 1; i < rows.size(); ++i)
        if (j < rows[i].size() && numeric(rows[i][j], v) && rows[i][j].find_first_of(".eE") != std::string::npos)
          fractional = true;
      if (!fractional) continue;
      for (std::size_t i = 1; i < rows.size(); ++i)
        if (j < rows[i].size() && numeric(rows[i][j], v)) rows[i][j] = fixed(v, decimals);
    }
  }
  std::vector<std::size_t> width;
  for (const auto& r : rows)
    for (std::size_t j = 0; j < r.size(); ++j) {
      if (width.size() <= j) width.push_back(0);
      width[j] = std::max(width[j], r[j].size());
    }
  std::ostringstream out;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    for (std::size_t j = 0; j < rows[i].size(); ++j) {
      if (j) out << "  ";
      if (j == 0)
        out << std::left << std::setw(static_cast<int>(width[j])) << rows[i][j];
      else
        out << std::right << std::setw(static_cast<int>(width[j])) << rows[i][j];
    }
    out << '\n';
  }
  return out.str();
}

}  // namespace

std::string render_report(const fs::path& dir) {
  if (!fs::exists(dir / kManifestFile))
    throw ValidationError("no manifest in " + dir.string() + "; run `searchrec pipeline --seed N` first");
  const Manifest m = load_manifest(dir);
  std::ostringstream out;
  auto section = [&](const std::string& title) { out << "\n== " << title << " ==\n"; };
  std::vector<std::string> missing;
  for (Stage s : pipeline_stages())
    if (!m.find(stage_name(s))) missing.push_back(stage_name(s));

  out << "searchrec report for " << dir.string() << '\n';
  if (m.find("cluster")) {
    section("silhouette by k");
    out << table_from_csv(dir / "silhouette.csv", false);
    section("centroids of the selected clustering");
    out << table_from_csv(dir / "centroids.csv", false);
  }
  if (m.find("recode")) {
    section("clickstream");
    out << read_json(dir / "clickstream_summary.json").dump(2) << '\n';
    for (const auto& a : m.find("recode")->artifacts)
      if (a.path.rfind("status_quo_k", 0) == 0) {
        section("status quo matrix (" + a.path + ")");
        out << table_from_csv(dir / a.path, true);
      }
  }
  if (m.find("estimate")) {
    section("fit grid (holdout)");
    out << table_from_csv(dir / "fit_grid.csv", false);
  }
  if (m.find("select")) {
    section("selected model");
    out << read_json(dir / "selection.json").dump(2) << '\n';
  }
  if (m.find("solve")) {
    const auto s = read_json(dir / "solve.json");
    section("first best");
    out << "expected profit " << csv::format_double(s.at("expected_profit").get<double>()) << '\n';
    section("first-best recommendation matrix (uniform over states)");
    out << table_from_csv(dir / "first_best_matrix.csv", true);
    section("recommended cluster shares by period");
    out << table_from_csv(dir / "recommendations_by_period.csv", true);
    section("concentration: share of recommendation sets by number of distinct clusters");
    out << table_from_csv(dir / "concentration.csv", false);
  }
  if (m.find("counterfactual")) {
    section("counterfactual scenarios (status quo = 100)");
    out << table_from_csv(dir / "results.csv", false, 2);
  }
  if (!missing.empty()) {
    section("missing");
    for (const auto& s : missing) out << s << ": run `searchrec " << s << "` (or `searchrec pipeline`)\n";
  }
  return out.str();
}

}  // namespace searchrec
