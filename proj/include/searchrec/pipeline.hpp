#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <nlohmann/json.hpp>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "searchrec/common.hpp"
#include "searchrec/policy.hpp"

namespace searchrec {

// ---------------------------------------------------------------------------
// Run configuration: one JSON document with full defaults.

nlohmann::json default_config();

/// Merges `patch` into `config`. Objects merge key by key; any other value
/// replaces. Keys that do not exist in the defaults are rejected.
void merge_config(nlohmann::json& config, const nlohmann::json& patch);

/// Defaults overlaid with a JSON file.
nlohmann::json load_config(const std::filesystem::path& path);

/// Applies "a.b.c=value". The value is parsed as JSON when possible and kept
/// as a string otherwise.
void set_config_value(nlohmann::json& config, std::string_view assignment);

/// Throws ValidationError on out-of-range settings.
void validate_config(const nlohmann::json& config);

// ---------------------------------------------------------------------------
// Stages and manifest

enum class Stage { cluster, recode, estimate, select, solve, counterfactual };

const std::vector<Stage>& pipeline_stages();
std::string stage_name(Stage s);
Stage parse_stage(std::string_view name);

/// A stage that threw; carries the stage name.
class StageError : public Error {
 public:
  StageError(std::string stage, const std::string& cause, bool validation = false)
      : Error("stage " + stage + " failed: " + cause), stage_(std::move(stage)), validation_(validation) {}
  const std::string& stage() const { return stage_; }
  /// The cause was a ValidationError (bad input rather than a failed computation).
  bool validation() const { return validation_; }

 private:
  std::string stage_;
  bool validation_;
};

struct ArtifactRecord {
  std::string path;  // relative to the output directory unless absolute
  std::string sha256;
  std::uintmax_t bytes = 0;
};

struct StageRecord {
  std::string name;
  std::string fingerprint;  // hash of the stage's settings and input hashes
  std::string completed_at;
  double seconds = 0.0;
  std::vector<ArtifactRecord> artifacts;
};

struct Manifest {
  nlohmann::json config;
  std::optional<StageRecord> generated;  // synthetic inputs, when the run generated them
  std::vector<ArtifactRecord> inputs;
  std::vector<StageRecord> stages;       // in pipeline order

  const StageRecord* find(std::string_view stage) const;
  void put(StageRecord record);
  nlohmann::json to_json() const;
  static Manifest from_json(const nlohmann::json& j);
};

inline constexpr const char* kManifestFile = "manifest.json";

/// Empty manifest when the directory has none.
Manifest load_manifest(const std::filesystem::path& dir);
void save_manifest(const std::filesystem::path& dir, const Manifest& manifest);

/// Output directory: `explicit_dir` if non-empty, else $SEARCHREC_OUTPUT_ROOT,
/// else config paths.output.
std::filesystem::path resolve_output_dir(const nlohmann::json& config, const std::string& explicit_dir = {});

struct RunOptions {
  bool resume = true;                 // skip stages whose fingerprint and artifacts are unchanged
  std::optional<Stage> rerun_from;    // force this stage and every later one
  std::function<void(const std::string&)> log;
};

/// Writes the synthetic catalog (catalog.csv), vehicle-level clickstream
/// (clicks.jsonl) and generating consumer model (truth.json) into `dir`.
StageRecord generate_inputs(const nlohmann::json& config, const std::filesystem::path& dir);

/// Runs `stages` in pipeline order in `dir`, reading earlier artifacts from
/// the manifest there. Missing catalog/clickstream paths trigger synthetic
/// generation first. Stage exceptions are rethrown as StageError after the
/// manifest of completed stages is saved.
Manifest run_stages(const nlohmann::json& config, const std::filesystem::path& dir, const std::vector<Stage>& stages,
                    const RunOptions& options = {});

inline Manifest run_pipeline(const nlohmann::json& config, const std::filesystem::path& dir,
                             const RunOptions& options = {}) {
  return run_stages(config, dir, pipeline_stages(), options);
}

/// First-best solve of `policy` on a (K, grid, T) lattice, writing values.bin,
/// first_best_matrix.csv, recommendations_by_period.csv, concentration.csv,
/// solve.json and optionally state_counts.csv into `dir`. Uses config workers
/// and dp.cache_mb. Returns the artifacts with paths relative to `dir`.
std::vector<ArtifactRecord> solve_to_dir(const nlohmann::json& config, const std::filesystem::path& dir,
                                         std::shared_ptr<const ConsumerPolicy> policy, const Vector& margins, int grid,
                                         bool dump_states);

/// Aligned-text tables for every available artifact; missing stages are
/// listed with the command that produces them.
std::string render_report(const std::filesystem::path& dir);

/// CSV with a header row and one line per matrix row.
void write_matrix_csv(const std::filesystem::path& path, const std::string& row_label,
                      const std::vector<std::string>& columns, const std::vector<std::string>& row_names,
                      const Matrix& m);

}  // namespace searchrec
