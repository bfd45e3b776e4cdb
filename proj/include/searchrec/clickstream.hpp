#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "searchrec/clustering.hpp"
#include "searchrec/common.hpp"
#include "searchrec/policy.hpp"
#include "searchrec/recpolicy.hpp"

namespace searchrec {

/// Event t of a session. `recs` are the three clusters on screen when the
/// action was taken (empty for t = 1, the first click from the homepage).
struct Event {
  int t = 1;
  ConsumerAction action;
  std::vector<int> recs;

  bool operator==(const Event&) const = default;
};

enum class Terminal { convert, exit, censored };

struct Session {
  std::string id;
  std::vector<Event> events;

  /// Convert / exit when the last event is one; censored when it is a search.
  Terminal terminal() const;
  /// Number of vehicle pages viewed (search events).
  int pageviews() const;
  bool operator==(const Session&) const = default;
};

/// Throws ValidationError naming the session on gaps in t, actions after a
/// terminal event, wrong recommendation counts or out-of-range clusters.
void validate_session(const Session& s, int clusters);

/// JSONL, one event per line: {"sid", "t", "action": {"search":k}|{"convert":k}|"exit", "recs":[k,k,k]}
/// with clusters numbered 1..K. Lines must be grouped by session and ordered by t.
std::vector<Session> load_clickstream(const std::filesystem::path& path, int clusters);
std::vector<Session> parse_clickstream(std::string_view text, int clusters);
void save_clickstream(const std::filesystem::path& path, const std::vector<Session>& sessions);
std::string format_clickstream(const std::vector<Session>& sessions);

/// Vehicle-level events: same layout, vehicle ids (strings) instead of clusters.
struct RawEvent {
  int t = 1;
  ActionKind kind = ActionKind::exit;
  std::string vehicle;  // empty for exit
  std::vector<std::string> recs;
};
struct RawSession {
  std::string id;
  std::vector<RawEvent> events;
};

std::vector<RawSession> load_raw_clickstream(const std::filesystem::path& path);
std::vector<RawSession> parse_raw_clickstream(std::string_view text);

/// Replaces every vehicle reference by its cluster. Throws on unknown ids.
std::string format_raw_clickstream(const std::vector<RawSession>& sessions);
void save_raw_clickstream(const std::filesystem::path& path, const std::vector<RawSession>& sessions);

/// Replaces every cluster in the sessions by a member vehicle drawn uniformly
/// from `members[cluster]` (stream "vehicles" per session).
std::vector<RawSession> assign_vehicles(const std::vector<Session>& sessions,
                                        const std::vector<std::vector<std::string>>& members, std::uint64_t seed);

std::vector<Session> recode_to_clusters(const std::vector<RawSession>& raw, const ClusterModel& model);

/// Truncates sessions to at most horizon + 1 events; truncated sessions end censored.
std::vector<Session> truncate_sessions(std::vector<Session> sessions, int horizon);

struct GenerateOptions {
  int horizon = 22;
  std::uint64_t seed = 0;
  unsigned workers = 1;
};

/// Draws sessions by alternating recommendation ~ rec_policy(state) and
/// consumer action ~ truth(post-recommendation state). A search at event
/// horizon + 1 censors the session. Deterministic given the seed and
/// independent of the worker count.
std::vector<Session> generate_synthetic(const ConsumerPolicy& truth, const RecPolicy& rec_policy, std::size_t n_sessions,
                                        const GenerateOptions& options);

struct StatusQuo {
  Matrix matrix;               // K x K, rows sum to 1
  std::vector<bool> unviewed;  // rows with no recommendation impressions (filled uniform)
  std::vector<double> impressions;
};

/// Row i: clusters recommended right after a view of cluster i, over 3 x views.
StatusQuo extract_status_quo_matrix(const std::vector<Session>& sessions, int clusters);

struct TrainingData {
  std::vector<Observation> observations;  // events t >= 2 at their post-recommendation states
  std::vector<int> first_actions;         // action index of event 1 per session
};

TrainingData extract_observations(const std::vector<Session>& sessions, int clusters);

/// Session-level split; the holdout receives round(fraction * n) sessions.
struct Split {
  std::vector<Session> train;
  std::vector<Session> holdout;
};
Split split_sessions(const std::vector<Session>& sessions, double holdout_fraction, std::uint64_t seed);

/// Sessions drawn with replacement (session-level bootstrap).
std::vector<Session> resample_sessions(const std::vector<Session>& sessions, std::uint64_t seed, std::uint64_t replication);

struct ClickstreamSummary {
  std::size_t sessions = 0;
  double mean_pageviews = 0.0;
  double conversion_rate = 0.0;  // sessions ending in a conversion
  double exit_rate = 0.0;
  double censored_rate = 0.0;
};
ClickstreamSummary summarize(const std::vector<Session>& sessions);

}  // namespace searchrec
