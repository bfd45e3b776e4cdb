#include "searchrec/clickstream.hpp"

#include <algorithm>
#include <fstream>
#include <nlohmann/json.hpp>
#include <numeric>
#include <sstream>
#include <unordered_map>

#include "csv.hpp"
#include "searchrec/parallel.hpp"

namespace searchrec {

using nlohmann::json;

Terminal Session::terminal() const {
  require(!events.empty(), "session " + id + " has no events");
  switch (events.back().action.kind) {
    case ActionKind::convert:
      return Terminal::convert;
    case ActionKind::exit:
      return Terminal::exit;
    default:
      return Terminal::censored;
  }
}

int Session::pageviews() const {
  return static_cast<int>(std::count_if(events.begin(), events.end(),
                                        [](const Event& e) { return e.action.kind == ActionKind::search; }));
}

void validate_session(const Session& s, int clusters) {
  auto fail = [&](const std::string& what) { throw ValidationError("session " + s.id + ": " + what); };
  if (s.events.empty()) fail("no events");
  for (std::size_t i = 0; i < s.events.size(); ++i) {
    const auto& e = s.events[i];
    if (e.t != static_cast<int>(i) + 1) fail("gap in t at event " + std::to_string(i + 1));
    if (i > 0 && s.events[i - 1].action.kind != ActionKind::search)
      fail("event after terminal action at t = " + std::to_string(e.t));
    if (e.action.kind != ActionKind::exit && (e.action.cluster < 0 || e.action.cluster >= clusters))
      fail("cluster out of range at t = " + std::to_string(e.t));
    if (e.t == 1 && !e.recs.empty()) fail("recommendations on the first event");
    if (e.t >= 2 && e.recs.size() != static_cast<std::size_t>(kRecSlots))
      fail("expected 3 recommendations at t = " + std::to_string(e.t));
    for (int r : e.recs)
      if (r < 0 || r >= clusters) fail("recommended cluster out of range at t = " + std::to_string(e.t));
  }
}

namespace {

std::string sid_of(const json& j, std::size_t line) {
  const auto& sid = j.at("sid");
  if (sid.is_string()) return sid.get<std::string>();
  if (sid.is_number_integer()) return std::to_string(sid.get<long long>());
  throw ValidationError("line " + std::to_string(line) + ": sid must be a string or integer");
}

template <class OnEvent>
void for_each_jsonl(std::string_view text, OnEvent&& on_event) {
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos < text.size()) {
    std::size_t end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    std::string_view line = text.substr(pos, end - pos);
    pos = end + 1;
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (line.find_first_not_of(" \t") == std::string_view::npos) continue;
    json j;
    try {
      j = json::parse(line);
      on_event(j, line_no);
    } catch (const json::exception& e) {
      throw ValidationError("line " + std::to_string(line_no) + ": " + e.what());
    }
  }
}

// Groups consecutive lines by sid; a sid seen again later is an ordering error.
template <class S>
S& session_for(std::vector<S>& out, std::unordered_map<std::string, std::size_t>& seen, const std::string& sid,
               std::size_t line) {
  if (!out.empty() && out.back().id == sid) return out.back();
  if (seen.count(sid)) throw ValidationError("line " + std::to_string(line) + ": session " + sid + " is not contiguous");
  seen.emplace(sid, out.size());
  out.emplace_back();
  out.back().id = sid;
  return out.back();
}

}  // namespace

std::vector<Session> parse_clickstream(std::string_view text, int clusters) {
  require(clusters >= 1, "clickstream: K must be >= 1");
  std::vector<Session> out;
  std::unordered_map<std::string, std::size_t> seen;
  for_each_jsonl(text, [&](const json& j, std::size_t line) {
    auto& s = session_for(out, seen, sid_of(j, line), line);
    Event e;
    e.t = j.at("t").get<int>();
    const auto& a = j.at("action");
    if (a.is_string()) {
      if (a.get<std::string>() != "exit") throw ValidationError("line " + std::to_string(line) + ": unknown action");
      e.action = ConsumerAction::exit();
    } else if (a.contains("search")) {
      e.action = ConsumerAction::search(a.at("search").get<int>() - 1);
    } else if (a.contains("convert")) {
      e.action = ConsumerAction::convert(a.at("convert").get<int>() - 1);
    } else {
      throw ValidationError("line " + std::to_string(line) + ": unknown action");
    }
    if (j.contains("recs"))
      for (const auto& r : j.at("recs")) e.recs.push_back(r.get<int>() - 1);
    s.events.push_back(std::move(e));
  });
  for (const auto& s : out) validate_session(s, clusters);
  return out;
}

std::vector<Session> load_clickstream(const std::filesystem::path& path, int clusters) {
  return parse_clickstream(csv::read_file(path), clusters);
}

std::string format_clickstream(const std::vector<Session>& sessions) {
  std::ostringstream out;
  for (const auto& s : sessions) {
    const std::string sid = json(s.id).dump();
    for (const auto& e : s.events) {
      out << "{\"sid\":" << sid << ",\"t\":" << e.t << ",\"action\":";
      switch (e.action.kind) {
        case ActionKind::search:
          out << "{\"search\":" << e.action.cluster + 1 << '}';
          break;
        case ActionKind::convert:
          out << "{\"convert\":" << e.action.cluster + 1 << '}';
          break;
        case ActionKind::exit:
          out << "\"exit\"";
          break;
      }
      out << ",\"recs\":[";
      for (std::size_t i = 0; i < e.recs.size(); ++i) out << (i ? "," : "") << e.recs[i] + 1;
      out << "]}\n";
    }
  }
  return out.str();
}

void save_clickstream(const std::filesystem::path& path, const std::vector<Session>& sessions) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ValidationError("cannot write " + path.string());
  out << format_clickstream(sessions);
}

std::vector<RawSession> parse_raw_clickstream(std::string_view text) {
  std::vector<RawSession> out;
  std::unordered_map<std::string, std::size_t> seen;
  auto id_of = [](const json& v) {
    return v.is_string() ? v.get<std::string>() : v.dump();
  };
  for_each_jsonl(text, [&](const json& j, std::size_t line) {
    auto& s = session_for(out, seen, sid_of(j, line), line);
    RawEvent e;
    e.t = j.at("t").get<int>();
    const auto& a = j.at("action");
    if (a.is_string()) {
      if (a.get<std::string>() != "exit") throw ValidationError("line " + std::to_string(line) + ": unknown action");
      e.kind = ActionKind::exit;
    } else if (a.contains("search")) {
      e.kind = ActionKind::search;
      e.vehicle = id_of(a.at("search"));
    } else if (a.contains("convert")) {
      e.kind = ActionKind::convert;
      e.vehicle = id_of(a.at("convert"));
    } else {
      throw ValidationError("line " + std::to_string(line) + ": unknown action");
    }
    if (j.contains("recs"))
      for (const auto& r : j.at("recs")) e.recs.push_back(id_of(r));
    s.events.push_back(std::move(e));
  });
  return out;
}

std::vector<RawSession> load_raw_clickstream(const std::filesystem::path& path) {
  return parse_raw_clickstream(csv::read_file(path));
}

std::string format_raw_clickstream(const std::vector<RawSession>& sessions) {
  std::ostringstream out;
  for (const auto& s : sessions) {
    const std::string sid = json(s.id).dump();
    for (const auto& e : s.events) {
      out << "{\"sid\":" << sid << ",\"t\":" << e.t << ",\"action\":";
      if (e.kind == ActionKind::exit)
        out << "\"exit\"";
      else
        out << "{\"" << (e.kind == ActionKind::search ? "search" : "convert") << "\":" << json(e.vehicle).dump() << '}';
      out << ",\"recs\":[";
      for (std::size_t i = 0; i < e.recs.size(); ++i) out << (i ? "," : "") << json(e.recs[i]).dump();
      out << "]}\n";
    }
  }
  return out.str();
}

void save_raw_clickstream(const std::filesystem::path& path, const std::vector<RawSession>& sessions) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ValidationError("cannot write " + path.string());
  out << format_raw_clickstream(sessions);
}

std::vector<RawSession> assign_vehicles(const std::vector<Session>& sessions,
                                        const std::vector<std::vector<std::string>>& members, std::uint64_t seed) {
  for (const auto& m : members) require(!m.empty(), "assign_vehicles: empty cluster");
  std::vector<RawSession> out;
  out.reserve(sessions.size());
  for (std::size_t i = 0; i < sessions.size(); ++i) {
    Rng rng(seed, "vehicles", i);
    auto pick = [&](int c) {
      require(c >= 0 && static_cast<std::size_t>(c) < members.size(), "assign_vehicles: cluster out of range");
      const auto& m = members[static_cast<std::size_t>(c)];
      return m[rng.below(m.size())];
    };
    RawSession rs;
    rs.id = sessions[i].id;
    for (const auto& e : sessions[i].events) {
      RawEvent re;
      re.t = e.t;
      re.kind = e.action.kind;
      if (e.action.kind != ActionKind::exit) re.vehicle = pick(e.action.cluster);
      for (int r : e.recs) re.recs.push_back(pick(r));
      rs.events.push_back(std::move(re));
    }
    out.push_back(std::move(rs));
  }
  return out;
}

std::vector<Session> recode_to_clusters(const std::vector<RawSession>& raw, const ClusterModel& model) {
  std::unordered_map<std::string, int> lookup;
  lookup.reserve(model.vehicle_ids.size());
  for (std::size_t i = 0; i < model.vehicle_ids.size(); ++i) lookup.emplace(model.vehicle_ids[i], model.assignments[i]);
  auto cluster = [&](const std::string& id, const std::string& sid) {
    auto it = lookup.find(id);
    if (it == lookup.end()) throw ValidationError("session " + sid + ": unknown vehicle_id '" + id + "'");
    return it->second;
  };
  std::vector<Session> out;
  out.reserve(raw.size());
  for (const auto& rs : raw) {
    Session s;
    s.id = rs.id;
    for (const auto& re : rs.events) {
      Event e;
      e.t = re.t;
      e.action = re.kind == ActionKind::exit ? ConsumerAction::exit() : ConsumerAction{re.kind, cluster(re.vehicle, rs.id)};
      for (const auto& r : re.recs) e.recs.push_back(cluster(r, rs.id));
      s.events.push_back(std::move(e));
    }
    validate_session(s, model.k);
    out.push_back(std::move(s));
  }
  return out;
}

std::vector<Session> truncate_sessions(std::vector<Session> sessions, int horizon) {
  require(horizon >= 1, "truncate_sessions: horizon must be >= 1");
  const auto limit = static_cast<std::size_t>(horizon) + 1;
  for (auto& s : sessions) {
    if (s.events.size() <= limit) continue;
    s.events.resize(limit);
    // The kept last event is a search (later events existed), so the session is censored.
  }
  return sessions;
}

std::vector<Session> generate_synthetic(const ConsumerPolicy& truth, const RecPolicy& rec_policy, std::size_t n_sessions,
                                        const GenerateOptions& options) {
  require(options.horizon >= 1, "generate_synthetic: horizon must be >= 1");
  const int K = truth.clusters();
  std::vector<Session> out(n_sessions);
  parallel_for(n_sessions, options.workers, [&](std::size_t i) {
    Rng rng(options.seed, "session", i);
    Session& s = out[i];
    s.id = "s" + std::to_string(i + 1);
    const int first = static_cast<int>(rng.categorical(truth.initial()));
    s.events.push_back({1, action_from_index(first, K), {}});
    if (first >= K) return;
    HistoryTracker h(K, first);
    for (int t = 1; t <= options.horizon; ++t) {
      const RecAction r = rec_policy.sample(h.state(), rng);
      const Vector p = truth.predict(h.decision_state(r));
      const int idx = static_cast<int>(rng.categorical(p));
      const auto action = action_from_index(idx, K);
      s.events.push_back({t + 1, action, std::vector<int>(r.slots.begin(), r.slots.end())});
      if (action.kind != ActionKind::search || t == options.horizon) break;
      h.advance(r, action.cluster);
    }
    for (std::size_t e = 0; e + 1 < s.events.size(); ++e)
      if (s.events[e].action.kind != ActionKind::search) throw Error("generate_synthetic: action after terminal event");
  });
  return out;
}

StatusQuo extract_status_quo_matrix(const std::vector<Session>& sessions, int clusters) {
  require(clusters >= 1, "status quo: K must be >= 1");
  StatusQuo sq;
  sq.matrix.assign(clusters, Vector(clusters, 0.0));
  sq.impressions.assign(clusters, 0.0);
  sq.unviewed.assign(clusters, false);
  for (const auto& s : sessions)
    for (std::size_t e = 1; e < s.events.size(); ++e) {
      const auto& prev = s.events[e - 1];
      const auto& cur = s.events[e];
      if (prev.action.kind != ActionKind::search || cur.recs.size() != static_cast<std::size_t>(kRecSlots)) continue;
      const int row = prev.action.cluster;
      require(row >= 0 && row < clusters, "status quo: cluster out of range in session " + s.id);
      sq.impressions[row] += 1.0;
      for (int c : cur.recs) {
        require(c >= 0 && c < clusters, "status quo: cluster out of range in session " + s.id);
        sq.matrix[row][c] += 1.0;
      }
    }
  for (int i = 0; i < clusters; ++i) {
    if (sq.impressions[i] == 0.0) {
      sq.unviewed[i] = true;
      std::fill(sq.matrix[i].begin(), sq.matrix[i].end(), 1.0 / clusters);
      continue;
    }
    const double total = std::accumulate(sq.matrix[i].begin(), sq.matrix[i].end(), 0.0);
    for (double& x : sq.matrix[i]) x /= total;
  }
  return sq;
}

TrainingData extract_observations(const std::vector<Session>& sessions, int clusters) {
  TrainingData d;
  d.first_actions.reserve(sessions.size());
  for (const auto& s : sessions) {
    validate_session(s, clusters);
    const auto& first = s.events.front();
    d.first_actions.push_back(action_index(first.action, clusters));
    if (first.action.kind != ActionKind::search) continue;
    HistoryTracker h(clusters, first.action.cluster);
    for (std::size_t e = 1; e < s.events.size(); ++e) {
      const auto& ev = s.events[e];
      const auto r = RecAction::make(ev.recs[0], ev.recs[1], ev.recs[2]);
      d.observations.push_back({h.decision_state(r), action_index(ev.action, clusters)});
      if (ev.action.kind == ActionKind::search) h.advance(r, ev.action.cluster);
    }
  }
  return d;
}

Split split_sessions(const std::vector<Session>& sessions, double holdout_fraction, std::uint64_t seed) {
  require(holdout_fraction > 0.0 && holdout_fraction < 1.0, "holdout fraction must be in (0,1)");
  std::vector<std::size_t> idx(sessions.size());
  std::iota(idx.begin(), idx.end(), 0);
  Rng rng(seed, "holdout");
  for (std::size_t i = idx.size(); i > 1; --i) std::swap(idx[i - 1], idx[rng.below(i)]);
  const auto n_hold = static_cast<std::size_t>(std::llround(holdout_fraction * static_cast<double>(sessions.size())));
  std::vector<char> hold(sessions.size(), 0);
  for (std::size_t i = 0; i < n_hold; ++i) hold[idx[i]] = 1;
  Split out;
  for (std::size_t i = 0; i < sessions.size(); ++i) (hold[i] ? out.holdout : out.train).push_back(sessions[i]);
  return out;
}

std::vector<Session> resample_sessions(const std::vector<Session>& sessions, std::uint64_t seed, std::uint64_t replication) {
  require(!sessions.empty(), "resample_sessions: no sessions");
  Rng rng(seed, "bootstrap.sessions", replication);
  std::vector<Session> out;
  out.reserve(sessions.size());
  for (std::size_t i = 0; i < sessions.size(); ++i) out.push_back(sessions[rng.below(sessions.size())]);
  return out;
}

ClickstreamSummary summarize(const std::vector<Session>& sessions) {
  ClickstreamSummary s;
  s.sessions = sessions.size();
  if (sessions.empty()) return s;
  double views = 0.0, conv = 0.0, ex = 0.0, cens = 0.0;
  for (const auto& x : sessions) {
    views += x.pageviews();
    switch (x.terminal()) {
      case Terminal::convert:
        conv += 1.0;
        break;
      case Terminal::exit:
        ex += 1.0;
        break;
      case Terminal::censored:
        cens += 1.0;
        break;
    }
  }
  const double n = static_cast<double>(sessions.size());
  s.mean_pageviews = views / n;
  s.conversion_rate = conv / n;
  s.exit_rate = ex / n;
  s.censored_rate = cens / n;
  return s;
}

}  // namespace searchrec
