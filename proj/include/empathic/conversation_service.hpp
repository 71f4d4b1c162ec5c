#pragma once

// Server-side orchestration: per-session emotion queue, aggregate -> compose
// -> complete for each chat message, and an append-only JSONL log per session:
//
//   <log_dir>/<session_id>/session.json   session metadata
//   <log_dir>/<session_id>/affect.jsonl   one snapshot per line, in arrival order
//   <log_dir>/<session_id>/turns.jsonl    one ChatTurn per line
//
// A turn records `affect_seq`, the number of affect lines received before the
// chat arrived, so the aggregation can be replayed exactly from the log.

#include <atomic>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <random>
#include <shared_mutex>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "empathic/affect_ingest.hpp"
#include "empathic/affect_sim.hpp"
#include "empathic/emotion_queue.hpp"
#include "empathic/llm_client.hpp"
#include "empathic/prompt_builder.hpp"

namespace empathic {

struct ChatTurn {
  std::int64_t turn_id = 0;
  std::int64_t arrival_ms = 0;
  std::string user_text;
  std::optional<AffectiveContext> affective_context;
  std::size_t affect_seq = 0;
  std::size_t history_len = 0;
  std::string rendered_query_digest;
  std::string answer_text;
  std::string reasoning_text;
  CompletionResult metrics;
  /// Completion (or failure) time.
  std::int64_t timestamp_ms = 0;
  bool ok = true;
  std::string error;
};

struct SessionInfo {
  std::string session_id;
  std::string user_label;
  std::int64_t created_at_ms = 0;
  std::string system_prompt_digest;
  std::size_t history_window = 3;
  double window_seconds = 3.0;
};

struct ConversationLog {
  SessionInfo session;
  std::vector<ChatTurn> turns;
  std::vector<EmotionSnapshot> affect;
};

inline nlohmann::json to_json_value(const ChatTurn& t) {
  nlohmann::json j{{"turn_id", t.turn_id},
                   {"arrival", t.arrival_ms},
                   {"user_text", t.user_text},
                   {"affective_context", to_json_value(t.affective_context)},
                   {"affect_seq", t.affect_seq},
                   {"history_len", t.history_len},
                   {"rendered_query_digest", t.rendered_query_digest},
                   {"answer_text", t.answer_text},
                   {"reasoning_text", t.reasoning_text},
                   {"metrics", to_json_value(t.metrics)},
                   {"timestamp", t.timestamp_ms},
                   {"status", t.ok ? "ok" : "failed"}};
  if (!t.ok) j["error"] = t.error;
  return j;
}

inline ChatTurn chat_turn_from_json(const nlohmann::json& j) {
  ChatTurn t;
  t.turn_id = j.at("turn_id").get<std::int64_t>();
  t.arrival_ms = j.at("arrival").get<std::int64_t>();
  t.user_text = j.at("user_text").get<std::string>();
  t.affective_context = affective_context_from_json(j.at("affective_context"));
  t.affect_seq = j.value("affect_seq", std::size_t{0});
  t.history_len = j.value("history_len", std::size_t{0});
  t.rendered_query_digest = j.at("rendered_query_digest").get<std::string>();
  t.answer_text = j.value("answer_text", std::string());
  t.reasoning_text = j.value("reasoning_text", std::string());
  const auto& m = j.at("metrics");
  t.metrics.answer_text = t.answer_text;
  t.metrics.reasoning_text = t.reasoning_text;
  t.metrics.output_tokens = m.value("output_tokens", std::int64_t{0});
  t.metrics.wall_time_s = m.value("wall_time_s", 0.0);
  t.metrics.generation_time_s = m.value("generation_time_s", 0.0);
  t.metrics.tps = m.value("tps", 0.0);
  t.timestamp_ms = j.at("timestamp").get<std::int64_t>();
  t.ok = j.value("status", std::string("ok")) == "ok";
  t.error = j.value("error", std::string());
  return t;
}

inline nlohmann::json to_json_value(const SessionInfo& s) {
  return {{"session_id", s.session_id},
          {"user_label", s.user_label},
          {"created_at", s.created_at_ms},
          {"system_prompt_digest", s.system_prompt_digest},
          {"history_window", s.history_window},
          {"window_seconds", s.window_seconds}};
}

inline SessionInfo session_info_from_json(const nlohmann::json& j) {
  SessionInfo s;
  s.session_id = j.at("session_id").get<std::string>();
  s.user_label = j.value("user_label", std::string());
  s.created_at_ms = j.value("created_at", std::int64_t{0});
  s.system_prompt_digest = j.value("system_prompt_digest", std::string());
  s.history_window = j.value("history_window", std::size_t{3});
  s.window_seconds = j.value("window_seconds", 3.0);
  return s;
}

inline nlohmann::json to_json_value(const ConversationLog& log) {
  nlohmann::json turns = nlohmann::json::array();
  for (const auto& t : log.turns) turns.push_back(to_json_value(t));
  nlohmann::json affect = nlohmann::json::array();
  for (const auto& s : log.affect) affect.push_back(to_json_value(s));
  return {{"session", to_json_value(log.session)}, {"turns", turns}, {"affect", affect}};
}

/// Appends a successful turn as a user/assistant pair. Timestamps are
/// clamped so an injected clock that steps backwards cannot break ordering.
inline void append_exchange(ConversationHistory& h, const ChatTurn& t) {
  std::int64_t user_ts = h.empty() ? t.arrival_ms : std::max(t.arrival_ms, h.turns().back().timestamp_ms);
  h.append({Speaker::user, t.user_text, t.affective_context, user_ts});
  h.append({Speaker::assistant, t.answer_text, std::nullopt, std::max(t.timestamp_ms, user_ts)});
}

/// History as the service sees it before turn `index`: every earlier
/// successful exchange.
inline ConversationHistory history_before(const ConversationLog& log, std::size_t index) {
  ConversationHistory h;
  for (std::size_t i = 0; i < index && i < log.turns.size(); ++i) {
    const ChatTurn& t = log.turns[i];
    if (!t.ok) continue;
    append_exchange(h, t);
  }
  return h;
}

/// Re-renders turn `index` from logged inputs only.
inline RenderedQuery rerender_turn(const ConversationLog& log, std::size_t index, const std::string& system_block) {
  const ChatTurn& t = log.turns.at(index);
  return compose_query(system_block, t.affective_context, history_before(log, index), t.user_text,
                       log.session.history_window);
}

/// Aggregation replayed from the logged affect stream at the turn's arrival.
inline std::optional<AffectiveContext> replay_affect(const ConversationLog& log, std::size_t index) {
  const ChatTurn& t = log.turns.at(index);
  std::size_t n = std::min(t.affect_seq, log.affect.size());
  EpqConfig cfg;
  cfg.window_seconds = log.session.window_seconds;
  return aggregate_window(std::span<const EmotionSnapshot>(log.affect.data(), n), t.arrival_ms, cfg);
}

inline std::string timeline_csv(const ConversationLog& log) {
  struct Row {
    std::int64_t ts;
    int kind;  // 0 sample, 1 answer
    std::string text;
  };
  std::vector<Row> rows;
  for (const auto& s : log.affect) {
    rows.push_back({s.timestamp_ms, 0,
                    std::to_string(s.timestamp_ms) + ",sample," + std::string(label(s.emotion)) + "," +
                        format_real(s.intensity) + ","});
  }
  for (const auto& t : log.turns) {
    if (!t.ok) continue;
    rows.push_back({t.timestamp_ms, 1, std::to_string(t.timestamp_ms) + ",answer,,," + std::to_string(t.turn_id)});
  }
  std::stable_sort(rows.begin(), rows.end(),
                   [](const Row& a, const Row& b) { return a.ts != b.ts ? a.ts < b.ts : a.kind < b.kind; });
  std::string out = "timestamp,kind,emotion,intensity,turn_id\n";
  for (const auto& r : rows) out += r.text + "\n";
  return out;
}

inline ConversationLog load_log(const std::filesystem::path& session_dir) {
  auto read_lines = [](const std::filesystem::path& p) {
    std::vector<nlohmann::json> out;
    std::ifstream in(p);
    std::string line;
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      auto j = nlohmann::json::parse(line, nullptr, false);
      if (j.is_discarded()) throw Error(ErrorCode::schema_violation, "corrupt log line in " + p.string());
      out.push_back(std::move(j));
    }
    return out;
  };
  std::ifstream meta(session_dir / "session.json");
  if (!meta) throw Error(ErrorCode::unknown_session, "no session log at " + session_dir.string());
  ConversationLog log;
  log.session = session_info_from_json(nlohmann::json::parse(meta));
  for (const auto& j : read_lines(session_dir / "affect.jsonl")) log.affect.push_back(snapshot_from_json(j));
  for (const auto& j : read_lines(session_dir / "turns.jsonl")) log.turns.push_back(chat_turn_from_json(j));
  return log;
}

enum class SensorState { disconnected, connected, streaming };

constexpr std::string_view to_string(SensorState s) {
  switch (s) {
    case SensorState::disconnected: return "disconnected";
    case SensorState::connected: return "connected";
    case SensorState::streaming: return "streaming";
  }
  return "";
}

struct SensorStatus {
  SensorState state = SensorState::disconnected;
  std::optional<EmotionSnapshot> live_affect;
  IngestStats stats;
};

struct ServiceConfig {
  /// Empty disables persistence.
  std::filesystem::path log_dir;
  EpqConfig epq;
  std::size_t history_window = 3;
  IngestOptions ingest;
};

class ConversationService {
 public:
  using Clock = std::function<std::int64_t()>;

  ConversationService(SystemPromptTemplate prompt, std::shared_ptr<ChatBackend> backend, ServiceConfig config,
                      Clock clock = wall_clock_ms)
      : system_prompt_(render_system_prompt(prompt)),
        backend_(std::move(backend)),
        config_(std::move(config)),
        clock_(std::move(clock)) {
    if (!(config_.epq.window_seconds > 0)) throw Error(ErrorCode::invalid_argument, "window_seconds must be > 0");
    if (!config_.log_dir.empty()) std::filesystem::create_directories(config_.log_dir);
  }

  const std::string& system_prompt() const { return system_prompt_; }
  const ServiceConfig& config() const { return config_; }

  SessionInfo create_session(const std::string& user_label) {
    auto s = std::make_shared<Session>(config_.epq.max_queue_len);
    s->info.user_label = user_label;
    s->info.created_at_ms = clock_();
    s->info.system_prompt_digest = sha256_hex(system_prompt_);
    s->info.history_window = config_.history_window;
    s->info.window_seconds = config_.epq.window_seconds;
    {
      std::unique_lock lock(sessions_mutex_);
      do {
        s->info.session_id = new_id();
      } while (sessions_.count(s->info.session_id) != 0);
      sessions_[s->info.session_id] = s;
    }
    if (!config_.log_dir.empty()) {
      auto dir = config_.log_dir / s->info.session_id;
      std::filesystem::create_directories(dir);
      std::ofstream(dir / "session.json") << to_json_value(s->info).dump() << "\n";
      s->affect_out.open(dir / "affect.jsonl", std::ios::app);
      s->turns_out.open(dir / "turns.jsonl", std::ios::app);
    }
    return s->info;
  }

  void post_emotion(const std::string& session_id, const nlohmann::json& payload) {
    post_emotion(session_id, snapshot_from_json(payload));
  }

  void post_emotion(const std::string& session_id, const EmotionSnapshot& s) {
    if (!is_valid(s)) throw Error(ErrorCode::schema_violation, "snapshot values out of range");
    auto session = find(session_id);
    std::lock_guard lock(session->data_mutex);
    session->epq.push(s);
    session->affect.push_back(s);
    if (session->affect_out.is_open()) {
      session->affect_out << to_json_value(s).dump() << "\n";
      session->affect_out.flush();
    }
  }

  /// Runs one exchange. Backend failures come back as a turn with ok=false
  /// (and are logged); validation failures throw and log nothing.
  ChatTurn post_chat(const std::string& session_id, const std::string& user_text) {
    auto session = find(session_id);
    if (detail::is_blank(user_text)) throw Error(ErrorCode::empty_user_text, "user text is empty");
    std::lock_guard turn_lock(session->chat_mutex);

    ChatTurn turn;
    ConversationHistory history;
    {
      std::lock_guard lock(session->data_mutex);
      turn.arrival_ms = clock_();
      turn.affect_seq = session->affect.size();
      turn.affective_context = session->epq.aggregate(turn.arrival_ms, config_.epq);
      turn.turn_id = session->next_turn_id++;
      history = session->history;
    }
    turn.user_text = user_text;
    turn.history_len = history.size();
    RenderedQuery query = compose_query(system_prompt_, turn.affective_context, history, user_text,
                                        config_.history_window);
    turn.rendered_query_digest = query.digest();
    try {
      turn.metrics = backend_->complete(query.to_request());
      turn.answer_text = turn.metrics.answer_text;
      turn.reasoning_text = turn.metrics.reasoning_text;
    } catch (const Error& e) {
      turn.ok = false;
      turn.error = e.what();
    } catch (const std::exception& e) {
      turn.ok = false;
      turn.error = std::string("backend-error: ") + e.what();
    }
    turn.timestamp_ms = std::max(clock_(), turn.arrival_ms);

    std::lock_guard lock(session->data_mutex);
    if (turn.ok) append_exchange(session->history, turn);
    session->turns.push_back(turn);
    if (session->turns_out.is_open()) {
      session->turns_out << to_json_value(turn).dump() << "\n";
      session->turns_out.flush();
    }
    return turn;
  }

  ConversationLog get_log(const std::string& session_id) const {
    auto session = find(session_id);
    std::lock_guard lock(session->data_mutex);
    return {session->info, session->turns, session->affect};
  }

  std::string export_timeline(const std::string& session_id) const { return timeline_csv(get_log(session_id)); }

  std::vector<SessionInfo> sessions() const {
    std::shared_lock lock(sessions_mutex_);
    std::vector<SessionInfo> out;
    for (const auto& [_, s] : sessions_) out.push_back(s->info);
    return out;
  }

  /// Sensor link state machine: disconnected <-> connected <-> streaming.
  /// Snapshots from the linked endpoint are posted to the session's queue.
  SensorStatus sensor_action(const std::string& session_id, std::string_view action,
                             const net::Endpoint& endpoint = {}) {
    auto session = find(session_id);
    std::lock_guard lock(session->sensor_mutex);
    auto& link = session->sensor;
    auto illegal = [&]() {
      throw Error(ErrorCode::invalid_argument, "cannot " + std::string(action) + " while " +
                                                   std::string(to_string(link.state)));
    };
    if (action == "connect") {
      if (link.state != SensorState::disconnected) illegal();
      IngestOptions opts = config_.ingest;
      std::weak_ptr<Session> weak = session;
      opts.on_snapshot = [this, id = session_id, weak](const EmotionSnapshot& s) {
        if (auto locked = weak.lock()) {
          {
            std::lock_guard l(locked->live_mutex);
            locked->live = s;
          }
          post_emotion(id, s);
        }
      };
      link.ingest = IngestSession::connect(endpoint, std::move(opts));
      link.state = SensorState::connected;
    } else if (action == "start") {
      if (link.state != SensorState::connected) illegal();
      link.ingest->send_command(Command::start_analysis);
      link.state = SensorState::streaming;
    } else if (action == "stop") {
      if (link.state != SensorState::streaming) illegal();
      link.ingest->send_command(Command::stop_analysis);
      link.state = SensorState::connected;
    } else if (action == "disconnect") {
      if (link.state == SensorState::disconnected) illegal();
      if (link.state == SensorState::streaming) {
        try {
          link.ingest->send_command(Command::stop_analysis);
        } catch (const Error&) {
        }
      }
      link.stats_at_close = link.ingest->stats();
      link.ingest->close();
      link.ingest.reset();
      link.state = SensorState::disconnected;
    } else {
      throw Error(ErrorCode::invalid_argument, "unknown sensor action '" + std::string(action) + "'");
    }
    return sensor_status_locked(*session);
  }

  SensorStatus sensor_status(const std::string& session_id) const {
    auto session = find(session_id);
    std::lock_guard lock(session->sensor_mutex);
    return sensor_status_locked(*session);
  }

 private:
  struct SensorLink {
    SensorState state = SensorState::disconnected;
    std::unique_ptr<IngestSession> ingest;
    IngestStats stats_at_close;
  };

  struct Session {
    explicit Session(std::size_t max_len) : epq(max_len) {}
    SessionInfo info;
    EmotionQueue epq;
    mutable std::mutex data_mutex;
    std::mutex chat_mutex;
    ConversationHistory history;
    std::vector<ChatTurn> turns;
    std::vector<EmotionSnapshot> affect;
    std::int64_t next_turn_id = 1;
    std::ofstream affect_out;
    std::ofstream turns_out;
    mutable std::mutex sensor_mutex;
    SensorLink sensor;
    mutable std::mutex live_mutex;
    std::optional<EmotionSnapshot> live;
  };

  static SensorStatus sensor_status_locked(const Session& s) {
    SensorStatus st;
    st.state = s.sensor.state;
    st.stats = s.sensor.ingest ? s.sensor.ingest->stats() : s.sensor.stats_at_close;
    std::lock_guard l(s.live_mutex);
    st.live_affect = s.live;
    return st;
  }

  std::shared_ptr<Session> find(const std::string& id) const {
    std::shared_lock lock(sessions_mutex_);
    auto it = sessions_.find(id);
    if (it == sessions_.end()) throw Error(ErrorCode::unknown_session, "no session '" + id + "'");
    return it->second;
  }

  std::string new_id() {
    static constexpr char kHex[] = "0123456789abcdef";
    std::uint64_t r = rng_();
    std::string id = "s";
    for (int i = 0; i < 16; ++i) id += kHex[(r >> (4 * i)) & 0xf];
    return id;
  }

  std::string system_prompt_;
  std::shared_ptr<ChatBackend> backend_;
  ServiceConfig config_;
  Clock clock_;
  mutable std::shared_mutex sessions_mutex_;
  std::map<std::string, std::shared_ptr<Session>> sessions_;
  std::mt19937_64 rng_{std::random_device{}()};
};

}  // namespace empathic
