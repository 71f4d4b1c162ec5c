#pragma once

// Chat-completion backends. Two HTTP dialects are understood:
//
//   ollama   POST {base}/api/chat
//            {"model": M, "messages": [{"role":"system",...},{"role":"user",...}],
//             "stream": false, "options": {"temperature": T}}
//            -> {"message": {"content": "...", "thinking": "..."?},
//                "eval_count": N, "eval_duration": <ns>, ...}
//   openai   POST {base}/v1/chat/completions
//            {"model": M, "messages": [...], "temperature": T, "stream": false}
//            -> {"choices": [{"message": {"content": "...", "reasoning_content": "..."?}}],
//                "usage": {"completion_tokens": N}}
//
// Reasoning is taken from the structured field when present, otherwise from a
// delimited block (default <think>...</think>) at the start of the content.

#include <chrono>
#include <cstdlib>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "empathic/error.hpp"
#include "empathic/prompt_builder.hpp"

namespace empathic {

struct BackendConfig {
  std::string base_url = "http://127.0.0.1:11434";
  std::string model_name;
  double temperature = 0.7;
  double request_timeout_s = 120.0;
  std::string dialect = "ollama";
  std::string reasoning_open = "<think>";
  std::string reasoning_close = "</think>";
};

inline void validate(const BackendConfig& cfg) {
  if (!(cfg.request_timeout_s > 0.0)) throw Error(ErrorCode::invalid_argument, "request_timeout must be > 0");
  if (!(cfg.temperature >= 0.0)) throw Error(ErrorCode::invalid_argument, "temperature must be >= 0");
  if (cfg.dialect != "ollama" && cfg.dialect != "openai") {
    throw Error(ErrorCode::invalid_argument, "unknown dialect '" + cfg.dialect + "'");
  }
}

struct CompletionResult {
  std::string answer_text;
  std::string reasoning_text;
  std::int64_t output_tokens = 0;
  double wall_time_s = 0.0;
  double generation_time_s = 0.0;
  double tps = 0.0;
};

inline double tokens_per_second(std::int64_t tokens, double generation_time_s) {
  return generation_time_s > 0.0 ? static_cast<double>(tokens) / generation_time_s : 0.0;
}

inline nlohmann::json to_json_value(const CompletionResult& r) {
  return nlohmann::json{{"output_tokens", r.output_tokens},
                        {"wall_time_s", r.wall_time_s},
                        {"generation_time_s", r.generation_time_s},
                        {"tps", r.tps}};
}

/// Splits a leading `open ... close` block off `content`. Without a complete
/// block the whole content is the answer.
inline std::pair<std::string, std::string> split_reasoning(std::string_view content, std::string_view open,
                                                           std::string_view close) {
  auto trim = [](std::string_view s) {
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
    return std::string(s);
  };
  if (open.empty() || close.empty()) return {trim(content), {}};
  std::string_view body = content;
  while (!body.empty() && std::isspace(static_cast<unsigned char>(body.front()))) body.remove_prefix(1);
  if (body.substr(0, open.size()) != open) return {trim(content), {}};
  auto end = body.find(close, open.size());
  if (end == std::string_view::npos) return {trim(content), {}};
  std::string reasoning = trim(body.substr(open.size(), end - open.size()));
  return {trim(body.substr(end + close.size())), reasoning};
}

inline std::int64_t count_words(std::string_view text) {
  std::int64_t n = 0;
  bool in_word = false;
  for (char c : text) {
    bool space = std::isspace(static_cast<unsigned char>(c));
    if (!space && !in_word) ++n;
    in_word = !space;
  }
  return n;
}

inline nlohmann::json build_request_body(const BackendConfig& cfg, const ChatRequest& req) {
  nlohmann::json messages = nlohmann::json::array(
      {{{"role", "system"}, {"content", req.system}}, {{"role", "user"}, {"content", req.user}}});
  if (cfg.dialect == "openai") {
    return {{"model", cfg.model_name}, {"messages", messages}, {"temperature", cfg.temperature}, {"stream", false}};
  }
  return {{"model", cfg.model_name},
          {"messages", messages},
          {"stream", false},
          {"options", {{"temperature", cfg.temperature}}}};
}

inline std::string request_path(const BackendConfig& cfg) {
  return cfg.dialect == "openai" ? "/v1/chat/completions" : "/api/chat";
}

/// Interprets a backend response body. `wall_time_s` is the client-side
/// round trip; it stands in for generation time when the backend reports none.
inline CompletionResult parse_response_body(const BackendConfig& cfg, std::string_view body, double wall_time_s) {
  nlohmann::json j = nlohmann::json::parse(body, nullptr, false);
  if (j.is_discarded() || !j.is_object()) throw Error(ErrorCode::malformed_response, "response is not a JSON object");
  CompletionResult r;
  r.wall_time_s = wall_time_s;
  std::string content;
  std::string thinking;
  try {
    if (cfg.dialect == "openai") {
      const auto& msg = j.at("choices").at(0).at("message");
      content = msg.at("content").get<std::string>();
      if (msg.contains("reasoning_content") && msg["reasoning_content"].is_string()) {
        thinking = msg["reasoning_content"].get<std::string>();
      }
      if (j.contains("usage") && j["usage"].contains("completion_tokens")) {
        r.output_tokens = j["usage"]["completion_tokens"].get<std::int64_t>();
      }
    } else {
      const auto& msg = j.at("message");
      content = msg.at("content").get<std::string>();
      if (msg.contains("thinking") && msg["thinking"].is_string()) thinking = msg["thinking"].get<std::string>();
      if (j.contains("eval_count")) r.output_tokens = j["eval_count"].get<std::int64_t>();
      if (j.contains("eval_duration")) r.generation_time_s = j["eval_duration"].get<double>() / 1e9;
    }
  } catch (const nlohmann::json::exception& ex) {
    throw Error(ErrorCode::malformed_response, ex.what());
  }
  if (!thinking.empty()) {
    r.reasoning_text = thinking;
    r.answer_text = split_reasoning(content, "", "").first;
  } else {
    std::tie(r.answer_text, r.reasoning_text) = split_reasoning(content, cfg.reasoning_open, cfg.reasoning_close);
  }
  if (r.output_tokens == 0) r.output_tokens = count_words(r.reasoning_text) + count_words(r.answer_text);
  if (r.generation_time_s <= 0.0) r.generation_time_s = wall_time_s;
  r.tps = tokens_per_second(r.output_tokens, r.generation_time_s);
  return r;
}

class ChatBackend {
 public:
  virtual ~ChatBackend() = default;
  virtual CompletionResult complete(const ChatRequest& request) = 0;
  virtual std::string model_name() const = 0;
};

struct ScriptedReply {
  std::string answer;
  std::string reasoning;
  /// Defaults to the word count of reasoning + answer.
  std::optional<std::int64_t> output_tokens;
  double generation_time_s = 0.0;
  /// When set, the call fails with this error instead of replying.
  std::optional<ErrorCode> error;
};

/// Deterministic in-process backend: replies in script order and records
/// every request it receives. With `cycle` the script restarts when exhausted.
class StubBackend : public ChatBackend {
 public:
  explicit StubBackend(std::vector<ScriptedReply> script, std::string name = "stub", bool cycle = false)
      : script_(std::move(script)), name_(std::move(name)), cycle_(cycle) {}

  CompletionResult complete(const ChatRequest& request) override {
    auto start = std::chrono::steady_clock::now();
    std::lock_guard lock(mutex_);
    requests_.push_back(request);
    if (cycle_ && next_ >= script_.size()) next_ = 0;
    if (next_ >= script_.size()) {
      throw Error(ErrorCode::script_exhausted, "stub script of " + std::to_string(script_.size()) + " replies exhausted");
    }
    const ScriptedReply& reply = script_[next_++];
    if (reply.error) throw Error(*reply.error, "scripted failure");
    CompletionResult r;
    r.answer_text = reply.answer;
    r.reasoning_text = reply.reasoning;
    r.output_tokens = reply.output_tokens.value_or(count_words(reply.reasoning) + count_words(reply.answer));
    r.generation_time_s = reply.generation_time_s;
    r.tps = tokens_per_second(r.output_tokens, r.generation_time_s);
    std::chrono::duration<double> elapsed = std::chrono::steady_clock::now() - start;
    r.wall_time_s = r.generation_time_s + elapsed.count();
    return r;
  }

  std::string model_name() const override { return name_; }

  std::vector<ChatRequest> requests() const {
    std::lock_guard lock(mutex_);
    return requests_;
  }

  std::size_t remaining() const {
    std::lock_guard lock(mutex_);
    return script_.size() - next_;
  }

 private:
  mutable std::mutex mutex_;
  std::vector<ScriptedReply> script_;
  std::size_t next_ = 0;
  std::vector<ChatRequest> requests_;
  std::string name_;
  bool cycle_ = false;
};

/// Backend whose replies are computed by a callback; used for rule-driven
/// stubs that react to the request content.
class CallbackBackend : public ChatBackend {
 public:
  using Fn = std::function<ScriptedReply(const ChatRequest&)>;
  CallbackBackend(Fn fn, std::string name) : fn_(std::move(fn)), name_(std::move(name)) {}

  CompletionResult complete(const ChatRequest& request) override {
    ScriptedReply reply = fn_(request);
    if (reply.error) throw Error(*reply.error, "callback backend failure");
    CompletionResult r;
    r.answer_text = reply.answer;
    r.reasoning_text = reply.reasoning;
    r.output_tokens = reply.output_tokens.value_or(count_words(reply.reasoning) + count_words(reply.answer));
    r.generation_time_s = reply.generation_time_s;
    r.wall_time_s = reply.generation_time_s;
    r.tps = tokens_per_second(r.output_tokens, r.generation_time_s);
    return r;
  }

  std::string model_name() const override { return name_; }

 private:
  Fn fn_;
  std::string name_;
};

inline ScriptedReply scripted_reply_from_json(const nlohmann::json& j) {
  ScriptedReply r;
  if (j.is_string()) {
    r.answer = j.get<std::string>();
    return r;
  }
  r.answer = j.value("answer", std::string());
  r.reasoning = j.value("reasoning", std::string());
  if (j.contains("output_tokens")) r.output_tokens = j["output_tokens"].get<std::int64_t>();
  r.generation_time_s = j.value("generation_time_s", 0.0);
  return r;
}

inline BackendConfig backend_config_from_json(const nlohmann::json& j) {
  BackendConfig c;
  c.base_url = j.value("base_url", c.base_url);
  c.model_name = j.value("model", j.value("model_name", c.model_name));
  c.temperature = j.value("temperature", c.temperature);
  c.request_timeout_s = j.value("request_timeout_s", c.request_timeout_s);
  c.dialect = j.value("dialect", c.dialect);
  c.reasoning_open = j.value("reasoning_open", c.reasoning_open);
  c.reasoning_close = j.value("reasoning_close", c.reasoning_close);
  return c;
}

/// EMPATHIC_LLM_BASE_URL, EMPATHIC_LLM_MODEL, EMPATHIC_LLM_TEMPERATURE and
/// EMPATHIC_LLM_TIMEOUT override the file configuration.
inline void apply_env_overrides(BackendConfig& c) {
  if (const char* v = std::getenv("EMPATHIC_LLM_BASE_URL")) c.base_url = v;
  if (const char* v = std::getenv("EMPATHIC_LLM_MODEL")) c.model_name = v;
  if (const char* v = std::getenv("EMPATHIC_LLM_TEMPERATURE")) c.temperature = std::strtod(v, nullptr);
  if (const char* v = std::getenv("EMPATHIC_LLM_TIMEOUT")) c.request_timeout_s = std::strtod(v, nullptr);
}

}  // namespace empathic
