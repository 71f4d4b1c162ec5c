#pragma once

#include <chrono>
#include <memory>
#include <string>

#include <httplib.h>
#include <json.hpp>

#include "empathic/llm_client.hpp"

namespace empathic {

/// Chat backend over HTTP (ollama or openai dialect).
class HttpBackend : public ChatBackend {
 public:
  explicit HttpBackend(BackendConfig cfg) : cfg_(std::move(cfg)) {
    validate(cfg_);
    auto scheme_end = cfg_.base_url.find("://");
    auto host_start = scheme_end == std::string::npos ? 0 : scheme_end + 3;
    auto path_start = cfg_.base_url.find('/', host_start);
    origin_ = cfg_.base_url.substr(0, path_start);
    if (path_start != std::string::npos) prefix_ = cfg_.base_url.substr(path_start);
    while (!prefix_.empty() && prefix_.back() == '/') prefix_.pop_back();
  }

  const BackendConfig& config() const { return cfg_; }
  std::string model_name() const override { return cfg_.model_name; }

  CompletionResult complete(const ChatRequest& request) override {
    httplib::Client client(origin_);
    if (!client.is_valid()) throw Error(ErrorCode::backend_error, "invalid base_url " + cfg_.base_url);
    auto timeout = std::chrono::duration_cast<std::chrono::microseconds>(
        std::chrono::duration<double>(cfg_.request_timeout_s));
    client.set_connection_timeout(timeout);
    client.set_read_timeout(timeout);
    client.set_write_timeout(timeout);

    std::string body = build_request_body(cfg_, request).dump();
    auto start = std::chrono::steady_clock::now();
    auto res = client.Post(prefix_ + request_path(cfg_), body, "application/json");
    std::chrono::duration<double> wall = std::chrono::steady_clock::now() - start;
    if (!res) {
      auto err = res.error();
      if (err == httplib::Error::ConnectionTimeout ||
          (err == httplib::Error::Read && wall.count() >= 0.95 * cfg_.request_timeout_s)) {
        throw Error(ErrorCode::timeout, "no response within " + format_real(cfg_.request_timeout_s) + " s");
      }
      throw Error(ErrorCode::backend_error, cfg_.base_url + ": " + httplib::to_string(err));
    }
    if (res->status < 200 || res->status >= 300) {
      throw Error(ErrorCode::backend_error, "HTTP " + std::to_string(res->status) + ": " + res->body.substr(0, 200));
    }
    return parse_response_body(cfg_, res->body, wall.count());
  }

 private:
  BackendConfig cfg_;
  std::string origin_;
  std::string prefix_;
};

inline CompletionResult complete(const BackendConfig& cfg, const RenderedQuery& query) {
  return HttpBackend(cfg).complete(query.to_request());
}

// Backend entry (backends file / server config):
//   {"name": "llama3.2", "type": "ollama" | "openai" | "stub",
//    "base_url": ..., "model": ..., "temperature": ..., "request_timeout_s": ...,
//    "answers": [...], "cycle": b} // stub only: strings or ScriptedReply objects
inline std::unique_ptr<ChatBackend> make_backend(const nlohmann::json& j, bool env_overrides = false) {
  std::string type = j.value("type", std::string("ollama"));
  std::string name = j.value("name", j.value("model", type));
  if (type == "stub") {
    std::vector<ScriptedReply> script;
    for (const auto& a : j.value("answers", nlohmann::json::array())) script.push_back(scripted_reply_from_json(a));
    return std::make_unique<StubBackend>(std::move(script), name, j.value("cycle", false));
  }
  BackendConfig cfg = backend_config_from_json(j);
  cfg.dialect = type;
  if (env_overrides) apply_env_overrides(cfg);
  return std::make_unique<HttpBackend>(std::move(cfg));
}

}  // namespace empathic
