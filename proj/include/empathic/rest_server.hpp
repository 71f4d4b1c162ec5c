#pragma once

// HTTP binding of ConversationService.
//
//   POST /api/sessions                      {"user_label"?}          -> 201 session
//   GET  /api/sessions                                               -> 200 [session]
//   POST /api/sessions/{id}/emotions        snapshot                 -> 202
//   POST /api/sessions/{id}/chat            {"text"}                 -> 200 turn | 502 failed turn
//   GET  /api/sessions/{id}/log                                      -> 200 log
//   GET  /api/sessions/{id}/timeline                                 -> 200 text/csv
//   POST /api/sessions/{id}/sensor          {"action", "host"?, "port"?} -> 200 status
//   GET  /api/sessions/{id}/sensor                                   -> 200 status
//
// Errors are {"error": <code>, "message": <text>} with 400 (invalid input),
// 404 (unknown session), 409 (sensor action not valid in the current state)
// or 502 (backend or sensor endpoint failure).

#include <memory>
#include <string>
#include <thread>

#include <httplib.h>
#include <json.hpp>

#include "empathic/conversation_service.hpp"

namespace empathic {

inline int http_status_for(ErrorCode code) {
  switch (code) {
    case ErrorCode::unknown_session: return 404;
    case ErrorCode::schema_violation:
    case ErrorCode::empty_user_text:
    case ErrorCode::out_of_range:
    case ErrorCode::invalid_argument: return 400;
    default: return 502;
  }
}

inline nlohmann::json to_json_value(const SensorStatus& s) {
  nlohmann::json live = nullptr;
  if (s.live_affect) live = to_json_value(*s.live_affect);
  return {{"state", std::string(to_string(s.state))},
          {"live_affect", live},
          {"frames_parsed", s.stats.frames_parsed},
          {"skipped_frames", s.stats.frames_skipped},
          {"snapshots", s.stats.snapshots_emitted}};
}

namespace detail {

inline void send_json(httplib::Response& res, int status, const nlohmann::json& body) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

inline void send_error(httplib::Response& res, int status, ErrorCode code, const std::string& message) {
  send_json(res, status, {{"error", std::string(to_string(code))}, {"message", message}});
}

inline nlohmann::json parse_body(const httplib::Request& req) {
  auto j = nlohmann::json::parse(req.body, nullptr, false);
  if (j.is_discarded()) throw Error(ErrorCode::schema_violation, "request body is not JSON");
  return j;
}

template <typename F>
auto guarded(F&& f) {
  return [f = std::forward<F>(f)](const httplib::Request& req, httplib::Response& res) {
    try {
      f(req, res);
    } catch (const Error& e) {
      send_error(res, http_status_for(e.code()), e.code(), e.what());
    } catch (const nlohmann::json::exception& e) {
      send_error(res, 400, ErrorCode::schema_violation, e.what());
    }
  };
}

}  // namespace detail

inline void register_routes(httplib::Server& server, ConversationService& service) {
  using detail::guarded;
  using detail::send_json;
  const std::string id = R"(/api/sessions/([A-Za-z0-9_-]+))";

  server.set_default_headers({{"Access-Control-Allow-Origin", "*"},
                              {"Access-Control-Allow-Headers", "Content-Type"},
                              {"Access-Control-Allow-Methods", "GET, POST, OPTIONS"}});
  server.Options(R"(/api/.*)", [](const httplib::Request&, httplib::Response& res) { res.status = 204; });

  server.Post("/api/sessions", guarded([&](const httplib::Request& req, httplib::Response& res) {
                std::string label;
                if (!req.body.empty()) {
                  auto j = detail::parse_body(req);
                  if (!j.is_object()) throw Error(ErrorCode::schema_violation, "expected an object");
                  label = j.value("user_label", std::string());
                }
                send_json(res, 201, to_json_value(service.create_session(label)));
              }));

  server.Get("/api/sessions", guarded([&](const httplib::Request&, httplib::Response& res) {
               nlohmann::json out = nlohmann::json::array();
               for (const auto& s : service.sessions()) out.push_back(to_json_value(s));
               send_json(res, 200, out);
             }));

  server.Post(id + "/emotions", guarded([&](const httplib::Request& req, httplib::Response& res) {
                service.post_emotion(req.matches[1], detail::parse_body(req));
                send_json(res, 202, {{"accepted", true}});
              }));

  server.Post(id + "/chat", guarded([&](const httplib::Request& req, httplib::Response& res) {
                auto j = detail::parse_body(req);
                if (!j.is_object() || !j.contains("text") || !j["text"].is_string()) {
                  throw Error(ErrorCode::schema_violation, "expected {\"text\": string}");
                }
                ChatTurn turn = service.post_chat(req.matches[1], j["text"].get<std::string>());
                send_json(res, turn.ok ? 200 : 502, to_json_value(turn));
              }));

  server.Get(id + "/log", guarded([&](const httplib::Request& req, httplib::Response& res) {
               send_json(res, 200, to_json_value(service.get_log(req.matches[1])));
             }));

  server.Get(id + "/timeline", guarded([&](const httplib::Request& req, httplib::Response& res) {
               res.set_content(service.export_timeline(req.matches[1]), "text/csv");
             }));

  server.Get(id + "/sensor", guarded([&](const httplib::Request& req, httplib::Response& res) {
               send_json(res, 200, to_json_value(service.sensor_status(req.matches[1])));
             }));

  server.Post(id + "/sensor", guarded([&](const httplib::Request& req, httplib::Response& res) {
                auto j = detail::parse_body(req);
                std::string action = j.is_object() ? j.value("action", std::string()) : std::string();
                if (action != "connect" && action != "disconnect" && action != "start" && action != "stop") {
                  throw Error(ErrorCode::schema_violation, "action must be connect, disconnect, start or stop");
                }
                net::Endpoint ep{j.value("host", std::string("127.0.0.1")), j.value("port", std::uint16_t{9000})};
                try {
                  send_json(res, 200, to_json_value(service.sensor_action(req.matches[1], action, ep)));
                } catch (const Error& e) {
                  if (e.code() != ErrorCode::invalid_argument) throw;
                  detail::send_error(res, 409, e.code(), e.what());
                }
              }));
}

/// Owns an httplib server on a background thread.
class RestServer {
 public:
  RestServer(ConversationService& service, const std::string& host, int port) {
    register_routes(server_, service);
    if (port == 0) {
      port_ = server_.bind_to_any_port(host);
    } else {
      port_ = server_.bind_to_port(host, port) ? port : -1;
    }
    if (port_ <= 0) throw Error(ErrorCode::bind_failure, "cannot bind " + host + ":" + std::to_string(port));
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
  }

  RestServer(const RestServer&) = delete;
  RestServer& operator=(const RestServer&) = delete;

  ~RestServer() { stop(); }

  int port() const { return port_; }

  void stop() {
    server_.stop();
    if (thread_.joinable()) thread_.join();
  }

 private:
  httplib::Server server_;
  int port_ = -1;
  std::thread thread_;
};

}  // namespace empathic
