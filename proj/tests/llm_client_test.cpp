#include <gtest/gtest.h>

#include <thread>

#include "empathic/http_backend.hpp"
#include "empathic/net.hpp"

using namespace empathic;
using namespace std::chrono_literals;

namespace {

ErrorCode code_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "no error thrown";
  return ErrorCode::io_error;
}

// Local HTTP server standing in for a model backend.
class FakeServer {
 public:
  FakeServer() {
    port_ = server_.bind_to_any_port("127.0.0.1");
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
  }
  ~FakeServer() {
    server_.stop();
    thread_.join();
  }
  httplib::Server& server() { return server_; }
  std::string url() const { return "http://127.0.0.1:" + std::to_string(port_); }

 private:
  httplib::Server server_;
  int port_ = 0;
  std::thread thread_;
};

BackendConfig config(const std::string& url, const std::string& dialect) {
  BackendConfig c;
  c.base_url = url;
  c.model_name = "test-model";
  c.dialect = dialect;
  c.request_timeout_s = 5;
  return c;
}

}  // namespace

TEST(Metrics, TokensPerSecond) {
  EXPECT_DOUBLE_EQ(tokens_per_second(100, 4.0), 25.0);
  EXPECT_NEAR(tokens_per_second(636, 23.31), 27.28, 0.01);
  EXPECT_EQ(tokens_per_second(10, 0.0), 0.0);
}

TEST(SplitReasoning, DelimitedBlock) {
  auto [answer, reasoning] = split_reasoning("<think>\nuser is sad\n</think>\n\nI'm here for you.", "<think>", "</think>");
  EXPECT_EQ(answer, "I'm here for you.");
  EXPECT_EQ(reasoning, "user is sad");
  auto [plain, none] = split_reasoning("  Just an answer. ", "<think>", "</think>");
  EXPECT_EQ(plain, "Just an answer.");
  EXPECT_EQ(none, "");
  auto [unclosed, r2] = split_reasoning("<think> never closed", "<think>", "</think>");
  EXPECT_EQ(unclosed, "<think> never closed");
  EXPECT_EQ(r2, "");
}

TEST(StubBackend, RepliesInOrderAndExhausts) {
  StubBackend stub({{"first", "", 100, 4.0}, {"<ignored>", "because", 636, 23.31}});
  auto a = stub.complete({"sys", "u1"});
  EXPECT_EQ(a.answer_text, "first");
  EXPECT_DOUBLE_EQ(a.tps, 25.0);
  auto b = stub.complete({"sys", "u2"});
  EXPECT_EQ(b.reasoning_text, "because");
  EXPECT_NEAR(b.tps, 27.29, 0.01);
  EXPECT_GE(b.wall_time_s, 23.31);
  EXPECT_EQ(code_of([&] { stub.complete({"sys", "u3"}); }), ErrorCode::script_exhausted);
  ASSERT_EQ(stub.requests().size(), 3u);
  EXPECT_EQ(stub.requests()[1].user, "u2");

  StubBackend empty({});
  EXPECT_EQ(code_of([&] { empty.complete({"s", "u"}); }), ErrorCode::script_exhausted);
}

TEST(StubBackend, DefaultTokenCountIsWordCount) {
  StubBackend stub(std::vector<ScriptedReply>{{"three word answer", "two words"}});
  EXPECT_EQ(stub.complete({"s", "u"}).output_tokens, 5);
}

TEST(StubBackend, ScriptedFailure) {
  ScriptedReply fail;
  fail.error = ErrorCode::timeout;
  StubBackend stub({fail});
  EXPECT_EQ(code_of([&] { stub.complete({"s", "u"}); }), ErrorCode::timeout);
}

TEST(ResponseBody, OllamaDialect) {
  auto cfg = config("http://x", "ollama");
  auto r = parse_response_body(
      cfg, R"({"message":{"role":"assistant","content":"<think>hmm</think>Hello there"},"eval_count":40,"eval_duration":2000000000})",
      2.5);
  EXPECT_EQ(r.answer_text, "Hello there");
  EXPECT_EQ(r.reasoning_text, "hmm");
  EXPECT_EQ(r.output_tokens, 40);
  EXPECT_DOUBLE_EQ(r.generation_time_s, 2.0);
  EXPECT_DOUBLE_EQ(r.tps, 20.0);
  EXPECT_DOUBLE_EQ(r.wall_time_s, 2.5);

  auto thinking = parse_response_body(cfg, R"({"message":{"content":"Hi","thinking":"plan"}})", 1.0);
  EXPECT_EQ(thinking.reasoning_text, "plan");
  EXPECT_EQ(thinking.output_tokens, 2);
  EXPECT_DOUBLE_EQ(thinking.generation_time_s, 1.0);
}

TEST(ResponseBody, OpenAiDialect) {
  auto cfg = config("http://x", "openai");
  auto r = parse_response_body(
      cfg, R"({"choices":[{"message":{"content":"Sure.","reasoning_content":"why"}}],"usage":{"completion_tokens":12}})",
      3.0);
  EXPECT_EQ(r.answer_text, "Sure.");
  EXPECT_EQ(r.reasoning_text, "why");
  EXPECT_EQ(r.output_tokens, 12);
  EXPECT_DOUBLE_EQ(r.tps, 4.0);
}

TEST(ResponseBody, MalformedBodies) {
  auto cfg = config("http://x", "ollama");
  EXPECT_EQ(code_of([&] { parse_response_body(cfg, "not json", 1); }), ErrorCode::malformed_response);
  EXPECT_EQ(code_of([&] { parse_response_body(cfg, R"({"message":{}})", 1); }), ErrorCode::malformed_response);
  EXPECT_EQ(code_of([&] { parse_response_body(cfg, "[]", 1); }), ErrorCode::malformed_response);
}

TEST(RequestBody, CarriesBothMessages) {
  auto o = build_request_body(config("http://x", "ollama"), {"SYS", "USER"});
  EXPECT_EQ(o["model"], "test-model");
  EXPECT_EQ(o["messages"][0]["role"], "system");
  EXPECT_EQ(o["messages"][1]["content"], "USER");
  EXPECT_EQ(o["stream"], false);
  EXPECT_EQ(o["options"]["temperature"], 0.7);
  auto a = build_request_body(config("http://x", "openai"), {"SYS", "USER"});
  EXPECT_EQ(a["temperature"], 0.7);
}

TEST(HttpBackend, OllamaRoundTrip) {
  FakeServer fake;
  std::string seen;
  fake.server().Post("/api/chat", [&](const httplib::Request& req, httplib::Response& res) {
    seen = req.body;
    res.set_content(R"({"message":{"content":"Ciao!"},"eval_count":3,"eval_duration":500000000})",
                    "application/json");
  });
  HttpBackend backend(config(fake.url(), "ollama"));
  auto r = backend.complete({"system text", "user text"});
  EXPECT_EQ(r.answer_text, "Ciao!");
  EXPECT_DOUBLE_EQ(r.tps, 6.0);
  EXPECT_GT(r.wall_time_s, 0.0);
  auto body = nlohmann::json::parse(seen);
  EXPECT_EQ(body["messages"][0]["content"], "system text");
}

TEST(HttpBackend, OpenAiWithPathPrefix) {
  FakeServer fake;
  fake.server().Post("/proxy/v1/chat/completions", [](const httplib::Request&, httplib::Response& res) {
    res.set_content(R"({"choices":[{"message":{"content":"ok"}}],"usage":{"completion_tokens":1}})", "application/json");
  });
  HttpBackend backend(config(fake.url() + "/proxy/", "openai"));
  EXPECT_EQ(backend.complete({"s", "u"}).answer_text, "ok");
}

TEST(HttpBackend, FailureMapping) {
  FakeServer fake;
  fake.server().Post("/api/chat", [](const httplib::Request& req, httplib::Response& res) {
    if (req.body.find("slow") != std::string::npos) {
      std::this_thread::sleep_for(1500ms);
      res.set_content("{}", "application/json");
    } else if (req.body.find("garbage") != std::string::npos) {
      res.set_content("<html>", "text/html");
    } else {
      res.status = 500;
      res.set_content("boom", "text/plain");
    }
  });
  auto cfg = config(fake.url(), "ollama");
  EXPECT_EQ(code_of([&] { HttpBackend(cfg).complete({"s", "fail"}); }), ErrorCode::backend_error);
  EXPECT_EQ(code_of([&] { HttpBackend(cfg).complete({"s", "garbage"}); }), ErrorCode::malformed_response);
  cfg.request_timeout_s = 0.5;
  EXPECT_EQ(code_of([&] { HttpBackend(cfg).complete({"s", "slow"}); }), ErrorCode::timeout);
}

TEST(HttpBackend, UnreachableIsBackendError) {
  std::uint16_t port;
  {
    auto probe = net::listen_tcp({"127.0.0.1", 0});
    port = net::local_port(probe);
  }
  auto cfg = config("http://127.0.0.1:" + std::to_string(port), "ollama");
  cfg.request_timeout_s = 2;
  EXPECT_EQ(code_of([&] { HttpBackend(cfg).complete({"s", "u"}); }), ErrorCode::backend_error);
}

TEST(BackendConfig, ValidationAndEnvOverrides) {
  auto cfg = config("http://x", "grpc");
  EXPECT_EQ(code_of([&] { validate(cfg); }), ErrorCode::invalid_argument);
  cfg.dialect = "ollama";
  cfg.request_timeout_s = 0;
  EXPECT_EQ(code_of([&] { validate(cfg); }), ErrorCode::invalid_argument);

  ::setenv("EMPATHIC_LLM_MODEL", "override-model", 1);
  ::setenv("EMPATHIC_LLM_TIMEOUT", "7.5", 1);
  BackendConfig c;
  apply_env_overrides(c);
  EXPECT_EQ(c.model_name, "override-model");
  EXPECT_EQ(c.request_timeout_s, 7.5);
  ::unsetenv("EMPATHIC_LLM_MODEL");
  ::unsetenv("EMPATHIC_LLM_TIMEOUT");
}

TEST(MakeBackend, StubAndHttpEntries) {
  auto stub = make_backend({{"type", "stub"}, {"name", "s1"}, {"answers", {"a", {{"answer", "b"}, {"output_tokens", 4}}}}});
  EXPECT_EQ(stub->model_name(), "s1");
  EXPECT_EQ(stub->complete({"", "x"}).answer_text, "a");
  EXPECT_EQ(stub->complete({"", "x"}).output_tokens, 4);
  auto http = make_backend({{"type", "openai"}, {"model", "qwen2.5:32b"}, {"base_url", "http://127.0.0.1:1"}});
  EXPECT_EQ(http->model_name(), "qwen2.5:32b");
}

TEST(StubBackend, CycleRestartsScript) {
  auto stub = make_backend({{"type", "stub"}, {"cycle", true}, {"answers", {"x", "y"}}});
  EXPECT_EQ(stub->complete({"", "1"}).answer_text, "x");
  EXPECT_EQ(stub->complete({"", "2"}).answer_text, "y");
  EXPECT_EQ(stub->complete({"", "3"}).answer_text, "x");
}
