// empathic: simulator, server, ingest bridge and judge runner.

#include <atomic>
#include <csignal>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <thread>

#include <CLI11.hpp>

#include "empathic/affect_ingest.hpp"
#include "empathic/affect_sim.hpp"
#include "empathic/http_backend.hpp"
#include "empathic/judge.hpp"
#include "empathic/rest_server.hpp"

using namespace empathic;
namespace fs = std::filesystem;

namespace {

std::atomic<bool> g_stop{false};

void on_signal(int) { g_stop = true; }

void wait_for_signal(const std::function<bool()>& done = [] { return false; }) {
  std::signal(SIGINT, on_signal);
  std::signal(SIGTERM, on_signal);
  while (!g_stop && !done()) std::this_thread::sleep_for(std::chrono::milliseconds(100));
}

nlohmann::json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::io_error, "cannot read " + path.string());
  auto j = nlohmann::json::parse(in, nullptr, false);
  if (j.is_discarded()) throw Error(ErrorCode::schema_violation, path.string() + " is not valid JSON");
  return j;
}

fs::path relative_to(const fs::path& base_file, const std::string& p) {
  fs::path path(p);
  return path.is_absolute() ? path : base_file.parent_path() / path;
}

std::vector<std::string> split_csv(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream in(s);
  std::string item;
  while (std::getline(in, item, ',')) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

net::Endpoint parse_endpoint(const std::string& s) {
  auto colon = s.rfind(':');
  if (colon == std::string::npos) throw Error(ErrorCode::invalid_argument, "expected host:port, got '" + s + "'");
  return {s.substr(0, colon), static_cast<std::uint16_t>(std::stoi(s.substr(colon + 1)))};
}

// {"host", "port", "template" | "preset" + "safety_answer", "backend": {...},
//  "log_dir", "window_seconds", "max_queue_len", "history_window"}
struct ServerSettings {
  std::string host = "127.0.0.1";
  int port = 8080;
  SystemPromptTemplate prompt;
  nlohmann::json backend;
  ServiceConfig service;
};

ServerSettings load_server_settings(const fs::path& path) {
  auto j = read_json(path);
  ServerSettings s;
  s.host = j.value("host", s.host);
  s.port = j.value("port", s.port);
  if (j.contains("template")) {
    s.prompt = load_template(relative_to(path, j["template"].get<std::string>()).string());
    if (j.contains("safety_answer")) s.prompt.safety_answer = j["safety_answer"].get<std::string>();
  } else {
    s.prompt = preset_template(j.value("preset", std::string("italian")), j.value("safety_answer", std::string()));
  }
  s.backend = j.value("backend", nlohmann::json{{"type", "ollama"}});
  if (j.contains("log_dir")) s.service.log_dir = relative_to(path, j["log_dir"].get<std::string>());
  s.service.epq.window_seconds = j.value("window_seconds", s.service.epq.window_seconds);
  s.service.epq.max_queue_len = j.value("max_queue_len", s.service.epq.max_queue_len);
  s.service.history_window = j.value("history_window", s.service.history_window);
  return s;
}

int run_sim(const std::string& scenario, const std::string& host, int port, double corruption, std::uint64_t seed,
            double speed, bool once) {
  auto script = find_scenario(scenario);
  if (!script) {
    std::cerr << "unknown scenario '" << scenario << "'; available:";
    for (const auto& s : builtin_scenarios()) std::cerr << " " << s.name;
    std::cerr << "\n";
    return 2;
  }
  script->corruption_rate = corruption;
  auto sim = Simulator::serve(*script, {{host, static_cast<std::uint16_t>(port)}, seed, speed, std::nullopt});
  std::cout << "simulator '" << script->name << "' listening on " << host << ":" << sim->port() << std::endl;
  wait_for_signal([&] { return once && sim->finished(); });
  auto st = sim->stats();
  std::cout << "frames sent " << st.frames_sent << ", corrupt " << st.corrupt_sent << std::endl;
  return 0;
}

int run_serve(const std::string& config_path, int port_override) {
  auto settings = load_server_settings(config_path);
  if (port_override >= 0) settings.port = port_override;
  std::shared_ptr<ChatBackend> backend = make_backend(settings.backend, true);
  ConversationService service(settings.prompt, backend, settings.service);
  RestServer server(service, settings.host, settings.port);
  std::cout << "serving on http://" << settings.host << ":" << server.port() << " with backend "
            << backend->model_name() << std::endl;
  wait_for_signal();
  server.stop();
  return 0;
}

int run_ingest(const std::string& sensor, const std::string& server_url, std::string session_id, double duration_s) {
  httplib::Client client(server_url);
  if (session_id.empty()) {
    auto r = client.Post("/api/sessions", "{}", "application/json");
    if (!r || r->status != 201) throw Error(ErrorCode::backend_error, "cannot create a session on " + server_url);
    session_id = nlohmann::json::parse(r->body)["session_id"];
  }
  std::cout << "session " << session_id << std::endl;
  std::string path = "/api/sessions/" + session_id + "/emotions";
  std::atomic<std::size_t> forwarded{0}, rejected{0};
  IngestOptions opts;
  opts.on_snapshot = [&](const EmotionSnapshot& s) {
    auto r = client.Post(path.c_str(), to_json_value(s).dump(), "application/json");
    if (r && r->status == 202) {
      ++forwarded;
    } else {
      ++rejected;
    }
  };
  auto session = IngestSession::connect(parse_endpoint(sensor), opts);
  session->send_command(Command::start_analysis);
  auto deadline = std::chrono::steady_clock::now() + std::chrono::duration<double>(duration_s);
  wait_for_signal([&] { return duration_s > 0 && std::chrono::steady_clock::now() >= deadline; });
  try {
    session->send_command(Command::stop_analysis);
  } catch (const Error& e) {
    std::cerr << "stop: " << e.what() << "\n";
  }
  session->close();
  auto st = session->stats();
  std::cout << "frames " << st.frames_parsed << ", skipped " << st.frames_skipped << ", snapshots forwarded "
            << forwarded << ", rejected " << rejected << std::endl;
  return 0;
}

struct JudgeRunArgs {
  std::string dataset;
  std::string session;
  std::string log_dir = "logs";
  std::string backends = "config/backends.json";
  std::string models;
  std::string judge;
  std::string rubrics;
  std::string template_path;
  std::string safety_answer;
  std::string out = "report";
  std::size_t history_window = 3;
};

int run_judge(const JudgeRunArgs& a) {
  auto entries = read_json(a.backends);
  auto entry = [&](const std::string& name) {
    for (const auto& e : entries) {
      if (e.value("name", e.value("model", std::string())) == name) return e;
    }
    throw Error(ErrorCode::invalid_argument, "no backend named '" + name + "' in " + a.backends);
  };

  std::optional<SystemPromptTemplate> prompt;
  if (!a.template_path.empty()) prompt = load_template(a.template_path);
  std::string safety = !a.safety_answer.empty() ? a.safety_answer : prompt ? prompt->safety_answer : std::string();

  std::vector<Rubric> rubrics;
  auto all = builtin_rubrics(safety);
  if (a.rubrics.empty()) {
    rubrics = all;
  } else {
    for (const auto& name : split_csv(a.rubrics)) {
      auto r = find_rubric(all, name);
      if (!r) throw Error(ErrorCode::invalid_argument, "unknown rubric '" + name + "'");
      rubrics.push_back(*r);
    }
  }

  auto judge_backend = make_backend(entry(a.judge), true);
  EvalReport report;
  if (!a.session.empty()) {
    auto log = load_log(fs::path(a.log_dir) / a.session);
    report = evaluate_answers(cases_from_log(log), a.session, rubrics, *judge_backend);
  } else {
    auto dataset = load_dataset(a.dataset);
    auto models = split_csv(a.models);
    if (models.empty()) {
      report = evaluate_answers(dataset, "recorded", rubrics, *judge_backend);
    } else {
      if (!prompt) throw Error(ErrorCode::invalid_argument, "--template is required to generate answers");
      std::vector<std::unique_ptr<ChatBackend>> owned;
      std::vector<Candidate> candidates;
      for (const auto& m : models) {
        owned.push_back(make_backend(entry(m), true));
        candidates.push_back({m, owned.back().get()});
      }
      report = evaluate(dataset, render_system_prompt(*prompt), candidates, rubrics, *judge_backend, a.history_window);
    }
  }
  write_report(report, a.out);
  std::cout << format_score_table(report) << "\n" << format_performance_table(report);
  std::cout << "wrote " << (fs::path(a.out) / "report.json").string() << std::endl;
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Affect-aware conversational pipeline"};
  app.require_subcommand(1);

  auto* sim = app.add_subcommand("sim", "Run the affect stream simulator");
  std::string scenario = "happy-congruent", sim_host = "127.0.0.1";
  int sim_port = 9000;
  double corruption = 0.0, speed = 1.0;
  std::uint64_t seed = 0;
  bool once = false;
  sim->add_option("--scenario", scenario, "Scenario name")->capture_default_str();
  sim->add_option("--host", sim_host)->capture_default_str();
  sim->add_option("--port", sim_port, "0 picks a free port")->capture_default_str();
  sim->add_option("--corruption", corruption, "Probability of a corrupted frame")->check(CLI::Range(0.0, 1.0));
  sim->add_option("--seed", seed)->capture_default_str();
  sim->add_option("--speed", speed, "Logical seconds per wall second; 0 is unpaced")->capture_default_str();
  sim->add_flag("--once", once, "Exit after one script run");

  auto* serve = app.add_subcommand("serve", "Run the REST server");
  std::string config = "config/server.json";
  int serve_port = -1;
  serve->add_option("--config", config)->capture_default_str();
  serve->add_option("--port", serve_port, "Override the configured port");

  auto* ingest = app.add_subcommand("ingest", "Forward sensor snapshots to a running server");
  std::string sensor = "127.0.0.1:9000", server_url = "http://127.0.0.1:8080", session_id;
  double duration = 0;
  ingest->add_option("--sensor", sensor, "host:port of the affect stream")->capture_default_str();
  ingest->add_option("--server", server_url)->capture_default_str();
  ingest->add_option("--session", session_id, "Existing session id; a new one is created otherwise");
  ingest->add_option("--duration", duration, "Seconds to stream; 0 runs until interrupted");

  auto* judge_cmd = app.add_subcommand("judge", "Evaluation tools");
  judge_cmd->require_subcommand(1);
  auto* run = judge_cmd->add_subcommand("run", "Judge answers and write a report");
  JudgeRunArgs args;
  auto* dataset_opt = run->add_option("--dataset", args.dataset, "Dataset JSONL");
  auto* session_opt = run->add_option("--session", args.session, "Judge a logged session instead");
  dataset_opt->excludes(session_opt);
  run->add_option("--log-dir", args.log_dir)->capture_default_str();
  run->add_option("--backends", args.backends, "Backend entries (JSON array)")->capture_default_str();
  run->add_option("--models", args.models, "Comma-separated candidate names; omit to judge recorded answers");
  run->add_option("--judge", args.judge, "Judge backend name")->required();
  run->add_option("--rubrics", args.rubrics, "Comma-separated rubric names (default: all)");
  run->add_option("--template", args.template_path, "System prompt template for candidates");
  run->add_option("--safety-answer", args.safety_answer, "Configured crisis message (default: from template)");
  run->add_option("--history-window", args.history_window)->capture_default_str();
  run->add_option("--out", args.out)->capture_default_str();

  auto* gen = judge_cmd->add_subcommand("dataset", "Generate the synthetic dataset");
  std::uint64_t dataset_seed = 42;
  std::string dataset_out = "dataset.jsonl";
  gen->add_option("--seed", dataset_seed)->capture_default_str();
  gen->add_option("--out", dataset_out)->capture_default_str();

  CLI11_PARSE(app, argc, argv);

  try {
    if (*sim) return run_sim(scenario, sim_host, sim_port, corruption, seed, speed, once);
    if (*serve) return run_serve(config, serve_port);
    if (*ingest) return run_ingest(sensor, server_url, session_id, duration);
    if (*run) {
      if (args.dataset.empty() && args.session.empty()) {
        std::cerr << "one of --dataset or --session is required\n";
        return 2;
      }
      return run_judge(args);
    }
    if (*gen) {
      std::ofstream(dataset_out) << dataset_to_jsonl(generate_dataset(dataset_seed));
      std::cout << "wrote " << dataset_out << std::endl;
      return 0;
    }
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
