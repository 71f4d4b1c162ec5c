#pragma once

// Offline stand-in for the facial-affect sensor: serves scripted affective
// scenarios over the frame dialect, with optional corruption injection.

#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <memory>
#include <optional>
#include <random>
#include <string>
#include <thread>
#include <vector>

#include "empathic/emotion.hpp"
#include "empathic/frame_codec.hpp"
#include "empathic/net.hpp"

namespace empathic {

struct ScenarioSegment {
  double duration_s = 1.0;
  Emotion emotion = Emotion::neutral;
  double intensity = 0.0;
  double valence = 0.0;
  double arousal = 0.0;
};

struct ScenarioScript {
  std::string name;
  std::vector<ScenarioSegment> segments;
  double corruption_rate = 0.0;
  double frame_rate = 5.0;
};

inline void validate(const ScenarioScript& s) {
  auto fail = [&](const std::string& why) {
    throw Error(ErrorCode::invalid_argument, "scenario '" + s.name + "': " + why);
  };
  if (s.segments.empty()) fail("no segments");
  if (!(s.corruption_rate >= 0.0 && s.corruption_rate <= 1.0)) fail("corruption_rate outside [0,1]");
  if (!(s.frame_rate > 0.0 && s.frame_rate <= 1000.0)) fail("frame_rate outside (0,1000]");
  for (const auto& seg : s.segments) {
    if (!(seg.duration_s > 0.0)) fail("segment duration must be > 0");
    if (!in_unit(seg.intensity) || !in_signed_unit(seg.valence) || !in_unit(seg.arousal)) {
      fail("segment values out of range");
    }
  }
}

/// Named scripts; each is a single 10 s segment at 5 fps.
inline std::vector<ScenarioScript> builtin_scenarios() {
  auto one = [](std::string name, Emotion e, double i, double v, double a) {
    return ScenarioScript{std::move(name), {{10.0, e, i, v, a}}, 0.0, 5.0};
  };
  return {
      one("happy-congruent", Emotion::happy, 0.8, 0.8, 0.6),
      one("sad-incongruent", Emotion::sad, 0.6, -0.4, 0.3),
      one("anger", Emotion::angry, 0.75, -0.7, 0.8),
      one("fear", Emotion::scared, 0.60, -0.5, 0.65),
      one("neutral-baseline", Emotion::neutral, 0.7, 0.0, 0.3),
  };
}

inline std::optional<ScenarioScript> find_scenario(std::string_view name) {
  for (auto& s : builtin_scenarios()) {
    if (s.name == name) return s;
  }
  return std::nullopt;
}

enum class Corruption { none, truncation, element_deletion, non_numeric };

struct EmittedDocument {
  std::string line;  // includes the trailing '\n'
  Corruption corruption = Corruption::none;
  EmotionFrame frame;  // the frame before any corruption
};

/// Deterministic frame source. `(script, seed, start)` fully determines the
/// emitted byte stream.
class FrameGenerator {
 public:
  FrameGenerator(ScenarioScript script, std::uint64_t seed, std::int64_t start_timestamp_ms)
      : script_(std::move(script)), rng_(seed), start_ms_(start_timestamp_ms) {
    validate(script_);
    for (const auto& seg : script_.segments) {
      auto n = static_cast<std::size_t>(std::llround(seg.duration_s * script_.frame_rate));
      segment_ends_.push_back((segment_ends_.empty() ? 0 : segment_ends_.back()) + n);
    }
  }

  std::size_t total_frames() const { return segment_ends_.back(); }
  std::size_t emitted() const { return index_; }
  bool done() const { return index_ >= total_frames(); }

  std::int64_t timestamp_of(std::size_t i) const {
    return start_ms_ + std::llround(static_cast<double>(i) * 1000.0 / script_.frame_rate);
  }

  std::optional<EmittedDocument> next() {
    if (done()) return std::nullopt;
    std::size_t seg_index = 0;
    while (index_ >= segment_ends_[seg_index]) ++seg_index;
    const ScenarioSegment& seg = script_.segments[seg_index];

    EmittedDocument doc;
    EmotionFrame& f = doc.frame;
    double cap = std::min(0.1, 0.5 * seg.intensity);
    for (Emotion e : kAllEmotions) {
      f.intensity(e) = e == seg.emotion ? seg.intensity : std::round(uniform() * cap * 1e4) / 1e4;
    }
    // rounding can reach the cap; keep the scripted emotion strictly dominant
    for (Emotion e : kAllEmotions) {
      if (e != seg.emotion && f.intensity(e) >= seg.intensity) f.intensity(e) = 0.0;
    }
    f.valence = seg.valence;
    f.arousal = seg.arousal;
    f.timestamp_ms = timestamp_of(index_);
    ++index_;

    doc.line = serialize_frame(f);
    if (script_.corruption_rate > 0.0 && uniform() < script_.corruption_rate) {
      doc.corruption = static_cast<Corruption>(1 + rng_() % 3);
      doc.line = corrupt(doc.line, doc.corruption);
    }
    return doc;
  }

 private:
  double uniform() { return static_cast<double>(rng_() >> 11) * 0x1.0p-53; }

  std::string corrupt(const std::string& line, Corruption mode) {
    std::string body = line.substr(0, line.size() - 1);
    switch (mode) {
      case Corruption::truncation: {
        std::size_t cut = 1 + rng_() % (body.size() - 1);
        return body.substr(0, cut) + "\n";
      }
      case Corruption::element_deletion: {
        static constexpr std::string_view kNames[] = {"Happy",     "Sad",     "Angry",
                                                      "Surprised", "Scared",  "Disgusted",
                                                      "Neutral",   "valence", "arousal",
                                                      "timestamp"};
        std::string_view name = kNames[rng_() % 10];
        std::string open = "<" + std::string(name) + ">";
        std::string close = "</" + std::string(name) + ">";
        auto a = body.find(open);
        auto b = body.find(close, a);
        body.erase(a, b + close.size() - a);
        return body + "\n";
      }
      case Corruption::non_numeric: {
        Emotion e = kAllEmotions[rng_() % kEmotionCount];
        std::string open = "<" + std::string(label(e)) + ">";
        auto a = body.find(open) + open.size();
        auto b = body.find('<', a);
        body.replace(a, b - a, "high");
        return body + "\n";
      }
      case Corruption::none: break;
    }
    return line;
  }

  ScenarioScript script_;
  std::mt19937_64 rng_;
  std::int64_t start_ms_;
  std::vector<std::size_t> segment_ends_;
  std::size_t index_ = 0;
};

struct SimOptions {
  net::Endpoint endpoint{"127.0.0.1", 0};
  std::uint64_t seed = 0;
  /// Logical seconds per wall second. 0 streams as fast as possible.
  double speed = 1.0;
  /// First frame timestamp. Defaults to the next whole wall-clock second at
  /// StartAnalysis, so each epoch second holds frame_rate frames.
  std::optional<std::int64_t> start_timestamp_ms;
};

struct SimStats {
  std::uint64_t frames_sent = 0;
  std::uint64_t corrupt_sent = 0;
  std::uint64_t commands = 0;
};

inline std::int64_t wall_clock_ms() {
  return std::chrono::duration_cast<std::chrono::milliseconds>(
             std::chrono::system_clock::now().time_since_epoch())
      .count();
}

/// Single-client simulator. Commands are handled between frames.
class Simulator {
 public:
  Simulator(const Simulator&) = delete;
  Simulator& operator=(const Simulator&) = delete;
  ~Simulator() { stop(); }

  static std::unique_ptr<Simulator> serve(ScenarioScript script, SimOptions options) {
    validate(script);
    auto listener = net::listen_tcp(options.endpoint);
    auto sim = std::unique_ptr<Simulator>(new Simulator(std::move(script), std::move(options), std::move(listener)));
    sim->thread_ = std::jthread([s = sim.get()](std::stop_token st) { s->run(st); });
    return sim;
  }

  std::uint16_t port() const { return port_; }
  net::Endpoint endpoint() const { return {options_.endpoint.host, port_}; }

  SimStats stats() const { return {frames_sent_.load(), corrupt_sent_.load(), commands_.load()}; }
  bool streaming() const { return streaming_.load(); }
  bool finished() const { return finished_.load(); }
  /// True once every scripted frame has been written.
  bool script_done() const { return script_done_.load(); }

  void stop() {
    if (thread_.joinable()) {
      thread_.request_stop();
      thread_.join();
    }
  }

 private:
  Simulator(ScenarioScript script, SimOptions options, net::Socket listener)
      : script_(std::move(script)), options_(std::move(options)), listener_(std::move(listener)) {
    port_ = net::local_port(listener_);
  }

  void run(std::stop_token stop) {
    using namespace std::chrono;
    net::Socket client;
    while (!stop.stop_requested()) {
      if (net::wait_readable(listener_.fd(), milliseconds(50))) {
        client = net::Socket(::accept(listener_.fd(), nullptr, nullptr));
        if (client.is_open()) break;
      }
    }
    listener_.close();
    if (!client.is_open()) {
      finished_ = true;
      return;
    }
    try {
      session(client, stop);
    } catch (const Error&) {
      // client went away
    }
    finished_ = true;
  }

  void session(const net::Socket& client, std::stop_token stop) {
    using namespace std::chrono;
    net::write_all(client, serialize_hello());
    net::LineReader reader(client);
    std::optional<FrameGenerator> gen;
    steady_clock::time_point anchor{};  // steady time of the first frame timestamp
    std::int64_t base_ms = 0;

    while (!stop.stop_requested()) {
      milliseconds wait(50);
      if (streaming_ && gen && !gen->done()) {
        std::int64_t logical = gen->timestamp_of(gen->emitted()) - base_ms;
        auto due = options_.speed > 0
                       ? anchor + duration_cast<steady_clock::duration>(
                                      duration<double, std::milli>(logical / options_.speed))
                       : steady_clock::now();
        auto left = duration_cast<milliseconds>(due - steady_clock::now());
        if (left.count() <= 0) {
          send_frame(client, *gen);
          wait = milliseconds(0);
        } else {
          wait = std::min(left, milliseconds(50));
        }
      }
      auto r = reader.read_line(wait);
      if (r.status == net::LineReader::Status::closed) return;
      if (r.status == net::LineReader::Status::timeout) continue;
      ++commands_;
      auto ctl = parse_control(r.line);
      std::optional<Command> cmd;
      if (ctl && ctl->tag == "action" && ctl->attribute == "name") cmd = parse_command_name(ctl->value);
      if (!cmd) {
        net::write_all(client, serialize_control({"error", "name", ctl ? ctl->value : std::string("unknown")}));
        continue;
      }
      switch (*cmd) {
        case Command::start_analysis:
          if (!gen) {
            std::int64_t now = wall_clock_ms();
            base_ms = options_.start_timestamp_ms.value_or((now / 1000 + 1) * 1000);
            gen.emplace(script_, options_.seed, base_ms);
            anchor = steady_clock::now();
            if (!options_.start_timestamp_ms && options_.speed > 0) {
              anchor += milliseconds(base_ms - now);
            }
          } else if (!streaming_) {
            // resume: re-anchor so the next frame goes out now
            std::int64_t logical = gen->timestamp_of(gen->emitted()) - base_ms;
            anchor = steady_clock::now() - duration_cast<steady_clock::duration>(duration<double, std::milli>(
                                                 options_.speed > 0 ? logical / options_.speed : 0.0));
          }
          streaming_ = true;
          break;
        case Command::stop_analysis:
          streaming_ = false;
          break;
        case Command::start_log_sending:
        case Command::stop_log_sending:
          break;
      }
      net::write_all(client, serialize_ack(*cmd));
    }
  }

  void send_frame(const net::Socket& client, FrameGenerator& gen) {
    auto doc = gen.next();
    if (!doc) return;
    net::write_all(client, doc->line);
    ++frames_sent_;
    if (doc->corruption != Corruption::none) ++corrupt_sent_;
    if (gen.done()) script_done_ = true;
  }

  ScenarioScript script_;
  SimOptions options_;
  net::Socket listener_;
  std::uint16_t port_ = 0;
  std::atomic<bool> streaming_{false};
  std::atomic<bool> finished_{false};
  std::atomic<bool> script_done_{false};
  std::atomic<std::uint64_t> frames_sent_{0};
  std::atomic<std::uint64_t> corrupt_sent_{0};
  std::atomic<std::uint64_t> commands_{0};
  std::jthread thread_;
};

}  // namespace empathic
