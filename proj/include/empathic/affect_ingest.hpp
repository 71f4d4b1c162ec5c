#pragma once

// Sensor-side middleware: talks to a sensor endpoint, turns streamed frame
// documents into one EmotionSnapshot per epoch second.

#include <atomic>
#include <chrono>
#include <cstdint>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <thread>
#include <vector>

#include "empathic/channel.hpp"
#include "empathic/emotion.hpp"
#include "empathic/frame_codec.hpp"
#include "empathic/net.hpp"

namespace empathic {

/// Reduces the frames of one second to a snapshot: argmax over the most
/// recent frame (ties to the smallest label), paired with that frame's
/// valence and arousal.
inline std::optional<EmotionSnapshot> snapshot_tick(std::span<const EmotionFrame> frames) {
  if (frames.empty()) return std::nullopt;
  const EmotionFrame* latest = &frames.front();
  for (const EmotionFrame& f : frames) {
    if (f.timestamp_ms >= latest->timestamp_ms) latest = &f;
  }
  Emotion e = dominant_emotion(*latest);
  return EmotionSnapshot{e, latest->intensity(e), latest->valence, latest->arousal,
                         latest->timestamp_ms};
}

inline std::int64_t second_of(std::int64_t timestamp_ms) {
  return timestamp_ms >= 0 ? timestamp_ms / 1000 : (timestamp_ms - 999) / 1000;
}

/// Groups frames into epoch-second windows [k*1000, (k+1)*1000). A window is
/// closed when a frame from a later second arrives or on `flush`.
class SnapshotTicker {
 public:
  std::optional<EmotionSnapshot> add(const EmotionFrame& frame) {
    std::int64_t sec = second_of(frame.timestamp_ms);
    std::optional<EmotionSnapshot> out;
    if (!window_.empty()) {
      if (sec < current_second_) {
        ++late_frames_;
        return std::nullopt;
      }
      if (sec > current_second_) out = flush();
    }
    current_second_ = sec;
    window_.push_back(frame);
    return out;
  }

  std::optional<EmotionSnapshot> flush() {
    auto s = snapshot_tick(window_);
    window_.clear();
    return s;
  }

  bool pending() const { return !window_.empty(); }
  std::uint64_t late_frames() const { return late_frames_; }

 private:
  std::vector<EmotionFrame> window_;
  std::int64_t current_second_ = 0;
  std::uint64_t late_frames_ = 0;
};

struct IngestOptions {
  std::chrono::milliseconds connect_timeout{5000};
  std::chrono::milliseconds handshake_timeout{5000};
  std::chrono::milliseconds ack_timeout{5000};
  /// A pending window is emitted once no frame has arrived for this long.
  std::chrono::milliseconds idle_flush{1500};
  /// Called on the reader thread for every emitted snapshot.
  std::function<void(const EmotionSnapshot&)> on_snapshot;
};

struct IngestStats {
  std::uint64_t frames_parsed = 0;
  std::uint64_t frames_skipped = 0;
  std::uint64_t snapshots_emitted = 0;
};

enum class SessionState { connected, closed };

struct Acknowledgement {
  Command command;
};

/// One connection to a sensor endpoint. A single reader thread consumes the
/// socket; snapshots are handed off through `snapshots()`.
class IngestSession {
 public:
  IngestSession(const IngestSession&) = delete;
  IngestSession& operator=(const IngestSession&) = delete;
  ~IngestSession() { close(); }

  /// Connects and waits for the endpoint greeting. Issues no command.
  /// Refused connections are retried once.
  static std::unique_ptr<IngestSession> connect(const net::Endpoint& endpoint,
                                                IngestOptions options = {}) {
    net::Socket socket;
    try {
      socket = net::connect_tcp(endpoint, options.connect_timeout);
    } catch (const Error& e) {
      if (e.code() != ErrorCode::connection_refused) throw;
      std::this_thread::sleep_for(std::chrono::milliseconds(100));
      socket = net::connect_tcp(endpoint, options.connect_timeout);
    }
    auto session = std::unique_ptr<IngestSession>(new IngestSession(std::move(socket), std::move(options)));
    session->await_greeting();
    session->reader_ = std::jthread([s = session.get()](std::stop_token st) { s->read_loop(st); });
    return session;
  }

  Acknowledgement send_command(Command command) {
    {
      std::lock_guard lock(write_mutex_);
      if (state() == SessionState::closed || peer_closed_) {
        throw Error(ErrorCode::broken_pipe, "session is closed");
      }
      net::write_all(socket_, serialize_command(command));
    }
    auto reply = acks_.pop(options_.ack_timeout);
    if (!reply) {
      if (acks_.closed()) throw Error(ErrorCode::broken_pipe, "connection closed before ack");
      throw Error(ErrorCode::protocol_error, "no acknowledgement for " + std::string(command_name(command)));
    }
    if (reply->tag != "ack" || reply->attribute != "name" || reply->value != command_name(command)) {
      throw Error(ErrorCode::protocol_error,
                  "unexpected reply '" + reply->tag + " " + reply->value + "' to " +
                      std::string(command_name(command)));
    }
    return {command};
  }

  Channel<EmotionSnapshot>& snapshots() { return snapshots_; }

  IngestStats stats() const {
    return {frames_parsed_.load(), frames_skipped_.load(), snapshots_emitted_.load()};
  }

  SessionState state() const { return closed_.load() ? SessionState::closed : SessionState::connected; }

  /// Stops the reader (emitting any pending window) and releases the socket.
  void close() {
    if (closed_.exchange(true)) return;
    if (reader_.joinable()) {
      reader_.request_stop();
      reader_.join();
    }
    socket_.shutdown();
    socket_.close();
    snapshots_.close();
    acks_.close();
  }

 private:
  IngestSession(net::Socket socket, IngestOptions options)
      : socket_(std::move(socket)), reader_buf_(socket_), options_(std::move(options)) {}

  void await_greeting() {
    auto r = reader_buf_.read_line(options_.handshake_timeout);
    if (r.status == net::LineReader::Status::timeout) {
      throw Error(ErrorCode::handshake_timeout, "no greeting within " +
                                                     std::to_string(options_.handshake_timeout.count()) + " ms");
    }
    if (r.status == net::LineReader::Status::closed) {
      throw Error(ErrorCode::connection_refused, "endpoint closed during handshake");
    }
    auto hello = parse_control(r.line);
    if (!hello || hello->tag != "hello") {
      throw Error(ErrorCode::protocol_error, "unexpected greeting '" + r.line + "'");
    }
  }

  void emit(const std::optional<EmotionSnapshot>& s) {
    if (!s) return;
    ++snapshots_emitted_;
    if (options_.on_snapshot) options_.on_snapshot(*s);
    snapshots_.push(*s);
  }

  void read_loop(std::stop_token stop) {
    using clock = std::chrono::steady_clock;
    auto last_frame = clock::now();
    while (!stop.stop_requested()) {
      net::LineReader::Result r;
      try {
        r = reader_buf_.read_line(std::chrono::milliseconds(50));
      } catch (const Error&) {
        r.status = net::LineReader::Status::closed;
      }
      if (r.status == net::LineReader::Status::closed) {
        peer_closed_ = true;
        break;
      }
      if (r.status == net::LineReader::Status::timeout) {
        if (ticker_.pending() && clock::now() - last_frame > options_.idle_flush) emit(ticker_.flush());
        continue;
      }
      if (r.line.rfind("<frame", 0) != 0) {
        if (auto ctl = parse_control(r.line)) {
          if (ctl->tag == "hello") continue;
          if (ctl->tag == "ack" && ctl->value == command_name(Command::stop_analysis)) {
            emit(ticker_.flush());
          }
          acks_.push(std::move(*ctl));
          continue;
        }
      }
      if (auto frame = parse_frame(r.line)) {
        ++frames_parsed_;
        last_frame = clock::now();
        emit(ticker_.add(*frame));
      } else {
        ++frames_skipped_;
      }
    }
    emit(ticker_.flush());
    acks_.close();
  }

  net::Socket socket_;
  net::LineReader reader_buf_;
  IngestOptions options_;
  SnapshotTicker ticker_;
  Channel<EmotionSnapshot> snapshots_;
  Channel<ControlMessage> acks_;
  std::mutex write_mutex_;
  std::atomic<bool> closed_{false};
  std::atomic<bool> peer_closed_{false};
  std::atomic<std::uint64_t> frames_parsed_{0};
  std::atomic<std::uint64_t> frames_skipped_{0};
  std::atomic<std::uint64_t> snapshots_emitted_{0};
  std::jthread reader_;
};

}  // namespace empathic
