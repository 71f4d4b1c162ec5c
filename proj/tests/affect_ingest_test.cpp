#include <gtest/gtest.h>

#include "empathic/affect_ingest.hpp"
#include "empathic/affect_sim.hpp"
#include "oracles.hpp"

using namespace empathic;
using namespace std::chrono_literals;

namespace {

constexpr std::int64_t kStart = 1700000000000;

EmotionFrame frame(std::initializer_list<std::pair<Emotion, double>> values, double v, double a, std::int64_t ts) {
  EmotionFrame f;
  for (auto [e, x] : values) f.intensity(e) = x;
  f.valence = v;
  f.arousal = a;
  f.timestamp_ms = ts;
  return f;
}

std::uint16_t unused_port() {
  auto s = net::listen_tcp({"127.0.0.1", 0});
  return net::local_port(s);
}

std::vector<EmotionSnapshot> drain_until_closed(IngestSession& session) {
  std::vector<EmotionSnapshot> out;
  while (auto s = session.snapshots().pop(100ms)) out.push_back(*s);
  return out;
}

}  // namespace

TEST(SnapshotTick, SingleFrameTakesArgmax) {
  std::vector<EmotionFrame> frames{frame({{Emotion::angry, 0.6497983}, {Emotion::sad, 0.2}}, -0.55, 0.7, 10)};
  auto s = snapshot_tick(frames);
  ASSERT_TRUE(s);
  EXPECT_EQ(s->emotion, Emotion::angry);
  EXPECT_EQ(s->intensity, 0.6497983);
  EXPECT_EQ(s->valence, -0.55);
  EXPECT_EQ(s->arousal, 0.7);
}

TEST(SnapshotTick, EmptyWindowIsNone) { EXPECT_FALSE(snapshot_tick({})); }

TEST(SnapshotTick, LatestFrameWins) {
  std::vector<EmotionFrame> frames{frame({{Emotion::sad, 0.7}}, -0.3, 0.2, 100),
                                   frame({{Emotion::happy, 0.9}, {Emotion::sad, 0.1}}, 0.8, 0.6, 300)};
  auto s = snapshot_tick(frames);
  ASSERT_TRUE(s);
  EXPECT_EQ(s->emotion, Emotion::happy);
  EXPECT_EQ(s->intensity, 0.9);
  EXPECT_EQ(s->valence, 0.8);
  EXPECT_EQ(s->arousal, 0.6);
  EXPECT_EQ(s->timestamp_ms, 300);
}

TEST(SnapshotTicker, OneSnapshotPerSecond) {
  SnapshotTicker ticker;
  std::vector<EmotionSnapshot> out;
  for (std::int64_t ts : {1000, 1200, 1999, 2000, 2500, 4100}) {
    if (auto s = ticker.add(frame({{Emotion::happy, 0.5}}, 0.1, 0.1, ts))) out.push_back(*s);
  }
  if (auto s = ticker.flush()) out.push_back(*s);
  ASSERT_EQ(out.size(), 3u);
  EXPECT_EQ(out[0].timestamp_ms, 1999);
  EXPECT_EQ(out[1].timestamp_ms, 2500);
  EXPECT_EQ(out[2].timestamp_ms, 4100);
  EXPECT_FALSE(ticker.pending());
}

TEST(SnapshotTicker, LateFramesAreDropped) {
  SnapshotTicker ticker;
  ticker.add(frame({{Emotion::happy, 0.5}}, 0.1, 0.1, 5000));
  EXPECT_FALSE(ticker.add(frame({{Emotion::sad, 0.5}}, 0.1, 0.1, 4900)));
  EXPECT_EQ(ticker.late_frames(), 1u);
  auto s = ticker.flush();
  ASSERT_TRUE(s);
  EXPECT_EQ(s->emotion, Emotion::happy);
}

TEST(IngestSession, ConnectStartStopAgainstSimulator) {
  auto sim = Simulator::serve(*find_scenario("happy-congruent"), {{"127.0.0.1", 0}, 1, 0.0, kStart});
  auto session = IngestSession::connect(sim->endpoint());
  EXPECT_EQ(session->state(), SessionState::connected);
  EXPECT_EQ(session->send_command(Command::start_analysis).command, Command::start_analysis);
  for (int i = 0; i < 200 && !sim->script_done(); ++i) std::this_thread::sleep_for(10ms);
  ASSERT_TRUE(sim->script_done());
  session->send_command(Command::stop_analysis);
  EXPECT_NO_THROW(session->send_command(Command::stop_analysis));
  session->close();
  auto snaps = drain_until_closed(*session);
  ASSERT_EQ(snaps.size(), 10u);
  for (std::size_t i = 0; i < snaps.size(); ++i) {
    EXPECT_EQ(snaps[i].emotion, Emotion::happy);
    EXPECT_EQ(snaps[i].intensity, 0.8);
    EXPECT_EQ(snaps[i].timestamp_ms, kStart + 1000 * static_cast<std::int64_t>(i) + 800);
  }
  EXPECT_EQ(session->stats().frames_parsed, 50u);
  EXPECT_EQ(session->state(), SessionState::closed);
}

TEST(IngestSession, CorruptStreamMatchesWindowOracle) {
  ScenarioScript script{"noisy", {{12.0, Emotion::scared, 0.6, -0.5, 0.65}}, 0.7, 5.0};
  auto sim = Simulator::serve(script, {{"127.0.0.1", 0}, 77, 0.0, kStart});
  std::atomic<int> callbacks{0};
  IngestOptions opts;
  opts.on_snapshot = [&](const EmotionSnapshot&) { ++callbacks; };
  auto session = IngestSession::connect(sim->endpoint(), opts);
  session->send_command(Command::start_analysis);
  for (int i = 0; i < 200 && !sim->script_done(); ++i) std::this_thread::sleep_for(10ms);
  session->send_command(Command::stop_analysis);
  session->close();
  auto snaps = drain_until_closed(*session);
  std::size_t expected = oracle::seconds_with_valid_frames(script, 77, kStart);
  EXPECT_LT(expected, 12u) << "seed should leave at least one second without intact frames";
  EXPECT_EQ(snaps.size(), expected);
  EXPECT_EQ(callbacks.load(), static_cast<int>(expected));
  EXPECT_EQ(session->stats().frames_skipped, sim->stats().corrupt_sent);
}

TEST(IngestSession, IdleWindowIsFlushed) {
  auto sim = Simulator::serve(*find_scenario("fear"), {{"127.0.0.1", 0}, 1, 0.0, kStart});
  IngestOptions opts;
  opts.idle_flush = 200ms;
  auto session = IngestSession::connect(sim->endpoint(), opts);
  session->send_command(Command::start_analysis);
  std::vector<EmotionSnapshot> got;
  while (got.size() < 10) {
    auto s = session->snapshots().pop(2000ms);
    ASSERT_TRUE(s) << "only " << got.size() << " snapshots without stopping";
    got.push_back(*s);
  }
  EXPECT_EQ(got.back().timestamp_ms, kStart + 9800);
}

TEST(IngestSession, UnreachablePortIsRefused) {
  auto port = unused_port();
  try {
    IngestSession::connect({"127.0.0.1", port});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::connection_refused);
  }
}

TEST(IngestSession, SilentEndpointTimesOutHandshake) {
  EXPECT_EQ(IngestOptions{}.handshake_timeout, 5000ms);
  auto listener = net::listen_tcp({"127.0.0.1", 0});
  IngestOptions opts;
  opts.handshake_timeout = 300ms;
  auto start = std::chrono::steady_clock::now();
  try {
    IngestSession::connect({"127.0.0.1", net::local_port(listener)}, opts);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::handshake_timeout);
  }
  EXPECT_GE(std::chrono::steady_clock::now() - start, 300ms);
}

TEST(IngestSession, CommandOnClosedSessionIsBrokenPipe) {
  auto sim = Simulator::serve(*find_scenario("anger"), {{"127.0.0.1", 0}, 1, 0.0, kStart});
  auto session = IngestSession::connect(sim->endpoint());
  session->close();
  try {
    session->send_command(Command::start_analysis);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::broken_pipe);
  }
}

TEST(IngestSession, PeerGoneIsBrokenPipe) {
  auto sim = Simulator::serve(*find_scenario("anger"), {{"127.0.0.1", 0}, 1, 0.0, kStart});
  auto session = IngestSession::connect(sim->endpoint());
  sim->stop();
  sim.reset();
  std::this_thread::sleep_for(200ms);
  try {
    session->send_command(Command::start_analysis);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::broken_pipe);
  }
}
