#include <gtest/gtest.h>

#include "empathic/affect_sim.hpp"
#include "empathic/frame_codec.hpp"

using namespace empathic;
using namespace std::chrono_literals;

namespace {

constexpr std::int64_t kStart = 1700000000000;

// Minimal raw client: reads lines, sends commands.
struct RawClient {
  explicit RawClient(const net::Endpoint& ep) : socket(net::connect_tcp(ep, 2000ms)), reader(socket) {}
  std::optional<std::string> line(std::chrono::milliseconds t = 2000ms) {
    auto r = reader.read_line(t);
    if (r.status != net::LineReader::Status::line) return std::nullopt;
    return r.line;
  }
  void send(Command c) { net::write_all(socket, serialize_command(c)); }
  net::Socket socket;
  net::LineReader reader;
};

}  // namespace

TEST(Scenarios, BuiltinLookup) {
  auto sad = find_scenario("sad-incongruent");
  ASSERT_TRUE(sad);
  ASSERT_EQ(sad->segments.size(), 1u);
  EXPECT_EQ(sad->segments[0].emotion, Emotion::sad);
  EXPECT_EQ(sad->segments[0].intensity, 0.6);
  EXPECT_EQ(sad->segments[0].valence, -0.4);
  EXPECT_EQ(sad->segments[0].arousal, 0.3);

  auto fear = find_scenario("fear");
  ASSERT_TRUE(fear);
  EXPECT_EQ(fear->segments[0].emotion, Emotion::scared);
  EXPECT_EQ(fear->segments[0].intensity, 0.60);
  EXPECT_EQ(fear->segments[0].valence, -0.5);
  EXPECT_EQ(fear->segments[0].arousal, 0.65);

  EXPECT_FALSE(find_scenario("euphoria"));
  for (const auto& s : builtin_scenarios()) EXPECT_NO_THROW(validate(s)) << s.name;
}

TEST(Scenarios, ValidationRejectsBadScripts) {
  ScenarioScript s{"bad", {{1.0, Emotion::happy, 0.5, 0.5, 0.5}}, 0.0, 5.0};
  auto expect_invalid = [](const ScenarioScript& x) {
    try {
      validate(x);
      FAIL();
    } catch (const Error& e) {
      EXPECT_EQ(e.code(), ErrorCode::invalid_argument);
    }
  };
  auto t = s;
  t.corruption_rate = 1.5;
  expect_invalid(t);
  t = s;
  t.segments[0].duration_s = 0;
  expect_invalid(t);
  t = s;
  t.segments[0].valence = -2;
  expect_invalid(t);
  t = s;
  t.segments.clear();
  expect_invalid(t);
}

TEST(FrameGenerator, HappyScriptYieldsFiftyFrames) {
  FrameGenerator gen(*find_scenario("happy-congruent"), 1, kStart);
  EXPECT_EQ(gen.total_frames(), 50u);
  std::size_t n = 0;
  while (auto doc = gen.next()) {
    auto f = parse_frame(doc->line);
    ASSERT_TRUE(f);
    EXPECT_EQ(dominant_emotion(*f), Emotion::happy);
    EXPECT_EQ(f->intensity(Emotion::happy), 0.8);
    EXPECT_EQ(f->valence, 0.8);
    EXPECT_EQ(f->arousal, 0.6);
    EXPECT_EQ(f->timestamp_ms, kStart + 200 * static_cast<std::int64_t>(n));
    ++n;
  }
  EXPECT_EQ(n, 50u);
}

TEST(FrameGenerator, SeededCorruptionCountIsFrozen) {
  ScenarioScript s{"c", {{20.0, Emotion::happy, 0.8, 0.8, 0.6}}, 0.1, 5.0};
  FrameGenerator gen(s, 42, kStart);
  std::size_t corrupt = 0;
  std::size_t total = 0;
  while (auto doc = gen.next()) {
    ++total;
    if (doc->corruption != Corruption::none) {
      ++corrupt;
      EXPECT_FALSE(parse_frame(doc->line)) << doc->line;
    } else {
      EXPECT_TRUE(parse_frame(doc->line));
    }
  }
  EXPECT_EQ(total, 100u);
  EXPECT_EQ(corrupt, 8u);
}

TEST(FrameGenerator, SameSeedSameBytes) {
  ScenarioScript s{"c", {{4.0, Emotion::angry, 0.7, -0.6, 0.8}, {4.0, Emotion::sad, 0.5, -0.3, 0.2}}, 0.3, 5.0};
  FrameGenerator a(s, 9, kStart), b(s, 9, kStart), c(s, 10, kStart);
  bool differs = false;
  while (auto da = a.next()) {
    auto db = b.next();
    auto dc = c.next();
    ASSERT_TRUE(db && dc);
    EXPECT_EQ(da->line, db->line);
    differs = differs || da->line != dc->line;
  }
  EXPECT_TRUE(differs);
}

TEST(FrameGenerator, SegmentsFollowScript) {
  ScenarioScript s{"two", {{1.0, Emotion::angry, 0.7, -0.6, 0.8}, {1.0, Emotion::sad, 0.5, -0.3, 0.2}}, 0.0, 5.0};
  FrameGenerator gen(s, 3, kStart);
  std::vector<Emotion> seen;
  while (auto doc = gen.next()) seen.push_back(dominant_emotion(doc->frame));
  ASSERT_EQ(seen.size(), 10u);
  EXPECT_EQ(seen[4], Emotion::angry);
  EXPECT_EQ(seen[5], Emotion::sad);
}

TEST(Simulator, StreamsHelloFramesAndAcks) {
  auto sim = Simulator::serve(*find_scenario("happy-congruent"), {{"127.0.0.1", 0}, 5, 0.0, kStart});
  RawClient client(sim->endpoint());
  auto hello = client.line();
  ASSERT_TRUE(hello);
  EXPECT_EQ(parse_control(*hello)->tag, "hello");
  client.send(Command::start_analysis);
  std::size_t frames = 0;
  bool acked = false;
  while (auto l = client.line(1000ms)) {
    if (parse_frame(*l)) {
      ++frames;
    } else if (auto c = parse_control(*l)) {
      acked = acked || (c->tag == "ack" && c->value == "StartAnalysis");
    }
    if (frames == 50) break;
  }
  EXPECT_TRUE(acked);
  EXPECT_EQ(frames, 50u);
  client.send(Command::stop_analysis);
  auto ack = client.line();
  ASSERT_TRUE(ack);
  EXPECT_EQ(*ack, "<ack name=\"StopAnalysis\"/>");
}

TEST(Simulator, UnknownCommandGetsErrorReply) {
  auto sim = Simulator::serve(*find_scenario("fear"), {{"127.0.0.1", 0}, 5, 0.0, kStart});
  RawClient client(sim->endpoint());
  ASSERT_TRUE(client.line());
  net::write_all(client.socket, "<action name=\"Reboot\"/>\n");
  auto reply = client.line();
  ASSERT_TRUE(reply);
  EXPECT_EQ(parse_control(*reply)->tag, "error");
}

TEST(Simulator, StopHaltsStreamWithinOneFramePeriod) {
  auto sim = Simulator::serve(*find_scenario("anger"), {{"127.0.0.1", 0}, 5, 1.0, std::nullopt});
  RawClient client(sim->endpoint());
  ASSERT_TRUE(client.line());
  client.send(Command::start_analysis);
  std::size_t frames = 0;
  while (frames < 3) {
    auto l = client.line(3000ms);
    ASSERT_TRUE(l);
    if (parse_frame(*l)) ++frames;
  }
  client.send(Command::stop_analysis);
  auto stop_sent = std::chrono::steady_clock::now();
  std::optional<std::chrono::steady_clock::time_point> last_frame;
  bool acked = false;
  while (auto l = client.line(600ms)) {
    if (parse_frame(*l)) {
      EXPECT_FALSE(acked) << "frame after StopAnalysis ack";
      last_frame = std::chrono::steady_clock::now();
    } else if (auto c = parse_control(*l); c && c->value == "StopAnalysis") {
      acked = true;
    }
  }
  EXPECT_TRUE(acked);
  if (last_frame) {
    EXPECT_LE(*last_frame - stop_sent, 200ms + 50ms);
  }
  EXPECT_FALSE(sim->streaming());
  // idempotent
  client.send(Command::stop_analysis);
  auto again = client.line();
  ASSERT_TRUE(again);
  EXPECT_EQ(parse_control(*again)->tag, "ack");
}

TEST(Simulator, AlignsFirstFrameToWholeSecond) {
  auto sim = Simulator::serve(*find_scenario("neutral-baseline"), {{"127.0.0.1", 0}, 5, 1.0, std::nullopt});
  RawClient client(sim->endpoint());
  ASSERT_TRUE(client.line());
  client.send(Command::start_analysis);
  std::optional<EmotionFrame> first;
  while (!first) {
    auto l = client.line(3000ms);
    ASSERT_TRUE(l);
    first = parse_frame(*l);
  }
  EXPECT_EQ(first->timestamp_ms % 1000, 0);
  EXPECT_LE(std::llabs(first->timestamp_ms - wall_clock_ms()), 150);
}
