#pragma once

#include <array>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <system_error>

#include <json.hpp>

#include "empathic/error.hpp"

namespace empathic {

/// The seven basic emotion channels reported per frame.
enum class Emotion : std::uint8_t { happy, sad, angry, surprised, scared, disgusted, neutral };

inline constexpr std::size_t kEmotionCount = 7;

inline constexpr std::array<Emotion, kEmotionCount> kAllEmotions = {
    Emotion::happy,  Emotion::sad,       Emotion::angry,  Emotion::surprised,
    Emotion::scared, Emotion::disgusted, Emotion::neutral,
};

/// Wire label, as used in frame XML and snapshot JSON.
constexpr std::string_view label(Emotion e) {
  switch (e) {
    case Emotion::happy: return "Happy";
    case Emotion::sad: return "Sad";
    case Emotion::angry: return "Angry";
    case Emotion::surprised: return "Surprised";
    case Emotion::scared: return "Scared";
    case Emotion::disgusted: return "Disgusted";
    case Emotion::neutral: return "Neutral";
  }
  return "Neutral";
}

/// Name used inside prompts; matches the emotion vocabulary declared in the
/// system prompt's Input Format section.
constexpr std::string_view prompt_name(Emotion e) {
  switch (e) {
    case Emotion::happy: return "Happiness";
    case Emotion::sad: return "Sadness";
    case Emotion::angry: return "Anger";
    case Emotion::surprised: return "Surprise";
    case Emotion::scared: return "Fear";
    case Emotion::disgusted: return "Disgust";
    case Emotion::neutral: return "Neutral";
  }
  return "Neutral";
}

constexpr std::size_t index_of(Emotion e) { return static_cast<std::size_t>(e); }

/// Wire labels only.
inline std::optional<Emotion> parse_label(std::string_view text) {
  for (Emotion e : kAllEmotions) {
    if (text == label(e)) return e;
  }
  return std::nullopt;
}

/// Accepts wire labels and prompt names ("Sad" and "Sadness" both map to sad).
inline std::optional<Emotion> parse_emotion(std::string_view text) {
  for (Emotion e : kAllEmotions) {
    if (text == label(e) || text == prompt_name(e)) return e;
  }
  return std::nullopt;
}

/// Strict lexicographic order of wire labels; used for deterministic tie-breaks.
constexpr bool label_less(Emotion a, Emotion b) { return label(a) < label(b); }

struct EmotionFrame {
  std::array<double, kEmotionCount> intensities{};
  double valence = 0.0;
  double arousal = 0.0;
  std::int64_t timestamp_ms = 0;

  double intensity(Emotion e) const { return intensities[index_of(e)]; }
  double& intensity(Emotion e) { return intensities[index_of(e)]; }

  friend bool operator==(const EmotionFrame&, const EmotionFrame&) = default;
};

struct EmotionSnapshot {
  Emotion emotion = Emotion::neutral;
  double intensity = 0.0;
  double valence = 0.0;
  double arousal = 0.0;
  std::int64_t timestamp_ms = 0;

  friend bool operator==(const EmotionSnapshot&, const EmotionSnapshot&) = default;
};

inline bool in_unit(double x) { return std::isfinite(x) && x >= 0.0 && x <= 1.0; }
inline bool in_signed_unit(double x) { return std::isfinite(x) && x >= -1.0 && x <= 1.0; }

inline bool is_valid(const EmotionFrame& f) {
  for (double v : f.intensities) {
    if (!in_unit(v)) return false;
  }
  return in_signed_unit(f.valence) && in_unit(f.arousal) && f.timestamp_ms > 0;
}

inline bool is_valid(const EmotionSnapshot& s) {
  return in_unit(s.intensity) && in_signed_unit(s.valence) && in_unit(s.arousal) &&
         s.timestamp_ms > 0;
}

/// Dominant emotion of a frame. Ties go to the lexicographically smallest label.
inline Emotion dominant_emotion(const EmotionFrame& f) {
  Emotion best = kAllEmotions[0];
  for (Emotion e : kAllEmotions) {
    double v = f.intensity(e);
    double b = f.intensity(best);
    if (v > b || (v == b && label_less(e, best))) best = e;
  }
  return best;
}

/// Shortest decimal text that parses back to exactly `x`.
inline std::string format_real(double x) {
  std::array<char, 64> buf{};
  auto [ptr, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), x);
  if (ec != std::errc{}) return "nan";
  return std::string(buf.data(), ptr);
}

/// Fixed two-decimal rendering used in prompts ("0.62", "-0.30").
inline std::string format_fixed2(double x) {
  std::array<char, 64> buf{};
  auto [ptr, ec] =
      std::to_chars(buf.data(), buf.data() + buf.size(), x, std::chars_format::fixed, 2);
  if (ec != std::errc{}) return "nan";
  std::string out(buf.data(), ptr);
  if (out == "-0.00") out = "0.00";
  return out;
}

// Snapshot JSON schema:
//   {"emotion": "<label>", "intensity": <0..1>, "valence": <-1..1>,
//    "arousal": <0..1>, "timestamp": <epoch ms, integer > 0>}
// No other keys are accepted.

inline nlohmann::json to_json_value(const EmotionSnapshot& s) {
  return nlohmann::json{{"emotion", std::string(label(s.emotion))},
                        {"intensity", s.intensity},
                        {"valence", s.valence},
                        {"arousal", s.arousal},
                        {"timestamp", s.timestamp_ms}};
}

inline EmotionSnapshot snapshot_from_json(const nlohmann::json& j) {
  auto fail = [](const std::string& why) { throw Error(ErrorCode::schema_violation, why); };
  if (!j.is_object()) fail("snapshot must be a JSON object");
  for (const auto& [key, _] : j.items()) {
    if (key != "emotion" && key != "intensity" && key != "valence" && key != "arousal" &&
        key != "timestamp") {
      fail("unexpected key '" + key + "'");
    }
  }
  auto number = [&](const char* key) {
    if (!j.contains(key) || !j.at(key).is_number()) fail(std::string("'") + key + "' must be a number");
    return j.at(key).get<double>();
  };
  if (!j.contains("emotion") || !j.at("emotion").is_string()) fail("'emotion' must be a string");
  EmotionSnapshot s;
  auto e = parse_label(j.at("emotion").get<std::string>());
  if (!e) fail("unknown emotion label '" + j.at("emotion").get<std::string>() + "'");
  s.emotion = *e;
  s.intensity = number("intensity");
  s.valence = number("valence");
  s.arousal = number("arousal");
  if (!j.contains("timestamp") || !j.at("timestamp").is_number_integer()) {
    fail("'timestamp' must be an integer (epoch ms)");
  }
  s.timestamp_ms = j.at("timestamp").get<std::int64_t>();
  if (!in_unit(s.intensity)) fail("intensity out of [0,1]");
  if (!in_signed_unit(s.valence)) fail("valence out of [-1,1]");
  if (!in_unit(s.arousal)) fail("arousal out of [0,1]");
  if (s.timestamp_ms <= 0) fail("timestamp must be positive");
  return s;
}

}  // namespace empathic
