#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <deque>
#include <mutex>
#include <optional>
#include <span>
#include <vector>

#include <json.hpp>

#include "empathic/emotion.hpp"

namespace empathic {

/// Affective state handed to the prompt builder: the majority emotion of the
/// window and the means of intensity, valence and arousal over the samples
/// of that emotion only.
struct AffectiveContext {
  Emotion majority_emotion = Emotion::neutral;
  double mean_intensity = 0.0;
  double mean_valence = 0.0;
  double mean_arousal = 0.0;
  /// Timestamp of the most recent majority-emotion sample.
  std::int64_t timestamp_ms = 0;
  /// All samples in the window.
  std::size_t sample_count = 0;
  /// Samples of the majority emotion.
  std::size_t majority_count = 0;

  friend bool operator==(const AffectiveContext&, const AffectiveContext&) = default;
};

struct EpqConfig {
  double window_seconds = 3.0;
  std::size_t max_queue_len = 600;
};

inline std::int64_t window_ms(const EpqConfig& cfg) {
  return static_cast<std::int64_t>(std::llround(cfg.window_seconds * 1000.0));
}

/// Majority vote over the samples with timestamp in (now - window, now].
/// Ties between labels go to the one with the most recent sample, then to
/// the lexicographically smallest label.
inline std::optional<AffectiveContext> aggregate_window(std::span<const EmotionSnapshot> samples,
                                                        std::int64_t now_ms, const EpqConfig& cfg) {
  struct Tally {
    std::size_t count = 0;
    double intensity = 0.0;
    double valence = 0.0;
    double arousal = 0.0;
    std::int64_t latest = 0;
  };
  std::array<Tally, kEmotionCount> tally{};
  const std::int64_t lower = now_ms - window_ms(cfg);
  std::size_t total = 0;
  for (const auto& s : samples) {
    if (s.timestamp_ms <= lower || s.timestamp_ms > now_ms) continue;
    Tally& t = tally[index_of(s.emotion)];
    if (t.count == 0 || s.timestamp_ms > t.latest) t.latest = s.timestamp_ms;
    ++t.count;
    t.intensity += s.intensity;
    t.valence += s.valence;
    t.arousal += s.arousal;
    ++total;
  }
  if (total == 0) return std::nullopt;

  std::optional<Emotion> best;
  for (Emotion e : kAllEmotions) {
    const Tally& t = tally[index_of(e)];
    if (t.count == 0) continue;
    if (!best) {
      best = e;
      continue;
    }
    const Tally& b = tally[index_of(*best)];
    if (t.count > b.count || (t.count == b.count && t.latest > b.latest) ||
        (t.count == b.count && t.latest == b.latest && label_less(e, *best))) {
      best = e;
    }
  }
  const Tally& m = tally[index_of(*best)];
  const double n = static_cast<double>(m.count);
  return AffectiveContext{*best,    m.intensity / n, m.valence / n, m.arousal / n,
                          m.latest, total,           m.count};
}

/// The Emotional Params Queue: per-session, time-ordered, bounded store of
/// snapshots. Safe for concurrent producers and consumers.
class EmotionQueue {
 public:
  explicit EmotionQueue(std::size_t max_len = EpqConfig{}.max_queue_len) : max_len_(max_len) {}

  void push(const EmotionSnapshot& s) {
    std::lock_guard lock(mutex_);
    auto pos = std::upper_bound(items_.begin(), items_.end(), s.timestamp_ms,
                                [](std::int64_t t, const EmotionSnapshot& x) { return t < x.timestamp_ms; });
    items_.insert(pos, s);
    while (items_.size() > max_len_) items_.pop_front();
  }

  /// Copy of the samples that fall in (now - window, now], taken atomically.
  std::vector<EmotionSnapshot> window(std::int64_t now_ms, const EpqConfig& cfg) const {
    std::lock_guard lock(mutex_);
    const std::int64_t lower = now_ms - window_ms(cfg);
    std::vector<EmotionSnapshot> out;
    for (const auto& s : items_) {
      if (s.timestamp_ms > lower && s.timestamp_ms <= now_ms) out.push_back(s);
    }
    return out;
  }

  std::optional<AffectiveContext> aggregate(std::int64_t now_ms, const EpqConfig& cfg) const {
    return aggregate_window(window(now_ms, cfg), now_ms, cfg);
  }

  void clear() {
    std::lock_guard lock(mutex_);
    items_.clear();
  }

  std::size_t size() const {
    std::lock_guard lock(mutex_);
    return items_.size();
  }

  std::vector<EmotionSnapshot> contents() const {
    std::lock_guard lock(mutex_);
    return {items_.begin(), items_.end()};
  }

 private:
  mutable std::mutex mutex_;
  std::deque<EmotionSnapshot> items_;
  std::size_t max_len_;
};

inline nlohmann::json to_json_value(const AffectiveContext& c) {
  return nlohmann::json{{"majority_emotion", std::string(label(c.majority_emotion))},
                        {"mean_intensity", c.mean_intensity},
                        {"mean_valence", c.mean_valence},
                        {"mean_arousal", c.mean_arousal},
                        {"timestamp", c.timestamp_ms},
                        {"sample_count", c.sample_count},
                        {"majority_count", c.majority_count}};
}

inline nlohmann::json to_json_value(const std::optional<AffectiveContext>& c) {
  return c ? to_json_value(*c) : nlohmann::json(nullptr);
}

inline std::optional<AffectiveContext> affective_context_from_json(const nlohmann::json& j) {
  if (j.is_null()) return std::nullopt;
  try {
    AffectiveContext c;
    auto e = parse_emotion(j.at("majority_emotion").get<std::string>());
    if (!e) throw Error(ErrorCode::schema_violation, "unknown emotion in affective context");
    c.majority_emotion = *e;
    c.mean_intensity = j.at("mean_intensity").get<double>();
    c.mean_valence = j.at("mean_valence").get<double>();
    c.mean_arousal = j.at("mean_arousal").get<double>();
    c.timestamp_ms = j.value("timestamp", std::int64_t{0});
    c.sample_count = j.value("sample_count", std::size_t{1});
    c.majority_count = j.value("majority_count", c.sample_count);
    return c;
  } catch (const nlohmann::json::exception& ex) {
    throw Error(ErrorCode::schema_violation, std::string("affective context: ") + ex.what());
  }
}

}  // namespace empathic
