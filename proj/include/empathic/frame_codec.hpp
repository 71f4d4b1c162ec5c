#pragma once

// Wire dialect spoken between the affect sensor (or its simulator) and the
// ingest client. Newline-delimited UTF-8, one document per line:
//
//   frame    <frame><Happy>f</Happy><Sad>f</Sad><Angry>f</Angry>
//            <Surprised>f</Surprised><Scared>f</Scared><Disgusted>f</Disgusted>
//            <Neutral>f</Neutral><valence>f</valence><arousal>f</arousal>
//            <timestamp>i</timestamp></frame>
//   command  <action name="StartAnalysis"/>
//   ack      <ack name="StartAnalysis"/>
//   error    <error name="StartAnalysis"/>
//   hello    <hello protocol="facereader-sim/1"/>
//
// Reals are written in shortest round-trip form, timestamps as epoch ms.
// This is a documented stand-in; it is not the vendor protocol.

#include <charconv>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>

#include "empathic/emotion.hpp"

namespace empathic {

inline constexpr std::string_view kProtocolName = "facereader-sim/1";

enum class Command { start_analysis, stop_analysis, start_log_sending, stop_log_sending };

constexpr std::string_view command_name(Command c) {
  switch (c) {
    case Command::start_analysis: return "StartAnalysis";
    case Command::stop_analysis: return "StopAnalysis";
    case Command::start_log_sending: return "StartLogSending";
    case Command::stop_log_sending: return "StopLogSending";
  }
  return "";
}

inline std::optional<Command> parse_command_name(std::string_view name) {
  for (Command c : {Command::start_analysis, Command::stop_analysis, Command::start_log_sending,
                    Command::stop_log_sending}) {
    if (command_name(c) == name) return c;
  }
  return std::nullopt;
}

inline std::string serialize_frame(const EmotionFrame& f) {
  std::string out = "<frame>";
  for (Emotion e : kAllEmotions) {
    out += '<';
    out += label(e);
    out += '>';
    out += format_real(f.intensity(e));
    out += "</";
    out += label(e);
    out += '>';
  }
  out += "<valence>" + format_real(f.valence) + "</valence>";
  out += "<arousal>" + format_real(f.arousal) + "</arousal>";
  out += "<timestamp>" + std::to_string(f.timestamp_ms) + "</timestamp>";
  out += "</frame>\n";
  return out;
}

namespace detail {

inline std::string_view strip_line_end(std::string_view s) {
  while (!s.empty() && (s.back() == '\n' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

inline bool is_name_char(char c) {
  return (c >= 'A' && c <= 'Z') || (c >= 'a' && c <= 'z');
}

template <typename T>
std::optional<T> parse_number(std::string_view text) {
  if (text.empty()) return std::nullopt;
  T value{};
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
  if (ec != std::errc{} || ptr != text.data() + text.size()) return std::nullopt;
  return value;
}

}  // namespace detail

/// Parses one frame document. Returns nullopt for anything that is not a
/// complete, in-range frame: truncation, missing or duplicate elements,
/// unknown elements, non-numeric values.
inline std::optional<EmotionFrame> parse_frame(std::string_view raw) {
  std::string_view s = detail::strip_line_end(raw);
  constexpr std::string_view kOpen = "<frame>";
  constexpr std::string_view kClose = "</frame>";
  if (s.substr(0, kOpen.size()) != kOpen) return std::nullopt;
  s.remove_prefix(kOpen.size());

  EmotionFrame frame;
  // bit i set once element i seen: 0..6 emotions, 7 valence, 8 arousal, 9 timestamp
  unsigned seen = 0;
  constexpr unsigned kAll = (1u << 10) - 1;

  while (true) {
    if (s.substr(0, kClose.size()) == kClose) {
      s.remove_prefix(kClose.size());
      if (!s.empty()) return std::nullopt;
      break;
    }
    if (s.empty() || s.front() != '<') return std::nullopt;
    s.remove_prefix(1);
    std::size_t n = 0;
    while (n < s.size() && detail::is_name_char(s[n])) ++n;
    if (n == 0 || n >= s.size() || s[n] != '>') return std::nullopt;
    std::string_view name = s.substr(0, n);
    s.remove_prefix(n + 1);

    std::size_t lt = s.find('<');
    if (lt == std::string_view::npos) return std::nullopt;
    std::string_view text = s.substr(0, lt);
    s.remove_prefix(lt);
    if (s.size() < name.size() + 3 || s.substr(0, 2) != "</" || s.substr(2, name.size()) != name ||
        s[2 + name.size()] != '>') {
      return std::nullopt;
    }
    s.remove_prefix(name.size() + 3);

    unsigned bit = 0;
    if (auto e = parse_label(name)) {
      bit = static_cast<unsigned>(index_of(*e));
      auto v = detail::parse_number<double>(text);
      if (!v) return std::nullopt;
      frame.intensity(*e) = *v;
    } else if (name == "valence") {
      bit = 7;
      auto v = detail::parse_number<double>(text);
      if (!v) return std::nullopt;
      frame.valence = *v;
    } else if (name == "arousal") {
      bit = 8;
      auto v = detail::parse_number<double>(text);
      if (!v) return std::nullopt;
      frame.arousal = *v;
    } else if (name == "timestamp") {
      bit = 9;
      auto v = detail::parse_number<std::int64_t>(text);
      if (!v) return std::nullopt;
      frame.timestamp_ms = *v;
    } else {
      return std::nullopt;
    }
    if (seen & (1u << bit)) return std::nullopt;
    seen |= 1u << bit;
  }
  if (seen != kAll || !is_valid(frame)) return std::nullopt;
  return frame;
}

/// Single-element control line such as `<ack name="StopAnalysis"/>`.
struct ControlMessage {
  std::string tag;
  std::string attribute;
  std::string value;

  friend bool operator==(const ControlMessage&, const ControlMessage&) = default;
};

inline std::string serialize_control(const ControlMessage& m) {
  return "<" + m.tag + " " + m.attribute + "=\"" + m.value + "\"/>\n";
}

inline std::optional<ControlMessage> parse_control(std::string_view raw) {
  std::string_view s = detail::strip_line_end(raw);
  if (s.size() < 4 || s.front() != '<' || s.substr(s.size() - 2) != "/>") return std::nullopt;
  s = s.substr(1, s.size() - 3);
  std::size_t n = 0;
  while (n < s.size() && detail::is_name_char(s[n])) ++n;
  if (n == 0 || n >= s.size() || s[n] != ' ') return std::nullopt;
  ControlMessage m;
  m.tag = std::string(s.substr(0, n));
  s.remove_prefix(n + 1);
  std::size_t eq = s.find('=');
  if (eq == std::string_view::npos || eq == 0) return std::nullopt;
  m.attribute = std::string(s.substr(0, eq));
  for (char c : m.attribute) {
    if (!detail::is_name_char(c)) return std::nullopt;
  }
  s.remove_prefix(eq + 1);
  if (s.size() < 2 || s.front() != '"' || s.back() != '"') return std::nullopt;
  s = s.substr(1, s.size() - 2);
  if (s.find('"') != std::string_view::npos) return std::nullopt;
  m.value = std::string(s);
  return m;
}

inline std::string serialize_command(Command c) {
  return serialize_control({"action", "name", std::string(command_name(c))});
}

inline std::string serialize_ack(Command c) {
  return serialize_control({"ack", "name", std::string(command_name(c))});
}

inline std::string serialize_hello() {
  return serialize_control({"hello", "protocol", std::string(kProtocolName)});
}

}  // namespace empathic
