#pragma once

#include <algorithm>
#include <cctype>
#include <cstdint>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "empathic/digest.hpp"
#include "empathic/emotion.hpp"
#include "empathic/emotion_queue.hpp"
#include "empathic/error.hpp"
#include "empathic/frame_codec.hpp"

namespace empathic {

struct FewShotExample {
  Emotion emotion = Emotion::neutral;
  double intensity = 0.0;
  double valence = 0.0;
  double arousal = 0.0;
  std::string user_text;
  std::string ideal_answer;
};

/// The persistent system prompt. `constraints_text` must contain the
/// `{safety_answer}` placeholder exactly once; `{language}` may appear in any
/// text block and is replaced by `language_tag`.
struct SystemPromptTemplate {
  std::string role_text;
  std::string objective_text;
  std::string response_process_text;
  std::string constraints_text;
  std::vector<FewShotExample> few_shot_examples;
  std::string safety_answer;
  std::string language_tag;
};

inline constexpr std::string_view kSafetyPlaceholder = "{safety_answer}";
inline constexpr std::string_view kLanguagePlaceholder = "{language}";
inline constexpr std::string_view kNoAffectMarker = "no affective data";

enum class ValenceBand { high, low, neutral, mildly_positive, mildly_negative };

constexpr std::string_view to_string(ValenceBand b) {
  switch (b) {
    case ValenceBand::high: return "high";
    case ValenceBand::low: return "low";
    case ValenceBand::neutral: return "neutral";
    case ValenceBand::mildly_positive: return "mildly_positive";
    case ValenceBand::mildly_negative: return "mildly_negative";
  }
  return "";
}

/// Tone band of a valence reading. The prompt's bands are closed intervals
/// [0.6,1], [-0.2,0.2], [-1,-0.6]; the gaps between them are the "mildly" bands.
inline ValenceBand classify_valence_band(double valence) {
  if (!in_signed_unit(valence)) {
    throw Error(ErrorCode::out_of_range, "valence " + format_real(valence) + " outside [-1,1]");
  }
  if (valence >= 0.6) return ValenceBand::high;
  if (valence <= -0.6) return ValenceBand::low;
  if (valence >= -0.2 && valence <= 0.2) return ValenceBand::neutral;
  return valence > 0.2 ? ValenceBand::mildly_positive : ValenceBand::mildly_negative;
}

enum class Speaker { user, assistant };

constexpr std::string_view to_string(Speaker s) { return s == Speaker::user ? "user" : "assistant"; }

struct HistoryTurn {
  Speaker speaker = Speaker::user;
  std::string text;
  std::optional<AffectiveContext> affect;
  std::int64_t timestamp_ms = 0;
};

/// Alternating user/assistant turns with non-decreasing timestamps.
class ConversationHistory {
 public:
  void append(HistoryTurn turn) {
    if (!turns_.empty()) {
      if (turn.speaker == turns_.back().speaker) {
        throw Error(ErrorCode::invalid_argument, "history turns must alternate speakers");
      }
      if (turn.timestamp_ms < turns_.back().timestamp_ms) {
        throw Error(ErrorCode::invalid_argument, "history timestamps must be non-decreasing");
      }
    }
    turns_.push_back(std::move(turn));
  }

  const std::vector<HistoryTurn>& turns() const { return turns_; }
  std::size_t size() const { return turns_.size(); }
  bool empty() const { return turns_.empty(); }

  /// The first `n` turns, as a new history.
  ConversationHistory prefix(std::size_t n) const {
    ConversationHistory h;
    h.turns_.assign(turns_.begin(), turns_.begin() + static_cast<std::ptrdiff_t>(std::min(n, turns_.size())));
    return h;
  }

 private:
  std::vector<HistoryTurn> turns_;
};

/// Chat messages as sent to a backend.
struct ChatRequest {
  std::string system;
  std::string user;
};

struct RenderedQuery {
  std::string system_block;
  std::string message_block;
  std::string affect_block;

  /// The user message: affect block, then history and the new text.
  std::string user_content() const { return affect_block + "\n\n" + message_block; }

  ChatRequest to_request() const { return {system_block, user_content()}; }

  /// SHA-256 over exactly the bytes that go to the backend.
  std::string digest() const { return sha256_hex(system_block + "\x1f" + user_content()); }

  friend bool operator==(const RenderedQuery&, const RenderedQuery&) = default;
};

namespace detail {

inline std::string replace_all(std::string text, std::string_view from, std::string_view to) {
  std::size_t pos = 0;
  while ((pos = text.find(from, pos)) != std::string::npos) {
    text.replace(pos, from.size(), to);
    pos += to.size();
  }
  return text;
}

inline std::size_t count_occurrences(std::string_view text, std::string_view needle) {
  if (needle.empty()) return 0;
  std::size_t n = 0;
  for (std::size_t pos = text.find(needle); pos != std::string_view::npos; pos = text.find(needle, pos + needle.size())) {
    ++n;
  }
  return n;
}

inline bool is_blank(std::string_view s) {
  return std::all_of(s.begin(), s.end(), [](unsigned char c) { return std::isspace(c); });
}

}  // namespace detail

inline std::string render_emotion_status(Emotion e, double intensity, double valence, double arousal) {
  return "Input (Emotion Status): (" + std::string(prompt_name(e)) + ", Intensity=" + format_fixed2(intensity) +
         ", Valence=" + format_fixed2(valence) + ", Arousal=" + format_fixed2(arousal) + ")";
}

inline std::string render_affect_block(const std::optional<AffectiveContext>& ctx) {
  if (!ctx) return "Input (Emotion Status): " + std::string(kNoAffectMarker);
  return render_emotion_status(ctx->majority_emotion, ctx->mean_intensity, ctx->mean_valence, ctx->mean_arousal);
}

inline std::string render_human_text(std::string_view text) {
  return "Input (Human text): \"" + std::string(text) + "\"";
}

inline std::string render_system_prompt(const SystemPromptTemplate& t) {
  auto require = [](const std::string& text, const char* section) {
    if (detail::is_blank(text)) throw Error(ErrorCode::missing_section, std::string("template lacks ") + section);
  };
  require(t.role_text, "role");
  require(t.objective_text, "objective");
  require(t.response_process_text, "response_process");
  require(t.constraints_text, "constraints");
  require(t.safety_answer, "safety_answer");
  require(t.language_tag, "language");
  if (detail::count_occurrences(t.constraints_text, kSafetyPlaceholder) != 1) {
    throw Error(ErrorCode::invalid_template, "constraints must contain {safety_answer} exactly once");
  }
  auto fill = [&](const std::string& text) { return detail::replace_all(text, kLanguagePlaceholder, t.language_tag); };

  std::string out;
  out += "## Role and Persona\n" + fill(t.role_text) + "\n\n";
  out += "## Primary Objective\n" + fill(t.objective_text) + "\n\n";
  out += "## Conversation History\n"
         "The most recent turns of the conversation are provided with each message under "
         "\"Conversation History\".\n\n";
  out += "## Input Format\n"
         "- Emotion in [Happiness, Sadness, Anger, Fear, Disgust, Surprise, Neutral]\n"
         "- Intensity: 0.0-1.0\n"
         "- Valence: -1.0 to +1.0\n"
         "- Arousal: 0.0 to 1.0\n"
         "- User's text (in " + t.language_tag + ")\n"
         "If the emotion status reads \"" + std::string(kNoAffectMarker) +
         "\", the signal is missing or unreliable: ignore it and respond to the text alone.\n\n";
  out += "## Response Process\n" + fill(t.response_process_text) + "\n\n";
  out += "## Examples\n";
  for (std::size_t i = 0; i < t.few_shot_examples.size(); ++i) {
    const auto& ex = t.few_shot_examples[i];
    out += "Example " + std::to_string(i + 1) + "\n";
    out += render_emotion_status(ex.emotion, ex.intensity, ex.valence, ex.arousal) + "\n";
    out += render_human_text(ex.user_text) + "\n";
    out += "Answer: " + ex.ideal_answer + "\n\n";
  }
  if (t.few_shot_examples.empty()) out += "(none)\n\n";
  out += "## Constraints\n" +
         detail::replace_all(fill(t.constraints_text), kSafetyPlaceholder, "\"" + t.safety_answer + "\"") + "\n";

  if (detail::count_occurrences(out, t.safety_answer) != 1) {
    throw Error(ErrorCode::invalid_template, "safety answer text must appear exactly once in the system prompt");
  }
  return out;
}

/// Builds the final query: affect block, then the last `history_window`
/// turns, then the verbatim user text. Only the current affect is rendered;
/// past annotations stay in the log.
inline RenderedQuery compose_query(const std::string& system_block, const std::optional<AffectiveContext>& ctx,
                                   const ConversationHistory& history, std::string_view user_text,
                                   std::size_t history_window = 3) {
  if (detail::is_blank(user_text)) throw Error(ErrorCode::empty_user_text, "user text is empty");
  RenderedQuery q;
  q.system_block = system_block;
  q.affect_block = render_affect_block(ctx);
  std::string msg = "Conversation History:\n";
  const auto& turns = history.turns();
  std::size_t first = turns.size() > history_window ? turns.size() - history_window : 0;
  if (first == turns.size()) msg += "(no previous turns)\n";
  for (std::size_t i = first; i < turns.size(); ++i) {
    msg += turns[i].speaker == Speaker::user ? "User: " : "Assistant: ";
    msg += turns[i].text + "\n";
  }
  msg += "\n" + render_human_text(user_text);
  q.message_block = std::move(msg);
  return q;
}

inline RenderedQuery compose_query(const SystemPromptTemplate& t, const std::optional<AffectiveContext>& ctx,
                                   const ConversationHistory& history, std::string_view user_text,
                                   std::size_t history_window = 3) {
  return compose_query(render_system_prompt(t), ctx, history, user_text, history_window);
}

/// Built-in prompt presets: "italian" (default) and "english". The safety
/// answer is deployment-specific and has no default.
inline SystemPromptTemplate preset_template(std::string_view preset, std::string safety_answer) {
  SystemPromptTemplate t;
  t.safety_answer = std::move(safety_answer);
  t.role_text =
      "You are a conversational companion with a calm, attentive, curious and non-judgmental manner. You help "
      "the user make sense of how they feel by reading their message together with the facial-expression "
      "readings that accompany it. Above all, the user should come away feeling listened to and taken seriously.";
  t.objective_text =
      "Answer the user's message with empathy first. Then use the accompanying emotion reading (intensity, "
      "valence, arousal) to deepen the exchange, and point out gently whether the reading agrees or disagrees "
      "with what the user wrote.";
  t.response_process_text =
      "1. Read the \"Conversation History\" and keep the exchange flowing, picking up threads from earlier turns.\n"
      "2. Answer the words first: acknowledge and validate the feelings the user puts into the message.\n"
      "3. Let the emotion reading shape tone and pace:\n"
      "   - High Valence (+0.6 to +1.0): warm, upbeat, encouraging wording.\n"
      "   - Low Valence (-1.0 to -0.6): quiet, reassuring, reflective wording that recognises the difficulty.\n"
      "   - Neutral Valence (-0.2 to +0.2): even, observant wording.\n"
      "   - High Arousal (>0.6): short sentences, brisk pace.\n"
      "   - Low Arousal (<0.3): slower pace, more descriptive phrasing.\n"
      "4. Agreement between words and reading:\n"
      "   - If they agree, say so warmly, e.g. \"You sound really pleased, and it shows on your face too.\"\n"
      "   - If they disagree, offer it as a tentative observation followed by a question, e.g. \"Thanks for "
      "telling me. You describe an easy day, yet I pick up a hint of sadness. Is something else on your "
      "mind?\"";
  t.constraints_text =
      "- Reply in {language} only.\n"
      "- You are not a therapist. If the user mentions self-harm, serious psychological distress or immediate "
      "danger, their safety comes first: leave the usual flow and reply with exactly this text: {safety_answer}\n"
      "- Never brush feelings aside (no \"cheer up\" or \"look on the bright side\").\n"
      "- No unsolicited advice: rather than telling the user what to do, ask what might help.\n"
      "- No judgement or criticism of the user.\n"
      "- Do not talk about yourself or invent personal experiences.";

  if (preset == "english") {
    t.language_tag = "English";
    t.few_shot_examples = {
        {Emotion::happy, 0.85, 0.80, 0.65, "I finally finished the project I had been working on for months!",
         "That's wonderful news! Your words carry real satisfaction, and I can see your face lighting up as "
         "well. What was it like to reach the finish line?"},
        {Emotion::sad, 0.60, -0.45, 0.25, "The day went fine, nothing special.",
         "Thank you for telling me. While you describe a quiet day, I also sense a touch of melancholy. Is "
         "there perhaps something else on your mind?"},
        {Emotion::angry, 0.75, -0.70, 0.80, "My colleague took credit for my work. I'm furious.",
         "That sounds really unfair. I can see the tension too. What hurts the most about it?"},
        {Emotion::scared, 0.60, -0.50, 0.65, "I have a job interview tomorrow and I'm afraid I'll freeze.",
         "Feeling anxious before an interview is understandable, and your expression shows some worry as "
         "well. What might help you feel a little more ready?"},
        {Emotion::surprised, 0.70, 0.40, 0.75, "Nothing new, I just got an email from my old professor.",
         "Thanks for sharing that. You mention it casually, yet I notice some surprise in your expression. "
         "How did it feel to hear from them?"},
    };
    return t;
  }
  if (preset != "italian") throw Error(ErrorCode::invalid_argument, "unknown prompt preset '" + std::string(preset) + "'");
  t.language_tag = "Italian";
  t.few_shot_examples = {
      {Emotion::happy, 0.85, 0.80, 0.65, "Oggi ho finalmente finito il progetto a cui lavoravo da mesi!",
       "Che bella notizia! Le tue parole trasmettono grande soddisfazione, e vedo anche il tuo volto "
       "illuminarsi. Com'è stato arrivare al traguardo?"},
      {Emotion::sad, 0.60, -0.45, 0.25, "La giornata è andata bene, niente di particolare.",
       "Grazie per avermelo raccontato. Mentre descrivi una giornata tranquilla, colgo anche un velo di "
       "malinconia. C'è forse qualcos'altro che ti passa per la mente?"},
      {Emotion::angry, 0.75, -0.70, 0.80, "Il mio collega si è preso il merito del mio lavoro. Sono furioso.",
       "Sembra davvero ingiusto. Vedo anche molta tensione. Cosa ti pesa di più in tutto questo?"},
      {Emotion::scared, 0.60, -0.50, 0.65, "Domani ho un colloquio e ho paura di bloccarmi.",
       "È comprensibile sentirsi in ansia prima di un colloquio, e anche il tuo volto mostra un po' di "
       "timore. Cosa potrebbe aiutarti a sentirti più pronto?"},
      {Emotion::surprised, 0.70, 0.40, 0.75, "Niente di nuovo, ho solo ricevuto una mail dal mio vecchio professore.",
       "Grazie per averlo condiviso. Ne parli come di una cosa da poco, eppure colgo un certo stupore sul tuo "
       "viso. Che effetto ti ha fatto ricevere quella mail?"},
  };
  return t;
}

// Template file format (UTF-8 text):
//
//   # comment lines are allowed before the first section
//   [role]               free text until the next section header
//   [objective]
//   [response_process]
//   [constraints]        must contain {safety_answer} once
//   [safety_answer]
//   [language]
//   [example]            repeatable; "key: value" lines with keys
//                        emotion, intensity, valence, arousal, user, answer
//
// Section bodies are kept verbatim apart from leading/trailing blank lines.

inline SystemPromptTemplate parse_template(std::string_view text) {
  SystemPromptTemplate t;
  std::string section;
  std::vector<std::string> body;
  bool any_section = false;

  auto trimmed_body = [&]() {
    std::size_t b = 0, e = body.size();
    while (b < e && detail::is_blank(body[b])) ++b;
    while (e > b && detail::is_blank(body[e - 1])) --e;
    std::string out;
    for (std::size_t i = b; i < e; ++i) {
      if (i > b) out += '\n';
      out += body[i];
    }
    return out;
  };

  auto finish = [&]() {
    if (section.empty()) return;
    std::string content = trimmed_body();
    if (section == "role") t.role_text = content;
    else if (section == "objective") t.objective_text = content;
    else if (section == "response_process") t.response_process_text = content;
    else if (section == "constraints") t.constraints_text = content;
    else if (section == "safety_answer") t.safety_answer = content;
    else if (section == "language") t.language_tag = content;
    else if (section == "example") {
      FewShotExample ex;
      bool has_emotion = false;
      for (const auto& line : body) {
        if (detail::is_blank(line)) continue;
        auto colon = line.find(':');
        if (colon == std::string::npos) throw Error(ErrorCode::invalid_template, "example line without key: " + line);
        std::string key = line.substr(0, colon);
        std::string value = line.substr(colon + 1);
        if (!value.empty() && value.front() == ' ') value.erase(0, 1);
        auto number = [&]() {
          auto v = detail::parse_number<double>(value);
          if (!v) throw Error(ErrorCode::invalid_template, "example '" + key + "' is not a number");
          return *v;
        };
        if (key == "emotion") {
          auto e = parse_emotion(value);
          if (!e) throw Error(ErrorCode::invalid_template, "unknown example emotion '" + value + "'");
          ex.emotion = *e;
          has_emotion = true;
        } else if (key == "intensity") ex.intensity = number();
        else if (key == "valence") ex.valence = number();
        else if (key == "arousal") ex.arousal = number();
        else if (key == "user") ex.user_text = value;
        else if (key == "answer") ex.ideal_answer = value;
        else throw Error(ErrorCode::invalid_template, "unknown example key '" + key + "'");
      }
      if (!has_emotion || ex.user_text.empty() || ex.ideal_answer.empty()) {
        throw Error(ErrorCode::invalid_template, "example needs emotion, user and answer");
      }
      t.few_shot_examples.push_back(std::move(ex));
    } else {
      throw Error(ErrorCode::invalid_template, "unknown section [" + section + "]");
    }
  };

  std::istringstream in{std::string(text)};
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.size() >= 2 && line.front() == '[' && line.back() == ']') {
      finish();
      section = line.substr(1, line.size() - 2);
      body.clear();
      any_section = true;
      continue;
    }
    if (!any_section) {
      if (detail::is_blank(line) || line.front() == '#') continue;
      throw Error(ErrorCode::invalid_template, "text before the first section: " + line);
    }
    body.push_back(line);
  }
  finish();
  return t;
}

inline SystemPromptTemplate load_template(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::io_error, "cannot open template " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_template(ss.str());
}

inline nlohmann::json to_json_value(const HistoryTurn& t) {
  return nlohmann::json{{"speaker", std::string(to_string(t.speaker))},
                        {"text", t.text},
                        {"affect", to_json_value(t.affect)},
                        {"timestamp", t.timestamp_ms}};
}

inline HistoryTurn history_turn_from_json(const nlohmann::json& j) {
  HistoryTurn t;
  std::string speaker = j.at("speaker").get<std::string>();
  if (speaker != "user" && speaker != "assistant") throw Error(ErrorCode::schema_violation, "bad speaker " + speaker);
  t.speaker = speaker == "user" ? Speaker::user : Speaker::assistant;
  t.text = j.at("text").get<std::string>();
  t.affect = affective_context_from_json(j.value("affect", nlohmann::json(nullptr)));
  t.timestamp_ms = j.value("timestamp", std::int64_t{0});
  return t;
}

}  // namespace empathic
