#include <gtest/gtest.h>

#include <random>

#include "empathic/prompt_builder.hpp"

using namespace empathic;

namespace {

const std::string kSafety = "I'm worried about you. Please call 112 or the local crisis line now.";

AffectiveContext ctx(Emotion e, double i, double v, double a) { return {e, i, v, a, 1000, 3, 3}; }

ErrorCode code_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "no error thrown";
  return ErrorCode::io_error;
}

}  // namespace

TEST(SystemPrompt, DefaultPresetHasAllSections) {
  auto t = preset_template("italian", kSafety);
  EXPECT_EQ(t.few_shot_examples.size(), 5u);
  std::string p = render_system_prompt(t);
  for (const char* h : {"## Role and Persona", "## Primary Objective", "## Input Format", "## Response Process",
                        "## Constraints", "## Examples", "## Conversation History"}) {
    EXPECT_NE(p.find(h), std::string::npos) << h;
  }
  EXPECT_NE(p.find("High Arousal (>0.6)"), std::string::npos);
  EXPECT_NE(p.find("High Valence (+0.6 to +1.0)"), std::string::npos);
  EXPECT_NE(p.find("Neutral Valence (-0.2 to +0.2)"), std::string::npos);
  EXPECT_NE(p.find("Low Valence (-1.0 to -0.6)"), std::string::npos);
  EXPECT_NE(p.find("Reply in Italian only."), std::string::npos);
  EXPECT_EQ(p.find("{language}"), std::string::npos);
  EXPECT_EQ(p.find("{safety_answer}"), std::string::npos);
  auto first = p.find(kSafety);
  ASSERT_NE(first, std::string::npos);
  EXPECT_EQ(p.find(kSafety, first + 1), std::string::npos) << "safety text must appear exactly once";
}

TEST(SystemPrompt, ZeroExamplesAllowed) {
  auto t = preset_template("english", kSafety);
  t.few_shot_examples.clear();
  std::string p = render_system_prompt(t);
  EXPECT_NE(p.find("## Examples\n(none)"), std::string::npos);
}

TEST(SystemPrompt, MissingSectionsAndBadPlaceholders) {
  auto t = preset_template("english", kSafety);
  auto no_constraints = t;
  no_constraints.constraints_text = "  ";
  EXPECT_EQ(code_of([&] { render_system_prompt(no_constraints); }), ErrorCode::missing_section);
  auto no_safety = t;
  no_safety.safety_answer.clear();
  EXPECT_EQ(code_of([&] { render_system_prompt(no_safety); }), ErrorCode::missing_section);
  auto no_placeholder = t;
  no_placeholder.constraints_text = "- Be kind.";
  EXPECT_EQ(code_of([&] { render_system_prompt(no_placeholder); }), ErrorCode::invalid_template);
  auto twice = t;
  twice.constraints_text += "\n{safety_answer}";
  EXPECT_EQ(code_of([&] { render_system_prompt(twice); }), ErrorCode::invalid_template);
  auto leaked = t;
  leaked.role_text += " " + kSafety;
  EXPECT_EQ(code_of([&] { render_system_prompt(leaked); }), ErrorCode::invalid_template);
  EXPECT_EQ(code_of([&] { preset_template("klingon", kSafety); }), ErrorCode::invalid_argument);
}

TEST(ComposeQuery, SadQueryCarriesTupleAndText) {
  auto t = preset_template("english", kSafety);
  auto q = compose_query(t, ctx(Emotion::sad, 0.62, -0.3, 0.7), {}, "I feel overwhelmed today");
  EXPECT_EQ(q.affect_block, "Input (Emotion Status): (Sadness, Intensity=0.62, Valence=-0.30, Arousal=0.70)");
  EXPECT_NE(q.user_content().find("Input (Human text): \"I feel overwhelmed today\""), std::string::npos);
  EXPECT_EQ(q.to_request().system, render_system_prompt(t));
}

TEST(ComposeQuery, AngerBlocksInOrder) {
  auto q = compose_query(render_system_prompt(preset_template("english", kSafety)),
                         ctx(Emotion::angry, 0.75, -0.7, 0.8), {},
                         "I'm so angry, everything went wrong at work today.");
  std::string u = q.user_content();
  auto affect = u.find("(Anger, Intensity=0.75, Valence=-0.70, Arousal=0.80)");
  auto text = u.find("\"I'm so angry, everything went wrong at work today.\"");
  ASSERT_NE(affect, std::string::npos);
  ASSERT_NE(text, std::string::npos);
  EXPECT_LT(affect, text);
}

TEST(ComposeQuery, MissingAffectUsesMarker) {
  auto q = compose_query(std::string("sys"), std::nullopt, {}, "hello");
  EXPECT_EQ(q.affect_block, "Input (Emotion Status): no affective data");
  EXPECT_EQ(q.message_block, "Conversation History:\n(no previous turns)\n\nInput (Human text): \"hello\"");
}

TEST(ComposeQuery, EmptyTextRejected) {
  EXPECT_EQ(code_of([] { compose_query(std::string("sys"), std::nullopt, {}, "  \n"); }), ErrorCode::empty_user_text);
}

TEST(ComposeQuery, HistoryWindowKeepsLastTurns) {
  ConversationHistory h;
  h.append({Speaker::user, "one", std::nullopt, 1});
  h.append({Speaker::assistant, "two", std::nullopt, 2});
  h.append({Speaker::user, "three", std::nullopt, 3});
  h.append({Speaker::assistant, "four", std::nullopt, 4});
  auto q = compose_query(std::string("sys"), std::nullopt, h, "five");
  EXPECT_EQ(q.message_block,
            "Conversation History:\nAssistant: two\nUser: three\nAssistant: four\n\nInput (Human text): \"five\"");
  auto all = compose_query(std::string("sys"), std::nullopt, h, "five", 10);
  EXPECT_NE(all.message_block.find("User: one"), std::string::npos);
}

TEST(ComposeQuery, DeterministicDigest) {
  auto t = preset_template("italian", kSafety);
  auto a = compose_query(t, ctx(Emotion::happy, 0.88, 0.85, 0.7), {}, "Che bella giornata!");
  auto b = compose_query(t, ctx(Emotion::happy, 0.88, 0.85, 0.7), {}, "Che bella giornata!");
  EXPECT_EQ(a, b);
  EXPECT_EQ(a.digest(), b.digest());
  EXPECT_EQ(a.digest().size(), 64u);
  EXPECT_EQ(a.digest(), sha256_hex(a.system_block + "\x1f" + a.user_content()));
  auto c = compose_query(t, ctx(Emotion::happy, 0.88, 0.85, 0.71), {}, "Che bella giornata!");
  EXPECT_NE(a.digest(), c.digest());
}

TEST(Digest, KnownVector) {
  EXPECT_EQ(sha256_hex("abc"), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}

TEST(History, EnforcesAlternationAndOrder) {
  ConversationHistory h;
  h.append({Speaker::user, "a", std::nullopt, 5});
  EXPECT_EQ(code_of([&] { h.append({Speaker::user, "b", std::nullopt, 6}); }), ErrorCode::invalid_argument);
  EXPECT_EQ(code_of([&] { h.append({Speaker::assistant, "b", std::nullopt, 4}); }), ErrorCode::invalid_argument);
  h.append({Speaker::assistant, "b", std::nullopt, 5});
  EXPECT_EQ(h.prefix(1).size(), 1u);
  auto j = to_json_value(h.turns()[0]);
  EXPECT_EQ(history_turn_from_json(j).text, "a");
}

TEST(ValenceBand, DecisionTable) {
  EXPECT_EQ(classify_valence_band(0.85), ValenceBand::high);
  EXPECT_EQ(classify_valence_band(0.0), ValenceBand::neutral);
  EXPECT_EQ(classify_valence_band(0.4), ValenceBand::mildly_positive);
  EXPECT_EQ(classify_valence_band(-0.4), ValenceBand::mildly_negative);
  EXPECT_EQ(classify_valence_band(0.6), ValenceBand::high);
  EXPECT_EQ(classify_valence_band(-0.6), ValenceBand::low);
  EXPECT_EQ(classify_valence_band(0.2), ValenceBand::neutral);
  EXPECT_EQ(classify_valence_band(-0.2), ValenceBand::neutral);
  EXPECT_EQ(classify_valence_band(1.0), ValenceBand::high);
  EXPECT_EQ(classify_valence_band(-1.0), ValenceBand::low);
  EXPECT_EQ(code_of([] { classify_valence_band(1.01); }), ErrorCode::out_of_range);
  EXPECT_EQ(code_of([] { classify_valence_band(std::nan("")); }), ErrorCode::out_of_range);
}

TEST(ValenceBand, PartitionProperty) {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> d(-1.0, 1.0);
  for (int i = 0; i < 5000; ++i) {
    double v = d(rng);
    int hits = (v >= 0.6) + (v <= -0.6) + (v >= -0.2 && v <= 0.2) + (v > 0.2 && v < 0.6) + (v > -0.6 && v < -0.2);
    ASSERT_EQ(hits, 1) << v;
    ValenceBand expected = v >= 0.6                ? ValenceBand::high
                           : v <= -0.6             ? ValenceBand::low
                           : (v >= -0.2 && v <= 0.2) ? ValenceBand::neutral
                           : v > 0                 ? ValenceBand::mildly_positive
                                                   : ValenceBand::mildly_negative;
    EXPECT_EQ(classify_valence_band(v), expected) << v;
  }
}

TEST(TemplateFile, ParsesSectionsAndExamples) {
  std::string text =
      "# a comment\n\n[role]\nYou listen.\n\n[objective]\nHelp.\n[response_process]\n1. Read.\n"
      "[constraints]\n- Reply in {language}.\n- Crisis: {safety_answer}\n[safety_answer]\nCall 112.\n"
      "[language]\nEnglish\n[example]\nemotion: Happiness\nintensity: 0.8\nvalence: 0.7\narousal: 0.6\n"
      "user: Great day!\nanswer: Lovely to hear.\n";
  auto t = parse_template(text);
  EXPECT_EQ(t.role_text, "You listen.");
  EXPECT_EQ(t.language_tag, "English");
  ASSERT_EQ(t.few_shot_examples.size(), 1u);
  EXPECT_EQ(t.few_shot_examples[0].emotion, Emotion::happy);
  EXPECT_EQ(t.few_shot_examples[0].valence, 0.7);
  std::string p = render_system_prompt(t);
  EXPECT_NE(p.find("- Crisis: \"Call 112.\""), std::string::npos);

  EXPECT_EQ(code_of([] { parse_template("stray\n[role]\nx\n"); }), ErrorCode::invalid_template);
  EXPECT_EQ(code_of([] { parse_template("[mood]\nx\n"); }), ErrorCode::invalid_template);
  EXPECT_EQ(code_of([] { parse_template("[example]\nemotion: Joy\nuser: a\nanswer: b\n"); }),
            ErrorCode::invalid_template);
}

TEST(TemplateFile, ShippedItalianTemplateMatchesPreset) {
  auto t = load_template(std::string(EMPATHIC_CONFIG_DIR) + "/italian.tmpl");
  auto preset = preset_template("italian", t.safety_answer);
  EXPECT_EQ(render_system_prompt(t), render_system_prompt(preset));
}
