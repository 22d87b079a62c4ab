#include <gtest/gtest.h>

#include <algorithm>
#include <filesystem>
#include <random>

#include "gradcheck.h"
#include "reasonseg/errors.h"
#include "reasonseg/language_model.h"

namespace reasonseg {
namespace {

using ag::Matrix;

Tokenizer grapes_tokenizer() {
  Tokenizer tok;
  std::vector<std::string> corpus = {"What is hanging from the vine ?", std::string(kSegmentInstruction),
                                     segmentation_response("a bunch of grapes"),
                                     "It is a purple fruit cluster , near the top ."};
  tok.fit(corpus);
  return tok;
}

DialogueSample grapes_sample() {
  DialogueSample s;
  s.sample_id = "s0";
  s.target_class = "a bunch of grapes";
  s.turns = {{Role::User, "What is hanging from the vine ?"},
             {Role::Assistant, "It is a purple fruit cluster , near the top ."},
             {Role::User, std::string(kSegmentInstruction)},
             {Role::Assistant, segmentation_response("a bunch of grapes")}};
  return s;
}

TEST(Tokenizer, SpecialIdsAreFixed) {
  Tokenizer tok;
  EXPECT_EQ(tok.size(), Tokenizer::kNumSpecials);
  EXPECT_EQ(tok.id("<pad>"), 0);
  EXPECT_EQ(tok.id("[IMG]"), 3);
  EXPECT_EQ(tok.id("[OBJ]"), 4);
  EXPECT_EQ(tok.id("[SEG]"), 5);
  EXPECT_EQ(tok.id("<assistant>"), 7);
  Tokenizer fitted = grapes_tokenizer();
  for (int i = 0; i < Tokenizer::kNumSpecials; ++i) EXPECT_EQ(fitted.token(i), Tokenizer::kSpecialText[i]);
  EXPECT_GE(fitted.id("grapes"), Tokenizer::kNumSpecials);
}

TEST(Tokenizer, SplitSeparatesPunctuationAndMarkers) {
  auto parts = Tokenizer::split("Sure, the target is [OBJ]red mug[SEG].");
  std::vector<std::string> expected = {"Sure", ",", "the", "target", "is", "[OBJ]", "red", "mug", "[SEG]", "."};
  EXPECT_EQ(parts, expected);
}

TEST(Tokenizer, RoundTripOnInVocabularyText) {
  Tokenizer tok = grapes_tokenizer();
  for (const auto& t : grapes_sample().turns) {
    EXPECT_EQ(tok.decode(tok.encode(t.text)), Tokenizer::canonical(t.text));
  }
}

TEST(Tokenizer, UnknownWordsMapToUnk) {
  Tokenizer tok = grapes_tokenizer();
  auto ids = tok.encode("zebra grapes");
  EXPECT_EQ(ids[0], Tokenizer::kUnk);
  EXPECT_EQ(ids[1], tok.id("grapes"));
  EXPECT_THROW(tok.token(tok.size()), InvalidInput);
}

TEST(Tokenizer, SaveLoadPreservesVocabulary) {
  Tokenizer tok = grapes_tokenizer();
  auto path = std::filesystem::temp_directory_path() / "reasonseg_vocab_test.txt";
  tok.save(path);
  EXPECT_EQ(Tokenizer::load(path), tok);
  std::filesystem::remove(path);
}

TEST(Dialogue, ValidSampleHasNoViolations) { EXPECT_TRUE(dialogue_violations(grapes_sample()).empty()); }

TEST(Dialogue, ViolationsAreDetected) {
  auto s = grapes_sample();
  s.turns.pop_back();
  EXPECT_FALSE(dialogue_violations(s).empty());

  s = grapes_sample();
  s.turns[1].text += " [OBJ] x [SEG]";
  EXPECT_FALSE(dialogue_violations(s).empty());

  s = grapes_sample();
  s.turns[2].text = "What colour is it ?";
  EXPECT_FALSE(dialogue_violations(s).empty());

  s = grapes_sample();
  std::swap(s.turns[0], s.turns[1]);
  EXPECT_THROW(validate_dialogue(s), InvalidInput);
}

TEST(Dialogue, SegmentationResponseTemplate) {
  EXPECT_NE(segmentation_response("a bunch of grapes").find("[OBJ] a bunch of grapes [SEG]"), std::string::npos);
  EXPECT_TRUE(is_segmentation_instruction(kSegmentInstruction));
  EXPECT_FALSE(is_segmentation_instruction("What is on the table ?"));
}

TEST(RenderPrompt, ClassTokensSitBetweenMarkers) {
  Tokenizer tok = grapes_tokenizer();
  auto r = render_prompt(tok, grapes_sample(), 16, 512);
  for (int i = 0; i < 16; ++i) EXPECT_EQ(r.ids[static_cast<std::size_t>(i)], Tokenizer::kImg);
  auto it = std::find(r.ids.begin(), r.ids.end(), Tokenizer::kObj);
  ASSERT_NE(it, r.ids.end());
  std::vector<int> span(it, it + 6);
  std::vector<int> expected = {Tokenizer::kObj, tok.id("a"),     tok.id("bunch"),
                               tok.id("of"),    tok.id("grapes"), Tokenizer::kSeg};
  EXPECT_EQ(span, expected);
  EXPECT_EQ(r.ids.back(), Tokenizer::kEos);
  ASSERT_EQ(r.assistant.size(), r.ids.size());
  EXPECT_EQ(r.assistant[static_cast<std::size_t>(it - r.ids.begin())], 1);
}

TEST(RenderPrompt, EmptyClassIsRejected) {
  auto s = grapes_sample();
  s.target_class.clear();
  EXPECT_THROW(render_prompt(grapes_tokenizer(), s, 16, 512), InvalidInput);
}

TEST(RenderPrompt, OverflowDropsOldestExchange) {
  Tokenizer tok = grapes_tokenizer();
  tok.add_word("blah");
  DialogueSample s = grapes_sample();
  std::string long_text;
  for (int i = 0; i < 280; ++i) long_text += "blah ";
  // Two long exchanges in front of the final two turns: roughly 600 tokens.
  s.turns.insert(s.turns.begin(), {{Role::User, long_text}, {Role::Assistant, long_text}});
  auto r = render_prompt(tok, s, 16, 512);
  EXPECT_EQ(r.dropped_turns, 2);
  EXPECT_LE(r.ids.size(), 512u);
  EXPECT_EQ(std::count(r.ids.begin(), r.ids.end(), Tokenizer::kSeg), 1);
  EXPECT_EQ(find_seg_span(r.ids).outcome, SegOutcome::Ok);
  // The surviving turns still form a valid sample.
  DialogueSample kept = s;
  kept.turns.erase(kept.turns.begin(), kept.turns.begin() + r.dropped_turns);
  EXPECT_TRUE(dialogue_violations(kept).empty());

  // If the final exchange alone cannot fit, rendering fails.
  EXPECT_THROW(render_prompt(tok, s, 16, 20), InvalidInput);
}

TEST(SegSpan, ThreeOutcomes) {
  using T = Tokenizer;
  std::vector<int> one = {T::kImg, 10, T::kObj, 11, 12, T::kSeg, 13};
  auto span = find_seg_span(one);
  EXPECT_EQ(span.outcome, SegOutcome::Ok);
  EXPECT_EQ(span.length(), 4);

  std::vector<int> none = {T::kImg, 10, T::kObj, 11, 13};
  EXPECT_EQ(find_seg_span(none).outcome, SegOutcome::NoSegmentation);
  EXPECT_EQ(to_string(find_seg_span(none).outcome), "no-segmentation");

  std::vector<int> two = {T::kObj, 11, T::kSeg, T::kObj, 12, T::kSeg};
  EXPECT_EQ(find_seg_span(two).outcome, SegOutcome::Ambiguous);
  EXPECT_EQ(to_string(find_seg_span(two).outcome), "ambiguous-segmentation");
  // Restricting the search window isolates one span.
  EXPECT_EQ(find_seg_span(two, 3).outcome, SegOutcome::Ok);
}

TEST(SegSpan, ExtractionCopiesTheInclusiveSpan) {
  using T = Tokenizer;
  std::vector<int> ids = {T::kImg, 10, T::kObj, 11, 12, T::kSeg, 13};
  std::mt19937_64 rng(2);
  Matrix h = testing::random_matrix(rng, 7, 5);
  auto s = extract_seg_states(ag::constant(h), ids);
  ASSERT_EQ(s.span.outcome, SegOutcome::Ok);
  EXPECT_EQ(s.sequence.rows(), 4);
  EXPECT_EQ(s.sequence.value(), h.middleRows(2, 4));
  EXPECT_EQ(s.query.value(), h.row(5));

  std::vector<int> none = {T::kImg, 10, 11, 12, 13, 14, 15};
  auto n = extract_seg_states(ag::constant(h), none);
  EXPECT_EQ(n.span.outcome, SegOutcome::NoSegmentation);
  EXPECT_FALSE(n.sequence.defined());
}

class TinyLm : public ::testing::Test {
 protected:
  nn::ParameterStore store;
  nn::Initializer init{31};
  LmConfig cfg{2, 2, 16, 64, 2};
  LanguageModel lm{store, init, cfg, 20, 8};
  std::mt19937_64 rng{3};
  FeatureGrid prefix{ag::constant(testing::random_matrix(rng, 4, 8)), 2, 2};

  std::vector<int> sequence(int text_len) {
    std::vector<int> ids(4, Tokenizer::kImg);
    std::uniform_int_distribution<int> word(Tokenizer::kNumSpecials, 19);
    for (int i = 0; i < text_len; ++i) ids.push_back(word(rng));
    return ids;
  }
};

TEST_F(TinyLm, LogitShapeIsLengthByVocab) {
  auto ids = sequence(9);
  auto out = lm.forward(prefix, ids);
  EXPECT_EQ(out.logits.rows(), 13);
  EXPECT_EQ(out.logits.cols(), 20);
  EXPECT_EQ(out.hidden.rows(), 13);
  EXPECT_EQ(out.hidden.cols(), 16);
}

TEST_F(TinyLm, PerturbingATokenLeavesEarlierLogitsUnchanged) {
  std::uniform_int_distribution<int> word(Tokenizer::kNumSpecials, 19);
  for (int trial = 0; trial < 20; ++trial) {
    auto ids = sequence(12);
    std::uniform_int_distribution<int> pos(5, 15);
    const int j = pos(rng);
    auto a = lm.forward(prefix, ids).logits.value();
    auto changed = ids;
    changed[static_cast<std::size_t>(j)] = changed[static_cast<std::size_t>(j)] == 8 ? 9 : 8;
    auto b = lm.forward(prefix, changed).logits.value();
    EXPECT_EQ(a.topRows(j), b.topRows(j)) << "position " << j;
    EXPECT_NE(a.row(j), b.row(j));
  }
}

TEST_F(TinyLm, RejectsMalformedSequences) {
  auto ids = sequence(4);
  auto bad = ids;
  bad.back() = 20;
  EXPECT_THROW(lm.forward(prefix, bad), InvalidInput);
  bad = ids;
  bad[1] = 9;  // prefix not fully [IMG]
  EXPECT_THROW(lm.forward(prefix, bad), InvalidInput);
  bad = ids;
  bad.push_back(Tokenizer::kImg);  // stray [IMG] in the text
  EXPECT_THROW(lm.forward(prefix, bad), InvalidInput);
  EXPECT_THROW(lm.forward(prefix, sequence(61)), InvalidInput);
}

}  // namespace
}  // namespace reasonseg
