#include <gtest/gtest.h>

#include <cmath>
#include <limits>

#include "repare/error.hpp"
#include "repare/hashing.hpp"
#include "repare/mock_backend.hpp"
#include "repare/select.hpp"
#include "testkit.hpp"

namespace repare {
namespace {

using nlohmann::json;
using Strings = std::vector<std::string>;

const ImageRef kImage{"1", "img/1.jpg", "h"};
const Strings kChoices{"red", "blue", "green", "white"};

TEST(Scorers, ConfidenceIsGeometricMeanOnRandomInputs) {
  SeededRng rng(1);
  for (int i = 0; i < 1000; ++i) {
    std::vector<double> probs, lps;
    const auto len = 1 + rng.below(12);
    double product = 1.0;
    for (std::uint64_t k = 0; k < len; ++k) {
      const double p = 0.001 + 0.999 * rng.uniform();
      probs.push_back(p);
      lps.push_back(std::log(p));
      product *= p;
    }
    const double geo = std::pow(product, 1.0 / static_cast<double>(len));
    ASSERT_NEAR(score_answer_confidence(lps), geo, 1e-12);
  }
  EXPECT_EQ(score_answer_confidence({}), 0.0);
}

TEST(Scorers, NamesRoundTrip) {
  for (auto s : {ScorerKind::answer_conf, ScorerKind::true_false, ScorerKind::true_false_multi,
                 ScorerKind::question_likelihood})
    EXPECT_EQ(parse_scorer(to_string(s)), s);
  EXPECT_EQ(to_string(selection_mode_for(ScorerKind::answer_conf)), "confidence");
  EXPECT_THROW(parse_scorer("vibes"), ValidationError);
}

TEST(ChoiceLabel, Forms) {
  EXPECT_EQ(parse_choice_label("B", kChoices), 1);
  EXPECT_EQ(parse_choice_label("B. blue", kChoices), 1);
  EXPECT_EQ(parse_choice_label("(C)", kChoices), 2);
  EXPECT_EQ(parse_choice_label("d) white", kChoices), 3);
  EXPECT_EQ(parse_choice_label("The answer is: A", kChoices), 0);
  EXPECT_EQ(parse_choice_label("I think option d fits best", kChoices), 3);
  EXPECT_EQ(parse_choice_label("It must be C. because the sky", kChoices), 2);
  EXPECT_EQ(parse_choice_label("Green.", kChoices), 2);
  EXPECT_EQ(parse_choice_label("no idea", kChoices), std::nullopt);
  EXPECT_EQ(parse_choice_label("", kChoices), std::nullopt);
}

TEST(SelectIndex, FirstMaximumWins) {
  EXPECT_EQ(select_index({0.1, 0.5, 0.5, 0.2}), 1u);
  EXPECT_EQ(select_index({0.7}), 0u);
  const double nan = std::numeric_limits<double>::quiet_NaN();
  EXPECT_EQ(select_index({nan, 0.1, 0.3}), 2u);
  EXPECT_EQ(select_index({0.2, nan, 0.1}), 0u);
  EXPECT_THROW(select_index({}), ValidationError);
}

std::vector<ScoredCandidate> scored_from(const std::vector<double>& scores) {
  std::vector<ScoredCandidate> out;
  for (std::size_t i = 0; i < scores.size(); ++i)
    out.push_back({"q" + std::to_string(i) + "?", "a" + std::to_string(i), {}, scores[i], ScorerKind::answer_conf});
  return out;
}

TEST(Select, ArgmaxInvariantUnderIncreasingTransforms) {
  SeededRng rng(5);
  for (int i = 0; i < 1000; ++i) {
    std::vector<double> s;
    const auto n = 2 + rng.below(8);
    for (std::uint64_t k = 0; k < n; ++k) s.push_back(rng.below(4) == 0 ? 0.5 : rng.uniform());
    const auto base = select(scored_from(s)).chosen_index;
    std::vector<double> logged, cubed, affine;
    for (double v : s) {
      logged.push_back(std::log(v + 1e-9));
      cubed.push_back(v * v * v);
      affine.push_back(3.0 * v - 7.0);
    }
    ASSERT_EQ(select(scored_from(logged)).chosen_index, base);
    ASSERT_EQ(select(scored_from(cubed)).chosen_index, base);
    ASSERT_EQ(select(scored_from(affine)).chosen_index, base);
  }
}

TEST(OracleSelect, PicksAmongBestAndIsSeeded) {
  const auto scored = scored_from({0.1, 0.2, 0.3, 0.4});
  const std::vector<double> utilities{1.0, 0.0, 1.0, 1.0 / 3.0};
  std::set<std::size_t> picks;
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    const auto r = oracle_select(scored, utilities, seed);
    EXPECT_EQ(utilities[r.chosen_index], 1.0);
    EXPECT_EQ(r.chosen_index, oracle_select(scored, utilities, seed).chosen_index);
    picks.insert(r.chosen_index);
  }
  EXPECT_EQ(picks, (std::set<std::size_t>{0, 2}));
  EXPECT_THROW(oracle_select(scored, {1.0}, 0), ValidationError);
}

TEST(OracleSelect, FromInstanceGold) {
  auto inst = testkit::synthetic_instances(1, 3)[0];
  inst.gold_answers = Strings(10, "red");
  auto scored = scored_from({0.9, 0.1});
  scored[1].answer = "red";
  EXPECT_EQ(oracle_select(scored, inst, 0).chosen_index, 1u);
}

class AnswererTest : public ::testing::Test {
 protected:
  void make(const json& rules, BackendStyle style = BackendStyle::completion) {
    recorder_ = std::make_shared<RecordingBackend>(MockBackend::from_json({{"rules", rules}}));
    client_ = std::make_unique<ModelClient>(recorder_);
    AnswerOptions opts;
    opts.style = style;
    answerer_ = std::make_unique<Answerer>(*client_, prompts_, opts);
  }
  PromptRegistry prompts_ = PromptRegistry::builtin();
  std::shared_ptr<RecordingBackend> recorder_;
  std::unique_ptr<ModelClient> client_;
  std::unique_ptr<Answerer> answerer_;
};

TEST_F(AnswererTest, DirectAnswerRequest) {
  make({{{"op", "generate"}, {"contains", "Short Answer:"},
         {"replies", {{{"text", "two dogs\nextra"}, {"logprobs", {-0.2, -0.4}}}}}}});
  Trace trace;
  const auto a = answerer_->answer_candidate({&kImage, "How many dogs?", TaskMode::direct, {}, ""}, 3, &trace);
  EXPECT_FALSE(a.errored);
  EXPECT_EQ(a.answer, "two dogs");
  EXPECT_EQ(a.token_logprobs.size(), 2u);
  const auto req = recorder_->calls()[0].request;
  EXPECT_EQ(req.sampling.mode, DecodeMode::greedy);
  EXPECT_EQ(req.sampling.length_penalty, -1.0);
  EXPECT_TRUE(req.want_logprobs);
  EXPECT_TRUE(req.has_image());
  EXPECT_EQ(req.text(), "Question: How many dogs? Short Answer:");
  EXPECT_EQ(trace.prompts().size(), 1u);
}

TEST_F(AnswererTest, ContextAndTextOnly) {
  make({{{"op", "generate"}, {"replies", {"red"}}}});
  answerer_->answer_candidate({nullptr, "What color?", TaskMode::direct, {}, "image: a red car"}, 0);
  const auto req = recorder_->calls()[0].request;
  EXPECT_FALSE(req.has_image());
  EXPECT_EQ(req.text(), "Context: image: a red car\nQuestion: What color? Short Answer:");
}

TEST_F(AnswererTest, ErrorsAreReportedNotThrown) {
  make({{{"op", "generate"}, {"error", "failure"}}});
  const auto a = answerer_->answer_candidate({&kImage, "Why?", TaskMode::direct, {}, ""}, 0);
  EXPECT_TRUE(a.errored);
  EXPECT_FALSE(a.error.empty());
}

TEST_F(AnswererTest, MultipleChoiceUsesRenormalisedLabelProbability) {
  make({{{"op", "generate"}, {"contains", "Options:"}, {"replies", {"B. blue"}}},
        {{"op", "score"}, {"continuation", "A"}, {"logprobs", {std::log(0.1)}}},
        {{"op", "score"}, {"continuation", "B"}, {"logprobs", {std::log(0.3)}}},
        {{"op", "score"}, {"continuation", "C"}, {"logprobs", {std::log(0.05)}}},
        {{"op", "score"}, {"continuation", "D"}, {"logprobs", {std::log(0.05)}}}});
  const auto a = answerer_->answer_candidate({&kImage, "Which color?", TaskMode::multiple_choice, kChoices, ""}, 0);
  ASSERT_FALSE(a.errored) << a.error;
  EXPECT_EQ(a.answer, "B");
  ASSERT_TRUE(a.label_probs);
  double sum = 0;
  for (double p : *a.label_probs) sum += p;
  EXPECT_NEAR(sum, 1.0, 1e-12);
  EXPECT_NEAR((*a.label_probs)[1], 0.6, 1e-12);
  ASSERT_EQ(a.token_logprobs.size(), 1u);
  EXPECT_NEAR(std::exp(a.token_logprobs[0]), 0.6, 1e-12);
  EXPECT_FALSE(a.label_fallback);
}

TEST_F(AnswererTest, MultipleChoiceFallsBackToLabelArgmax) {
  make({{{"op", "generate"}, {"contains", "Options:"}, {"replies", {"hmm"}}},
        {{"op", "score"}, {"continuation", "C"}, {"logprobs", {-0.01}}},
        {{"op", "score"}, {"logprobs", {-5.0}}}});
  const auto a = answerer_->answer_candidate({&kImage, "Which color?", TaskMode::multiple_choice, kChoices, ""}, 0);
  EXPECT_EQ(a.answer, "C");
  EXPECT_TRUE(a.label_fallback);
}

TEST_F(AnswererTest, MultipleChoiceWithoutLabelOrScoresErrors) {
  recorder_ = std::make_shared<RecordingBackend>(MockBackend::from_json(
      {{"capabilities", {{"score", false}}}, {"rules", {{{"op", "generate"}, {"replies", {"hmm"}}}}}}));
  client_ = std::make_unique<ModelClient>(recorder_);
  Answerer answerer(*client_, prompts_, {});
  Trace trace;
  const auto a = answerer.answer_candidate({&kImage, "Which?", TaskMode::multiple_choice, kChoices, ""}, 0, &trace);
  EXPECT_TRUE(a.errored);
  EXPECT_FALSE(trace.warnings().empty());
}

TEST_F(AnswererTest, ChatMultipleChoiceHasTwoTurns) {
  make({{{"op", "generate"}, {"contains", "final answer"}, {"replies", {"D."}}},
        {{"op", "generate"}, {"contains", "Options:"}, {"replies", {"It looks white, so D."}}}},
       BackendStyle::chat);
  const auto a = answerer_->answer_candidate({&kImage, "Which?", TaskMode::multiple_choice, kChoices, ""}, 0);
  EXPECT_EQ(a.answer, "D");
  const auto calls = recorder_->calls();
  ASSERT_GE(calls.size(), 2u);
  EXPECT_EQ(calls[0].request.sampling.max_new_tokens, 96);
  EXPECT_NE(calls[1].request.text().find("It looks white, so D.\n### Human: So which option"), std::string::npos);
}

TEST_F(AnswererTest, TrueFalseRenormalisesOverTwoLabels) {
  make({{{"op", "score"}, {"contains", "Proposed Answer: red."}, {"continuation", "A"}, {"logprobs", {std::log(0.2)}}},
        {{"op", "score"}, {"contains", "Proposed Answer: red."}, {"continuation", "B"}, {"logprobs", {std::log(0.6)}}}});
  const AnswerRequest req{&kImage, "What color?", TaskMode::direct, {}, ""};
  const double p = answerer_->score_true_false(req, "red");
  EXPECT_NEAR(p, 0.25, 1e-12);
  const auto& text = recorder_->calls()[0].request.text();
  EXPECT_EQ(text,
            "Question: What color? Short Answer:\nProposed Answer: red.\nIs the proposed answer true or false? "
            "(A) True, (B) False.\nThe proposed answer is:");
  EXPECT_THROW(answerer_->score_true_false(req, " "), ValidationError);
}

TEST_F(AnswererTest, TrueFalseProbabilitiesSumToOne) {
  make(json::array());
  SeededRng rng(4);
  for (int i = 0; i < 50; ++i) {
    const std::string ans = "answer" + std::to_string(rng.below(1000));
    const AnswerRequest req{&kImage, "What?", TaskMode::direct, {}, ""};
    const double p_true = answerer_->score_true_false(req, ans);
    ModelRequest ctx;
    ctx.prompt_parts = recorder_->calls().back().request.prompt_parts;
    const auto dist = client_->label_distribution(ctx, {" A", " B"});
    EXPECT_NEAR(dist[0] + dist[1], 1.0, 1e-12);
    EXPECT_NEAR(p_true, dist[0], 1e-15);
  }
}

TEST_F(AnswererTest, TrueFalseMultiListsPlausibleAnswers) {
  make(json::array());
  const Strings plausible{"red", "blue"};
  answerer_->score_true_false({&kImage, "What color?", TaskMode::direct, {}, ""}, "red", &plausible);
  EXPECT_NE(recorder_->calls()[0].request.text().find("Plausible Answers: red, blue.\nProposed Answer: red."),
            std::string::npos);
}

TEST_F(AnswererTest, QuestionLikelihoodScoresQuestionGivenImage) {
  make({{{"op", "score"}, {"continuation", "Is it red?"}, {"logprobs", {std::log(0.5), std::log(0.125)}}}});
  EXPECT_NEAR(answerer_->score_question_likelihood(&kImage, "Is it red?"), 0.25, 1e-12);
  const auto call = recorder_->calls()[0];
  EXPECT_EQ(call.continuation, "Is it red?");
  EXPECT_TRUE(call.request.has_image());
  EXPECT_EQ(call.request.text(), "");
  EXPECT_THROW(answerer_->score_question_likelihood(&kImage, ""), ValidationError);
}

TEST_F(AnswererTest, McNeedsFourChoices) {
  make(json::array());
  EXPECT_THROW(answerer_->vqa_prompt({&kImage, "Which?", TaskMode::multiple_choice, {"a"}, ""}), ValidationError);
}

}  // namespace
}  // namespace repare
