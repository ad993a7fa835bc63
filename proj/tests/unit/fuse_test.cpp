#include <gtest/gtest.h>

#include "repare/error.hpp"
#include "repare/fuse.hpp"
#include "repare/mock_backend.hpp"
#include "testkit.hpp"

namespace repare {
namespace {

using nlohmann::json;
using Strings = std::vector<std::string>;

class ThrowingNli : public NliProvider {
 public:
  NliVerdict classify(const std::string&, const std::string&) override { throw Error("nli down"); }
};

TEST(CleanCandidate, Forms) {
  EXPECT_EQ(clean_candidate("  Is it red?\nmore text"), "Is it red?");
  EXPECT_EQ(clean_candidate("\n\nModified Question: Is it  red?"), "Is it red?");
  EXPECT_EQ(clean_candidate("\"Is it red?\""), "Is it red?");
  EXPECT_EQ(clean_candidate("modified question: 'Is it red?'"), "Is it red?");
  EXPECT_EQ(clean_candidate(""), "");
}

TEST(FusionPrompt, CompletionLayout) {
  auto mock = MockBackend::from_json({{"rules", json::array()}});
  ModelClient client(mock);
  const auto prompts = PromptRegistry::builtin();
  Fuser fuser(client, prompts, nullptr, {}, {{"Q1?", "e", "d", "M1?"}});
  EXPECT_EQ(fuser.fusion_prompt("Is it red?", "car: it is parked.\nimage: a street"),
            "You are given a question about an image. Modify the question by adding descreptive phrases "
            "to entities based on the provided details. Both original and modified questions MUST have "
            "similar meaning and answer.\n"
            "Question: Q1?\nDetails:\ne: d\nModified Question: M1?\n\n"
            "Question: Is it red?\nDetails:\ncar: it is parked.\nimage: a street\nModified Question:");
}

TEST(FusionExemplars, BuiltinPair) {
  const auto ex = builtin_fusion_exemplars();
  ASSERT_EQ(ex.size(), 2u);
  EXPECT_EQ(ex[0].question, "What is the man wearing?");
  EXPECT_EQ(ex[1].modified_question, "Are there any flowers in the vase on the table?");
}

class FuserTest : public ::testing::Test {
 protected:
  void SetUp() override {
    instances_ = testkit::synthetic_instances(10, 4);
    recorder_ = std::make_shared<RecordingBackend>(
        MockBackend::from_json(testkit::pipeline_mock_table(instances_, 9)));
    client_ = std::make_shared<ModelClient>(recorder_);
    nli_ = std::make_unique<PromptNli>(client_, prompts_.get(BackendStyle::completion, "nli"));
  }

  std::vector<QuestionInstance> instances_;
  std::shared_ptr<RecordingBackend> recorder_;
  std::shared_ptr<ModelClient> client_;
  PromptRegistry prompts_ = PromptRegistry::builtin();
  std::unique_ptr<PromptNli> nli_;
};

TEST_F(FuserTest, ContractHoldsAcrossInstancesAndSizes) {
  Fuser fuser(*client_, prompts_, nli_.get(), {});
  for (const auto& inst : instances_) {
    for (std::size_t n : {2u, 3u, 5u, 8u}) {
      const auto set = fuser.generate_candidates(inst.question, "x: y", n, 11);
      EXPECT_NO_THROW(set.validate());
      ASSERT_EQ(set.candidates.size(), n);
      EXPECT_EQ(set.candidates[0], inst.question);
      for (const auto& c : set.candidates) {
        EXPECT_EQ(c.back(), '?');
        EXPECT_NE(c, testkit::contradicting_variant(inst));
      }
    }
  }
}

TEST_F(FuserTest, RejectionsCarryReasons) {
  Fuser fuser(*client_, prompts_, nli_.get(), {});
  std::set<std::string> reasons;
  for (const auto& inst : instances_) {
    const auto set = fuser.generate_candidates(inst.question, "x: y", 8, 3);
    for (const auto& r : set.rejected) {
      reasons.insert(r.reason);
      if (r.reason == "contradiction") {
        ASSERT_TRUE(r.nli.has_value());
        EXPECT_EQ(r.text, testkit::contradicting_variant(inst));
      }
    }
    const auto j = json(set);
    EXPECT_EQ(j["candidates"][0]["origin"], "original");
  }
  EXPECT_TRUE(reasons.count("contradiction"));
  EXPECT_TRUE(reasons.count("not_question"));
}

TEST_F(FuserTest, SamplingRequestShape) {
  Fuser fuser(*client_, prompts_, nullptr, {});
  fuser.generate_candidates(instances_[0].question, "x: y", 5, 3);
  const auto calls = recorder_->calls();
  ASSERT_GE(calls.size(), 1u);
  const auto& s = calls[0].request.sampling;
  EXPECT_EQ(s.mode, DecodeMode::top_p);
  EXPECT_EQ(s.p, 0.95);
  EXPECT_EQ(s.num_samples, 8);
  EXPECT_EQ(calls[0].request.stop_markers, Strings{"\n"});
  EXPECT_FALSE(calls[0].request.has_image());
  for (const auto& c : calls) EXPECT_EQ(testkit::classify_stage(c), "fusion");
}

TEST_F(FuserTest, ImageIsAttachedFirst) {
  Fuser fuser(*client_, prompts_, nullptr, {});
  const auto& inst = instances_[0];
  const auto set = fuser.generate_candidates_with_image(inst.question, "x: y", inst.image, 3, 3);
  const auto calls = recorder_->calls();
  ASSERT_FALSE(calls.empty());
  EXPECT_TRUE(std::holds_alternative<ImagePart>(calls[0].request.prompt_parts[0]));
  EXPECT_EQ(calls[0].request.text(), fuser.fusion_prompt(inst.question, "x: y"));
  const auto variants = testkit::image_fusion_variants(inst);
  for (std::size_t i = 1; i < set.candidates.size(); ++i)
    if (set.provenance[i].origin == CandidateOrigin::fusion_sample) {
      EXPECT_NE(std::find(variants.begin(), variants.end(), set.candidates[i]), variants.end());
    }
}

TEST_F(FuserTest, SameSeedSameSet) {
  Fuser fuser(*client_, prompts_, nli_.get(), {});
  const auto a = fuser.generate_candidates(instances_[2].question, "x: y", 5, 21);
  const auto b = fuser.generate_candidates(instances_[2].question, "x: y", 5, 21);
  EXPECT_EQ(a.candidates, b.candidates);
}

TEST_F(FuserTest, ParaphraseSkipsNliByDefault) {
  Fuser fuser(*client_, prompts_, nli_.get(), {});
  const auto set = fuser.paraphrase_candidates(instances_[0].question, 4, 5);
  EXPECT_NO_THROW(set.validate());
  for (const auto& c : recorder_->calls()) EXPECT_NE(testkit::classify_stage(c), "nli");
  for (std::size_t i = 1; i < set.candidates.size(); ++i)
    EXPECT_TRUE(set.provenance[i].origin == CandidateOrigin::paraphrase_sample ||
                set.provenance[i].origin == CandidateOrigin::original_pad);
}

json adversarial_table(const json& replies) {
  return {{"rules", {{{"op", "generate"}, {"select", "seeded"}, {"replies", replies}}}}};
}

TEST(FuserAdversarial, AllInvalidPadsWithOriginal) {
  auto rec = std::make_shared<RecordingBackend>(
      MockBackend::from_json(adversarial_table({"not a question", "Statement.", ""})));
  ModelClient client(rec);
  const auto prompts = PromptRegistry::builtin();
  Fuser fuser(client, prompts, nullptr, {});
  Trace trace;
  const auto set = fuser.generate_candidates("Is it red?", "x: y", 4, 1, &trace);
  EXPECT_NO_THROW(set.validate());
  EXPECT_EQ(set.candidates, (Strings(4, "Is it red?")));
  EXPECT_EQ(rec->calls().size(), 3u);
  EXPECT_EQ(set.rejected.size(), 18u);
  EXPECT_FALSE(trace.warnings().empty());
}

TEST(FuserAdversarial, DuplicatesCollapse) {
  auto mock = MockBackend::from_json(adversarial_table({"Is it RED?", "Is the car red?", "is the car  red?"}));
  ModelClient client(mock);
  const auto prompts = PromptRegistry::builtin();
  Fuser fuser(client, prompts, nullptr, {});
  const auto set = fuser.generate_candidates("Is it red?", "x: y", 5, 1);
  EXPECT_NO_THROW(set.validate());
  EXPECT_EQ(set.candidates[1], "Is the car red?");
  for (std::size_t i = 2; i < 5; ++i) EXPECT_EQ(set.provenance[i].origin, CandidateOrigin::original_pad);
}

TEST(FuserAdversarial, FailingBatchesStillGiveFullSet) {
  auto mock = MockBackend::from_json({{"rules", {{{"op", "generate"}, {"error", "failure"}}}}});
  ModelClient client(mock);
  const auto prompts = PromptRegistry::builtin();
  Fuser fuser(client, prompts, nullptr, {});
  Trace trace;
  const auto set = fuser.generate_candidates("Is it red?", "x: y", 3, 1, &trace);
  EXPECT_NO_THROW(set.validate());
  EXPECT_EQ(set.candidates.size(), 3u);
  EXPECT_NE(trace.warnings().back().find("every batch failed"), std::string::npos);
}

TEST(FuserAdversarial, NliErrorFailsClosedUnlessConfigured) {
  auto mock = MockBackend::from_json(adversarial_table({"Is the car red?"}));
  ModelClient client(mock);
  const auto prompts = PromptRegistry::builtin();
  ThrowingNli nli;
  Fuser closed(client, prompts, &nli, {});
  const auto a = closed.generate_candidates("Is it red?", "x: y", 2, 1);
  EXPECT_EQ(a.provenance[1].origin, CandidateOrigin::original_pad);
  EXPECT_EQ(a.rejected.front().reason, "nli_error");
  FuseOptions open;
  open.nli_fail_open = true;
  Fuser fail_open(client, prompts, &nli, open);
  EXPECT_EQ(fail_open.generate_candidates("Is it red?", "x: y", 2, 1).candidates[1], "Is the car red?");
}

TEST(FuserAdversarial, EveryCandidateContradicts) {
  auto mock = MockBackend::from_json(adversarial_table({"Is it blue?", "Is it green?"}));
  ModelClient client(mock);
  const auto prompts = PromptRegistry::builtin();
  FixedNli nli(NliLabel::contradiction);
  Fuser fuser(client, prompts, &nli, {});
  const auto set = fuser.generate_candidates("Is it red?", "x: y", 3, 1);
  EXPECT_NO_THROW(set.validate());
  EXPECT_EQ(set.candidates, (Strings(3, "Is it red?")));
}

TEST(FuserAdversarial, BadInputsThrow) {
  auto mock = MockBackend::from_json({{"rules", json::array()}});
  ModelClient client(mock);
  const auto prompts = PromptRegistry::builtin();
  Fuser fuser(client, prompts, nullptr, {});
  EXPECT_THROW(fuser.generate_candidates("Is it red?", "", 1, 0), ValidationError);
  EXPECT_THROW(fuser.generate_candidates("Is it red", "", 3, 0), ValidationError);
}

TEST(CandidateSetValidate, CatchesViolations) {
  CandidateSet s;
  s.original = "Q?";
  s.n = 3;
  s.candidates = {"Q?", "A?", "Q?"};
  s.provenance = {{CandidateOrigin::original, -1, -1, std::nullopt},
                  {CandidateOrigin::fusion_sample, 0, 0, std::nullopt},
                  {CandidateOrigin::original_pad, -1, -1, std::nullopt}};
  EXPECT_NO_THROW(s.validate());
  auto wrong_size = s;
  wrong_size.n = 4;
  EXPECT_THROW(wrong_size.validate(), ValidationError);
  auto no_mark = s;
  no_mark.candidates[1] = "A";
  EXPECT_THROW(no_mark.validate(), ValidationError);
  auto dup = s;
  dup.provenance[2].origin = CandidateOrigin::fusion_sample;
  EXPECT_THROW(dup.validate(), ValidationError);
  auto contradiction = s;
  contradiction.provenance[1].nli = NliVerdict{NliLabel::contradiction, {0, 0, 1}};
  EXPECT_THROW(contradiction.validate(), ValidationError);
  auto not_first = s;
  not_first.candidates[0] = "A?";
  EXPECT_THROW(not_first.validate(), ValidationError);
}

}  // namespace
}  // namespace repare
