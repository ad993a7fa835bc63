#include <gtest/gtest.h>

#include <cstdlib>
#include <fstream>

#include "repare/error.hpp"
#include "repare/pipeline.hpp"
#include "testkit.hpp"

namespace repare {
namespace {

using nlohmann::json;
using testkit::read_file;
using testkit::SyntheticWorkspace;
using testkit::write_file;
namespace fs = std::filesystem;

const fs::path kGolden = REPARE_GOLDEN_DIR;

// Compares against a frozen file; REPARE_UPDATE_GOLDEN=1 rewrites it.
void expect_golden(const std::string& name, const std::string& actual) {
  const auto path = kGolden / name;
  if (std::getenv("REPARE_UPDATE_GOLDEN")) write_file(path, actual);
  ASSERT_TRUE(fs::exists(path)) << "missing golden file " << path;
  EXPECT_EQ(actual, read_file(path)) << name;
}

TEST(Config, ApplyValues) {
  PipelineConfig c;
  apply_config_value(c, "n", "7");
  apply_config_value(c, "task-mode", "multiple_choice");
  apply_config_value(c, "seeds", "1, 2,3");
  apply_config_value(c, "scorer", "true_false");
  apply_config_value(c, "ablations", "no-rationale,oracle");
  apply_config_value(c, "llm_only", "yes");
  apply_config_value(c, "max_inflight", "2");
  apply_config_value(c, "limit", "4");
  EXPECT_EQ(c.n, 7u);
  EXPECT_EQ(c.task_mode, TaskMode::multiple_choice);
  EXPECT_EQ(c.seeds, (std::vector<std::uint64_t>{1, 2, 3}));
  EXPECT_EQ(c.scorer, ScorerKind::true_false);
  EXPECT_TRUE(c.has(Ablation::no_rationale));
  EXPECT_TRUE(c.has(Ablation::oracle));
  EXPECT_TRUE(c.has(Ablation::llm_only));
  EXPECT_EQ(c.max_inflight, 2);
  EXPECT_EQ(c.limit, 4u);
  apply_config_value(c, "llm-only", "off");
  EXPECT_FALSE(c.has(Ablation::llm_only));

  EXPECT_THROW(apply_config_value(c, "n", "-1"), ValidationError);
  EXPECT_THROW(apply_config_value(c, "n", "3x"), ValidationError);
  EXPECT_THROW(apply_config_value(c, "colour", "red"), ValidationError);
  EXPECT_THROW(apply_config_value(c, "oracle", "maybe"), ValidationError);
  EXPECT_THROW(apply_config_value(c, "scorer", "vibes"), ValidationError);
}

TEST(Config, FileLaterKeysWin) {
  testkit::TempDir dir("config");
  write_file(dir.path() / "run.cfg", "# comment\n\nn = 3\nbackend=mock:x.json\nn=4\n");
  PipelineConfig c;
  load_config_file(c, dir.path() / "run.cfg");
  EXPECT_EQ(c.n, 4u);
  EXPECT_EQ(c.backend, "mock:x.json");

  write_file(dir.path() / "bad.cfg", "n=3\njust words\n");
  try {
    load_config_file(c, dir.path() / "bad.cfg");
    FAIL();
  } catch (const LoadError& e) {
    EXPECT_NE(std::string(e.what()).find("line 2"), std::string::npos);
  }
  EXPECT_THROW(load_config_file(c, dir.path() / "absent.cfg"), LoadError);
}

TEST(Config, Validate) {
  PipelineConfig c;
  c.backend = "mock:x";
  c.dataset_path = "d.jsonl";
  EXPECT_NO_THROW(c.validate());
  auto broken = c;
  broken.n = 1;
  EXPECT_THROW(broken.validate(), ValidationError);
  broken = c;
  broken.backend.clear();
  EXPECT_THROW(broken.validate(), ValidationError);
  broken = c;
  broken.max_inflight = 0;
  EXPECT_THROW(broken.validate(), ValidationError);
  broken = c;
  broken.ablations = {Ablation::paraphrase_baseline, Ablation::fuse_with_image};
  EXPECT_THROW(broken.validate(), ValidationError);
  broken = c;
  broken.ablations = {Ablation::caption_plus_question, Ablation::details_plus_question};
  EXPECT_THROW(broken.validate(), ValidationError);
  broken = c;
  broken.dataset = "coco";
  EXPECT_THROW(broken.validate(), ValidationError);
}

TEST(Config, FingerprintTracksRecordAffectingSettings) {
  PipelineConfig a;
  auto b = a;
  b.max_inflight = 1;
  b.limit = 3;
  b.force = true;
  EXPECT_EQ(a.fingerprint(), b.fingerprint());
  b.n = 6;
  EXPECT_NE(a.fingerprint(), b.fingerprint());
  b = a;
  b.ablations.insert(Ablation::no_caption);
  EXPECT_NE(a.fingerprint(), b.fingerprint());
}

class PipelineRunTest : public ::testing::Test {
 protected:
  static void SetUpTestSuite() { ws_ = new SyntheticWorkspace("pipeline", 15, 11); }
  static void TearDownTestSuite() {
    delete ws_;
    ws_ = nullptr;
  }
  static SyntheticWorkspace* ws_;
};

SyntheticWorkspace* PipelineRunTest::ws_ = nullptr;

TEST_F(PipelineRunTest, ProducesRecordsAndReports) {
  auto cfg = ws_->config("basic");
  cfg.ablations.insert(Ablation::oracle);
  const auto summary = run_pipeline(cfg);
  EXPECT_TRUE(summary.complete);
  EXPECT_EQ(summary.instances, 15u);
  EXPECT_EQ(summary.processed, 15u);
  EXPECT_EQ(summary.errored, 0u);
  ASSERT_EQ(summary.reports.size(), 3u);
  EXPECT_EQ(summary.reports[0].mode, "baseline");
  EXPECT_EQ(summary.reports[1].mode, "confidence");
  EXPECT_EQ(summary.reports[2].mode, "oracle");
  EXPECT_GE(summary.reports[2].overall, summary.reports[0].overall);
  EXPECT_GE(summary.reports[2].overall, summary.reports[1].overall);

  const auto records = read_records(cfg.output_dir / "records.jsonl");
  ASSERT_EQ(records.size(), 15u);
  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto& r = records[i];
    EXPECT_EQ(r.question_id, ws_->instances()[i].question_id);
    const auto& cands = r.body.at("candidates").at("candidates");
    ASSERT_EQ(cands.size(), 5u);
    EXPECT_EQ(cands[0].at("text"), ws_->instances()[i].question);
    for (const auto& c : cands) {
      const auto t = c.at("text").get<std::string>();
      EXPECT_EQ(t.back(), '?');
      EXPECT_NE(t, testkit::contradicting_variant(ws_->instances()[i]));
    }
    EXPECT_EQ(r.body.at("answers").size(), 5u);
    EXPECT_EQ(r.modes.size(), 3u);
  }
  for (const char* f : {"report.csv", "report.json", "run_config.json", "questions_original.txt",
                        "questions_rephrased.txt"})
    EXPECT_TRUE(fs::exists(cfg.output_dir / f)) << f;
  expect_golden("pipeline_report.csv", read_file(cfg.output_dir / "report.csv"));
  expect_golden("pipeline_questions_rephrased.txt", read_file(cfg.output_dir / "questions_rephrased.txt"));
}

TEST_F(PipelineRunTest, DeterministicAcrossConcurrency) {
  auto one = ws_->config("serial");
  one.max_inflight = 1;
  auto many = ws_->config("parallel");
  many.max_inflight = 8;
  run_pipeline(one);
  run_pipeline(many);
  EXPECT_EQ(read_file(one.output_dir / "records.jsonl"), read_file(many.output_dir / "records.jsonl"));
  EXPECT_EQ(read_file(one.output_dir / "report.csv"), read_file(many.output_dir / "report.csv"));
}

TEST_F(PipelineRunTest, ResumesAfterLimitAndTruncation) {
  auto full = ws_->config("full");
  run_pipeline(full);

  auto part = ws_->config("resumed");
  part.limit = 6;
  auto s1 = run_pipeline(part);
  EXPECT_FALSE(s1.complete);
  EXPECT_EQ(s1.processed, 6u);
  const auto records_path = part.output_dir / "records.jsonl";
  const std::string head = read_file(records_path);
  write_file(records_path, head + R"({"question_id": "10)");

  part.limit.reset();
  auto s2 = run_pipeline(part);
  EXPECT_TRUE(s2.complete);
  EXPECT_EQ(s2.resumed, 6u);
  EXPECT_EQ(s2.processed, 9u);
  EXPECT_EQ(read_file(records_path), read_file(full.output_dir / "records.jsonl"));

  auto s3 = run_pipeline(part);
  EXPECT_EQ(s3.processed, 0u);
  EXPECT_EQ(s3.resumed, 15u);
}

TEST_F(PipelineRunTest, RefusesToMixConfigurations) {
  auto cfg = ws_->config("mixed");
  cfg.limit = 2;
  run_pipeline(cfg);
  auto other = cfg;
  other.n = 3;
  EXPECT_THROW(run_pipeline(other), ValidationError);
  other.force = true;
  other.limit.reset();
  const auto s = run_pipeline(other);
  EXPECT_EQ(s.resumed, 0u);
  EXPECT_TRUE(s.complete);
  EXPECT_EQ(read_records(cfg.output_dir / "records.jsonl")[0].body["candidates"]["n"], 3);
}

TEST_F(PipelineRunTest, CorruptMiddleRecordIsAnError) {
  auto cfg = ws_->config("corrupt");
  cfg.limit = 3;
  run_pipeline(cfg);
  const auto path = cfg.output_dir / "records.jsonl";
  write_file(path, "{broken\n" + read_file(path));
  cfg.limit.reset();
  EXPECT_THROW(run_pipeline(cfg), LoadError);
}

TEST_F(PipelineRunTest, SweepCandidateSetsAreNested) {
  auto cfg = ws_->config("sweep");
  cfg.ablations.insert(Ablation::oracle);
  const auto rows = sweep_n(cfg, {2, 3, 5});
  std::map<std::string, std::vector<double>> by_mode;
  for (const auto& row : rows) by_mode[row.report.mode].push_back(row.report.overall);
  ASSERT_EQ(by_mode["oracle"].size(), 3u);
  const auto& oracle = by_mode["oracle"];
  EXPECT_LE(oracle[0], oracle[1] + 1e-9);
  EXPECT_LE(oracle[1], oracle[2] + 1e-9);
  for (double b : by_mode["baseline"]) EXPECT_DOUBLE_EQ(b, by_mode["baseline"][0]);
  for (std::size_t v = 0; v < 3; ++v) EXPECT_GE(oracle[v] + 1e-9, by_mode["baseline"][v]);
  EXPECT_TRUE(fs::exists(cfg.output_dir / "sweep_n.csv"));

  // The n=5 slice of the sweep matches a direct run at n=5.
  auto direct = ws_->config("sweep_direct");
  direct.ablations.insert(Ablation::oracle);
  const auto summary = run_pipeline(direct);
  for (const auto& r : summary.reports)
    for (const auto& row : rows)
      if (row.n == 5 && row.report.mode == r.mode) {
        EXPECT_DOUBLE_EQ(row.report.overall, r.overall) << r.mode;
      }

  EXPECT_THROW(sweep_n(cfg, {3, 2}), ValidationError);
  EXPECT_THROW(sweep_n(cfg, {1, 2}), ValidationError);
  EXPECT_THROW(sweep_n(cfg, {}), ValidationError);
}

TEST_F(PipelineRunTest, SeedsProduceSpread) {
  auto cfg = ws_->config("seeds");
  cfg.seeds = {1, 2, 3};
  const auto spread = run_seeds(cfg);
  ASSERT_FALSE(spread.empty());
  EXPECT_EQ(spread[0].mode, "baseline");
  for (const auto& s : spread) {
    ASSERT_EQ(s.overall.size(), 3u);
    double mean = (s.overall[0] + s.overall[1] + s.overall[2]) / 3.0;
    EXPECT_NEAR(s.mean, mean, 1e-9);
    EXPECT_GE(s.stddev, 0.0);
  }
  // The baseline never depends on the seed.
  EXPECT_DOUBLE_EQ(spread[0].stddev, 0.0);
  EXPECT_TRUE(fs::exists(cfg.output_dir / "seeds.csv"));
  EXPECT_TRUE(fs::exists(cfg.output_dir / "seed_2" / "records.jsonl"));
}

TEST_F(PipelineRunTest, AlternativeScorers) {
  for (auto scorer : {ScorerKind::true_false, ScorerKind::true_false_multi, ScorerKind::question_likelihood}) {
    auto cfg = ws_->config("scorer_" + to_string(scorer));
    cfg.scorer = scorer;
    cfg.limit = 5;
    const auto summary = run_pipeline(cfg);
    ASSERT_EQ(summary.reports.size(), 3u);
    EXPECT_EQ(summary.reports[2].mode, to_string(selection_mode_for(scorer)));
    for (const auto& r : read_records(cfg.output_dir / "records.jsonl")) {
      const auto& scores = r.body.at("scores").at(to_string(scorer));
      for (const auto& s : scores) {
        EXPECT_GE(s.get<double>(), 0.0);
        EXPECT_LE(s.get<double>(), 1.0);
      }
    }
  }
}

TEST_F(PipelineRunTest, LlmOnlyNeverSendsTheImageToTheAnswerer) {
  auto cfg = ws_->config("llm_only");
  cfg.ablations.insert(Ablation::llm_only);
  cfg.limit = 5;
  auto rec = ws_->recording_backend();
  run_pipeline(cfg, rec);
  std::size_t answers = 0;
  for (const auto& call : rec->calls()) {
    const auto stage = testkit::classify_stage(call);
    if (stage == "answer" || stage == "labels") {
      ++answers;
      EXPECT_FALSE(call.request.has_image());
    }
  }
  EXPECT_GT(answers, 0u);
}

TEST_F(PipelineRunTest, ParaphraseBaselineSkipsVisualStages) {
  auto cfg = ws_->config("paraphrase");
  cfg.ablations.insert(Ablation::paraphrase_baseline);
  cfg.limit = 5;
  auto rec = ws_->recording_backend();
  const auto summary = run_pipeline(cfg, rec);
  EXPECT_EQ(summary.errored, 0u);
  std::set<std::string> stages;
  for (const auto& call : rec->calls()) stages.insert(testkit::classify_stage(call));
  EXPECT_TRUE(stages.count("paraphrase"));
  for (const char* s : {"caption", "rationale", "entities", "details", "fusion"}) EXPECT_FALSE(stages.count(s)) << s;
}

TEST_F(PipelineRunTest, CaptionPlusQuestionAnswersFromText) {
  auto cfg = ws_->config("caption_ctx");
  cfg.ablations.insert(Ablation::caption_plus_question);
  cfg.limit = 3;
  auto rec = ws_->recording_backend();
  run_pipeline(cfg, rec);
  bool saw_answer = false;
  for (const auto& call : rec->calls()) {
    if (testkit::classify_stage(call) != "answer") continue;
    saw_answer = true;
    EXPECT_FALSE(call.request.has_image());
    EXPECT_EQ(call.request.text().rfind("Context: a photo of a ", 0), 0u) << call.request.text();
  }
  EXPECT_TRUE(saw_answer);
  const auto records = read_records(cfg.output_dir / "records.jsonl");
  EXPECT_EQ(records[0].body["candidates"]["n"], 1);
}

TEST_F(PipelineRunTest, StageFailureIsRecordedNotFatal) {
  auto table = ws_->table();
  table["rules"].insert(table["rules"].begin(),
                        json{{"op", "generate"}, {"image_id", ws_->instances()[1].image.id},
                             {"regex", "^$"}, {"error", "failure"}});
  auto cfg = ws_->config("stage_failure");
  cfg.limit = 3;
  const auto summary = run_pipeline(cfg, MockBackend::from_json(table));
  EXPECT_EQ(summary.errored, 1u);
  const auto records = read_records(cfg.output_dir / "records.jsonl");
  EXPECT_TRUE(records[1].errored);
  EXPECT_EQ(records[1].error_stage, "caption");
  EXPECT_FALSE(records[0].errored);
}

TEST(PipelineErrors, UnknownBackendAndDuplicateIds) {
  SyntheticWorkspace ws("pipeline_errors", 3, 1);
  auto cfg = ws.config("out");
  cfg.backend = "ftp://nowhere";
  EXPECT_THROW(run_pipeline(cfg), ValidationError);

  auto dup = ws.instances();
  dup.push_back(dup[0]);
  write_instances_jsonl(ws.root() / "dup.jsonl", dup);
  cfg = ws.config("out2");
  cfg.dataset_path = ws.root() / "dup.jsonl";
  EXPECT_THROW(load_instances(cfg), ValidationError);
}

}  // namespace
}  // namespace repare
