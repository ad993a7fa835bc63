#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "repare/datamodel.hpp"
#include "repare/eval.hpp"
#include "repare/extract.hpp"
#include "repare/fuse.hpp"
#include "repare/keywords.hpp"
#include "repare/model_client.hpp"
#include "repare/prompts.hpp"
#include "repare/select.hpp"
#include "repare/trace.hpp"

namespace repare {

enum class Ablation {
  no_rationale,
  no_caption,
  no_question_entity,
  fuse_with_image,
  paraphrase_baseline,
  llm_only,
  caption_plus_question,
  details_plus_question,
  oracle,
};

std::string to_string(Ablation a);
Ablation parse_ablation(const std::string& s);

struct PipelineConfig {
  /// "jsonl" reads `dataset_path` as written by write_instances_jsonl;
  /// vqav2 / aokvqa / vizwiz read the published layout under it.
  std::string dataset = "jsonl";
  std::filesystem::path dataset_path;
  Split split = Split::val;
  std::optional<TaskMode> task_mode;         // override, e.g. A-OKVQA direct vs MC
  std::optional<std::size_t> sample_size;    // draw a development subsample
  std::uint64_t sample_seed = 0;

  std::size_t n = 5;
  std::uint64_t seed = 0;
  std::vector<std::uint64_t> seeds;  // several seeds: one run per seed
  ScorerKind scorer = ScorerKind::answer_conf;

  /// "mock:<table.json>" or an http(s) base URL of a chat-completions API.
  std::string backend;
  std::string model;
  BackendStyle backend_style = BackendStyle::completion;
  std::string score_mode = "prompt_logprobs";
  /// "prompt" (ask the backend), "none", "fixed:<label>" or "http:<url>".
  std::string nli = "prompt";
  bool nli_fail_open = false;

  std::set<Ablation> ablations;
  int max_inflight = 8;
  std::optional<std::filesystem::path> cache_dir;
  std::filesystem::path output_dir = "repare_out";
  std::optional<std::filesystem::path> stoplist_path;
  std::optional<std::filesystem::path> prompts_path;
  std::size_t max_question_entities = 3;
  std::size_t max_rationale_entities = 3;
  std::size_t max_detail_sentences = 2;
  bool id_count_aux = false;
  bool official_vqa_averaging = false;

  bool log_prompts = false;
  bool record_timing = false;
  bool force = false;
  /// Stop after this many newly processed instances (the rest stay pending).
  std::optional<std::size_t> limit;

  bool has(Ablation a) const { return ablations.count(a) > 0; }

  /// n >= 2, a backend, one candidate-generation mode, sane limits.
  void validate() const;

  /// Settings that affect record contents; stored next to the records so a
  /// resumed run cannot mix configurations.
  nlohmann::json fingerprint() const;
};

/// Applies one key=value setting (same names as the CLI flags, with '_' or
/// '-'). Unknown keys throw ValidationError.
void apply_config_value(PipelineConfig& config, const std::string& key, const std::string& value);

/// Reads a key=value file: '#' comments, blank lines ignored, later keys win.
void load_config_file(PipelineConfig& config, const std::filesystem::path& path);

/// Everything a run needs that is built from the configuration.
struct Runtime {
  std::shared_ptr<Backend> backend;
  std::shared_ptr<ModelClient> client;
  std::shared_ptr<NliProvider> nli;  // may be null
  PromptRegistry prompts;
  Stoplist stoplist;
};

/// Builds backend, client, NLI provider, prompts and stoplist. A non-null
/// `backend` or `nli` replaces what the configuration names.
Runtime make_runtime(const PipelineConfig& config, std::shared_ptr<Backend> backend = nullptr,
                     std::shared_ptr<NliProvider> nli = nullptr);

std::vector<QuestionInstance> load_instances(const PipelineConfig& config);

/// Outcome of one selection mode for one instance.
struct ModeOutcome {
  std::string mode;
  std::size_t chosen_index = 0;
  std::string question;
  std::string answer;
  std::optional<double> utility;  // absent without gold answers
  bool errored = false;
  std::string error;
};

/// One line of records.jsonl.
struct RunRecord {
  std::string question_id;
  bool errored = false;
  std::string error_stage;
  std::string error;
  std::vector<ModeOutcome> modes;
  nlohmann::json body;  // full record

  std::string to_line() const;
  static RunRecord from_json(const nlohmann::json& j);
};

/// Stage I and answering for one instance with a fixed candidate budget.
/// Modes are not evaluated here; see evaluate_modes.
struct InstanceOutcome {
  QuestionInstance instance;
  std::uint64_t seed = 0;
  bool errored = false;
  std::string error_stage;
  std::string error;
  std::optional<VisualDetails> details;
  std::string details_block;
  std::string context;
  std::optional<CandidateSet> candidates;
  std::vector<AnsweredCandidate> answers;
  std::vector<std::optional<double>> question_likelihood;  // per candidate
  std::vector<std::optional<double>> true_false;            // per candidate
  std::map<std::string, std::vector<double>> scores;        // last evaluate_modes call
  Trace trace;
};

class Pipeline {
 public:
  Pipeline(const PipelineConfig& config, Runtime& runtime);

  /// Runs Stage I(a), I(b) and answers every candidate. Failures are
  /// captured in the outcome.
  InstanceOutcome process(const QuestionInstance& instance, std::size_t n);

  /// Scores and selects among the first `k` candidates for every enabled
  /// mode. May call the model again (scorers that depend on the set).
  std::vector<ModeOutcome> evaluate_modes(InstanceOutcome& outcome, std::size_t k);

  /// Full record for an instance processed at the configured n.
  RunRecord run_instance(const QuestionInstance& instance);

 private:
  AnswerRequest answer_request(const QuestionInstance& instance, const std::string& question,
                               const std::string& context) const;

  const PipelineConfig& config_;
  Runtime& runtime_;
  Extractor extractor_;
  Fuser fuser_;
  Answerer answerer_;
};

struct RunSummary {
  std::size_t instances = 0;
  std::size_t processed = 0;  // newly processed in this call
  std::size_t resumed = 0;    // records already present
  std::size_t errored = 0;
  bool complete = false;
  std::vector<EvalReport> reports;
};

/// Processes every instance not yet in <output_dir>/records.jsonl, keeping
/// the file in dataset order, then emits the reports.
RunSummary run_pipeline(const PipelineConfig& config, std::shared_ptr<Backend> backend = nullptr,
                        std::shared_ptr<NliProvider> nli = nullptr);

/// Reads records.jsonl; a truncated final line is ignored.
std::vector<RunRecord> read_records(const std::filesystem::path& path);

/// Per-mode reports over the records (fixed mode order).
std::vector<EvalReport> build_reports(const std::vector<RunRecord>& records,
                                      const std::vector<QuestionInstance>& instances);

/// Writes report.csv and report.json (and the chosen questions for
/// complexity analysis) under `output_dir`. Throws on empty records.
std::vector<EvalReport> emit_report(const std::vector<RunRecord>& records,
                                    const std::vector<QuestionInstance>& instances,
                                    const PipelineConfig& config);

struct SweepRow {
  std::size_t n = 0;
  EvalReport report;
};

/// Generates candidates once at max(n_values) and evaluates every prefix,
/// so candidate sets are nested across n. Writes sweep_n.csv.
std::vector<SweepRow> sweep_n(const PipelineConfig& config, const std::vector<std::size_t>& n_values,
                              std::shared_ptr<Backend> backend = nullptr,
                              std::shared_ptr<NliProvider> nli = nullptr);

struct SeedSpread {
  std::string mode;
  std::vector<double> overall;  // one per seed
  double mean = 0.0;
  double stddev = 0.0;  // sample standard deviation, 0 for one seed
};

/// One run per seed under <output_dir>/seed_<s>, then seeds.csv with
/// mean and spread per mode.
std::vector<SeedSpread> run_seeds(const PipelineConfig& config, std::shared_ptr<Backend> backend = nullptr,
                                  std::shared_ptr<NliProvider> nli = nullptr);

}  // namespace repare
