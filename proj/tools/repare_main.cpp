// Command-line front end: run, sweep-n, sample, complexity, keywords.

#include <cstdio>
#include <fstream>
#include <iostream>
#include <map>

#include <CLI11.hpp>
#include <spdlog/spdlog.h>

#include "repare/datamodel.hpp"
#include "repare/error.hpp"
#include "repare/eval.hpp"
#include "repare/keywords.hpp"
#include "repare/metrics.hpp"
#include "repare/pipeline.hpp"

namespace {

using namespace repare;

// Options shared by `run` and `sweep-n`. Values are collected as strings
// and applied on top of the config file, so flags win over the file.
struct PipelineFlags {
  std::string config_file;
  std::map<std::string, std::string> values;
  std::map<std::string, bool> switches;
  std::vector<std::string> sets;

  void add_to(CLI::App& app) {
    app.add_option("-c,--config", config_file, "key=value configuration file");
    static const std::vector<std::pair<std::string, std::string>> valued{
        {"dataset", "jsonl | vqav2 | aokvqa | vizwiz"},
        {"dataset-path", "instances .jsonl file or dataset root"},
        {"split", "train | val | test"},
        {"task-mode", "direct | multiple_choice"},
        {"sample-size", "draw a development subsample of this size"},
        {"sample-seed", "seed for the subsample"},
        {"n", "candidates per question, original included"},
        {"seed", "global seed"},
        {"seeds", "comma-separated seeds; one run per seed"},
        {"scorer", "answer_conf | true_false | true_false_multi | question_likelihood"},
        {"backend", "mock:<table.json> or http(s)://host/v1"},
        {"model", "model name sent to the endpoint"},
        {"backend-style", "completion | chat"},
        {"score-mode", "prompt_logprobs | completions_echo"},
        {"nli", "prompt | none | fixed:<label> | http(s) URL"},
        {"max-inflight", "bound on concurrent model calls"},
        {"cache-dir", "response cache directory"},
        {"output-dir", "where records and reports go"},
        {"stoplist", "stoplist file for keyword extraction"},
        {"prompts", "prompt registry JSON"},
        {"max-question-entities", "keyword phrases taken from the question"},
        {"max-rationale-entities", "entities taken from the rationale"},
        {"max-detail-sentences", "sentences kept per entity detail"},
        {"limit", "process at most this many pending instances"},
    };
    for (const auto& [name, help] : valued) app.add_option("--" + name, values[name], help);
    static const std::vector<std::pair<std::string, std::string>> flags{
        {"no-rationale", "skip rationale-derived entities"},
        {"no-caption", "leave the caption out of the details"},
        {"no-question-entity", "skip keyword entities from the question"},
        {"fuse-with-image", "attach the image to fusion requests"},
        {"paraphrase-baseline", "paraphrase instead of fusing details"},
        {"llm-only", "answer without the image"},
        {"caption-plus-question", "text-only answer given the caption"},
        {"details-plus-question", "text-only answer given the details block"},
        {"oracle", "also report oracle selection"},
        {"official-vqa-averaging", "leave-one-annotator-out soft accuracy"},
        {"id-count-aux", "count AUX as a verb for idea density"},
        {"log-prompts", "store full prompt texts in records"},
        {"record-timing", "store per-instance wall time in records"},
        {"nli-fail-open", "keep candidates when the NLI call fails"},
        {"force", "discard existing records"},
    };
    for (const auto& [name, help] : flags) app.add_flag("--" + name, switches[name], help);
    app.add_option("--set", sets, "extra key=value setting (repeatable)");
  }

  PipelineConfig build() const {
    PipelineConfig config;
    if (!config_file.empty()) load_config_file(config, config_file);
    for (const auto& [name, value] : values)
      if (!value.empty()) apply_config_value(config, name, value);
    for (const auto& [name, on] : switches)
      if (on) apply_config_value(config, name, "true");
    for (const auto& s : sets) {
      const auto eq = s.find('=');
      if (eq == std::string::npos) throw ValidationError("--set expects key=value, got '" + s + "'");
      apply_config_value(config, s.substr(0, eq), s.substr(eq + 1));
    }
    return config;
  }
};

std::vector<std::size_t> parse_n_values(const std::string& s) {
  std::vector<std::size_t> out;
  std::size_t start = 0;
  while (start <= s.size()) {
    const auto comma = s.find(',', start);
    const auto item = s.substr(start, comma == std::string::npos ? std::string::npos : comma - start);
    if (!item.empty()) {
      try {
        out.push_back(std::stoul(item));
      } catch (const std::exception&) {
        throw ValidationError("bad n value '" + item + "'");
      }
    }
    if (comma == std::string::npos) break;
    start = comma + 1;
  }
  return out;
}

int run_command(const PipelineFlags& flags) {
  const auto config = flags.build();
  if (!config.seeds.empty()) {
    for (const auto& s : run_seeds(config)) {
      std::printf("%s: mean %s, stddev %s over %zu seeds\n", s.mode.c_str(), format_percent(s.mean).c_str(),
                  format_percent(s.stddev).c_str(), s.overall.size());
    }
    return 0;
  }
  const auto summary = run_pipeline(config);
  std::printf("instances %zu, processed %zu, resumed %zu, errored %zu%s\n", summary.instances,
              summary.processed, summary.resumed, summary.errored, summary.complete ? "" : " (incomplete)");
  if (!summary.reports.empty()) std::cout << reports_to_csv(summary.reports);
  return summary.complete ? 0 : 3;
}

int sweep_command(const PipelineFlags& flags, const std::string& n_values) {
  const auto rows = sweep_n(flags.build(), parse_n_values(n_values));
  for (const auto& row : rows)
    std::printf("n=%zu %s %s\n", row.n, row.report.mode.c_str(), format_percent(row.report.overall).c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Question rephrasing and answer selection for visual question answering"};
  app.require_subcommand(1);
  bool verbose = false, quiet = false;
  app.add_flag("-v,--verbose", verbose, "debug logging");
  app.add_flag("-q,--quiet", quiet, "warnings and errors only");

  PipelineFlags run_flags;
  auto* run = app.add_subcommand("run", "run the pipeline over a dataset");
  run_flags.add_to(*run);

  PipelineFlags sweep_flags;
  std::string n_values = "2,3,4,5";
  auto* sweep = app.add_subcommand("sweep-n", "evaluate nested candidate sets for several n");
  sweep_flags.add_to(*sweep);
  sweep->add_option("--n-values", n_values, "ascending comma-separated list")->capture_default_str();

  std::string s_dataset, s_root, s_split = "val", s_out, s_task_mode;
  std::size_t s_size = 0;
  std::uint64_t s_seed = 0;
  auto* sample = app.add_subcommand("sample", "draw a development subsample as .jsonl");
  sample->add_option("--dataset", s_dataset, "vqav2 | aokvqa | vizwiz")->required();
  sample->add_option("--root", s_root, "dataset root directory")->required();
  sample->add_option("--split", s_split)->capture_default_str();
  sample->add_option("--size", s_size, "sample size; 0 uses the standard size for the dataset");
  sample->add_option("--seed", s_seed, "sampling seed")->required();
  sample->add_option("--task-mode", s_task_mode, "direct | multiple_choice");
  sample->add_option("-o,--out", s_out, "output .jsonl")->required();

  std::string c_original, c_rephrased, c_out = "complexity.csv";
  bool c_aux = false;
  auto* complexity = app.add_subcommand("complexity", "compare ADD and idea density of two parse files");
  complexity->add_option("--original", c_original, "CoNLL-U parses of the original questions")->required();
  complexity->add_option("--rephrased", c_rephrased, "CoNLL-U parses of the rephrased questions")->required();
  complexity->add_option("-o,--out", c_out)->capture_default_str();
  complexity->add_flag("--id-count-aux", c_aux, "count AUX as a verb");

  std::string k_question, k_stoplist;
  auto* keywords = app.add_subcommand("keywords", "print keyword phrases of a question");
  keywords->add_option("question", k_question)->required();
  keywords->add_option("--stoplist", k_stoplist, "stoplist file (default: built-in SMART list)");

  CLI11_PARSE(app, argc, argv);
  spdlog::set_level(verbose ? spdlog::level::debug : quiet ? spdlog::level::warn : spdlog::level::info);

  try {
    if (run->parsed()) return run_command(run_flags);
    if (sweep->parsed()) return sweep_command(sweep_flags, n_values);
    if (sample->parsed()) {
      const auto dataset = parse_dataset(s_dataset);
      auto load = load_dataset(s_root, dataset, parse_split(s_split));
      for (const auto& s : load.skipped) spdlog::warn("skipped {} in {}: {}", s.record, s.file, s.message);
      auto instances = std::move(load.instances);
      if (!s_task_mode.empty()) instances = with_task_mode(std::move(instances), parse_task_mode(s_task_mode));
      auto spec = DevSplitSpec::standard(dataset, s_seed);
      if (s_size > 0) spec.sample_size = s_size;
      const auto picked = sample_dev_split(instances, spec);
      write_instances_jsonl(s_out, picked);
      std::printf("wrote %zu of %zu instances to %s\n", picked.size(), instances.size(), s_out.c_str());
      return 0;
    }
    if (complexity->parsed()) {
      MetricOptions opts;
      opts.id_count_aux = c_aux;
      spdlog::info("idea density counts AUX: {}", c_aux ? "yes" : "no");
      const auto cmp = compare_complexity(ingest_conllu(c_original), ingest_conllu(c_rephrased), opts);
      const auto csv = complexity_csv(cmp);
      std::ofstream out(c_out, std::ios::binary);
      out << csv;
      if (!out) throw LoadError(c_out, "cannot write");
      std::cout << csv;
      return 0;
    }
    if (keywords->parsed()) {
      const auto stoplist = k_stoplist.empty() ? Stoplist::smart() : Stoplist::from_file(k_stoplist);
      for (const auto& p : extract_keywords(k_question, stoplist).phrases)
        std::printf("%.4f\t%s\n", p.score, p.phrase.c_str());
      return 0;
    }
  } catch (const ValidationError& e) {
    spdlog::error("invalid input: {}", e.what());
    return 2;
  } catch (const Error& e) {
    spdlog::error("{}", e.what());
    return 1;
  }
  return 0;
}
