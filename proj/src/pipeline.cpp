#include "repare/pipeline.hpp"

#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <exception>
#include <fstream>
#include <map>
#include <mutex>
#include <sstream>
#include <thread>

#include <spdlog/spdlog.h>

#include "repare/error.hpp"
#include "repare/hashing.hpp"
#include "repare/http_backend.hpp"
#include "repare/mock_backend.hpp"
#include "text_util.hpp"

namespace repare {

using nlohmann::json;
namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// Configuration

namespace {

const std::vector<std::pair<Ablation, std::string>> kAblationNames{
    {Ablation::no_rationale, "no_rationale"},
    {Ablation::no_caption, "no_caption"},
    {Ablation::no_question_entity, "no_question_entity"},
    {Ablation::fuse_with_image, "fuse_with_image"},
    {Ablation::paraphrase_baseline, "paraphrase_baseline"},
    {Ablation::llm_only, "llm_only"},
    {Ablation::caption_plus_question, "caption_plus_question"},
    {Ablation::details_plus_question, "details_plus_question"},
    {Ablation::oracle, "oracle"},
};

bool parse_bool(const std::string& key, const std::string& v) {
  const auto s = text::to_lower(text::trim(v));
  if (s == "1" || s == "true" || s == "yes" || s == "on") return true;
  if (s == "0" || s == "false" || s == "no" || s == "off") return false;
  throw ValidationError(key + ": expected a boolean, got '" + v + "'");
}

std::uint64_t parse_u64(const std::string& key, const std::string& v) {
  try {
    std::size_t pos = 0;
    const auto t = text::trim(v);
    if (t.empty() || t[0] == '-') throw std::invalid_argument("negative");
    const auto x = std::stoull(t, &pos);
    if (pos != t.size()) throw std::invalid_argument("trailing characters");
    return x;
  } catch (const std::exception&) {
    throw ValidationError(key + ": expected a non-negative integer, got '" + v + "'");
  }
}

std::vector<std::string> split_list(const std::string& v) {
  std::vector<std::string> out;
  std::string item;
  std::istringstream in(v);
  while (std::getline(in, item, ',')) {
    auto t = text::trim(item);
    if (!t.empty()) out.push_back(t);
  }
  return out;
}

bool contexted(const PipelineConfig& c) {
  return c.has(Ablation::caption_plus_question) || c.has(Ablation::details_plus_question);
}

}  // namespace

std::string to_string(Ablation a) {
  for (const auto& [v, name] : kAblationNames)
    if (v == a) return name;
  return "unknown";
}

Ablation parse_ablation(const std::string& s) {
  std::string k = s;
  for (auto& c : k)
    if (c == '-') c = '_';
  for (const auto& [v, name] : kAblationNames)
    if (name == k) return v;
  throw ValidationError("unknown ablation '" + s + "'");
}

void PipelineConfig::validate() const {
  if (n < 2) throw ValidationError("n must be at least 2");
  if (backend.empty()) throw ValidationError("no backend configured");
  if (max_inflight < 1) throw ValidationError("max_inflight must be at least 1");
  if (dataset_path.empty()) throw ValidationError("no dataset path configured");
  if (has(Ablation::paraphrase_baseline) && has(Ablation::fuse_with_image))
    throw ValidationError("paraphrase_baseline and fuse_with_image are mutually exclusive");
  if (has(Ablation::caption_plus_question) && has(Ablation::details_plus_question))
    throw ValidationError("caption_plus_question and details_plus_question are mutually exclusive");
  if (contexted(*this) && (has(Ablation::paraphrase_baseline) || has(Ablation::fuse_with_image)))
    throw ValidationError("context-only modes do not generate candidates; drop paraphrase/fusion flags");
  if (dataset != "jsonl") parse_dataset(dataset);
}

json PipelineConfig::fingerprint() const {
  json abl = json::array();
  for (auto a : ablations) abl.push_back(to_string(a));
  json j{{"dataset", dataset},
         {"dataset_path", dataset_path.string()},
         {"split", to_string(split)},
         {"n", n},
         {"seed", seed},
         {"scorer", to_string(scorer)},
         {"backend", backend},
         {"model", model},
         {"backend_style", to_string(backend_style)},
         {"score_mode", score_mode},
         {"nli", nli},
         {"nli_fail_open", nli_fail_open},
         {"ablations", abl},
         {"stoplist", stoplist_path ? stoplist_path->string() : std::string("builtin")},
         {"prompts", prompts_path ? prompts_path->string() : std::string("builtin")},
         {"max_question_entities", max_question_entities},
         {"max_rationale_entities", max_rationale_entities},
         {"max_detail_sentences", max_detail_sentences},
         {"official_vqa_averaging", official_vqa_averaging},
         {"log_prompts", log_prompts},
         {"record_timing", record_timing}};
  j["task_mode"] = task_mode ? json(to_string(*task_mode)) : json(nullptr);
  j["sample_size"] = sample_size ? json(*sample_size) : json(nullptr);
  j["sample_seed"] = sample_seed;
  return j;
}

void apply_config_value(PipelineConfig& c, const std::string& raw_key, const std::string& raw_value) {
  std::string key = text::trim(raw_key);
  for (auto& ch : key)
    if (ch == '-') ch = '_';
  const std::string v = text::trim(raw_value);
  if (key == "dataset") c.dataset = v;
  else if (key == "dataset_path") c.dataset_path = v;
  else if (key == "split") c.split = parse_split(v);
  else if (key == "task_mode") c.task_mode = parse_task_mode(v);
  else if (key == "sample_size") c.sample_size = parse_u64(key, v);
  else if (key == "sample_seed") c.sample_seed = parse_u64(key, v);
  else if (key == "n") c.n = parse_u64(key, v);
  else if (key == "seed") c.seed = parse_u64(key, v);
  else if (key == "seeds") {
    c.seeds.clear();
    for (const auto& s : split_list(v)) c.seeds.push_back(parse_u64(key, s));
  } else if (key == "scorer") c.scorer = parse_scorer(v);
  else if (key == "backend") c.backend = v;
  else if (key == "model") c.model = v;
  else if (key == "backend_style") c.backend_style = parse_backend_style(v);
  else if (key == "score_mode") c.score_mode = v;
  else if (key == "nli") c.nli = v;
  else if (key == "nli_fail_open") c.nli_fail_open = parse_bool(key, v);
  else if (key == "ablations") {
    for (const auto& a : split_list(v)) c.ablations.insert(parse_ablation(a));
  } else if (key == "max_inflight") c.max_inflight = static_cast<int>(parse_u64(key, v));
  else if (key == "cache_dir") c.cache_dir = v.empty() ? std::nullopt : std::optional<fs::path>(v);
  else if (key == "output_dir") c.output_dir = v;
  else if (key == "stoplist") c.stoplist_path = v;
  else if (key == "prompts") c.prompts_path = v;
  else if (key == "max_question_entities") c.max_question_entities = parse_u64(key, v);
  else if (key == "max_rationale_entities") c.max_rationale_entities = parse_u64(key, v);
  else if (key == "max_detail_sentences") c.max_detail_sentences = parse_u64(key, v);
  else if (key == "id_count_aux") c.id_count_aux = parse_bool(key, v);
  else if (key == "official_vqa_averaging") c.official_vqa_averaging = parse_bool(key, v);
  else if (key == "log_prompts") c.log_prompts = parse_bool(key, v);
  else if (key == "record_timing") c.record_timing = parse_bool(key, v);
  else if (key == "force") c.force = parse_bool(key, v);
  else if (key == "limit") c.limit = parse_u64(key, v);
  else {
    Ablation a;
    try {
      a = parse_ablation(key);
    } catch (const ValidationError&) {
      throw ValidationError("unknown configuration key '" + raw_key + "'");
    }
    if (parse_bool(key, v)) c.ablations.insert(a);
    else c.ablations.erase(a);
  }
}

void load_config_file(PipelineConfig& config, const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw LoadError(path.string(), "cannot open config file");
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto t = text::trim(line);
    if (t.empty() || t[0] == '#') continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos)
      throw LoadError(path.string(), "line " + std::to_string(line_no) + ": expected key=value");
    try {
      apply_config_value(config, t.substr(0, eq), t.substr(eq + 1));
    } catch (const ValidationError& e) {
      throw LoadError(path.string(), "line " + std::to_string(line_no) + ": " + e.what());
    }
  }
}

// ---------------------------------------------------------------------------
// Runtime

Runtime make_runtime(const PipelineConfig& config, std::shared_ptr<Backend> backend,
                     std::shared_ptr<NliProvider> nli) {
  Runtime rt;
  if (backend) {
    rt.backend = std::move(backend);
  } else if (config.backend.rfind("mock:", 0) == 0) {
    rt.backend = MockBackend::from_file(config.backend.substr(5));
  } else if (config.backend.rfind("http://", 0) == 0 || config.backend.rfind("https://", 0) == 0) {
    HttpBackendOptions opts;
    opts.base_url = config.backend;
    opts.model = config.model;
    if (const char* key = std::getenv("REPARE_API_KEY")) opts.api_key = key;
    opts.score_mode = config.score_mode;
    rt.backend = std::make_shared<HttpBackend>(opts);
  } else {
    throw ValidationError("backend must be mock:<table.json> or an http(s) URL, got '" +
                          config.backend + "'");
  }
  ClientOptions copts;
  copts.max_inflight = config.max_inflight;
  copts.cache_dir = config.cache_dir;
  rt.client = std::make_shared<ModelClient>(rt.backend, copts);
  rt.prompts = config.prompts_path ? PromptRegistry::from_file(*config.prompts_path) : PromptRegistry::builtin();
  rt.stoplist = config.stoplist_path ? Stoplist::from_file(*config.stoplist_path) : Stoplist::smart();

  if (nli) {
    rt.nli = std::move(nli);
  } else if (config.nli == "prompt") {
    rt.nli = std::make_shared<PromptNli>(rt.client, rt.prompts.get(config.backend_style, "nli"));
  } else if (config.nli == "none") {
    spdlog::warn("NLI filtering disabled");
  } else if (config.nli.rfind("fixed:", 0) == 0) {
    rt.nli = std::make_shared<FixedNli>(parse_nli_label(config.nli.substr(6)));
  } else if (config.nli.rfind("http://", 0) == 0 || config.nli.rfind("https://", 0) == 0) {
    rt.nli = std::make_shared<HttpNli>(config.nli);
  } else {
    throw ValidationError("nli must be prompt, none, fixed:<label> or an http(s) URL");
  }
  return rt;
}

std::vector<QuestionInstance> load_instances(const PipelineConfig& config) {
  std::vector<QuestionInstance> instances;
  if (config.dataset == "jsonl") {
    instances = read_instances_jsonl(config.dataset_path);
  } else {
    auto load = load_dataset(config.dataset_path, parse_dataset(config.dataset), config.split);
    for (const auto& s : load.skipped)
      spdlog::warn("skipped record {} in {}: {}", s.record, s.file, s.message);
    instances = std::move(load.instances);
  }
  if (config.task_mode) instances = with_task_mode(std::move(instances), *config.task_mode);
  if (config.sample_size)
    instances = sample_dev_split(instances, {config.dataset, *config.sample_size, config.sample_seed});
  std::set<std::string> ids;
  for (const auto& inst : instances)
    if (!ids.insert(inst.question_id).second)
      throw ValidationError("duplicate question id '" + inst.question_id + "'");
  return instances;
}

// ---------------------------------------------------------------------------
// Records

std::string RunRecord::to_line() const { return body.dump(); }

RunRecord RunRecord::from_json(const json& j) {
  RunRecord r;
  r.body = j;
  r.question_id = j.at("question_id").get<std::string>();
  r.errored = j.value("status", std::string("ok")) != "ok";
  if (r.errored && j.contains("error")) {
    r.error_stage = j["error"].value("stage", std::string());
    r.error = j["error"].value("message", std::string());
  }
  for (const auto& m : j.value("modes", json::array())) {
    ModeOutcome o;
    o.mode = m.at("mode").get<std::string>();
    o.chosen_index = m.value("chosen_index", std::size_t{0});
    o.question = m.value("question", std::string());
    o.answer = m.value("answer", std::string());
    if (m.contains("utility") && !m["utility"].is_null()) o.utility = m["utility"].get<double>();
    if (m.contains("error")) {
      o.errored = true;
      o.error = m["error"].get<std::string>();
    }
    r.modes.push_back(std::move(o));
  }
  return r;
}

namespace {

json mode_json(const ModeOutcome& m) {
  json j{{"mode", m.mode}, {"chosen_index", m.chosen_index}, {"question", m.question}, {"answer", m.answer}};
  j["utility"] = m.utility ? json(*m.utility) : json(nullptr);
  if (m.errored) j["error"] = m.error;
  return j;
}

bool has_gold(const QuestionInstance& inst) {
  if (inst.task_mode == TaskMode::multiple_choice) return inst.correct_choice_idx.has_value();
  return !inst.gold_answers.empty();
}

// Runs fn(i) for i in [0, count) on up to `workers` threads. The first
// exception stops further work and is rethrown.
template <typename F>
void parallel_for(std::size_t count, int workers, F&& fn) {
  std::atomic<std::size_t> next{0};
  std::atomic<bool> stop{false};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  auto work = [&] {
    for (;;) {
      if (stop.load()) return;
      const std::size_t i = next.fetch_add(1);
      if (i >= count) return;
      try {
        fn(i);
      } catch (...) {
        std::lock_guard lock(failure_mutex);
        if (!failure) failure = std::current_exception();
        stop = true;
      }
    }
  };
  const auto n = static_cast<std::size_t>(std::max(1, workers));
  std::vector<std::thread> threads;
  for (std::size_t t = 1; t < std::min(n, count); ++t) threads.emplace_back(work);
  work();
  for (auto& t : threads) t.join();
  if (failure) std::rethrow_exception(failure);
}

// Appends lines in index order no matter which worker finishes first, so
// the file is always a prefix of the full ordered output.
class OrderedWriter {
 public:
  explicit OrderedWriter(const fs::path& path) : path_(path), out_(path, std::ios::app | std::ios::binary) {
    if (!out_) throw LoadError(path.string(), "cannot open for writing");
  }

  void put(std::size_t index, std::string line) {
    std::lock_guard lock(mutex_);
    pending_.emplace(index, std::move(line));
    while (!pending_.empty() && pending_.begin()->first == next_) {
      out_ << pending_.begin()->second << '\n';
      out_.flush();
      if (!out_) throw LoadError(path_.string(), "write failed");
      pending_.erase(pending_.begin());
      ++next_;
    }
  }

 private:
  fs::path path_;
  std::ofstream out_;
  std::mutex mutex_;
  std::map<std::size_t, std::string> pending_;
  std::size_t next_ = 0;
};

// Reads complete records and drops a trailing partial line from the file.
// The writer always ends a record with '\n', so a line without one is a
// record cut short by an interruption.
std::vector<RunRecord> load_and_repair(const fs::path& path) {
  std::vector<RunRecord> out;
  if (!fs::exists(path)) return out;
  std::ifstream in(path, std::ios::binary);
  const std::string content((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  std::size_t pos = 0, good_end = 0, line_no = 0;
  while (pos < content.size()) {
    const auto nl = content.find('\n', pos);
    if (nl == std::string::npos) break;
    ++line_no;
    const std::string line = content.substr(pos, nl - pos);
    if (!text::trim(line).empty()) {
      try {
        out.push_back(RunRecord::from_json(json::parse(line)));
      } catch (const json::exception&) {
        if (content.find_first_not_of(" \t\r\n", nl + 1) != std::string::npos)
          throw LoadError(path.string(), "line " + std::to_string(line_no) + " is not a valid record");
        break;
      }
    }
    good_end = nl + 1;
    pos = nl + 1;
  }
  if (good_end < content.size()) {
    spdlog::warn("{}: dropping truncated final record", path.string());
    fs::resize_file(path, good_end);
  }
  return out;
}

}  // namespace

std::vector<RunRecord> read_records(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw LoadError(path.string(), "cannot open records");
  std::vector<RunRecord> out;
  std::string line;
  std::size_t line_no = 0;
  std::vector<std::string> lines;
  while (std::getline(in, line)) lines.push_back(line);
  for (const auto& l : lines) {
    ++line_no;
    if (text::trim(l).empty()) continue;
    try {
      out.push_back(RunRecord::from_json(json::parse(l)));
    } catch (const json::exception& e) {
      if (line_no == lines.size()) break;  // truncated tail
      throw LoadError(path.string(), "line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Per-instance processing

Pipeline::Pipeline(const PipelineConfig& config, Runtime& runtime)
    : config_(config),
      runtime_(runtime),
      extractor_(*runtime.client, runtime.prompts, runtime.stoplist,
                 [&] {
                   ExtractOptions o;
                   o.style = config.backend_style;
                   o.max_question_entities = config.max_question_entities;
                   o.max_rationale_entities = config.max_rationale_entities;
                   o.max_detail_sentences = config.max_detail_sentences;
                   o.use_rationale = !config.has(Ablation::no_rationale);
                   o.use_caption = !config.has(Ablation::no_caption);
                   o.use_question_entities = !config.has(Ablation::no_question_entity);
                   return o;
                 }()),
      fuser_(*runtime.client, runtime.prompts, runtime.nli.get(),
             [&] {
               FuseOptions o;
               o.style = config.backend_style;
               o.nli_fail_open = config.nli_fail_open;
               return o;
             }()),
      answerer_(*runtime.client, runtime.prompts, [&] {
        AnswerOptions o;
        o.style = config.backend_style;
        return o;
      }()) {}

AnswerRequest Pipeline::answer_request(const QuestionInstance& instance, const std::string& question,
                                       const std::string& context) const {
  AnswerRequest r;
  const bool text_only = config_.has(Ablation::llm_only) || contexted(config_);
  r.image = text_only ? nullptr : &instance.image;
  r.question = question;
  r.task_mode = instance.task_mode;
  r.choices = instance.choices;
  r.context = context;
  return r;
}

InstanceOutcome Pipeline::process(const QuestionInstance& instance, std::size_t n) {
  InstanceOutcome o;
  o.instance = instance;
  o.seed = derive_seed(config_.seed, instance.question_id);
  Trace* trace = &o.trace;
  const std::string& q = instance.question;

  try {
    if (contexted(config_)) {
      if (config_.has(Ablation::caption_plus_question)) {
        o.context = extractor_.generate_caption(instance.image, o.seed, trace);
      } else {
        o.details = extractor_.extract(instance.image, q, o.seed, trace);
        o.details_block = assemble_details_block(*o.details);
        o.context = o.details_block;
      }
      CandidateSet set;
      set.original = q;
      set.n = 1;
      set.candidates = {q};
      set.provenance = {CandidateProvenance{}};
      o.candidates = std::move(set);
    } else if (config_.has(Ablation::paraphrase_baseline)) {
      o.candidates = fuser_.paraphrase_candidates(q, n, o.seed, trace);
    } else {
      o.details = extractor_.extract(instance.image, q, o.seed, trace);
      o.details_block = assemble_details_block(*o.details);
      o.candidates = config_.has(Ablation::fuse_with_image)
                         ? fuser_.generate_candidates_with_image(q, o.details_block, instance.image, n,
                                                                 o.seed, trace)
                         : fuser_.generate_candidates(q, o.details_block, n, o.seed, trace);
    }
  } catch (const StageError& e) {
    o.errored = true;
    o.error_stage = e.stage();
    o.error = e.what();
    return o;
  } catch (const Error& e) {
    o.errored = true;
    o.error_stage = "candidates";
    o.error = e.what();
    return o;
  }

  std::map<std::string, std::size_t> first_seen;
  for (const auto& cand : o.candidates->candidates) {
    auto it = first_seen.find(cand);
    if (it != first_seen.end()) {
      o.answers.push_back(o.answers[it->second]);
      continue;
    }
    first_seen.emplace(cand, o.answers.size());
    o.answers.push_back(answerer_.answer_candidate(answer_request(instance, cand, o.context), o.seed, trace));
  }
  o.question_likelihood.assign(o.answers.size(), std::nullopt);
  o.true_false.assign(o.answers.size(), std::nullopt);
  if (o.answers.front().errored) {
    o.errored = true;
    o.error_stage = "answer";
    o.error = o.answers.front().error;
  }
  return o;
}

std::vector<ModeOutcome> Pipeline::evaluate_modes(InstanceOutcome& o, std::size_t k) {
  std::vector<ModeOutcome> modes;
  if (o.errored || !o.candidates) return modes;
  k = std::min(k, o.answers.size());
  const auto& inst = o.instance;
  const bool gold = has_gold(inst);
  auto utility_of = [&](std::size_t i) -> double {
    if (o.answers[i].errored) return 0.0;
    return instance_utility(inst, o.answers[i].answer, config_.official_vqa_averaging);
  };
  std::vector<ScoredCandidate> base;
  for (std::size_t i = 0; i < k; ++i)
    base.push_back({o.answers[i].question, o.answers[i].answer, o.answers[i].token_logprobs, 0.0,
                    ScorerKind::answer_conf});
  auto make_outcome = [&](const std::string& name, const SelectionResult& r) {
    ModeOutcome m;
    m.mode = name;
    m.chosen_index = r.chosen_index;
    m.question = r.chosen_question;
    m.answer = r.chosen_answer;
    if (gold) m.utility = utility_of(r.chosen_index);
    return m;
  };

  {
    SelectionResult r;
    r.chosen_index = 0;
    r.chosen_question = base[0].question;
    r.chosen_answer = base[0].answer;
    modes.push_back(make_outcome("baseline", r));
  }

  o.scores.clear();
  {
    auto scored = base;
    std::vector<double> scores;
    for (std::size_t i = 0; i < k; ++i) {
      scored[i].score = o.answers[i].errored ? 0.0 : score_answer_confidence(o.answers[i].token_logprobs);
      scores.push_back(scored[i].score);
    }
    o.scores["answer_conf"] = scores;
    modes.push_back(make_outcome("confidence", select(std::move(scored), SelectionMode::confidence)));
  }

  if (config_.scorer != ScorerKind::answer_conf) {
    const auto mode = selection_mode_for(config_.scorer);
    ModeOutcome failed;
    failed.mode = to_string(mode);
    try {
      auto scored = base;
      std::vector<double> scores;
      std::vector<std::string> plausible;
      if (config_.scorer == ScorerKind::true_false_multi) {
        std::set<std::string> seen;
        for (std::size_t i = 0; i < k; ++i) {
          const auto& a = o.answers[i];
          if (!a.errored && !a.answer.empty() && seen.insert(a.answer).second) plausible.push_back(a.answer);
        }
      }
      std::map<std::string, double> by_text;  // repeated candidates score once
      for (std::size_t i = 0; i < k; ++i) {
        const auto& a = o.answers[i];
        double s = 0.0;
        auto cached = by_text.find(a.question);
        if (cached != by_text.end()) {
          s = cached->second;
        } else if (config_.scorer == ScorerKind::question_likelihood) {
          if (!o.question_likelihood[i])
            o.question_likelihood[i] = answerer_.score_question_likelihood(
                answer_request(inst, a.question, o.context).image, a.question, &o.trace);
          s = *o.question_likelihood[i];
        } else if (a.errored || a.answer.empty()) {
          s = 0.0;
        } else if (config_.scorer == ScorerKind::true_false) {
          if (!o.true_false[i])
            o.true_false[i] = answerer_.score_true_false(answer_request(inst, a.question, o.context),
                                                         a.answer, nullptr, &o.trace);
          s = *o.true_false[i];
        } else {
          s = answerer_.score_true_false(answer_request(inst, a.question, o.context), a.answer,
                                         &plausible, &o.trace);
        }
        by_text.emplace(a.question, s);
        scored[i].score = s;
        scored[i].scorer = config_.scorer;
        scores.push_back(s);
      }
      o.scores[to_string(config_.scorer)] = scores;
      modes.push_back(make_outcome(to_string(mode), select(std::move(scored), mode)));
    } catch (const Error& e) {
      failed.errored = true;
      failed.error = e.what();
      o.trace.warn(to_string(mode), e.what());
      modes.push_back(failed);
    }
  }

  if (config_.has(Ablation::oracle) && gold) {
    std::vector<double> utilities;
    for (std::size_t i = 0; i < k; ++i) utilities.push_back(utility_of(i));
    o.scores["utility"] = utilities;
    modes.push_back(make_outcome("oracle", oracle_select(base, utilities, derive_seed(o.seed, "oracle"))));
  }
  return modes;
}

RunRecord Pipeline::run_instance(const QuestionInstance& instance) {
  const auto started = std::chrono::steady_clock::now();
  InstanceOutcome o = process(instance, config_.n);
  std::vector<ModeOutcome> modes;
  if (!o.errored) {
    try {
      modes = evaluate_modes(o, o.answers.size());
    } catch (const Error& e) {
      o.errored = true;
      o.error_stage = "select";
      o.error = e.what();
      modes.clear();
    }
  }

  json body{{"question_id", instance.question_id},
            {"question", instance.question},
            {"task_mode", to_string(instance.task_mode)},
            {"seed", o.seed},
            {"status", o.errored ? "error" : "ok"}};
  if (o.errored) body["error"] = {{"stage", o.error_stage}, {"message", o.error}};
  if (o.details) {
    body["details"] = *o.details;
    body["details_block"] = o.details_block;
  }
  if (!o.context.empty()) body["context"] = o.context;
  if (o.candidates) body["candidates"] = *o.candidates;
  if (!o.answers.empty()) body["answers"] = o.answers;
  if (!o.scores.empty()) body["scores"] = o.scores;
  json jm = json::array();
  for (const auto& m : modes) jm.push_back(mode_json(m));
  body["modes"] = jm;
  body["prompts"] = o.trace.prompts_json(config_.log_prompts);
  body["warnings"] = o.trace.warnings();
  if (config_.record_timing)
    body["timing_ms"] = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - started).count();

  RunRecord r;
  r.question_id = instance.question_id;
  r.errored = o.errored;
  r.error_stage = o.error_stage;
  r.error = o.error;
  r.modes = std::move(modes);
  r.body = std::move(body);
  return r;
}

// ---------------------------------------------------------------------------
// Runs

RunSummary run_pipeline(const PipelineConfig& config, std::shared_ptr<Backend> backend,
                        std::shared_ptr<NliProvider> nli) {
  config.validate();
  const auto instances = load_instances(config);
  fs::create_directories(config.output_dir);

  const fs::path fingerprint_path = config.output_dir / "run_config.json";
  const fs::path records_path = config.output_dir / "records.jsonl";
  const json fingerprint = config.fingerprint();
  if (config.force) {
    fs::remove(records_path);
  } else if (fs::exists(fingerprint_path) && fs::exists(records_path)) {
    std::ifstream in(fingerprint_path);
    json previous;
    try {
      previous = json::parse(in);
    } catch (const json::exception&) {
    }
    if (previous != fingerprint)
      throw ValidationError("output directory " + config.output_dir.string() +
                            " holds records from a different configuration; use --force to start over");
  }
  {
    std::ofstream out(fingerprint_path, std::ios::binary);
    out << fingerprint.dump(2) << '\n';
    if (!out) throw LoadError(fingerprint_path.string(), "cannot write");
  }

  RunSummary summary;
  summary.instances = instances.size();
  std::set<std::string> done;
  for (const auto& r : load_and_repair(records_path)) done.insert(r.question_id);

  std::vector<const QuestionInstance*> pending;
  for (const auto& inst : instances)
    if (!done.count(inst.question_id)) pending.push_back(&inst);
  summary.resumed = instances.size() - pending.size();
  if (config.limit && pending.size() > *config.limit) pending.resize(*config.limit);

  if (!pending.empty()) {
    Runtime rt = make_runtime(config, std::move(backend), std::move(nli));
    Pipeline pipeline(config, rt);
    OrderedWriter writer(records_path);
    std::atomic<std::size_t> errored{0};
    parallel_for(pending.size(), config.max_inflight, [&](std::size_t i) {
      RunRecord rec = pipeline.run_instance(*pending[i]);
      if (rec.errored) {
        ++errored;
        spdlog::warn("instance {} failed at {}: {}", rec.question_id, rec.error_stage, rec.error);
      }
      writer.put(i, rec.to_line());
    });
    summary.processed = pending.size();
    const auto stats = rt.client->stats();
    spdlog::info("processed {} instances ({} errored); backend calls {}, cache hits {}, retries {}",
                 pending.size(), errored.load(), stats.backend_calls, stats.cache_hits, stats.retries);
  }

  const auto records = read_records(records_path);
  for (const auto& r : records)
    if (r.errored) ++summary.errored;
  summary.complete = records.size() >= instances.size();
  if (!records.empty()) summary.reports = emit_report(records, instances, config);
  return summary;
}

namespace {

std::vector<InstanceResult> mode_results(const std::string& mode,
                                         const std::vector<std::pair<std::string, const std::vector<ModeOutcome>*>>& rows,
                                         const std::vector<char>& errored) {
  std::vector<InstanceResult> out;
  bool any = false;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (errored[i]) {
      out.push_back({rows[i].first, mode, 0.0, true});
      continue;
    }
    for (const auto& m : *rows[i].second) {
      if (m.mode != mode) continue;
      if (m.errored) {
        out.push_back({rows[i].first, mode, 0.0, true});
      } else if (m.utility) {
        out.push_back({rows[i].first, mode, *m.utility, false});
        any = true;
      }
    }
  }
  if (!any) out.clear();
  return out;
}

const std::vector<std::string> kModeOrder{"baseline", "confidence", "true_false", "true_false_multi",
                                          "question_likelihood", "oracle"};

}  // namespace

std::vector<EvalReport> build_reports(const std::vector<RunRecord>& records,
                                      const std::vector<QuestionInstance>& instances) {
  std::map<std::string, const RunRecord*> by_id;
  for (const auto& r : records) by_id[r.question_id] = &r;
  std::vector<std::pair<std::string, const std::vector<ModeOutcome>*>> rows;
  std::vector<char> errored;
  for (const auto& inst : instances) {
    auto it = by_id.find(inst.question_id);
    if (it == by_id.end()) continue;
    rows.emplace_back(inst.question_id, &it->second->modes);
    errored.push_back(it->second->errored);
  }
  std::vector<EvalReport> reports;
  for (const auto& mode : kModeOrder) {
    auto results = mode_results(mode, rows, errored);
    if (results.empty()) continue;
    reports.push_back(aggregate(results, instances));
  }
  return reports;
}

std::vector<SweepRow> sweep_n(const PipelineConfig& config, const std::vector<std::size_t>& n_values,
                              std::shared_ptr<Backend> backend, std::shared_ptr<NliProvider> nli) {
  if (n_values.empty()) throw ValidationError("sweep needs at least one n");
  for (std::size_t i = 0; i < n_values.size(); ++i) {
    if (n_values[i] < 2) throw ValidationError("every n must be at least 2");
    if (i > 0 && n_values[i] <= n_values[i - 1])
      throw ValidationError("n values must be sorted ascending without repeats");
  }
  PipelineConfig cfg = config;
  cfg.n = n_values.back();
  cfg.validate();
  const auto instances = load_instances(cfg);
  Runtime rt = make_runtime(cfg, std::move(backend), std::move(nli));
  Pipeline pipeline(cfg, rt);

  // modes[v][i]: outcomes of instance i at n_values[v]
  std::vector<std::vector<std::vector<ModeOutcome>>> modes(
      n_values.size(), std::vector<std::vector<ModeOutcome>>(instances.size()));
  std::vector<char> errored(instances.size(), 0);
  parallel_for(instances.size(), cfg.max_inflight, [&](std::size_t i) {
    InstanceOutcome o = pipeline.process(instances[i], cfg.n);
    if (o.errored) {
      errored[i] = 1;
      return;
    }
    for (std::size_t v = 0; v < n_values.size(); ++v) {
      try {
        modes[v][i] = pipeline.evaluate_modes(o, n_values[v]);
      } catch (const Error&) {
        errored[i] = 1;
        return;
      }
    }
  });

  std::vector<SweepRow> rows;
  std::ostringstream csv;
  csv << "n,mode,overall,yes/no,number,other,scored,errored\n";
  for (std::size_t v = 0; v < n_values.size(); ++v) {
    std::vector<std::pair<std::string, const std::vector<ModeOutcome>*>> per;
    for (std::size_t i = 0; i < instances.size(); ++i) per.emplace_back(instances[i].question_id, &modes[v][i]);
    for (const auto& mode : kModeOrder) {
      auto results = mode_results(mode, per, errored);
      if (results.empty()) continue;
      SweepRow row{n_values[v], aggregate(results, instances)};
      const auto line = reports_to_csv({row.report});
      csv << row.n << ',' << line.substr(line.find('\n') + 1);
      rows.push_back(std::move(row));
    }
  }
  if (rows.empty()) throw ValidationError("sweep produced no scored instances");
  fs::create_directories(cfg.output_dir);
  const fs::path out_path = cfg.output_dir / "sweep_n.csv";
  std::ofstream out(out_path, std::ios::binary);
  out << csv.str();
  if (!out) throw LoadError(out_path.string(), "cannot write");
  return rows;
}

std::vector<SeedSpread> run_seeds(const PipelineConfig& config, std::shared_ptr<Backend> backend,
                                  std::shared_ptr<NliProvider> nli) {
  const auto seeds = config.seeds.empty() ? std::vector<std::uint64_t>{config.seed} : config.seeds;
  std::map<std::string, SeedSpread> by_mode;
  std::vector<std::string> order;
  for (auto s : seeds) {
    PipelineConfig cfg = config;
    cfg.seed = s;
    cfg.seeds.clear();
    cfg.output_dir = config.output_dir / ("seed_" + std::to_string(s));
    const auto summary = run_pipeline(cfg, backend, nli);
    for (const auto& r : summary.reports) {
      if (!by_mode.count(r.mode)) order.push_back(r.mode);
      by_mode[r.mode].mode = r.mode;
      by_mode[r.mode].overall.push_back(r.overall);
    }
  }
  std::vector<SeedSpread> out;
  std::ostringstream csv;
  csv << "mode,seeds,mean,stddev,values\n";
  for (const auto& mode : order) {
    auto sp = by_mode[mode];
    const double k = static_cast<double>(sp.overall.size());
    for (double v : sp.overall) sp.mean += v / k;
    if (sp.overall.size() > 1) {
      double ss = 0.0;
      for (double v : sp.overall) ss += (v - sp.mean) * (v - sp.mean);
      sp.stddev = std::sqrt(ss / (k - 1.0));
    }
    std::vector<std::string> values;
    for (double v : sp.overall) values.push_back(format_percent(v));
    csv << mode << ',' << sp.overall.size() << ',' << format_percent(sp.mean) << ','
        << format_percent(sp.stddev) << ',' << text::join(values, ";") << '\n';
    out.push_back(std::move(sp));
  }
  fs::create_directories(config.output_dir);
  std::ofstream f(config.output_dir / "seeds.csv", std::ios::binary);
  f << csv.str();
  if (!f) throw LoadError((config.output_dir / "seeds.csv").string(), "cannot write");
  return out;
}

}  // namespace repare
