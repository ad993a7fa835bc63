#include "repare/datamodel.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <fstream>
#include <map>
#include <sstream>

#include "repare/error.hpp"
#include "repare/hashing.hpp"
#include "text_util.hpp"

namespace repare {

using nlohmann::json;
namespace fs = std::filesystem;

ImageRef ImageRef::from_file(std::string id, const fs::path& path) {
  ImageRef ref{std::move(id), path.string(), {}};
  std::error_code ec;
  if (fs::is_regular_file(path, ec)) {
    ref.bytes_hash = sha256_file(path);
  } else {
    ref.bytes_hash = "path:" + sha256_hex(path.string());
  }
  return ref;
}

std::string to_string(TaskMode m) {
  return m == TaskMode::direct ? "direct" : "multiple_choice";
}

std::string to_string(AnswerType t) {
  switch (t) {
    case AnswerType::yes_no: return "yes/no";
    case AnswerType::number: return "number";
    case AnswerType::other: return "other";
  }
  return "other";
}

std::string to_string(Dataset d) {
  switch (d) {
    case Dataset::vqav2: return "vqav2";
    case Dataset::aokvqa: return "aokvqa";
    case Dataset::vizwiz: return "vizwiz";
  }
  return "vqav2";
}

std::string to_string(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::val: return "val";
    case Split::test: return "test";
  }
  return "val";
}

TaskMode parse_task_mode(const std::string& s) {
  if (s == "direct") return TaskMode::direct;
  if (s == "multiple_choice" || s == "mc") return TaskMode::multiple_choice;
  throw ValidationError("unknown task mode '" + s + "'");
}

AnswerType parse_answer_type(const std::string& s) {
  if (s == "yes/no" || s == "yes_no") return AnswerType::yes_no;
  if (s == "number") return AnswerType::number;
  if (s == "other") return AnswerType::other;
  throw ValidationError("unknown answer type '" + s + "'");
}

Dataset parse_dataset(const std::string& s) {
  if (s == "vqav2") return Dataset::vqav2;
  if (s == "aokvqa") return Dataset::aokvqa;
  if (s == "vizwiz") return Dataset::vizwiz;
  throw ValidationError("unknown dataset '" + s + "'");
}

Split parse_split(const std::string& s) {
  if (s == "train") return Split::train;
  if (s == "val") return Split::val;
  if (s == "test") return Split::test;
  throw ValidationError("unknown split '" + s + "'");
}

void QuestionInstance::validate() const {
  if (question_id.empty()) throw ValidationError("empty question_id");
  if (image.id.empty()) throw ValidationError(question_id + ": empty image id");
  if (question.empty() || question.back() != '?')
    throw ValidationError(question_id + ": question must end with '?'");
  if (task_mode == TaskMode::multiple_choice) {
    if (choices.size() != 4)
      throw ValidationError(question_id + ": multiple choice needs exactly 4 choices");
    if (!correct_choice_idx || *correct_choice_idx < 0 || *correct_choice_idx > 3)
      throw ValidationError(question_id + ": correct_choice_idx must be in [0,3]");
  }
}

void to_json(json& j, const ImageRef& r) {
  j = json{{"id", r.id}, {"source", r.source}, {"bytes_hash", r.bytes_hash}};
}

void from_json(const json& j, ImageRef& r) {
  j.at("id").get_to(r.id);
  j.at("source").get_to(r.source);
  if (j.contains("bytes_hash")) j.at("bytes_hash").get_to(r.bytes_hash);
  else r.bytes_hash = ImageRef::from_file(r.id, r.source).bytes_hash;
}

void to_json(json& j, const QuestionInstance& q) {
  j = json{{"question_id", q.question_id},
           {"image", q.image},
           {"question", q.question},
           {"task_mode", to_string(q.task_mode)},
           {"gold_answers", q.gold_answers}};
  if (!q.choices.empty()) j["choices"] = q.choices;
  if (q.correct_choice_idx) j["correct_choice_idx"] = *q.correct_choice_idx;
  if (q.answer_type) j["answer_type"] = to_string(*q.answer_type);
}

void from_json(const json& j, QuestionInstance& q) {
  j.at("question_id").get_to(q.question_id);
  j.at("image").get_to(q.image);
  j.at("question").get_to(q.question);
  q.task_mode = parse_task_mode(j.value("task_mode", std::string("direct")));
  q.gold_answers = j.value("gold_answers", std::vector<std::string>{});
  q.choices = j.value("choices", std::vector<std::string>{});
  q.correct_choice_idx.reset();
  if (j.contains("correct_choice_idx")) q.correct_choice_idx = j["correct_choice_idx"].get<int>();
  q.answer_type.reset();
  if (j.contains("answer_type")) q.answer_type = parse_answer_type(j["answer_type"].get<std::string>());
}

std::string canonical_question(std::string_view raw) {
  std::string q = text::trim(raw);
  if (q.empty()) return q;
  if (q.back() != '?') {
    while (!q.empty() && (q.back() == '.' || q.back() == '!')) q.pop_back();
    q = text::trim(q);
    q.push_back('?');
  }
  return q;
}

namespace {

std::optional<long long> as_integer(const std::string& s) {
  long long v = 0;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || p != s.data() + s.size()) return std::nullopt;
  return v;
}

json read_json_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw LoadError(path.string(), "cannot open file");
  std::ostringstream buf;
  buf << in.rdbuf();
  if (text::trim(buf.str()).empty()) return json();
  try {
    return json::parse(buf.str());
  } catch (const json::exception& e) {
    throw LoadError(path.string(), std::string("invalid JSON: ") + e.what());
  }
}

std::string id_string(const json& v) {
  if (v.is_string()) return v.get<std::string>();
  if (v.is_number_integer()) return std::to_string(v.get<long long>());
  throw ValidationError("id must be a string or integer");
}

std::string padded12(const std::string& id) {
  return id.size() >= 12 ? id : std::string(12 - id.size(), '0') + id;
}

std::vector<std::string> lowered(const std::vector<std::string>& xs) {
  std::vector<std::string> out;
  out.reserve(xs.size());
  for (const auto& x : xs) out.push_back(text::to_lower(x));
  return out;
}

std::optional<AnswerType> optional_answer_type(const json& rec) {
  if (!rec.contains("answer_type") || !rec["answer_type"].is_string()) return std::nullopt;
  const auto s = rec["answer_type"].get<std::string>();
  if (s == "yes/no" || s == "yes_no") return AnswerType::yes_no;
  if (s == "number") return AnswerType::number;
  return AnswerType::other;  // VizWiz also uses "unanswerable"
}

void load_vqav2(const fs::path& root, Split split, DatasetLoad& out) {
  const std::string s = to_string(split);
  const fs::path qfile = root / ("v2_OpenEnded_mscoco_" + s + "2014_questions.json");
  const fs::path afile = root / ("v2_mscoco_" + s + "2014_annotations.json");
  json qs = read_json_file(qfile);
  if (qs.is_null()) return;
  if (!qs.is_object() || !qs.contains("questions") || !qs["questions"].is_array())
    throw LoadError(qfile.string(), "expected an object with a 'questions' array");

  std::map<std::string, json> annotations;
  if (fs::exists(afile)) {
    json as = read_json_file(afile);
    if (!as.is_null()) {
      if (!as.is_object() || !as.contains("annotations") || !as["annotations"].is_array())
        throw LoadError(afile.string(), "expected an object with an 'annotations' array");
      for (const auto& a : as["annotations"]) {
        if (a.contains("question_id")) annotations[id_string(a["question_id"])] = a;
      }
    }
  }

  std::size_t index = 0;
  for (const auto& rec : qs["questions"]) {
    const std::string where = "#" + std::to_string(index++);
    try {
      QuestionInstance q;
      q.question_id = id_string(rec.at("question_id"));
      if (!rec.contains("image_id") || rec["image_id"].is_null()) {
        out.skipped.push_back({qfile.string(), q.question_id, "missing image_id"});
        continue;
      }
      const std::string image_id = id_string(rec["image_id"]);
      q.image = ImageRef::from_file(
          image_id, root / (s + "2014") / ("COCO_" + s + "2014_" + padded12(image_id) + ".jpg"));
      q.question = canonical_question(rec.at("question").get<std::string>());
      q.task_mode = TaskMode::direct;
      if (auto it = annotations.find(q.question_id); it != annotations.end()) {
        for (const auto& a : it->second.value("answers", json::array()))
          q.gold_answers.push_back(text::to_lower(a.at("answer").get<std::string>()));
        q.answer_type = optional_answer_type(it->second);
      }
      out.instances.push_back(std::move(q));
    } catch (const std::exception& e) {
      out.skipped.push_back({qfile.string(), where, e.what()});
    }
  }
}

void load_aokvqa(const fs::path& root, Split split, DatasetLoad& out) {
  const std::string s = to_string(split);
  const fs::path file = root / ("aokvqa_v1p0_" + s + ".json");
  json recs = read_json_file(file);
  if (recs.is_null()) return;
  if (!recs.is_array()) throw LoadError(file.string(), "expected a JSON array");
  std::size_t index = 0;
  for (const auto& rec : recs) {
    const std::string where = "#" + std::to_string(index++);
    try {
      QuestionInstance q;
      q.question_id = id_string(rec.at("question_id"));
      if (!rec.contains("image_id") || rec["image_id"].is_null()) {
        out.skipped.push_back({file.string(), q.question_id, "missing image_id"});
        continue;
      }
      const std::string image_id = id_string(rec["image_id"]);
      q.image = ImageRef::from_file(image_id, root / (s + "2017") / (padded12(image_id) + ".jpg"));
      q.question = canonical_question(rec.at("question").get<std::string>());
      q.gold_answers = lowered(rec.value("direct_answers", std::vector<std::string>{}));
      q.choices = rec.value("choices", std::vector<std::string>{});
      if (rec.contains("correct_choice_idx") && !rec["correct_choice_idx"].is_null())
        q.correct_choice_idx = rec["correct_choice_idx"].get<int>();
      q.task_mode = (q.choices.size() == 4 && q.correct_choice_idx) ? TaskMode::multiple_choice
                                                                    : TaskMode::direct;
      q.validate();
      out.instances.push_back(std::move(q));
    } catch (const std::exception& e) {
      out.skipped.push_back({file.string(), where, e.what()});
    }
  }
}

void load_vizwiz(const fs::path& root, Split split, DatasetLoad& out) {
  const std::string s = to_string(split);
  const fs::path file = root / (s + ".json");
  json recs = read_json_file(file);
  if (recs.is_null()) return;
  if (!recs.is_array()) throw LoadError(file.string(), "expected a JSON array");
  std::size_t index = 0;
  for (const auto& rec : recs) {
    const std::string where = "#" + std::to_string(index++);
    try {
      if (!rec.contains("image") || !rec["image"].is_string() ||
          rec["image"].get<std::string>().empty()) {
        out.skipped.push_back({file.string(), where, "missing image"});
        continue;
      }
      const std::string image = rec["image"].get<std::string>();
      QuestionInstance q;
      q.question_id = fs::path(image).stem().string();
      q.image = ImageRef::from_file(q.question_id, root / s / image);
      q.question = canonical_question(rec.at("question").get<std::string>());
      q.task_mode = TaskMode::direct;
      // Annotator confidence fields are dropped; only answer strings are used.
      for (const auto& a : rec.value("answers", json::array()))
        q.gold_answers.push_back(text::to_lower(a.at("answer").get<std::string>()));
      q.answer_type = optional_answer_type(rec);
      out.instances.push_back(std::move(q));
    } catch (const std::exception& e) {
      out.skipped.push_back({file.string(), where, e.what()});
    }
  }
}

}  // namespace

bool question_id_less(const std::string& a, const std::string& b) {
  auto ia = as_integer(a);
  auto ib = as_integer(b);
  if (ia && ib) return *ia < *ib;
  if (ia.has_value() != ib.has_value()) return ia.has_value();
  return a < b;
}

DatasetLoad load_dataset(const fs::path& root, Dataset dataset, Split split) {
  DatasetLoad out;
  switch (dataset) {
    case Dataset::vqav2: load_vqav2(root, split, out); break;
    case Dataset::aokvqa: load_aokvqa(root, split, out); break;
    case Dataset::vizwiz: load_vizwiz(root, split, out); break;
  }
  std::stable_sort(out.instances.begin(), out.instances.end(),
                   [](const QuestionInstance& a, const QuestionInstance& b) {
                     return question_id_less(a.question_id, b.question_id);
                   });
  return out;
}

std::vector<QuestionInstance> with_task_mode(std::vector<QuestionInstance> instances,
                                             TaskMode mode) {
  for (auto& q : instances) {
    q.task_mode = mode;
    q.validate();
  }
  return instances;
}

DevSplitSpec DevSplitSpec::standard(Dataset d, std::uint64_t seed) {
  switch (d) {
    case Dataset::vqav2: return {"vqav2", 5000, seed};
    case Dataset::aokvqa: return {"aokvqa", 1000, seed};
    case Dataset::vizwiz: return {"vizwiz", 500, seed};
  }
  return {};
}

std::vector<QuestionInstance> sample_dev_split(const std::vector<QuestionInstance>& instances,
                                               const DevSplitSpec& spec) {
  if (spec.sample_size > instances.size())
    throw ValidationError("sample size " + std::to_string(spec.sample_size) +
                          " exceeds population " + std::to_string(instances.size()));
  // Selection sampling (Knuth, Algorithm S): one pass, order preserved.
  SeededRng rng(derive_seed(spec.seed, spec.dataset));
  std::vector<QuestionInstance> out;
  out.reserve(spec.sample_size);
  std::size_t needed = spec.sample_size;
  std::size_t remaining = instances.size();
  for (const auto& q : instances) {
    if (needed == 0) break;
    if (static_cast<double>(remaining) * rng.uniform() < static_cast<double>(needed)) {
      out.push_back(q);
      --needed;
    }
    --remaining;
  }
  return out;
}

void write_instances_jsonl(const fs::path& path, const std::vector<QuestionInstance>& instances) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw LoadError(path.string(), "cannot open for writing");
  for (const auto& q : instances) out << json(q).dump() << '\n';
  if (!out) throw LoadError(path.string(), "write failed");
}

std::vector<QuestionInstance> read_instances_jsonl(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw LoadError(path.string(), "cannot open file");
  std::vector<QuestionInstance> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (text::trim(line).empty()) continue;
    try {
      out.push_back(json::parse(line).get<QuestionInstance>());
      out.back().validate();
    } catch (const std::exception& e) {
      throw LoadError(path.string(), "line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

}  // namespace repare
