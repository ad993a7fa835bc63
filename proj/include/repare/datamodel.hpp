#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace repare {

/// An image by reference. The pixels are never decoded here; `bytes_hash`
/// identifies the content for caching.
struct ImageRef {
  std::string id;
  std::string source;  // file path or URL
  std::string bytes_hash;

  /// Hashes the file at `path`. When the file does not exist the hash is
  /// derived from the path string instead, prefixed with "path:".
  static ImageRef from_file(std::string id, const std::filesystem::path& path);

  bool operator==(const ImageRef&) const = default;
};

enum class TaskMode { direct, multiple_choice };
enum class AnswerType { yes_no, number, other };
enum class Dataset { vqav2, aokvqa, vizwiz };
enum class Split { train, val, test };

std::string to_string(TaskMode m);
std::string to_string(AnswerType t);
std::string to_string(Dataset d);
std::string to_string(Split s);
TaskMode parse_task_mode(const std::string& s);
AnswerType parse_answer_type(const std::string& s);
Dataset parse_dataset(const std::string& s);
Split parse_split(const std::string& s);

struct QuestionInstance {
  std::string question_id;
  ImageRef image;
  std::string question;  // trimmed, ends with '?'
  TaskMode task_mode = TaskMode::direct;
  std::vector<std::string> gold_answers;
  std::vector<std::string> choices;  // empty or exactly 4
  std::optional<int> correct_choice_idx;
  std::optional<AnswerType> answer_type;

  /// Throws ValidationError when an invariant is broken.
  void validate() const;

  bool operator==(const QuestionInstance&) const = default;
};

void to_json(nlohmann::json& j, const ImageRef& r);
/// A missing "bytes_hash" is computed from "source" as in ImageRef::from_file.
void from_json(const nlohmann::json& j, ImageRef& r);
void to_json(nlohmann::json& j, const QuestionInstance& q);
void from_json(const nlohmann::json& j, QuestionInstance& q);

/// Trims and guarantees a trailing '?'.
std::string canonical_question(std::string_view raw);

/// Orders ids numerically when both parse as integers, lexicographically
/// otherwise (numbers sort first).
bool question_id_less(const std::string& a, const std::string& b);

struct RecordError {
  std::string file;
  std::string record;  // question id or array index
  std::string message;
};

struct DatasetLoad {
  std::vector<QuestionInstance> instances;
  std::vector<RecordError> skipped;
};

/// Reads a dataset in its published layout under `root`:
///   vqav2:  v2_OpenEnded_mscoco_<split>2014_questions.json,
///           v2_mscoco_<split>2014_annotations.json (optional),
///           images in <split>2014/COCO_<split>2014_<id:012>.jpg
///   aokvqa: aokvqa_v1p0_<split>.json, images in <split>2017/<id:012>.jpg
///   vizwiz: <split>.json, images in <split>/<image>
/// Instances are sorted by question id. Ill-formed files throw LoadError;
/// records without an image reference are skipped and reported.
DatasetLoad load_dataset(const std::filesystem::path& root, Dataset dataset,
                         Split split);

/// A-OKVQA instances carry both direct answers and choices; this switches
/// them to the requested setting. Multiple choice requires choices.
std::vector<QuestionInstance> with_task_mode(std::vector<QuestionInstance> instances,
                                             TaskMode mode);

struct DevSplitSpec {
  std::string dataset;
  std::size_t sample_size = 0;
  std::uint64_t seed = 0;

  /// Development split sizes used for the three datasets: 5000 / 1000 / 500.
  static DevSplitSpec standard(Dataset d, std::uint64_t seed);
};

/// Uniform sample without replacement; output keeps the input order.
std::vector<QuestionInstance> sample_dev_split(const std::vector<QuestionInstance>& instances,
                                               const DevSplitSpec& spec);

void write_instances_jsonl(const std::filesystem::path& path,
                           const std::vector<QuestionInstance>& instances);
std::vector<QuestionInstance> read_instances_jsonl(const std::filesystem::path& path);

}  // namespace repare
