#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "repare/datamodel.hpp"

namespace repare {

/// Lower-cases, maps number words (zero..ten) to digits, drops the articles
/// a/an/the, strips punctuation (a '.' between digits is kept, a ',' between
/// digits is removed, apostrophes are removed) and collapses whitespace.
std::string normalize_answer(std::string_view raw);

/// min(#gold answers equal to the prediction / 3, 1), both sides
/// normalised. With `official_averaging` the score is averaged over the
/// leave-one-annotator-out subsets of the gold list instead.
double vqa_soft_accuracy(std::string_view prediction, const std::vector<std::string>& gold,
                         bool official_averaging = false);

/// 1 when `label` (A-D) is the correct choice index, else 0.
int mc_accuracy(char label, int correct_choice_idx);

/// Maps "A".."D" (optionally followed by '.') to 0..3.
std::optional<int> label_index(std::string_view label);

/// Per-instance evaluation score of an answer: soft accuracy for direct
/// questions, label accuracy for multiple choice.
double instance_utility(const QuestionInstance& instance, const std::string& answer,
                        bool official_averaging = false);

struct InstanceResult {
  std::string question_id;
  std::string mode;
  double utility = 0.0;
  bool errored = false;
};

struct EvalCounts {
  std::size_t total = 0;
  std::size_t scored = 0;
  std::size_t errored = 0;
  std::map<AnswerType, std::size_t> by_type;
};

struct EvalReport {
  std::string mode;
  double overall = 0.0;  // percentage
  std::map<AnswerType, double> by_type;
  std::vector<InstanceResult> per_instance;
  EvalCounts counts;
};

/// Averages the non-errored utilities of one mode. Answer types come from
/// the matching instances; instances without one count only in `overall`.
/// Throws ValidationError on an empty input or when nothing was scored.
EvalReport aggregate(const std::vector<InstanceResult>& results,
                     const std::vector<QuestionInstance>& instances);

void to_json(nlohmann::json& j, const EvalReport& r);

/// One row per report: mode,overall,yes/no,number,other,scored,errored.
std::string reports_to_csv(const std::vector<EvalReport>& reports);
nlohmann::json reports_to_json(const std::vector<EvalReport>& reports);

/// Fixed two-decimal rendering used in every report.
std::string format_percent(double value);

}  // namespace repare
