#include "repare/eval.hpp"

#include <algorithm>
#include <cstdio>
#include <set>
#include <sstream>

#include "repare/embedded_data.hpp"
#include "repare/error.hpp"
#include "text_util.hpp"

namespace repare {

using nlohmann::json;

namespace {

bool is_digit(char c) { return c >= '0' && c <= '9'; }

bool is_word_char(char c) {
  return (c >= 'a' && c <= 'z') || is_digit(c) || static_cast<unsigned char>(c) >= 0x80;
}

const std::map<std::string, std::string>& number_words() {
  static const auto table =
      json::parse(embedded::number_words()).get<std::map<std::string, std::string>>();
  return table;
}

}  // namespace

std::string normalize_answer(std::string_view raw) {
  const std::string s = text::to_lower(raw);
  std::string cleaned;
  cleaned.reserve(s.size());
  for (std::size_t i = 0; i < s.size(); ++i) {
    const char c = s[i];
    const bool between_digits = i > 0 && i + 1 < s.size() && is_digit(s[i - 1]) && is_digit(s[i + 1]);
    if (is_word_char(c) || text::is_space(c)) {
      cleaned.push_back(c);
    } else if (c == '.' && between_digits) {
      cleaned.push_back(c);
    } else if ((c == ',' && between_digits) || c == '\'') {
      // dropped without a gap: "1,000" -> "1000", "dog's" -> "dogs"
    } else {
      cleaned.push_back(' ');
    }
  }

  static const std::set<std::string> articles{"a", "an", "the"};
  const auto& numbers = number_words();
  std::vector<std::string> words;
  std::istringstream in(cleaned);
  std::string w;
  while (in >> w) {
    if (articles.count(w)) continue;
    auto it = numbers.find(w);
    words.push_back(it == numbers.end() ? w : it->second);
  }
  return text::join(words, " ");
}

double vqa_soft_accuracy(std::string_view prediction, const std::vector<std::string>& gold,
                         bool official_averaging) {
  if (gold.empty()) throw ValidationError("soft accuracy needs at least one gold answer");
  const std::string pred = normalize_answer(prediction);
  std::vector<bool> match;
  match.reserve(gold.size());
  for (const auto& g : gold) match.push_back(normalize_answer(g) == pred);
  const auto total = static_cast<double>(std::count(match.begin(), match.end(), true));
  if (!official_averaging || gold.size() == 1) return std::min(total / 3.0, 1.0);
  double sum = 0.0;
  for (bool m : match) sum += std::min((total - (m ? 1.0 : 0.0)) / 3.0, 1.0);
  return sum / static_cast<double>(gold.size());
}

std::optional<int> label_index(std::string_view label) {
  auto t = text::trim(label);
  if (!t.empty() && t.back() == '.') t.pop_back();
  if (t.size() != 1) return std::nullopt;
  const char c = t[0];
  if (c >= 'A' && c <= 'D') return c - 'A';
  if (c >= 'a' && c <= 'd') return c - 'a';
  return std::nullopt;
}

int mc_accuracy(char label, int correct_choice_idx) {
  const auto idx = label_index(std::string(1, label));
  if (!idx) throw ValidationError(std::string("invalid choice label '") + label + "'");
  return *idx == correct_choice_idx ? 1 : 0;
}

double instance_utility(const QuestionInstance& instance, const std::string& answer,
                        bool official_averaging) {
  if (instance.task_mode == TaskMode::multiple_choice) {
    if (!instance.correct_choice_idx)
      throw ValidationError("instance " + instance.question_id + " has no correct choice");
    const auto idx = label_index(answer);
    return idx && *idx == *instance.correct_choice_idx ? 1.0 : 0.0;
  }
  if (instance.gold_answers.empty())
    throw ValidationError("instance " + instance.question_id + " has no gold answers");
  return vqa_soft_accuracy(answer, instance.gold_answers, official_averaging);
}

EvalReport aggregate(const std::vector<InstanceResult>& results,
                     const std::vector<QuestionInstance>& instances) {
  if (results.empty()) throw ValidationError("cannot aggregate an empty result list");
  std::map<std::string, std::optional<AnswerType>> types;
  for (const auto& inst : instances) types[inst.question_id] = inst.answer_type;

  EvalReport report;
  report.mode = results.front().mode;
  report.per_instance = results;
  double sum = 0.0;
  std::map<AnswerType, double> type_sum;
  for (const auto& r : results) {
    ++report.counts.total;
    if (r.errored) {
      ++report.counts.errored;
      continue;
    }
    ++report.counts.scored;
    sum += r.utility;
    auto it = types.find(r.question_id);
    if (it != types.end() && it->second) {
      type_sum[*it->second] += r.utility;
      ++report.counts.by_type[*it->second];
    }
  }
  if (report.counts.scored == 0) throw ValidationError("every instance errored; nothing to aggregate");
  report.overall = 100.0 * sum / static_cast<double>(report.counts.scored);
  for (const auto& [type, s] : type_sum)
    report.by_type[type] = 100.0 * s / static_cast<double>(report.counts.by_type[type]);
  return report;
}

void to_json(json& j, const EvalReport& r) {
  json by_type = json::object();
  for (const auto& [t, v] : r.by_type) by_type[to_string(t)] = v;
  json per = json::array();
  for (const auto& p : r.per_instance)
    per.push_back({{"question_id", p.question_id}, {"mode", p.mode}, {"utility", p.utility},
                   {"errored", p.errored}});
  json type_counts = json::object();
  for (const auto& [t, c] : r.counts.by_type) type_counts[to_string(t)] = c;
  j = json{{"mode", r.mode},
           {"overall", r.overall},
           {"by_type", by_type},
           {"counts", {{"total", r.counts.total}, {"scored", r.counts.scored},
                       {"errored", r.counts.errored}, {"by_type", type_counts}}},
           {"per_instance", per}};
}

std::string format_percent(double value) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.2f", value);
  return buf;
}

std::string reports_to_csv(const std::vector<EvalReport>& reports) {
  std::ostringstream out;
  out << "mode,overall,yes/no,number,other,scored,errored\n";
  for (const auto& r : reports) {
    out << r.mode << ',' << format_percent(r.overall);
    for (auto t : {AnswerType::yes_no, AnswerType::number, AnswerType::other}) {
      out << ',';
      auto it = r.by_type.find(t);
      if (it != r.by_type.end()) out << format_percent(it->second);
    }
    out << ',' << r.counts.scored << ',' << r.counts.errored << '\n';
  }
  return out.str();
}

json reports_to_json(const std::vector<EvalReport>& reports) {
  json j = json::array();
  for (const auto& r : reports) j.push_back(r);
  return j;
}

}  // namespace repare
