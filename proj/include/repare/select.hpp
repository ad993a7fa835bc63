#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "repare/datamodel.hpp"
#include "repare/model_client.hpp"
#include "repare/prompts.hpp"
#include "repare/trace.hpp"

namespace repare {

enum class ScorerKind { answer_conf, true_false, true_false_multi, question_likelihood };
enum class SelectionMode { confidence, oracle, question_likelihood, true_false, true_false_multi };

std::string to_string(ScorerKind s);
ScorerKind parse_scorer(const std::string& s);
std::string to_string(SelectionMode m);
SelectionMode selection_mode_for(ScorerKind s);

/// What the answering model sees for one candidate question.
struct AnswerRequest {
  const ImageRef* image = nullptr;  // null for text-only answering
  std::string question;
  TaskMode task_mode = TaskMode::direct;
  std::vector<std::string> choices;
  std::string context;  // optional text placed before the question
};

struct AnsweredCandidate {
  std::string question;
  std::string answer;  // free text, or a label A-D for multiple choice
  std::vector<double> token_logprobs;
  std::optional<std::vector<double>> label_probs;  // multiple choice, renormalised
  bool label_fallback = false;  // label taken from label_probs, not from text
  bool errored = false;
  std::string error;
};

void to_json(nlohmann::json& j, const AnsweredCandidate& a);

struct ScoredCandidate {
  std::string question;
  std::string answer;
  std::vector<double> answer_token_logprobs;
  double score = 0.0;
  ScorerKind scorer = ScorerKind::answer_conf;
};

struct SelectionResult {
  std::size_t chosen_index = 0;
  std::string chosen_question;
  std::string chosen_answer;
  std::vector<ScoredCandidate> all_scored;
  SelectionMode mode = SelectionMode::confidence;
};

struct AnswerOptions {
  BackendStyle style = BackendStyle::completion;
  int max_new_tokens = 8;
  double length_penalty = -1.0;
  int mc_reasoning_tokens = 96;  // first turn of the chat protocol
};

class Answerer {
 public:
  Answerer(ModelClient& client, const PromptRegistry& prompts, AnswerOptions options);

  /// Direct: greedy short answer with token logprobs. Multiple choice: a
  /// label A-D whose logprob is the label's probability renormalised over
  /// the four labels (chat backends get a second "final answer" turn).
  /// Errors are reported in the result, not thrown.
  AnsweredCandidate answer_candidate(const AnswerRequest& request, std::uint64_t seed,
                                     Trace* trace = nullptr);

  /// P(True) for the proposed answer, renormalised over the (A)/(B) labels.
  /// With `plausible` the prompt lists the other candidate answers too.
  double score_true_false(const AnswerRequest& request, const std::string& proposed_answer,
                          const std::vector<std::string>* plausible = nullptr,
                          Trace* trace = nullptr);

  /// exp(mean logprob) of the question tokens given the image.
  double score_question_likelihood(const ImageRef* image, const std::string& question,
                                   Trace* trace = nullptr);

  /// Rendered answering prompt (image marker included when there is one).
  std::string vqa_prompt(const AnswerRequest& request) const;

 private:
  std::vector<std::string> stop_markers() const;
  AnsweredCandidate answer_direct(const AnswerRequest& request, std::uint64_t seed, Trace* trace);
  AnsweredCandidate answer_mc(const AnswerRequest& request, std::uint64_t seed, Trace* trace);

  ModelClient& client_;
  const PromptRegistry& prompts_;
  AnswerOptions options_;
};

/// exp(mean(logprobs)); 0 for an empty list.
double score_answer_confidence(const std::vector<double>& logprobs);

/// Finds the option label in a multiple-choice response: a leading label
/// ("B", "B.", "(B)"), an "option B"/"answer: B" phrase, a lone "B." in the
/// text, or the exact text of one of the choices.
std::optional<int> parse_choice_label(std::string_view response,
                                      const std::vector<std::string>& choices);

/// Smallest index with the largest score.
std::size_t select_index(const std::vector<double>& scores);

/// Throws ValidationError on an empty list.
SelectionResult select(std::vector<ScoredCandidate> scored,
                       SelectionMode mode = SelectionMode::confidence);

/// Uniform seeded choice among the candidates with the highest utility.
SelectionResult oracle_select(std::vector<ScoredCandidate> scored,
                              const std::vector<double>& utilities, std::uint64_t seed);

/// Utilities from the instance's gold answers.
SelectionResult oracle_select(std::vector<ScoredCandidate> scored, const QuestionInstance& instance,
                              std::uint64_t seed, bool official_averaging = false);

}  // namespace repare
