#include "repare/select.hpp"

#include <algorithm>
#include <cmath>
#include <regex>

#include "repare/error.hpp"
#include "repare/eval.hpp"
#include "repare/hashing.hpp"
#include "text_util.hpp"

namespace repare {

using nlohmann::json;

namespace {

const std::vector<std::string> kMcLabels{" A", " B", " C", " D"};
const std::vector<std::string> kTrueFalseLabels{" A", " B"};

}  // namespace

std::string to_string(ScorerKind s) {
  switch (s) {
    case ScorerKind::answer_conf: return "answer_conf";
    case ScorerKind::true_false: return "true_false";
    case ScorerKind::true_false_multi: return "true_false_multi";
    case ScorerKind::question_likelihood: return "question_likelihood";
  }
  return "answer_conf";
}

ScorerKind parse_scorer(const std::string& s) {
  if (s == "answer_conf") return ScorerKind::answer_conf;
  if (s == "true_false") return ScorerKind::true_false;
  if (s == "true_false_multi") return ScorerKind::true_false_multi;
  if (s == "question_likelihood") return ScorerKind::question_likelihood;
  throw ValidationError("unknown scorer '" + s + "'");
}

std::string to_string(SelectionMode m) {
  switch (m) {
    case SelectionMode::confidence: return "confidence";
    case SelectionMode::oracle: return "oracle";
    case SelectionMode::question_likelihood: return "question_likelihood";
    case SelectionMode::true_false: return "true_false";
    case SelectionMode::true_false_multi: return "true_false_multi";
  }
  return "confidence";
}

SelectionMode selection_mode_for(ScorerKind s) {
  switch (s) {
    case ScorerKind::answer_conf: return SelectionMode::confidence;
    case ScorerKind::true_false: return SelectionMode::true_false;
    case ScorerKind::true_false_multi: return SelectionMode::true_false_multi;
    case ScorerKind::question_likelihood: return SelectionMode::question_likelihood;
  }
  return SelectionMode::confidence;
}

void to_json(json& j, const AnsweredCandidate& a) {
  j = json{{"question", a.question}, {"answer", a.answer}, {"token_logprobs", a.token_logprobs}};
  if (a.label_probs) j["label_probs"] = *a.label_probs;
  if (a.label_fallback) j["label_fallback"] = true;
  if (a.errored) j["error"] = a.error;
}

double score_answer_confidence(const std::vector<double>& logprobs) {
  return length_normalized_probability(logprobs);
}

std::optional<int> parse_choice_label(std::string_view response, const std::vector<std::string>& choices) {
  const std::string t = text::trim(response);
  if (t.empty()) return std::nullopt;
  static const std::regex leading(R"(^\(?([A-D])\)?(?:[.):,]|\s|$))");
  static const std::regex leading_lower(R"(^\(?([a-d])[.)])");
  static const std::regex phrase(R"((?:option|answer(?:\s+is)?)\s*:?\s*\(?([A-Da-d])\b)", std::regex::icase);
  static const std::regex lone(R"((?:^|\s)\(?([A-D])[.)](?:\s|$))");
  std::smatch m;
  for (const auto* re : {&leading, &leading_lower, &phrase, &lone}) {
    if (std::regex_search(t, m, *re)) return label_index(m[1].str());
  }
  std::string plain = t;
  while (!plain.empty() && plain.back() == '.') plain.pop_back();
  const std::string key = text::comparison_key(plain);
  for (std::size_t i = 0; i < choices.size() && i < 4; ++i)
    if (text::comparison_key(choices[i]) == key) return static_cast<int>(i);
  return std::nullopt;
}

Answerer::Answerer(ModelClient& client, const PromptRegistry& prompts, AnswerOptions options)
    : client_(client), prompts_(prompts), options_(options) {}

std::vector<std::string> Answerer::stop_markers() const {
  if (options_.style == BackendStyle::chat) return {"\n", "###"};
  return {"\n"};
}

std::string Answerer::vqa_prompt(const AnswerRequest& request) const {
  Slots slots{{"question", request.question}, {"context", ""}};
  if (!request.context.empty())
    slots["context"] = prompts_.render(options_.style, "context", {{"context", request.context}}, false);
  std::string stage = "vqa_direct";
  if (request.task_mode == TaskMode::multiple_choice) {
    if (request.choices.size() != 4) throw ValidationError("multiple choice needs exactly 4 choices");
    stage = "vqa_mc";
    slots["choice_a"] = request.choices[0];
    slots["choice_b"] = request.choices[1];
    slots["choice_c"] = request.choices[2];
    slots["choice_d"] = request.choices[3];
  }
  return prompts_.render(options_.style, stage, slots, request.image != nullptr);
}

AnsweredCandidate Answerer::answer_candidate(const AnswerRequest& request, std::uint64_t seed,
                                             Trace* trace) {
  if (request.task_mode == TaskMode::multiple_choice) return answer_mc(request, seed, trace);
  return answer_direct(request, seed, trace);
}

AnsweredCandidate Answerer::answer_direct(const AnswerRequest& request, std::uint64_t seed, Trace* trace) {
  AnsweredCandidate out;
  out.question = request.question;
  try {
    ModelRequest req;
    req.prompt_parts = prompts_.to_parts(vqa_prompt(request), request.image);
    req.sampling = SamplingParams::greedy(options_.max_new_tokens);
    req.sampling.length_penalty = options_.length_penalty;
    req.want_logprobs = true;
    req.stop_markers = stop_markers();
    req.seed = derive_seed(seed, "answer");
    const auto resp = traced_generate(client_, trace, "answer", req);
    out.answer = text::trim(resp.samples.at(0).text);
    out.token_logprobs = logprob_values(resp.samples.at(0).tokens);
    if (out.answer.empty() && trace) trace->warn("answer", "empty answer for '" + request.question + "'");
  } catch (const Error& e) {
    out.errored = true;
    out.error = e.what();
  }
  return out;
}

AnsweredCandidate Answerer::answer_mc(const AnswerRequest& request, std::uint64_t seed, Trace* trace) {
  AnsweredCandidate out;
  out.question = request.question;
  try {
    const std::string first = vqa_prompt(request);
    std::string final_prompt = first;
    std::vector<std::string> responses;
    ModelRequest req;
    req.want_logprobs = true;
    if (options_.style == BackendStyle::chat) {
      req.prompt_parts = prompts_.to_parts(first, request.image);
      req.sampling = SamplingParams::greedy(options_.mc_reasoning_tokens);
      req.stop_markers = {"###"};
      req.seed = derive_seed(seed, "answer-turn-1");
      const std::string reasoning = text::trim(traced_generate(client_, trace, "answer", req).samples.at(0).text);
      final_prompt = prompts_.render(options_.style, "vqa_mc_final",
                                     {{"first_turn", first}, {"response", reasoning}}, false);
      responses.push_back(reasoning);
    }
    req.prompt_parts = prompts_.to_parts(final_prompt, request.image);
    req.sampling = SamplingParams::greedy(options_.max_new_tokens);
    req.stop_markers = stop_markers();
    req.seed = derive_seed(seed, "answer");
    const auto resp = traced_generate(client_, trace, "answer", req);
    const Sample& sample = resp.samples.at(0);
    responses.insert(responses.begin(), sample.text);  // final turn first

    std::optional<int> label;
    for (const auto& r : responses)
      if ((label = parse_choice_label(r, request.choices))) break;

    try {
      ModelRequest ctx;
      ctx.prompt_parts = req.prompt_parts;
      out.label_probs = traced_labels(client_, trace, "answer_labels", ctx, kMcLabels);
    } catch (const CapabilityError& e) {
      if (trace) trace->warn("answer", std::string("label probabilities unavailable: ") + e.what());
    }

    if (!label && out.label_probs) {
      const auto& p = *out.label_probs;
      label = static_cast<int>(std::max_element(p.begin(), p.end()) - p.begin());
      out.label_fallback = true;
    }
    if (!label) {
      out.errored = true;
      out.error = "no option label in response '" + text::trim(sample.text) + "'";
      return out;
    }
    out.answer = std::string(1, static_cast<char>('A' + *label));
    if (out.label_probs) {
      out.token_logprobs = {std::log(std::max((*out.label_probs)[static_cast<std::size_t>(*label)], 1e-300))};
    } else {
      out.token_logprobs = logprob_values(sample.tokens);
    }
  } catch (const Error& e) {
    out.errored = true;
    out.error = e.what();
  }
  return out;
}

double Answerer::score_true_false(const AnswerRequest& request, const std::string& proposed_answer,
                                  const std::vector<std::string>* plausible, Trace* trace) {
  if (text::trim(proposed_answer).empty()) throw ValidationError("proposed answer is empty");
  Slots slots{{"vqa", vqa_prompt(request)}, {"answer", proposed_answer}};
  std::string stage = "true_false";
  if (plausible) {
    stage = "true_false_multi";
    slots["answers"] = text::join(*plausible, ", ");
  }
  ModelRequest ctx;
  ctx.prompt_parts = prompts_.to_parts(prompts_.render(options_.style, stage, slots, false), request.image);
  return traced_labels(client_, trace, stage, ctx, kTrueFalseLabels).at(0);
}

double Answerer::score_question_likelihood(const ImageRef* image, const std::string& question,
                                           Trace* trace) {
  if (text::trim(question).empty()) throw ValidationError("question is empty");
  ModelRequest ctx;
  ctx.prompt_parts = prompts_.build(options_.style, "question_likelihood", {}, image);
  const std::string continuation = (options_.style == BackendStyle::chat ? " " : "") + question;
  const auto tokens = traced_score(client_, trace, "question_likelihood", ctx, continuation);
  return length_normalized_probability(logprob_values(tokens));
}

std::size_t select_index(const std::vector<double>& scores) {
  if (scores.empty()) throw ValidationError("cannot select from an empty list");
  std::size_t best = 0;
  for (std::size_t i = 1; i < scores.size(); ++i)
    if (scores[i] > scores[best] || (std::isnan(scores[best]) && !std::isnan(scores[i]))) best = i;
  return best;
}

SelectionResult select(std::vector<ScoredCandidate> scored, SelectionMode mode) {
  std::vector<double> scores;
  for (const auto& s : scored) scores.push_back(s.score);
  SelectionResult r;
  r.chosen_index = select_index(scores);
  r.chosen_question = scored[r.chosen_index].question;
  r.chosen_answer = scored[r.chosen_index].answer;
  r.all_scored = std::move(scored);
  r.mode = mode;
  return r;
}

SelectionResult oracle_select(std::vector<ScoredCandidate> scored, const std::vector<double>& utilities,
                              std::uint64_t seed) {
  if (scored.empty()) throw ValidationError("cannot select from an empty list");
  if (utilities.size() != scored.size()) throw ValidationError("one utility per candidate required");
  const double best = *std::max_element(utilities.begin(), utilities.end());
  std::vector<std::size_t> ties;
  for (std::size_t i = 0; i < utilities.size(); ++i)
    if (utilities[i] >= best - 1e-12) ties.push_back(i);
  SeededRng rng(seed);
  SelectionResult r;
  r.chosen_index = ties[rng.below(ties.size())];
  r.chosen_question = scored[r.chosen_index].question;
  r.chosen_answer = scored[r.chosen_index].answer;
  r.all_scored = std::move(scored);
  r.mode = SelectionMode::oracle;
  return r;
}

SelectionResult oracle_select(std::vector<ScoredCandidate> scored, const QuestionInstance& instance,
                              std::uint64_t seed, bool official_averaging) {
  std::vector<double> utilities;
  for (const auto& s : scored) utilities.push_back(instance_utility(instance, s.answer, official_averaging));
  return oracle_select(std::move(scored), utilities, seed);
}

}  // namespace repare
