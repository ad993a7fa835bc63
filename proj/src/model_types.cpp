#include <cmath>
#include <numeric>

#include "repare/error.hpp"
#include "repare/model_client.hpp"

namespace repare {

using nlohmann::json;

std::string to_string(DecodeMode m) {
  switch (m) {
    case DecodeMode::greedy: return "greedy";
    case DecodeMode::top_p: return "top_p";
    case DecodeMode::beam: return "beam";
  }
  return "greedy";
}

DecodeMode parse_decode_mode(const std::string& s) {
  if (s == "greedy") return DecodeMode::greedy;
  if (s == "top_p") return DecodeMode::top_p;
  if (s == "beam") return DecodeMode::beam;
  throw ValidationError("unknown decode mode '" + s + "'");
}

SamplingParams SamplingParams::greedy(int max_new_tokens) {
  SamplingParams s;
  s.mode = DecodeMode::greedy;
  s.max_new_tokens = max_new_tokens;
  return s;
}

SamplingParams SamplingParams::nucleus(double p, int num_samples, int max_new_tokens) {
  SamplingParams s;
  s.mode = DecodeMode::top_p;
  s.p = p;
  s.num_samples = num_samples;
  s.max_new_tokens = max_new_tokens;
  return s;
}

SamplingParams SamplingParams::beam_search(int beams, double temperature, int max_new_tokens) {
  SamplingParams s;
  s.mode = DecodeMode::beam;
  s.beams = beams;
  s.temperature = temperature;
  s.max_new_tokens = max_new_tokens;
  return s;
}

void ModelRequest::validate() const {
  int images = 0;
  for (const auto& part : prompt_parts)
    if (std::holds_alternative<ImagePart>(part)) ++images;
  if (images > 1) throw ValidationError("request has " + std::to_string(images) + " images; at most one allowed");
  if (sampling.num_samples < 1) throw ValidationError("num_samples must be >= 1");
  if (sampling.max_new_tokens < 0) throw ValidationError("max_new_tokens must be >= 0");
  if (sampling.mode == DecodeMode::top_p && !(sampling.p > 0.0 && sampling.p <= 1.0))
    throw ValidationError("top_p requires 0 < p <= 1");
  if (sampling.mode == DecodeMode::beam && sampling.beams < 1)
    throw ValidationError("beam search requires beams >= 1");
  if (sampling.temperature < 0.0) throw ValidationError("temperature must be >= 0");
}

std::string ModelRequest::text() const {
  std::string out;
  for (const auto& part : prompt_parts)
    if (const auto* t = std::get_if<TextPart>(&part)) out += t->text;
  return out;
}

const ImageRef* ModelRequest::image() const {
  for (const auto& part : prompt_parts)
    if (const auto* i = std::get_if<ImagePart>(&part)) return &i->image;
  return nullptr;
}

std::string to_string(NliLabel l) {
  switch (l) {
    case NliLabel::entailment: return "entailment";
    case NliLabel::neutral: return "neutral";
    case NliLabel::contradiction: return "contradiction";
  }
  return "neutral";
}

NliLabel parse_nli_label(const std::string& s) {
  if (s == "entailment") return NliLabel::entailment;
  if (s == "neutral") return NliLabel::neutral;
  if (s == "contradiction") return NliLabel::contradiction;
  throw ValidationError("unknown NLI label '" + s + "'");
}

NliVerdict NliVerdict::from_probabilities(std::array<double, 3> probs) {
  double total = 0.0;
  for (double p : probs) {
    if (!(p >= 0.0) || !std::isfinite(p)) throw ValidationError("NLI probabilities must be finite and non-negative");
    total += p;
  }
  if (total <= 0.0) throw ValidationError("NLI probabilities sum to zero");
  for (double& p : probs) p /= total;
  std::size_t best = 0;
  for (std::size_t i = 1; i < probs.size(); ++i)
    if (probs[i] > probs[best]) best = i;
  return NliVerdict{static_cast<NliLabel>(best), probs};
}

void to_json(json& j, const PromptPart& p) {
  if (const auto* t = std::get_if<TextPart>(&p)) {
    j = json{{"type", "text"}, {"text", t->text}};
  } else {
    j = json{{"type", "image"}, {"image", std::get<ImagePart>(p).image}};
  }
}

void from_json(const json& j, PromptPart& p) {
  const auto type = j.at("type").get<std::string>();
  if (type == "text") {
    p = TextPart{j.at("text").get<std::string>()};
  } else if (type == "image") {
    p = ImagePart{j.at("image").get<ImageRef>()};
  } else {
    throw ValidationError("unknown prompt part type '" + type + "'");
  }
}

void to_json(json& j, const SamplingParams& s) {
  j = json{{"mode", to_string(s.mode)},     {"p", s.p},
           {"temperature", s.temperature},  {"beams", s.beams},
           {"max_new_tokens", s.max_new_tokens}, {"num_samples", s.num_samples}};
  j["length_penalty"] = s.length_penalty ? json(*s.length_penalty) : json(nullptr);
}

void from_json(const json& j, SamplingParams& s) {
  s.mode = parse_decode_mode(j.value("mode", std::string("greedy")));
  s.p = j.value("p", 1.0);
  s.temperature = j.value("temperature", 1.0);
  s.beams = j.value("beams", 1);
  s.max_new_tokens = j.value("max_new_tokens", 32);
  s.num_samples = j.value("num_samples", 1);
  s.length_penalty.reset();
  if (j.contains("length_penalty") && !j["length_penalty"].is_null())
    s.length_penalty = j["length_penalty"].get<double>();
}

void to_json(json& j, const ModelRequest& r) {
  j = json{{"prompt_parts", r.prompt_parts}, {"sampling", r.sampling},
           {"want_logprobs", r.want_logprobs}, {"stop_markers", r.stop_markers},
           {"seed", r.seed}};
}

void from_json(const json& j, ModelRequest& r) {
  r.prompt_parts = j.at("prompt_parts").get<std::vector<PromptPart>>();
  r.sampling = j.value("sampling", SamplingParams{});
  r.want_logprobs = j.value("want_logprobs", false);
  r.stop_markers = j.value("stop_markers", std::vector<std::string>{});
  r.seed = j.value("seed", std::uint64_t{0});
}

void to_json(json& j, const TokenLogprob& t) { j = json{{"token", t.token}, {"logprob", t.logprob}}; }

void from_json(const json& j, TokenLogprob& t) {
  j.at("token").get_to(t.token);
  j.at("logprob").get_to(t.logprob);
}

void to_json(json& j, const Sample& s) { j = json{{"text", s.text}, {"tokens", s.tokens}}; }

void from_json(const json& j, Sample& s) {
  j.at("text").get_to(s.text);
  s.tokens = j.value("tokens", std::vector<TokenLogprob>{});
}

void to_json(json& j, const ModelResponse& r) {
  j = json{{"samples", r.samples},
           {"usage", {{"prompt_tokens", r.usage.prompt_tokens},
                      {"completion_tokens", r.usage.completion_tokens}}}};
}

void from_json(const json& j, ModelResponse& r) {
  r.samples = j.at("samples").get<std::vector<Sample>>();
  r.usage = {};
  if (j.contains("usage")) {
    r.usage.prompt_tokens = j["usage"].value("prompt_tokens", std::int64_t{0});
    r.usage.completion_tokens = j["usage"].value("completion_tokens", std::int64_t{0});
  }
}

void to_json(json& j, const NliVerdict& v) {
  j = json{{"label", to_string(v.label)},
           {"probabilities", {{"entailment", v.probabilities[0]},
                              {"neutral", v.probabilities[1]},
                              {"contradiction", v.probabilities[2]}}}};
}

double length_normalized_probability(const std::vector<double>& logprobs) {
  if (logprobs.empty()) return 0.0;
  const double mean = std::accumulate(logprobs.begin(), logprobs.end(), 0.0) /
                      static_cast<double>(logprobs.size());
  return std::exp(mean);
}

std::vector<double> logprob_values(const std::vector<TokenLogprob>& tokens) {
  std::vector<double> out;
  out.reserve(tokens.size());
  for (const auto& t : tokens) out.push_back(t.logprob);
  return out;
}

}  // namespace repare
