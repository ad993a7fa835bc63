#include "repare/fuse.hpp"

#include <set>

#include "repare/embedded_data.hpp"
#include "repare/error.hpp"
#include "repare/hashing.hpp"
#include "text_util.hpp"

namespace repare {

using nlohmann::json;

std::vector<FusionExemplar> parse_fusion_exemplars(const json& j) {
  std::vector<FusionExemplar> out;
  for (const auto& e : j)
    out.push_back({e.at("question").get<std::string>(), e.at("entity").get<std::string>(),
                   e.at("detail").get<std::string>(), e.at("modified_question").get<std::string>()});
  return out;
}

std::vector<FusionExemplar> builtin_fusion_exemplars() {
  return parse_fusion_exemplars(json::parse(embedded::fusion_exemplars()));
}

std::string to_string(CandidateOrigin o) {
  switch (o) {
    case CandidateOrigin::original: return "original";
    case CandidateOrigin::fusion_sample: return "fusion_sample";
    case CandidateOrigin::paraphrase_sample: return "paraphrase_sample";
    case CandidateOrigin::original_pad: return "original_pad";
  }
  return "original";
}

void CandidateSet::validate() const {
  if (candidates.size() != n) throw ValidationError("candidate set has the wrong size");
  if (provenance.size() != n) throw ValidationError("provenance does not cover every candidate");
  if (n == 0 || candidates[0] != original) throw ValidationError("candidate 0 is not the original");
  std::set<std::string> seen;
  for (std::size_t i = 0; i < n; ++i) {
    if (candidates[i].empty() || candidates[i].back() != '?')
      throw ValidationError("candidate " + std::to_string(i) + " does not end with '?'");
    const bool pad = provenance[i].origin == CandidateOrigin::original_pad;
    if (pad && candidates[i] != original) throw ValidationError("pad differs from the original");
    if (!pad && !seen.insert(text::comparison_key(candidates[i])).second)
      throw ValidationError("candidate " + std::to_string(i) + " duplicates an earlier one");
    if (provenance[i].nli && provenance[i].nli->label == NliLabel::contradiction)
      throw ValidationError("candidate " + std::to_string(i) + " contradicts the original");
  }
}

void to_json(json& j, const CandidateSet& c) {
  json cands = json::array();
  for (std::size_t i = 0; i < c.candidates.size(); ++i) {
    const auto& p = c.provenance.at(i);
    json e{{"text", c.candidates[i]}, {"origin", to_string(p.origin)}};
    if (p.batch >= 0) e["batch"] = p.batch;
    if (p.sample >= 0) e["sample"] = p.sample;
    if (p.nli) e["nli"] = *p.nli;
    cands.push_back(std::move(e));
  }
  json rejected = json::array();
  for (const auto& r : c.rejected) {
    json e{{"text", r.text}, {"batch", r.batch}, {"sample", r.sample}, {"reason", r.reason}};
    if (r.nli) e["nli"] = *r.nli;
    rejected.push_back(std::move(e));
  }
  j = json{{"n", c.n}, {"candidates", cands}, {"rejected", rejected}};
}

std::string clean_candidate(std::string_view sample) {
  std::string line;
  for (const auto& l : text::split_lines(sample)) {
    line = text::trim(l);
    if (!line.empty()) break;
  }
  static const std::string label = "modified question:";
  if (text::to_lower(line).rfind(label, 0) == 0) line = text::trim(line.substr(label.size()));
  if (line.size() >= 2 && (line.front() == '"' || line.front() == '\'') && line.back() == line.front())
    line = text::trim(line.substr(1, line.size() - 2));
  return text::collapse_whitespace(line);
}

Fuser::Fuser(ModelClient& client, const PromptRegistry& prompts, NliProvider* nli,
             FuseOptions options, std::vector<FusionExemplar> exemplars)
    : client_(client), prompts_(prompts), nli_(nli), options_(options), exemplars_(std::move(exemplars)) {
  if (options_.max_batches < 1) throw ValidationError("max_batches must be >= 1");
}

std::string Fuser::fusion_prompt(const std::string& question, const std::string& details_block) const {
  std::string examples;
  for (const auto& ex : exemplars_)
    examples += prompts_.render(options_.style, "fusion_example",
                                {{"question", ex.question},
                                 {"details", ex.entity + ": " + ex.detail},
                                 {"modified_question", ex.modified_question}},
                                false);
  return prompts_.render(options_.style, "fusion",
                         {{"examples", examples}, {"question", question}, {"details", details_block}},
                         false);
}

CandidateSet Fuser::generate_candidates(const std::string& question, const std::string& details_block,
                                        std::size_t n, std::uint64_t seed, Trace* trace) {
  return sample_candidates("fusion", prompts_.to_parts(fusion_prompt(question, details_block), nullptr),
                           question, n, seed, CandidateOrigin::fusion_sample, nli_ != nullptr, trace);
}

CandidateSet Fuser::generate_candidates_with_image(const std::string& question,
                                                   const std::string& details_block,
                                                   const ImageRef& image, std::size_t n,
                                                   std::uint64_t seed, Trace* trace) {
  std::vector<PromptPart> parts{ImagePart{image}};
  for (auto& p : prompts_.to_parts(fusion_prompt(question, details_block), nullptr)) parts.push_back(p);
  return sample_candidates("fusion", std::move(parts), question, n, seed,
                           CandidateOrigin::fusion_sample, nli_ != nullptr, trace);
}

CandidateSet Fuser::paraphrase_candidates(const std::string& question, std::size_t n,
                                          std::uint64_t seed, Trace* trace) {
  auto parts = prompts_.build(options_.style, "paraphrase", {{"question", question}}, nullptr);
  return sample_candidates("paraphrase", std::move(parts), question, n, seed,
                           CandidateOrigin::paraphrase_sample, options_.paraphrase_nli && nli_, trace);
}

CandidateSet Fuser::sample_candidates(const std::string& stage, std::vector<PromptPart> parts,
                                      const std::string& question, std::size_t n, std::uint64_t seed,
                                      CandidateOrigin origin, bool use_nli, Trace* trace) {
  if (n < 2) throw ValidationError("n must be at least 2");
  const std::string original = text::trim(question);
  if (original.empty() || original.back() != '?')
    throw ValidationError("question must end with '?': " + question);

  CandidateSet set;
  set.original = original;
  set.n = n;
  set.candidates.push_back(original);
  set.provenance.push_back({CandidateOrigin::original, -1, -1, std::nullopt});

  const std::string original_key = text::comparison_key(original);
  std::set<std::string> seen{original_key};
  const std::size_t needed = n - 1;
  int failed_batches = 0;
  ModelRequest req;
  req.prompt_parts = std::move(parts);
  req.sampling = SamplingParams::nucleus(options_.top_p, static_cast<int>(2 * needed),
                                         options_.max_new_tokens);
  req.sampling.temperature = options_.temperature;
  if (options_.style == BackendStyle::completion) req.stop_markers = {"\n"};
  else req.stop_markers = {"###"};

  for (int batch = 0; batch < options_.max_batches && set.candidates.size() < n; ++batch) {
    req.seed = derive_seed(seed, stage + "-batch-" + std::to_string(batch));
    ModelResponse resp;
    try {
      resp = traced_generate(client_, trace, stage, req);
    } catch (const Error& e) {
      ++failed_batches;
      if (trace) trace->warn(stage, "batch " + std::to_string(batch) + " failed: " + e.what());
      continue;
    }
    for (std::size_t s = 0; s < resp.samples.size() && set.candidates.size() < n; ++s) {
      const int si = static_cast<int>(s);
      const std::string cand = clean_candidate(resp.samples[s].text);
      auto reject = [&](const std::string& reason, std::optional<NliVerdict> v = std::nullopt) {
        set.rejected.push_back({cand, batch, si, reason, v});
      };
      if (cand.empty() || cand.back() != '?') {
        reject("not_question");
        continue;
      }
      const std::string key = text::comparison_key(cand);
      if (key == original_key) {
        reject("same_as_original");
        continue;
      }
      if (seen.count(key)) {
        reject("duplicate");
        continue;
      }
      std::optional<NliVerdict> verdict;
      if (use_nli) {
        try {
          verdict = nli_classify(*nli_, original, cand);
        } catch (const Error& e) {
          if (trace) trace->warn(stage, std::string("NLI failed: ") + e.what());
          if (!options_.nli_fail_open) {
            reject("nli_error");
            continue;
          }
        }
        if (verdict && verdict->label == NliLabel::contradiction) {
          reject("contradiction", verdict);
          continue;
        }
      }
      seen.insert(key);
      set.candidates.push_back(cand);
      set.provenance.push_back({origin, batch, si, verdict});
    }
  }

  if (failed_batches == options_.max_batches && trace)
    trace->warn(stage, "every batch failed; using the original question only");
  if (set.candidates.size() < n && trace && failed_batches < options_.max_batches)
    trace->warn(stage, "only " + std::to_string(set.candidates.size() - 1) + " of " +
                           std::to_string(needed) + " candidates were valid; padding");
  while (set.candidates.size() < n) {
    set.candidates.push_back(original);
    set.provenance.push_back({CandidateOrigin::original_pad, -1, -1, std::nullopt});
  }
  return set;
}

}  // namespace repare
