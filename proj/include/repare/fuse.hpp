#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "repare/model_client.hpp"
#include "repare/prompts.hpp"
#include "repare/trace.hpp"

namespace repare {

struct FusionExemplar {
  std::string question;
  std::string entity;
  std::string detail;
  std::string modified_question;
};

/// The two in-context examples shipped in data/fusion_exemplars.json.
std::vector<FusionExemplar> builtin_fusion_exemplars();
std::vector<FusionExemplar> parse_fusion_exemplars(const nlohmann::json& j);

enum class CandidateOrigin { original, fusion_sample, paraphrase_sample, original_pad };

std::string to_string(CandidateOrigin o);

struct CandidateProvenance {
  CandidateOrigin origin = CandidateOrigin::original;
  int batch = -1;
  int sample = -1;
  std::optional<NliVerdict> nli;
};

struct RejectedSample {
  std::string text;
  int batch = 0;
  int sample = 0;
  std::string reason;  // not_question | same_as_original | duplicate | contradiction | nli_error
  std::optional<NliVerdict> nli;
};

struct CandidateSet {
  std::string original;
  std::vector<std::string> candidates;  // [0] is the original
  std::vector<CandidateProvenance> provenance;
  std::size_t n = 0;
  std::vector<RejectedSample> rejected;

  /// Checks size, original-first, '?' endings and pad-only duplicates.
  void validate() const;
};

void to_json(nlohmann::json& j, const CandidateSet& c);

struct FuseOptions {
  BackendStyle style = BackendStyle::completion;
  double top_p = 0.95;
  double temperature = 1.0;
  int max_new_tokens = 64;
  int max_batches = 3;
  /// Accept a candidate when the NLI call itself fails.
  bool nli_fail_open = false;
  /// Run the contradiction filter on paraphrases too.
  bool paraphrase_nli = false;
};

/// Turns a question plus a details block into n candidate questions.
class Fuser {
 public:
  /// `nli` may be null, which disables the contradiction filter.
  Fuser(ModelClient& client, const PromptRegistry& prompts, NliProvider* nli, FuseOptions options,
        std::vector<FusionExemplar> exemplars = builtin_fusion_exemplars());

  /// Prompt text for one fusion request.
  std::string fusion_prompt(const std::string& question, const std::string& details_block) const;

  CandidateSet generate_candidates(const std::string& question, const std::string& details_block,
                                   std::size_t n, std::uint64_t seed, Trace* trace = nullptr);

  /// Same, with the image attached to the fusion request.
  CandidateSet generate_candidates_with_image(const std::string& question,
                                              const std::string& details_block,
                                              const ImageRef& image, std::size_t n,
                                              std::uint64_t seed, Trace* trace = nullptr);

  CandidateSet paraphrase_candidates(const std::string& question, std::size_t n, std::uint64_t seed,
                                     Trace* trace = nullptr);

 private:
  CandidateSet sample_candidates(const std::string& stage, std::vector<PromptPart> parts,
                                 const std::string& question, std::size_t n, std::uint64_t seed,
                                 CandidateOrigin origin, bool use_nli, Trace* trace);

  ModelClient& client_;
  const PromptRegistry& prompts_;
  NliProvider* nli_;
  FuseOptions options_;
  std::vector<FusionExemplar> exemplars_;
};

/// First non-empty line of a sample, trimmed, with an echoed
/// "Modified Question:" label and surrounding quotes removed.
std::string clean_candidate(std::string_view sample);

}  // namespace repare
