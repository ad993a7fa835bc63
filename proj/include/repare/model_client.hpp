#pragma once

#include <array>
#include <chrono>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <mutex>
#include <optional>
#include <semaphore>
#include <string>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

#include "repare/datamodel.hpp"

namespace repare {

// ---------------------------------------------------------------------------
// Request / response types

struct TextPart {
  std::string text;
  bool operator==(const TextPart&) const = default;
};

struct ImagePart {
  ImageRef image;
  bool operator==(const ImagePart&) const = default;
};

using PromptPart = std::variant<TextPart, ImagePart>;

enum class DecodeMode { greedy, top_p, beam };

std::string to_string(DecodeMode m);
DecodeMode parse_decode_mode(const std::string& s);

struct SamplingParams {
  DecodeMode mode = DecodeMode::greedy;
  double p = 1.0;
  double temperature = 1.0;
  int beams = 1;
  int max_new_tokens = 32;
  std::optional<double> length_penalty;
  int num_samples = 1;

  static SamplingParams greedy(int max_new_tokens);
  static SamplingParams nucleus(double p, int num_samples, int max_new_tokens);
  static SamplingParams beam_search(int beams, double temperature, int max_new_tokens);

  bool operator==(const SamplingParams&) const = default;
};

struct ModelRequest {
  std::vector<PromptPart> prompt_parts;
  SamplingParams sampling;
  bool want_logprobs = false;
  std::vector<std::string> stop_markers;
  std::uint64_t seed = 0;

  /// At most one image, num_samples >= 1, top_p needs 0 < p <= 1.
  void validate() const;

  /// Concatenated text parts; image parts are skipped.
  std::string text() const;
  const ImageRef* image() const;
  bool has_image() const { return image() != nullptr; }

  bool operator==(const ModelRequest&) const = default;
};

struct TokenLogprob {
  std::string token;
  double logprob = 0.0;
  bool operator==(const TokenLogprob&) const = default;
};

struct Sample {
  std::string text;
  std::vector<TokenLogprob> tokens;
  bool operator==(const Sample&) const = default;
};

struct Usage {
  std::int64_t prompt_tokens = 0;
  std::int64_t completion_tokens = 0;
  bool operator==(const Usage&) const = default;
};

struct ModelResponse {
  std::vector<Sample> samples;
  Usage usage;
  bool operator==(const ModelResponse&) const = default;
};

enum class NliLabel { entailment = 0, neutral = 1, contradiction = 2 };

std::string to_string(NliLabel l);
NliLabel parse_nli_label(const std::string& s);

struct NliVerdict {
  NliLabel label = NliLabel::neutral;
  std::array<double, 3> probabilities{0.0, 1.0, 0.0};

  /// Builds a verdict whose label is the argmax (first wins on ties).
  static NliVerdict from_probabilities(std::array<double, 3> probs);
  bool operator==(const NliVerdict&) const = default;
};

void to_json(nlohmann::json& j, const PromptPart& p);
void from_json(const nlohmann::json& j, PromptPart& p);
void to_json(nlohmann::json& j, const SamplingParams& s);
void from_json(const nlohmann::json& j, SamplingParams& s);
void to_json(nlohmann::json& j, const ModelRequest& r);
void from_json(const nlohmann::json& j, ModelRequest& r);
void to_json(nlohmann::json& j, const TokenLogprob& t);
void from_json(const nlohmann::json& j, TokenLogprob& t);
void to_json(nlohmann::json& j, const Sample& s);
void from_json(const nlohmann::json& j, Sample& s);
void to_json(nlohmann::json& j, const ModelResponse& r);
void from_json(const nlohmann::json& j, ModelResponse& r);
void to_json(nlohmann::json& j, const NliVerdict& v);

/// exp(mean(logprobs)): the length-normalised sequence probability, i.e. the
/// geometric mean of the token probabilities. Empty input gives 0.
double length_normalized_probability(const std::vector<double>& logprobs);
std::vector<double> logprob_values(const std::vector<TokenLogprob>& tokens);

// ---------------------------------------------------------------------------
// Backends

class Backend {
 public:
  virtual ~Backend() = default;

  /// Identifies the model behind the backend; part of every cache key.
  virtual std::string id() const = 0;
  virtual ModelResponse generate(const ModelRequest& request) = 0;
  /// Teacher-forced log-probabilities of `continuation` given the prompt in
  /// `context` (sampling fields ignored). Throws CapabilityError if the
  /// backend cannot score.
  virtual std::vector<TokenLogprob> score_text(const ModelRequest& context,
                                               const std::string& continuation) = 0;
};

/// Content-addressed store of responses under a directory. Entries are JSON
/// files named by the SHA-256 of the canonical request description.
class ResponseCache {
 public:
  explicit ResponseCache(std::filesystem::path dir);

  static std::string key_for(const std::string& backend_id, const std::string& op,
                             const ModelRequest& request, const std::string& continuation = {});

  std::optional<nlohmann::json> load(const std::string& key) const;
  void store(const std::string& key, const nlohmann::json& value);

  const std::filesystem::path& dir() const { return dir_; }

 private:
  std::filesystem::path path_for(const std::string& key) const;
  std::mutex& lock_for(const std::string& key);

  std::filesystem::path dir_;
  std::array<std::mutex, 64> locks_;
};

struct RetryPolicy {
  int max_attempts = 3;
  std::chrono::milliseconds initial_backoff{200};
  double multiplier = 2.0;
};

struct ClientOptions {
  int max_inflight = 8;
  RetryPolicy retry;
  std::optional<std::filesystem::path> cache_dir;
};

struct ClientStats {
  std::int64_t backend_calls = 0;
  std::int64_t cache_hits = 0;
  std::int64_t retries = 0;
};

/// Thread-safe front for a Backend: validation, caching, retries and a
/// global bound on in-flight backend calls.
class ModelClient {
 public:
  ModelClient(std::shared_ptr<Backend> backend, ClientOptions options = {});

  ModelResponse generate(const ModelRequest& request);
  std::vector<TokenLogprob> score_text(const ModelRequest& context, const std::string& continuation);

  /// Probability of each label as a continuation of `context`, renormalised
  /// over the label set. Uses score_text.
  std::vector<double> label_distribution(const ModelRequest& context,
                                         const std::vector<std::string>& labels);

  const std::string& backend_id() const { return backend_id_; }
  ClientStats stats() const;

 private:
  template <typename F>
  auto with_retries(F&& call) -> decltype(call());

  std::shared_ptr<Backend> backend_;
  std::string backend_id_;
  ClientOptions options_;
  std::optional<ResponseCache> cache_;
  std::unique_ptr<std::counting_semaphore<>> inflight_;
  mutable std::mutex stats_mutex_;
  ClientStats stats_;
};

// ---------------------------------------------------------------------------
// Natural language inference

class NliProvider {
 public:
  virtual ~NliProvider() = default;
  virtual NliVerdict classify(const std::string& premise, const std::string& hypothesis) = 0;
};

/// Three-way classification by prompting the language model and comparing
/// the probabilities of the three label words.
class PromptNli : public NliProvider {
 public:
  PromptNli(std::shared_ptr<ModelClient> client, std::string prompt_template);
  NliVerdict classify(const std::string& premise, const std::string& hypothesis) override;

 private:
  std::shared_ptr<ModelClient> client_;
  std::string template_;
};

/// Dedicated classification endpoint. POSTs {"premise", "hypothesis"} and
/// expects {"entailment": p, "neutral": p, "contradiction": p}, optionally
/// nested under "probabilities".
class HttpNli : public NliProvider {
 public:
  explicit HttpNli(std::string url);
  NliVerdict classify(const std::string& premise, const std::string& hypothesis) override;

 private:
  std::string url_;
};

/// Always answers with the same verdict.
class FixedNli : public NliProvider {
 public:
  explicit FixedNli(NliLabel label);
  NliVerdict classify(const std::string& premise, const std::string& hypothesis) override;

 private:
  NliLabel label_;
};

/// Validates inputs and short-circuits identical sentences to entailment
/// before delegating to the provider.
NliVerdict nli_classify(NliProvider& provider, const std::string& premise,
                        const std::string& hypothesis);

}  // namespace repare
