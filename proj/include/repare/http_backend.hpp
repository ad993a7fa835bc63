#pragma once

#include <string>

#include <nlohmann/json.hpp>

#include "repare/model_client.hpp"

namespace repare {

struct HttpBackendOptions {
  /// Base URL up to and including the API version, e.g. http://host:8000/v1
  std::string base_url;
  std::string model;
  std::string api_key;  // sent as a bearer token when non-empty
  int timeout_seconds = 120;
  /// How teacher-forced scores are obtained:
  ///   "prompt_logprobs": chat request whose final assistant message is the
  ///       continuation, reading the server's echoed prompt logprobs
  ///       (vLLM-style `prompt_logprobs`).
  ///   "completions_echo": legacy /completions with echo=true; text only.
  std::string score_mode = "prompt_logprobs";
};

/// Backend for an OpenAI-compatible chat-completions endpoint with image
/// content parts and per-token logprobs.
class HttpBackend : public Backend {
 public:
  explicit HttpBackend(HttpBackendOptions options);

  std::string id() const override;
  ModelResponse generate(const ModelRequest& request) override;
  std::vector<TokenLogprob> score_text(const ModelRequest& context,
                                       const std::string& continuation) override;

  /// Request bodies, exposed for wire-format tests.
  nlohmann::json chat_body(const ModelRequest& request) const;
  nlohmann::json score_body(const ModelRequest& context, const std::string& continuation) const;

 private:
  nlohmann::json post(const std::string& path, const nlohmann::json& body) const;
  nlohmann::json content_parts(const ModelRequest& request) const;

  HttpBackendOptions options_;
  std::string scheme_host_port_;
  std::string path_prefix_;
};

/// Turns a response body into samples. Throws CapabilityError when logprobs
/// were wanted and are absent.
ModelResponse parse_chat_response(const nlohmann::json& body, bool want_logprobs);

/// Extracts the continuation's token logprobs from an echoed prompt.
std::vector<TokenLogprob> parse_prompt_logprobs(const nlohmann::json& body,
                                                const std::string& continuation);

}  // namespace repare
