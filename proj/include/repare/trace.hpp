#pragma once

#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "repare/model_client.hpp"

namespace repare {

struct PromptTrace {
  std::string stage;
  std::string op;    // generate | score | labels
  std::string hash;  // cache key of the request
  bool has_image = false;
  std::string text;
};

/// Per-instance log of the prompts a pipeline sent and the warnings it hit.
/// Not thread-safe: one instance is processed by one thread.
class Trace {
 public:
  void prompt(const std::string& stage, const std::string& op, const std::string& backend_id,
              const ModelRequest& request, const std::string& continuation = {});
  void warn(const std::string& stage, const std::string& message);

  const std::vector<PromptTrace>& prompts() const { return prompts_; }
  const std::vector<std::string>& warnings() const { return warnings_; }

  nlohmann::json prompts_json(bool with_text) const;

 private:
  std::vector<PromptTrace> prompts_;
  std::vector<std::string> warnings_;
};

/// ModelClient calls that also log to an optional trace.
ModelResponse traced_generate(ModelClient& client, Trace* trace, const std::string& stage,
                              const ModelRequest& request);
std::vector<TokenLogprob> traced_score(ModelClient& client, Trace* trace, const std::string& stage,
                                       const ModelRequest& context, const std::string& continuation);
std::vector<double> traced_labels(ModelClient& client, Trace* trace, const std::string& stage,
                                  const ModelRequest& context, const std::vector<std::string>& labels);

}  // namespace repare
