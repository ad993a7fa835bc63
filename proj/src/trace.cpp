#include "repare/trace.hpp"

#include <spdlog/spdlog.h>

#include "text_util.hpp"

namespace repare {

using nlohmann::json;

void Trace::prompt(const std::string& stage, const std::string& op, const std::string& backend_id,
                   const ModelRequest& request, const std::string& continuation) {
  std::string text = request.text();
  if (!continuation.empty()) text += continuation;
  prompts_.push_back({stage, op, ResponseCache::key_for(backend_id, op, request, continuation),
                      request.has_image(), std::move(text)});
}

void Trace::warn(const std::string& stage, const std::string& message) {
  spdlog::debug("{}: {}", stage, message);
  warnings_.push_back(stage + ": " + message);
}

json Trace::prompts_json(bool with_text) const {
  json out = json::array();
  for (const auto& p : prompts_) {
    json j{{"stage", p.stage}, {"op", p.op}, {"hash", p.hash}, {"image", p.has_image}};
    if (with_text) j["text"] = p.text;
    out.push_back(std::move(j));
  }
  return out;
}

ModelResponse traced_generate(ModelClient& client, Trace* trace, const std::string& stage,
                              const ModelRequest& request) {
  if (trace) trace->prompt(stage, "generate", client.backend_id(), request);
  return client.generate(request);
}

std::vector<TokenLogprob> traced_score(ModelClient& client, Trace* trace, const std::string& stage,
                                       const ModelRequest& context, const std::string& continuation) {
  if (trace) trace->prompt(stage, "score", client.backend_id(), context, continuation);
  return client.score_text(context, continuation);
}

std::vector<double> traced_labels(ModelClient& client, Trace* trace, const std::string& stage,
                                  const ModelRequest& context, const std::vector<std::string>& labels) {
  if (trace) {
    for (const auto& label : labels) trace->prompt(stage, "score", client.backend_id(), context, label);
  }
  return client.label_distribution(context, labels);
}

}  // namespace repare
