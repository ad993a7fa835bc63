#include <httplib.h>

#include "repare/error.hpp"
#include "repare/model_client.hpp"
#include "repare/prompts.hpp"
#include "text_util.hpp"

namespace repare {

using nlohmann::json;

PromptNli::PromptNli(std::shared_ptr<ModelClient> client, std::string prompt_template)
    : client_(std::move(client)), template_(std::move(prompt_template)) {}

NliVerdict PromptNli::classify(const std::string& premise, const std::string& hypothesis) {
  ModelRequest context;
  context.prompt_parts.push_back(
      TextPart{fill_template(template_, {{"premise", premise}, {"hypothesis", hypothesis}})});
  const auto probs =
      client_->label_distribution(context, {" entailment", " neutral", " contradiction"});
  return NliVerdict::from_probabilities({probs[0], probs[1], probs[2]});
}

HttpNli::HttpNli(std::string url) : url_(std::move(url)) {}

NliVerdict HttpNli::classify(const std::string& premise, const std::string& hypothesis) {
  const auto scheme_end = url_.find("://");
  if (scheme_end == std::string::npos) throw ValidationError("NLI URL needs a scheme: " + url_);
  const auto path_start = url_.find('/', scheme_end + 3);
  httplib::Client client(url_.substr(0, path_start));
  const std::string path = path_start == std::string::npos ? "/" : url_.substr(path_start);
  auto res = client.Post(path, json{{"premise", premise}, {"hypothesis", hypothesis}}.dump(),
                         "application/json");
  if (!res) throw TransportError("NLI request failed", std::chrono::milliseconds(500));
  if (res->status != 200) throw Error("NLI endpoint returned HTTP " + std::to_string(res->status));
  json body = json::parse(res->body);
  const json& p = body.contains("probabilities") ? body["probabilities"] : body;
  return NliVerdict::from_probabilities(
      {p.at("entailment").get<double>(), p.at("neutral").get<double>(),
       p.at("contradiction").get<double>()});
}

FixedNli::FixedNli(NliLabel label) : label_(label) {}

NliVerdict FixedNli::classify(const std::string&, const std::string&) {
  std::array<double, 3> probs{0.0, 0.0, 0.0};
  probs[static_cast<std::size_t>(label_)] = 1.0;
  return NliVerdict{label_, probs};
}

NliVerdict nli_classify(NliProvider& provider, const std::string& premise,
                        const std::string& hypothesis) {
  if (text::trim(premise).empty() || text::trim(hypothesis).empty())
    throw ValidationError("NLI needs a non-empty premise and hypothesis");
  if (text::comparison_key(premise) == text::comparison_key(hypothesis))
    return NliVerdict{NliLabel::entailment, {1.0, 0.0, 0.0}};
  return provider.classify(premise, hypothesis);
}

}  // namespace repare
