#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "repare/datamodel.hpp"
#include "repare/keywords.hpp"
#include "repare/model_client.hpp"
#include "repare/prompts.hpp"
#include "repare/trace.hpp"

namespace repare {

enum class EntitySource { question, rationale };

std::string to_string(EntitySource s);

struct DetailedEntity {
  std::string name;
  EntitySource source = EntitySource::question;
  std::string detail;
  bool operator==(const DetailedEntity&) const = default;
};

struct VisualDetails {
  std::string caption;  // empty when captions are disabled
  std::vector<DetailedEntity> entities;
  std::string rationale_text;
  bool operator==(const VisualDetails&) const = default;
};

void to_json(nlohmann::json& j, const VisualDetails& d);

struct RationaleResult {
  std::string rationale;
  std::vector<std::string> entities;
};

struct ExtractOptions {
  BackendStyle style = BackendStyle::completion;
  std::size_t max_question_entities = 3;
  std::size_t max_rationale_entities = 3;
  std::size_t max_detail_sentences = 2;
  bool use_rationale = true;
  bool use_caption = true;
  bool use_question_entities = true;

  int caption_max_tokens = 60;
  int rationale_beams = 5;
  double rationale_temperature = 0.7;
  int rationale_max_tokens = 100;
  int entities_max_tokens = 40;
  int details_max_tokens = 60;
};

/// Gathers caption, rationale, entities and per-entity details for one
/// question about one image.
class Extractor {
 public:
  Extractor(ModelClient& client, const PromptRegistry& prompts, const Stoplist& stoplist,
            ExtractOptions options);

  /// Throws StageError("caption", ...) on model failure or an empty caption.
  std::string generate_caption(const ImageRef& image, std::uint64_t seed, Trace* trace = nullptr);

  /// Samples a rationale with beam search, then asks for the entities it
  /// relies on. `caption` feeds templates that ask for one.
  RationaleResult generate_rationale_and_entities(const ImageRef& image, const std::string& question,
                                                  const std::string& caption, std::uint64_t seed,
                                                  Trace* trace = nullptr);

  /// Greedy detail for one entity; nullopt (with a warning) on failure.
  std::optional<std::string> query_entity_details(const ImageRef& image, const std::string& entity,
                                                  std::uint64_t seed, Trace* trace = nullptr);

  /// Top keyword phrases of the question.
  std::vector<std::string> question_entities(const std::string& question) const;

  /// All of the above, honouring the ablation switches in the options.
  VisualDetails extract(const ImageRef& image, const std::string& question, std::uint64_t seed,
                        Trace* trace = nullptr);

  const ExtractOptions& options() const { return options_; }

 private:
  std::vector<std::string> stop_markers() const;

  ModelClient& client_;
  const PromptRegistry& prompts_;
  const Stoplist& stoplist_;
  ExtractOptions options_;
};

/// Parses an entity list such as "1. net 2. players", "clock, sky" or a
/// bulleted list. Markers are stripped, items lower-cased, deduplicated and
/// capped. A single sentence without list structure ("I cannot tell.") and
/// items longer than six words yield nothing.
std::vector<std::string> parse_entity_list(std::string_view response, std::size_t cap);

/// Collapses whitespace and keeps the first `max_sentences` sentences.
std::string clean_detail(std::string_view raw, std::size_t max_sentences);

/// "<entity>: <detail>" per entity (first occurrence of a name wins), then
/// "image: <caption>" when a caption is present.
std::string assemble_details_block(const VisualDetails& details);

}  // namespace repare
