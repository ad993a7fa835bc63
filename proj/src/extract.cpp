#include "repare/extract.hpp"

#include <regex>
#include <set>
#include <sstream>

#include "repare/error.hpp"
#include "repare/hashing.hpp"
#include "text_util.hpp"

namespace repare {

using nlohmann::json;

std::string to_string(EntitySource s) { return s == EntitySource::question ? "question" : "rationale"; }

void to_json(json& j, const VisualDetails& d) {
  json entities = json::array();
  for (const auto& e : d.entities)
    entities.push_back({{"name", e.name}, {"source", to_string(e.source)}, {"detail", e.detail}});
  j = json{{"caption", d.caption}, {"rationale", d.rationale_text}, {"entities", entities}};
}

namespace {

std::size_t word_count(const std::string& s) {
  std::istringstream in(s);
  std::size_t n = 0;
  std::string w;
  while (in >> w) ++n;
  return n;
}

std::string strip_item(std::string item) {
  static const std::regex marker(R"(^\s*(?:\d+[.)]|[-*]|•|\(\w\)|[A-Da-d][.)](?=\s))\s*)");
  static const std::regex conj(R"(^(?:and|or)\s+)", std::regex::icase);
  item = std::regex_replace(item, marker, "", std::regex_constants::format_first_only);
  item = text::trim(item);
  item = std::regex_replace(item, conj, "", std::regex_constants::format_first_only);
  while (!item.empty() && std::string(".!?:\"'`").find(item.back()) != std::string::npos) item.pop_back();
  while (!item.empty() && std::string("\"'`").find(item.front()) != std::string::npos) item.erase(0, 1);
  return text::collapse_whitespace(text::to_lower(text::trim(item)));
}

}  // namespace

std::vector<std::string> parse_entity_list(std::string_view response, std::size_t cap) {
  std::string s = text::trim(response);
  if (s.empty() || cap == 0) return {};
  static const std::regex inline_enum(R"(\s+(\d+[.)])\s+)");
  s = std::regex_replace(s, inline_enum, "\n$1 ");

  static const std::regex leading_marker(R"(^\s*(?:\d+[.)]|[-*]|•)\s)");
  const bool structured = s.find_first_of("\n,;") != std::string::npos ||
                          std::regex_search(s, leading_marker);
  if (!structured && std::string(".!?").find(s.back()) != std::string::npos && word_count(s) >= 3)
    return {};

  std::vector<std::string> out;
  std::set<std::string> seen;
  std::string item;
  auto flush = [&] {
    std::string name = strip_item(item);
    item.clear();
    if (name.empty() || word_count(name) > 6 || out.size() >= cap) return;
    if (seen.insert(name).second) out.push_back(std::move(name));
  };
  for (char c : s) {
    if (c == '\n' || c == ',' || c == ';') flush();
    else item.push_back(c);
  }
  flush();
  return out;
}

std::string clean_detail(std::string_view raw, std::size_t max_sentences) {
  std::string s = text::collapse_whitespace(text::trim(raw));
  if (max_sentences == 0) return s;
  std::size_t sentences = 0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (s[i] != '.' && s[i] != '!' && s[i] != '?') continue;
    if (i + 1 < s.size() && s[i + 1] != ' ') continue;
    if (++sentences == max_sentences) return s.substr(0, i + 1);
  }
  return s;
}

std::string assemble_details_block(const VisualDetails& details) {
  std::vector<std::string> lines;
  std::set<std::string> seen;
  for (const auto& e : details.entities) {
    if (!seen.insert(text::comparison_key(e.name)).second) continue;
    lines.push_back(e.name + ": " + text::collapse_whitespace(e.detail));
  }
  if (!details.caption.empty()) lines.push_back("image: " + text::collapse_whitespace(details.caption));
  return text::join(lines, "\n");
}

Extractor::Extractor(ModelClient& client, const PromptRegistry& prompts, const Stoplist& stoplist,
                     ExtractOptions options)
    : client_(client), prompts_(prompts), stoplist_(stoplist), options_(options) {}

std::vector<std::string> Extractor::stop_markers() const {
  if (options_.style == BackendStyle::chat) return {"###"};
  return {};
}

std::string Extractor::generate_caption(const ImageRef& image, std::uint64_t seed, Trace* trace) {
  ModelRequest req;
  req.prompt_parts = prompts_.build(options_.style, "caption", {}, &image);
  req.sampling = SamplingParams::greedy(options_.caption_max_tokens);
  req.stop_markers = stop_markers();
  req.seed = derive_seed(seed, "caption");
  std::string caption;
  try {
    auto resp = traced_generate(client_, trace, "caption", req);
    caption = text::trim(resp.samples.at(0).text);
  } catch (const StageError&) {
    throw;
  } catch (const Error& e) {
    throw StageError("caption", e.what());
  }
  if (caption.empty()) throw StageError("caption", "empty caption");
  return caption;
}

RationaleResult Extractor::generate_rationale_and_entities(const ImageRef& image,
                                                           const std::string& question,
                                                           const std::string& caption,
                                                           std::uint64_t seed, Trace* trace) {
  RationaleResult result;
  try {
    ModelRequest req;
    req.prompt_parts = prompts_.build(options_.style, "rationale", {{"question", question}}, &image);
    req.sampling = SamplingParams::beam_search(options_.rationale_beams, options_.rationale_temperature,
                                               options_.rationale_max_tokens);
    req.stop_markers = stop_markers();
    req.seed = derive_seed(seed, "rationale");
    result.rationale = text::trim(traced_generate(client_, trace, "rationale", req).samples.at(0).text);
    if (result.rationale.empty() && trace) trace->warn("rationale", "empty rationale");

    ModelRequest ent;
    ent.prompt_parts = prompts_.build(
        options_.style, "entities",
        {{"question", question}, {"rationale", result.rationale}, {"caption", caption}}, &image);
    ent.sampling = SamplingParams::greedy(options_.entities_max_tokens);
    ent.stop_markers = stop_markers();
    ent.seed = derive_seed(seed, "entities");
    const std::string response = traced_generate(client_, trace, "entities", ent).samples.at(0).text;
    result.entities = parse_entity_list(response, options_.max_rationale_entities);
    if (result.entities.empty() && trace)
      trace->warn("entities", "no entities parsed from response '" + text::trim(response) + "'");
  } catch (const Error& e) {
    throw StageError("rationale", e.what());
  }
  return result;
}

std::optional<std::string> Extractor::query_entity_details(const ImageRef& image,
                                                           const std::string& entity,
                                                           std::uint64_t seed, Trace* trace) {
  if (text::trim(entity).empty()) throw ValidationError("entity name is empty");
  ModelRequest req;
  req.prompt_parts = prompts_.build(options_.style, "details", {{"entity", entity}}, &image);
  req.sampling = SamplingParams::greedy(options_.details_max_tokens);
  req.stop_markers = stop_markers();
  req.seed = derive_seed(seed, "details:" + entity);
  try {
    auto detail = clean_detail(traced_generate(client_, trace, "details", req).samples.at(0).text,
                               options_.max_detail_sentences);
    if (detail.empty()) {
      if (trace) trace->warn("details", "empty detail for '" + entity + "'; entity skipped");
      return std::nullopt;
    }
    return detail;
  } catch (const Error& e) {
    if (trace) trace->warn("details", "'" + entity + "' skipped: " + e.what());
    return std::nullopt;
  }
}

std::vector<std::string> Extractor::question_entities(const std::string& question) const {
  std::vector<std::string> out;
  for (const auto& p : extract_keywords(question, stoplist_).phrases) {
    if (out.size() >= options_.max_question_entities) break;
    out.push_back(p.phrase);
  }
  return out;
}

VisualDetails Extractor::extract(const ImageRef& image, const std::string& question,
                                 std::uint64_t seed, Trace* trace) {
  VisualDetails details;
  std::vector<std::pair<std::string, EntitySource>> names;
  if (options_.use_question_entities)
    for (auto& q : question_entities(question)) names.emplace_back(std::move(q), EntitySource::question);

  const bool entities_need_caption =
      options_.use_rationale &&
      prompts_.get(options_.style, "entities").find("{caption}") != std::string::npos;
  std::string caption;
  if (options_.use_caption || entities_need_caption) caption = generate_caption(image, seed, trace);
  if (options_.use_caption) details.caption = caption;

  if (options_.use_rationale) {
    auto r = generate_rationale_and_entities(image, question, caption, seed, trace);
    details.rationale_text = r.rationale;
    for (auto& e : r.entities) names.emplace_back(std::move(e), EntitySource::rationale);
  }

  std::set<std::string> seen;
  for (const auto& [name, source] : names) {
    if (!seen.insert(text::comparison_key(name)).second) continue;
    if (auto detail = query_entity_details(image, name, seed, trace))
      details.entities.push_back({name, source, *detail});
  }
  return details;
}

}  // namespace repare
