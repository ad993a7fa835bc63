#include "repare/prompts.hpp"

#include <fstream>
#include <sstream>

#include "repare/embedded_data.hpp"
#include "repare/error.hpp"

namespace repare {

using nlohmann::json;

std::string to_string(BackendStyle s) { return s == BackendStyle::chat ? "chat" : "completion"; }

BackendStyle parse_backend_style(const std::string& s) {
  if (s == "completion") return BackendStyle::completion;
  if (s == "chat") return BackendStyle::chat;
  throw ValidationError("unknown backend style '" + s + "'");
}

std::string fill_template(const std::string& tmpl, const Slots& slots) {
  std::string out;
  out.reserve(tmpl.size());
  std::size_t i = 0;
  while (i < tmpl.size()) {
    if (tmpl[i] == '{') {
      std::size_t j = i + 1;
      while (j < tmpl.size() && ((tmpl[j] >= 'a' && tmpl[j] <= 'z') || tmpl[j] == '_')) ++j;
      if (j < tmpl.size() && tmpl[j] == '}' && j > i + 1) {
        const std::string name = tmpl.substr(i + 1, j - i - 1);
        auto it = slots.find(name);
        if (it == slots.end()) throw ValidationError("template slot {" + name + "} has no value");
        out += it->second;
        i = j + 1;
        continue;
      }
    }
    out.push_back(tmpl[i++]);
  }
  return out;
}

PromptRegistry PromptRegistry::builtin() {
  return from_json(json::parse(embedded::prompt_registry()));
}

PromptRegistry PromptRegistry::from_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw LoadError(path.string(), "cannot open prompt registry");
  std::ostringstream buf;
  buf << in.rdbuf();
  try {
    return from_json(json::parse(buf.str()));
  } catch (const json::exception& e) {
    throw LoadError(path.string(), e.what());
  }
}

PromptRegistry PromptRegistry::from_json(const json& j) {
  PromptRegistry reg;
  for (const auto& [name, body] : j.items()) {
    Style style;
    style.image_prefix = body.value("image_prefix", std::string());
    style.image_suffix = body.value("image_suffix", std::string());
    for (const auto& [stage, tmpl] : body.at("templates").items())
      style.templates[stage] = tmpl.get<std::string>();
    reg.styles_[parse_backend_style(name)] = std::move(style);
  }
  return reg;
}

bool PromptRegistry::has(BackendStyle style, const std::string& stage) const {
  auto it = styles_.find(style);
  return it != styles_.end() && it->second.templates.count(stage) > 0;
}

const std::string& PromptRegistry::get(BackendStyle style, const std::string& stage) const {
  auto it = styles_.find(style);
  if (it == styles_.end()) throw ValidationError("prompt registry has no style " + to_string(style));
  auto t = it->second.templates.find(stage);
  if (t == it->second.templates.end())
    throw ValidationError("prompt registry has no '" + stage + "' template for " + to_string(style));
  return t->second;
}

std::string PromptRegistry::render(BackendStyle style, const std::string& stage, const Slots& slots,
                                   bool with_image) const {
  const auto& s = styles_.at(style);
  Slots all = slots;
  all["image"] = with_image ? s.image_prefix + std::string(kImageMarker) + s.image_suffix : "";
  return fill_template(get(style, stage), all);
}

std::vector<PromptPart> PromptRegistry::to_parts(const std::string& rendered,
                                                 const ImageRef* image) const {
  std::vector<PromptPart> parts;
  const auto pos = rendered.find(kImageMarker);
  if (pos == std::string::npos) {
    if (!rendered.empty()) parts.push_back(TextPart{rendered});
    return parts;
  }
  if (rendered.find(kImageMarker, pos + kImageMarker.size()) != std::string::npos)
    throw ValidationError("rendered prompt has more than one image slot");
  if (!image) throw ValidationError("prompt has an image slot but no image was given");
  const std::string before = rendered.substr(0, pos);
  const std::string after = rendered.substr(pos + kImageMarker.size());
  if (!before.empty()) parts.push_back(TextPart{before});
  parts.push_back(ImagePart{*image});
  if (!after.empty()) parts.push_back(TextPart{after});
  return parts;
}

std::vector<PromptPart> PromptRegistry::build(BackendStyle style, const std::string& stage,
                                              const Slots& slots, const ImageRef* image) const {
  return to_parts(render(style, stage, slots, image != nullptr), image);
}

}  // namespace repare
