#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "repare/model_client.hpp"

namespace repare {

/// Completion-style backends take raw text after the image; chat-style ones
/// use "### Human:" / "### Assistant:" turns.
enum class BackendStyle { completion, chat };

std::string to_string(BackendStyle s);
BackendStyle parse_backend_style(const std::string& s);

using Slots = std::map<std::string, std::string>;

/// Prompt templates keyed by (backend style, stage). Templates use named
/// `{slot}` placeholders; `{image}` marks where the image attachment goes.
class PromptRegistry {
 public:
  static PromptRegistry builtin();
  static PromptRegistry from_file(const std::filesystem::path& path);
  static PromptRegistry from_json(const nlohmann::json& j);

  bool has(BackendStyle style, const std::string& stage) const;
  const std::string& get(BackendStyle style, const std::string& stage) const;

  /// Substitutes slots into the (style, stage) template. The `{image}` slot
  /// is kept as an internal marker when `with_image` is set and dropped
  /// otherwise; nested renders pass the marker through.
  std::string render(BackendStyle style, const std::string& stage, const Slots& slots,
                     bool with_image) const;

  /// Splits a rendered prompt into parts, putting the image at the marker.
  std::vector<PromptPart> to_parts(const std::string& rendered, const ImageRef* image) const;

  /// render + to_parts.
  std::vector<PromptPart> build(BackendStyle style, const std::string& stage, const Slots& slots,
                                const ImageRef* image) const;

 private:
  struct Style {
    std::string image_prefix;
    std::string image_suffix;
    std::map<std::string, std::string> templates;
  };
  std::map<BackendStyle, Style> styles_;
};

/// Replaces each `{name}` (name = [a-z_]+) with slots[name]. A placeholder
/// with no slot throws ValidationError; other braces are left alone.
std::string fill_template(const std::string& tmpl, const Slots& slots);

/// Internal marker standing in for the image attachment in rendered text.
inline constexpr std::string_view kImageMarker = "\x1e[image]\x1e";

}  // namespace repare
