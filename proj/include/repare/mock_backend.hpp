#pragma once

#include <atomic>
#include <filesystem>
#include <memory>
#include <mutex>
#include <optional>
#include <regex>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "repare/model_client.hpp"

namespace repare {

/// Offline backend driven by a JSON table. Table layout:
///
///   {
///     "backend_id": "mock-table-1",            // optional
///     "capabilities": {"logprobs": true, "score": true},
///     "rules": [
///       {"op": "generate" | "score" | "any",    // default "any"
///        "contains": "Short Answer:",           // substring of prompt text
///        "regex": "^Question: .*",              // ECMAScript, searched
///        "prompt_sha256": "...",                // hash of prompt text
///        "image": "present" | "absent" | "any",
///        "image_id": "42",
///        "continuation": "A",                   // score rules, trimmed match
///        "replies": [{"text": "...", "tokens": [...], "logprobs": [...]}],
///        "select": "cycle" | "seeded",           // how samples pick replies
///        "logprobs": [-0.5, -1.5],              // score rules
///        "error": "transport" | "capability" | "failure",
///        "fail_times": 2}                       // transient transport errors
///     ],
///     "fallback": {"type": "echo" | "fixed" | "error", "text": "..."}
///   }
///
/// The first matching rule wins. Sample j of a request takes reply j modulo
/// the reply count ("cycle") or a reply picked by hashing (seed, j)
/// ("seeded"). Stop markers and max_new_tokens are applied to the reply.
/// Missing logprobs are filled with a deterministic hash of the context
/// and token, so every response is a pure function of (table, request).
class MockBackend : public Backend {
 public:
  static std::shared_ptr<MockBackend> from_file(const std::filesystem::path& path);
  static std::shared_ptr<MockBackend> from_json(const nlohmann::json& table);

  std::string id() const override { return id_; }
  ModelResponse generate(const ModelRequest& request) override;
  std::vector<TokenLogprob> score_text(const ModelRequest& context,
                                       const std::string& continuation) override;

  /// Tokenisation used by the mock: whitespace-separated words.
  static std::vector<std::string> tokenize(const std::string& text);

 private:
  struct Reply {
    std::string text;
    std::optional<std::vector<std::string>> tokens;
    std::optional<std::vector<double>> logprobs;
  };
  enum class Op { any, generate, score };
  enum class ImageCond { any, present, absent };
  struct Rule {
    Op op = Op::any;
    std::optional<std::string> contains;
    std::optional<std::regex> regex;
    std::optional<std::string> prompt_sha256;
    ImageCond image = ImageCond::any;
    std::optional<std::string> image_id;
    std::optional<std::string> continuation;
    std::vector<Reply> replies;
    bool seeded = false;
    std::optional<std::vector<double>> logprobs;
    std::optional<std::string> error;
    int fail_times = 0;
    std::shared_ptr<std::atomic<int>> failures_left;
  };
  enum class Fallback { echo, fixed, error };

  MockBackend() = default;
  const Rule* match(Op op, const ModelRequest& request, const std::string* continuation) const;
  static void raise(const Rule& rule);
  Sample make_sample(const Reply& reply, const ModelRequest& request) const;

  std::string id_;
  bool logprobs_capable_ = true;
  bool score_capable_ = true;
  std::vector<Rule> rules_;
  Fallback fallback_ = Fallback::echo;
  std::string fallback_text_;
};

/// Decorator that records every call before forwarding it. Tests use it to
/// assert which prompts a pipeline variant sends.
class RecordingBackend : public Backend {
 public:
  struct Call {
    std::string op;  // "generate" or "score"
    ModelRequest request;
    std::string continuation;
  };

  explicit RecordingBackend(std::shared_ptr<Backend> inner);

  std::string id() const override { return inner_->id(); }
  ModelResponse generate(const ModelRequest& request) override;
  std::vector<TokenLogprob> score_text(const ModelRequest& context,
                                       const std::string& continuation) override;

  std::vector<Call> calls() const;
  void clear();

 private:
  std::shared_ptr<Backend> inner_;
  mutable std::mutex mutex_;
  std::vector<Call> calls_;
};

}  // namespace repare
