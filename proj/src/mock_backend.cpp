#include "repare/mock_backend.hpp"

#include <fstream>
#include <sstream>

#include "repare/error.hpp"
#include "repare/hashing.hpp"
#include "text_util.hpp"

namespace repare {

using nlohmann::json;

namespace {

// Deterministic stand-in logprob in (-2.01, -0.01].
double pseudo_logprob(const std::string& context, const std::string& token, std::size_t index) {
  const std::uint64_t h =
      derive_seed(fnv1a64(context), fnv1a64(token) ^ static_cast<std::uint64_t>(index));
  return -(0.01 + static_cast<double>(h % 2000) / 1000.0);
}

std::string last_nonempty_line(const std::string& text) {
  auto lines = text::split_lines(text);
  for (auto it = lines.rbegin(); it != lines.rend(); ++it) {
    auto t = text::trim(*it);
    if (!t.empty()) return t;
  }
  return {};
}

}  // namespace

std::vector<std::string> MockBackend::tokenize(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream in(text);
  std::string word;
  while (in >> word) out.push_back(word);
  return out;
}

std::shared_ptr<MockBackend> MockBackend::from_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw LoadError(path.string(), "cannot open mock table");
  std::ostringstream buf;
  buf << in.rdbuf();
  try {
    return from_json(json::parse(buf.str()));
  } catch (const json::exception& e) {
    throw LoadError(path.string(), std::string("invalid mock table: ") + e.what());
  } catch (const ValidationError& e) {
    throw LoadError(path.string(), e.what());
  }
}

std::shared_ptr<MockBackend> MockBackend::from_json(const json& table) {
  std::shared_ptr<MockBackend> mock(new MockBackend());
  mock->id_ = table.value("backend_id", "mock:" + sha256_hex(table.dump()).substr(0, 16));
  if (table.contains("capabilities")) {
    mock->logprobs_capable_ = table["capabilities"].value("logprobs", true);
    mock->score_capable_ = table["capabilities"].value("score", true);
  }
  for (const auto& r : table.value("rules", json::array())) {
    Rule rule;
    const auto op = r.value("op", std::string("any"));
    if (op == "generate") rule.op = Op::generate;
    else if (op == "score") rule.op = Op::score;
    else if (op == "any") rule.op = Op::any;
    else throw ValidationError("mock rule: unknown op '" + op + "'");
    if (r.contains("contains")) rule.contains = r["contains"].get<std::string>();
    if (r.contains("regex")) {
      try {
        rule.regex.emplace(r["regex"].get<std::string>(), std::regex::ECMAScript);
      } catch (const std::regex_error& e) {
        throw ValidationError(std::string("mock rule: bad regex: ") + e.what());
      }
    }
    if (r.contains("prompt_sha256")) rule.prompt_sha256 = r["prompt_sha256"].get<std::string>();
    const auto image = r.value("image", std::string("any"));
    if (image == "present") rule.image = ImageCond::present;
    else if (image == "absent") rule.image = ImageCond::absent;
    else if (image == "any") rule.image = ImageCond::any;
    else throw ValidationError("mock rule: unknown image condition '" + image + "'");
    if (r.contains("image_id")) rule.image_id = r["image_id"].get<std::string>();
    if (r.contains("continuation")) rule.continuation = text::trim(r["continuation"].get<std::string>());
    for (const auto& rep : r.value("replies", json::array())) {
      Reply reply;
      if (rep.is_string()) {
        reply.text = rep.get<std::string>();
      } else {
        reply.text = rep.at("text").get<std::string>();
        if (rep.contains("tokens")) reply.tokens = rep["tokens"].get<std::vector<std::string>>();
        if (rep.contains("logprobs")) reply.logprobs = rep["logprobs"].get<std::vector<double>>();
        if (reply.tokens && reply.logprobs && reply.tokens->size() != reply.logprobs->size())
          throw ValidationError("mock reply: tokens and logprobs differ in length");
      }
      rule.replies.push_back(std::move(reply));
    }
    rule.seeded = r.value("select", std::string("cycle")) == "seeded";
    if (r.contains("logprobs")) rule.logprobs = r["logprobs"].get<std::vector<double>>();
    if (r.contains("error")) rule.error = r["error"].get<std::string>();
    rule.fail_times = r.value("fail_times", 0);
    rule.failures_left = std::make_shared<std::atomic<int>>(rule.fail_times);
    if (!rule.error && rule.fail_times == 0 && rule.op != Op::score && rule.replies.empty() &&
        !rule.logprobs)
      throw ValidationError("mock rule needs replies, logprobs or error");
    mock->rules_.push_back(std::move(rule));
  }
  if (table.contains("fallback")) {
    const auto& fb = table["fallback"];
    const auto type = fb.value("type", std::string("echo"));
    if (type == "echo") mock->fallback_ = Fallback::echo;
    else if (type == "fixed") {
      mock->fallback_ = Fallback::fixed;
      mock->fallback_text_ = fb.value("text", std::string());
    } else if (type == "error") mock->fallback_ = Fallback::error;
    else throw ValidationError("mock fallback: unknown type '" + type + "'");
  }
  return mock;
}

const MockBackend::Rule* MockBackend::match(Op op, const ModelRequest& request,
                                            const std::string* continuation) const {
  const std::string text = request.text();
  const ImageRef* image = request.image();
  std::optional<std::string> text_hash;
  for (const auto& rule : rules_) {
    if (rule.op != Op::any && rule.op != op) continue;
    if (rule.image == ImageCond::present && !image) continue;
    if (rule.image == ImageCond::absent && image) continue;
    if (rule.image_id && (!image || image->id != *rule.image_id)) continue;
    if (rule.contains && text.find(*rule.contains) == std::string::npos) continue;
    if (rule.regex && !std::regex_search(text, *rule.regex)) continue;
    if (rule.prompt_sha256) {
      if (!text_hash) text_hash = sha256_hex(text);
      if (*text_hash != *rule.prompt_sha256) continue;
    }
    if (rule.continuation && (!continuation || text::trim(*continuation) != *rule.continuation))
      continue;
    return &rule;
  }
  return nullptr;
}

void MockBackend::raise(const Rule& rule) {
  if (rule.failures_left && rule.failures_left->load() > 0 && rule.failures_left->fetch_sub(1) > 0)
    throw TransportError("mock transient failure", std::chrono::milliseconds(0));
  if (!rule.error) return;
  if (*rule.error == "transport")
    throw TransportError("mock transport failure", std::chrono::milliseconds(0));
  if (*rule.error == "capability") throw CapabilityError("mock capability failure");
  throw Error("mock backend failure");
}

Sample MockBackend::make_sample(const Reply& reply, const ModelRequest& request) const {
  std::string text = reply.text;
  bool truncated = false;
  std::size_t cut = std::string::npos;
  for (const auto& stop : request.stop_markers) {
    if (stop.empty()) continue;
    cut = std::min(cut, text.find(stop));
  }
  if (cut != std::string::npos) {
    text = text.substr(0, cut);
    truncated = true;
  }
  std::string trimmed = text::trim(text);
  truncated = truncated || trimmed != text;
  text = trimmed;

  std::vector<std::string> tokens = (!truncated && reply.tokens) ? *reply.tokens : tokenize(text);
  if (static_cast<int>(tokens.size()) > request.sampling.max_new_tokens) {
    tokens.resize(static_cast<std::size_t>(request.sampling.max_new_tokens));
    text = text::join(tokens, " ");
  }

  Sample sample;
  sample.text = text;
  if (!logprobs_capable_) return sample;
  const std::string context = request.text();
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    const bool given = reply.logprobs && i < reply.logprobs->size();
    sample.tokens.push_back({tokens[i], given ? (*reply.logprobs)[i] : pseudo_logprob(context, tokens[i], i)});
  }
  return sample;
}

ModelResponse MockBackend::generate(const ModelRequest& request) {
  request.validate();
  const Rule* rule = match(Op::generate, request, nullptr);
  ModelResponse response;
  const auto n = static_cast<std::size_t>(request.sampling.num_samples);
  if (rule) {
    raise(*rule);
    if (rule->replies.empty()) throw Error("mock rule has no replies for generation");
    for (std::size_t j = 0; j < n; ++j) {
      const std::size_t pick = rule->seeded ? derive_seed(request.seed, j) % rule->replies.size()
                                            : j % rule->replies.size();
      response.samples.push_back(make_sample(rule->replies[pick], request));
    }
  } else {
    Reply reply;
    switch (fallback_) {
      case Fallback::error: throw Error("mock backend: no rule matches the prompt");
      case Fallback::fixed: reply.text = fallback_text_; break;
      case Fallback::echo: reply.text = last_nonempty_line(request.text()); break;
    }
    for (std::size_t j = 0; j < n; ++j) response.samples.push_back(make_sample(reply, request));
  }
  response.usage.prompt_tokens = static_cast<std::int64_t>(tokenize(request.text()).size());
  for (const auto& s : response.samples)
    response.usage.completion_tokens += static_cast<std::int64_t>(tokenize(s.text).size());
  return response;
}

std::vector<TokenLogprob> MockBackend::score_text(const ModelRequest& context,
                                                  const std::string& continuation) {
  if (!score_capable_) throw CapabilityError("mock backend configured without scoring");
  const Rule* rule = match(Op::score, context, &continuation);
  const auto tokens = tokenize(continuation);
  std::vector<TokenLogprob> out;
  if (rule) {
    raise(*rule);
    if (rule->logprobs) {
      const auto& lps = *rule->logprobs;
      for (std::size_t i = 0; i < lps.size(); ++i)
        out.push_back({i < tokens.size() ? tokens[i] : std::string(), lps[i]});
      return out;
    }
  }
  if (!rule && fallback_ == Fallback::error) throw Error("mock backend: no score rule matches");
  const std::string ctx = context.text();
  for (std::size_t i = 0; i < tokens.size(); ++i)
    out.push_back({tokens[i], pseudo_logprob(ctx, tokens[i], i)});
  return out;
}

RecordingBackend::RecordingBackend(std::shared_ptr<Backend> inner) : inner_(std::move(inner)) {}

ModelResponse RecordingBackend::generate(const ModelRequest& request) {
  {
    std::lock_guard lock(mutex_);
    calls_.push_back({"generate", request, {}});
  }
  return inner_->generate(request);
}

std::vector<TokenLogprob> RecordingBackend::score_text(const ModelRequest& context,
                                                       const std::string& continuation) {
  {
    std::lock_guard lock(mutex_);
    calls_.push_back({"score", context, continuation});
  }
  return inner_->score_text(context, continuation);
}

std::vector<RecordingBackend::Call> RecordingBackend::calls() const {
  std::lock_guard lock(mutex_);
  return calls_;
}

void RecordingBackend::clear() {
  std::lock_guard lock(mutex_);
  calls_.clear();
}

}  // namespace repare
