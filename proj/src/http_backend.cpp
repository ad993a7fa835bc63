#include "repare/http_backend.hpp"

#include <atomic>
#include <fstream>
#include <sstream>

#include <httplib.h>
#include <spdlog/spdlog.h>

#include "repare/error.hpp"
#include "repare/hashing.hpp"
#include "text_util.hpp"

namespace repare {

using nlohmann::json;

namespace {

std::string mime_for(const std::string& source) {
  auto ext = text::to_lower(std::filesystem::path(source).extension().string());
  if (ext == ".png") return "image/png";
  if (ext == ".gif") return "image/gif";
  if (ext == ".webp") return "image/webp";
  return "image/jpeg";
}

bool is_url(const std::string& s) {
  return s.rfind("http://", 0) == 0 || s.rfind("https://", 0) == 0 || s.rfind("data:", 0) == 0;
}

std::string strip_ws(const std::string& s) {
  std::string out;
  for (char c : s)
    if (!text::is_space(c)) out.push_back(c);
  return out;
}

}  // namespace

HttpBackend::HttpBackend(HttpBackendOptions options) : options_(std::move(options)) {
  const auto& url = options_.base_url;
  const auto scheme_end = url.find("://");
  if (scheme_end == std::string::npos) throw ValidationError("endpoint URL needs a scheme: " + url);
  const auto path_start = url.find('/', scheme_end + 3);
  scheme_host_port_ = url.substr(0, path_start);
  path_prefix_ = path_start == std::string::npos ? "" : url.substr(path_start);
  while (!path_prefix_.empty() && path_prefix_.back() == '/') path_prefix_.pop_back();
}

std::string HttpBackend::id() const { return "http:" + options_.base_url + "#" + options_.model; }

json HttpBackend::content_parts(const ModelRequest& request) const {
  json parts = json::array();
  for (const auto& part : request.prompt_parts) {
    if (const auto* t = std::get_if<TextPart>(&part)) {
      if (!t->text.empty()) parts.push_back({{"type", "text"}, {"text", t->text}});
      continue;
    }
    const auto& image = std::get<ImagePart>(part).image;
    std::string url = image.source;
    if (!is_url(url)) {
      std::ifstream in(image.source, std::ios::binary);
      if (!in) throw LoadError(image.source, "cannot read image");
      std::ostringstream buf;
      buf << in.rdbuf();
      url = "data:" + mime_for(image.source) + ";base64," + base64_encode(buf.str());
    }
    parts.push_back({{"type", "image_url"}, {"image_url", {{"url", url}}}});
  }
  return parts;
}

json HttpBackend::chat_body(const ModelRequest& request) const {
  const auto& s = request.sampling;
  json body{{"model", options_.model},
            {"messages", json::array({{{"role", "user"}, {"content", content_parts(request)}}})},
            {"max_tokens", s.max_new_tokens},
            {"n", s.num_samples},
            {"seed", request.seed},
            {"logprobs", request.want_logprobs}};
  if (!request.stop_markers.empty()) body["stop"] = request.stop_markers;
  switch (s.mode) {
    case DecodeMode::greedy:
      body["temperature"] = 0.0;
      break;
    case DecodeMode::top_p:
      body["temperature"] = s.temperature;
      body["top_p"] = s.p;
      break;
    case DecodeMode::beam:
      // vLLM-style extension fields.
      body["temperature"] = s.temperature;
      body["use_beam_search"] = true;
      body["best_of"] = s.beams;
      break;
  }
  if (s.length_penalty) body["length_penalty"] = *s.length_penalty;
  return body;
}

json HttpBackend::score_body(const ModelRequest& context, const std::string& continuation) const {
  if (options_.score_mode == "completions_echo") {
    if (context.has_image())
      throw CapabilityError("completions_echo scoring cannot condition on an image");
    return json{{"model", options_.model}, {"prompt", context.text() + continuation},
                {"max_tokens", 0},         {"echo", true},
                {"logprobs", 0},           {"temperature", 0.0}};
  }
  return json{{"model", options_.model},
              {"messages", json::array({{{"role", "user"}, {"content", content_parts(context)}},
                                        {{"role", "assistant"}, {"content", continuation}}})},
              {"max_tokens", 1},
              {"temperature", 0.0},
              {"prompt_logprobs", 0},
              {"add_generation_prompt", false},
              {"continue_final_message", true}};
}

json HttpBackend::post(const std::string& path, const json& body) const {
  httplib::Client client(scheme_host_port_);
  client.set_connection_timeout(options_.timeout_seconds, 0);
  client.set_read_timeout(options_.timeout_seconds, 0);
  httplib::Headers headers;
  if (!options_.api_key.empty()) headers.emplace("Authorization", "Bearer " + options_.api_key);
  auto res = client.Post(path_prefix_ + path, headers, body.dump(), "application/json");
  if (!res) {
    throw TransportError("request to " + options_.base_url + path + " failed: " +
                             httplib::to_string(res.error()),
                         std::chrono::milliseconds(500));
  }
  if (res->status == 429 || res->status >= 500) {
    std::chrono::milliseconds retry_after(500);
    if (res->has_header("Retry-After")) {
      try {
        retry_after = std::chrono::seconds(std::stoi(res->get_header_value("Retry-After")));
      } catch (const std::exception&) {
      }
    }
    throw TransportError("HTTP " + std::to_string(res->status) + " from " + options_.base_url,
                         retry_after);
  }
  if (res->status != 200)
    throw Error("HTTP " + std::to_string(res->status) + " from " + options_.base_url + ": " +
                res->body.substr(0, 500));
  try {
    return json::parse(res->body);
  } catch (const json::exception& e) {
    throw Error(std::string("endpoint returned invalid JSON: ") + e.what());
  }
}

ModelResponse parse_chat_response(const json& body, bool want_logprobs) {
  if (!body.contains("choices") || !body["choices"].is_array())
    throw Error("endpoint response has no choices");
  ModelResponse response;
  for (const auto& choice : body["choices"]) {
    Sample sample;
    if (choice.contains("message") && choice["message"].contains("content") &&
        choice["message"]["content"].is_string()) {
      sample.text = choice["message"]["content"].get<std::string>();
    } else if (choice.contains("text") && choice["text"].is_string()) {
      sample.text = choice["text"].get<std::string>();
    }
    const bool has_lp = choice.contains("logprobs") && choice["logprobs"].is_object() &&
                        choice["logprobs"].contains("content") &&
                        choice["logprobs"]["content"].is_array();
    if (has_lp) {
      for (const auto& t : choice["logprobs"]["content"])
        sample.tokens.push_back({t.value("token", std::string()), t.at("logprob").get<double>()});
    } else if (want_logprobs) {
      throw CapabilityError("endpoint did not return token logprobs");
    }
    sample.text = text::trim(sample.text);
    response.samples.push_back(std::move(sample));
  }
  if (body.contains("usage") && body["usage"].is_object()) {
    response.usage.prompt_tokens = body["usage"].value("prompt_tokens", std::int64_t{0});
    response.usage.completion_tokens = body["usage"].value("completion_tokens", std::int64_t{0});
  }
  return response;
}

std::vector<TokenLogprob> parse_prompt_logprobs(const json& body, const std::string& continuation) {
  std::vector<TokenLogprob> prompt;
  if (body.contains("prompt_logprobs") && body["prompt_logprobs"].is_array()) {
    for (const auto& entry : body["prompt_logprobs"]) {
      if (!entry.is_object() || entry.empty()) continue;  // first token has none
      const auto& first = entry.begin().value();
      prompt.push_back({first.value("decoded_token", std::string()), first.at("logprob").get<double>()});
    }
  } else if (body.contains("choices") && !body["choices"].empty() &&
             body["choices"][0].contains("logprobs") &&
             body["choices"][0]["logprobs"].contains("token_logprobs")) {
    const auto& lp = body["choices"][0]["logprobs"];
    const auto& tokens = lp["tokens"];
    const auto& values = lp["token_logprobs"];
    for (std::size_t i = 0; i < values.size() && i < tokens.size(); ++i) {
      if (values[i].is_null()) continue;
      prompt.push_back({tokens[i].get<std::string>(), values[i].get<double>()});
    }
  } else {
    throw CapabilityError("endpoint did not echo prompt logprobs; cannot score text");
  }
  // Walk back from the end until the decoded tokens cover the continuation.
  const std::string target = strip_ws(continuation);
  std::string covered;
  std::size_t start = prompt.size();
  while (start > 0 && covered.size() < target.size()) {
    --start;
    covered = strip_ws(prompt[start].token) + covered;
  }
  if (covered.size() < target.size() || covered.substr(covered.size() - target.size()) != target)
    throw CapabilityError("echoed prompt does not end with the scored continuation");
  return {prompt.begin() + static_cast<std::ptrdiff_t>(start), prompt.end()};
}

ModelResponse HttpBackend::generate(const ModelRequest& request) {
  request.validate();
  return parse_chat_response(post("/chat/completions", chat_body(request)), request.want_logprobs);
}

std::vector<TokenLogprob> HttpBackend::score_text(const ModelRequest& context,
                                                  const std::string& continuation) {
  static std::atomic<bool> logged{false};
  if (!logged.exchange(true))
    spdlog::info("scoring through echoed prompt logprobs ({})", options_.score_mode);
  const std::string path =
      options_.score_mode == "completions_echo" ? "/completions" : "/chat/completions";
  return parse_prompt_logprobs(post(path, score_body(context, continuation)), continuation);
}

}  // namespace repare
