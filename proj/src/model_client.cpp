#include <algorithm>
#include <cmath>
#include <thread>

#include <spdlog/spdlog.h>

#include "repare/error.hpp"
#include "repare/model_client.hpp"

namespace repare {

using nlohmann::json;

namespace {

void check_response(const ModelRequest& request, ModelResponse& response) {
  if (static_cast<int>(response.samples.size()) != request.sampling.num_samples)
    throw Error("backend returned " + std::to_string(response.samples.size()) +
                " samples, expected " + std::to_string(request.sampling.num_samples));
  for (auto& sample : response.samples) {
    if (request.want_logprobs && sample.tokens.empty() && !sample.text.empty())
      throw CapabilityError("backend returned no token logprobs");
    for (auto& t : sample.tokens) {
      if (!std::isfinite(t.logprob)) throw Error("backend returned a non-finite logprob");
      t.logprob = std::min(t.logprob, 0.0);  // float noise above zero
    }
  }
}

}  // namespace

ModelClient::ModelClient(std::shared_ptr<Backend> backend, ClientOptions options)
    : backend_(std::move(backend)), options_(std::move(options)) {
  if (!backend_) throw ValidationError("ModelClient needs a backend");
  backend_id_ = backend_->id();
  if (options_.max_inflight < 1) throw ValidationError("max_inflight must be >= 1");
  if (options_.retry.max_attempts < 1) throw ValidationError("retry attempts must be >= 1");
  if (options_.cache_dir) cache_.emplace(*options_.cache_dir);
  inflight_ = std::make_unique<std::counting_semaphore<>>(options_.max_inflight);
}

template <typename F>
auto ModelClient::with_retries(F&& call) -> decltype(call()) {
  auto backoff = options_.retry.initial_backoff;
  for (int attempt = 1;; ++attempt) {
    try {
      inflight_->acquire();
      struct Release {
        std::counting_semaphore<>* s;
        ~Release() { s->release(); }
      } release{inflight_.get()};
      {
        std::lock_guard lock(stats_mutex_);
        ++stats_.backend_calls;
      }
      return call();
    } catch (const TransportError& e) {
      if (attempt >= options_.retry.max_attempts)
        throw TransportError(e.what(), e.retry_after(), attempt);
      const auto wait = std::max(backoff, e.retry_after());
      spdlog::warn("transport error (attempt {}/{}): {}; retrying in {} ms", attempt,
                   options_.retry.max_attempts, e.what(), wait.count());
      {
        std::lock_guard lock(stats_mutex_);
        ++stats_.retries;
      }
      std::this_thread::sleep_for(wait);
      backoff = std::chrono::milliseconds(
          static_cast<std::int64_t>(static_cast<double>(backoff.count()) * options_.retry.multiplier));
    }
  }
}

ModelResponse ModelClient::generate(const ModelRequest& request) {
  request.validate();
  std::string key;
  if (cache_) {
    key = ResponseCache::key_for(backend_id_, "generate", request);
    if (auto hit = cache_->load(key)) {
      try {
        auto response = hit->get<ModelResponse>();
        std::lock_guard lock(stats_mutex_);
        ++stats_.cache_hits;
        return response;
      } catch (const std::exception&) {
        spdlog::warn("corrupt cache entry {}; refetching", key);
      }
    }
  }
  ModelResponse response = with_retries([&] { return backend_->generate(request); });
  check_response(request, response);
  if (cache_) cache_->store(key, json(response));
  return response;
}

std::vector<TokenLogprob> ModelClient::score_text(const ModelRequest& context,
                                                  const std::string& continuation) {
  if (continuation.empty()) return {};
  context.validate();
  std::string key;
  if (cache_) {
    key = ResponseCache::key_for(backend_id_, "score", context, continuation);
    if (auto hit = cache_->load(key)) {
      try {
        auto tokens = hit->get<std::vector<TokenLogprob>>();
        std::lock_guard lock(stats_mutex_);
        ++stats_.cache_hits;
        return tokens;
      } catch (const std::exception&) {
        spdlog::warn("corrupt cache entry {}; refetching", key);
      }
    }
  }
  auto tokens = with_retries([&] { return backend_->score_text(context, continuation); });
  for (auto& t : tokens) {
    if (!std::isfinite(t.logprob)) throw Error("backend returned a non-finite logprob");
    t.logprob = std::min(t.logprob, 0.0);
  }
  if (cache_) cache_->store(key, json(tokens));
  return tokens;
}

std::vector<double> ModelClient::label_distribution(const ModelRequest& context,
                                                    const std::vector<std::string>& labels) {
  if (labels.empty()) throw ValidationError("label_distribution needs at least one label");
  std::vector<double> log_joint;
  log_joint.reserve(labels.size());
  for (const auto& label : labels) {
    const auto tokens = score_text(context, label);
    if (tokens.empty()) throw CapabilityError("backend returned no logprobs for label '" + label + "'");
    double sum = 0.0;
    for (const auto& t : tokens) sum += t.logprob;
    log_joint.push_back(sum);
  }
  const double top = *std::max_element(log_joint.begin(), log_joint.end());
  double z = 0.0;
  for (double lp : log_joint) z += std::exp(lp - top);
  std::vector<double> out;
  out.reserve(labels.size());
  for (double lp : log_joint) out.push_back(std::exp(lp - top) / z);
  return out;
}

ClientStats ModelClient::stats() const {
  std::lock_guard lock(stats_mutex_);
  return stats_;
}

}  // namespace repare
