#include <atomic>
#include <fstream>
#include <sstream>
#include <thread>

#include "repare/error.hpp"
#include "repare/hashing.hpp"
#include "repare/model_client.hpp"

namespace repare {

using nlohmann::json;
namespace fs = std::filesystem;

ResponseCache::ResponseCache(fs::path dir) : dir_(std::move(dir)) {
  std::error_code ec;
  fs::create_directories(dir_, ec);
  if (ec) throw LoadError(dir_.string(), "cannot create cache directory: " + ec.message());
}

std::string ResponseCache::key_for(const std::string& backend_id, const std::string& op,
                                   const ModelRequest& request, const std::string& continuation) {
  // Images enter the key by content hash only, so a moved file still hits
  // and an edited file misses.
  json parts = json::array();
  for (const auto& part : request.prompt_parts) {
    if (const auto* t = std::get_if<TextPart>(&part)) {
      parts.push_back({{"text", t->text}});
    } else {
      parts.push_back({{"image", std::get<ImagePart>(part).image.bytes_hash}});
    }
  }
  json material{{"backend", backend_id}, {"op", op}, {"parts", parts}};
  if (op == "score") {
    material["continuation"] = continuation;
  } else {
    material["sampling"] = request.sampling;
    material["want_logprobs"] = request.want_logprobs;
    material["stop"] = request.stop_markers;
    material["seed"] = request.seed;
  }
  return sha256_hex(material.dump());
}

fs::path ResponseCache::path_for(const std::string& key) const {
  return dir_ / key.substr(0, 2) / (key + ".json");
}

std::mutex& ResponseCache::lock_for(const std::string& key) {
  return locks_[fnv1a64(key) % locks_.size()];
}

std::optional<json> ResponseCache::load(const std::string& key) const {
  std::ifstream in(path_for(key), std::ios::binary);
  if (!in) return std::nullopt;
  std::ostringstream buf;
  buf << in.rdbuf();
  try {
    json entry = json::parse(buf.str());
    if (!entry.is_object() || entry.value("key", std::string()) != key || !entry.contains("value"))
      return std::nullopt;
    return entry["value"];
  } catch (const json::exception&) {
    return std::nullopt;
  }
}

void ResponseCache::store(const std::string& key, const json& value) {
  static std::atomic<std::uint64_t> counter{0};
  std::lock_guard lock(lock_for(key));
  const fs::path target = path_for(key);
  std::error_code ec;
  fs::create_directories(target.parent_path(), ec);
  std::ostringstream tmp_name;
  tmp_name << key << ".tmp." << std::hash<std::thread::id>{}(std::this_thread::get_id()) << '.'
           << counter.fetch_add(1);
  const fs::path tmp = target.parent_path() / tmp_name.str();
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw LoadError(tmp.string(), "cannot write cache entry");
    out << json{{"key", key}, {"value", value}}.dump();
  }
  fs::rename(tmp, target, ec);
  if (ec) {
    fs::remove(tmp, ec);
    throw LoadError(target.string(), "cannot commit cache entry");
  }
}

}  // namespace repare
