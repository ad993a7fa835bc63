#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>

namespace repare {

/// Lower-case hex SHA-256 of the given bytes.
std::string sha256_hex(std::string_view bytes);

/// SHA-256 of a file's contents; throws LoadError if unreadable.
std::string sha256_file(const std::filesystem::path& path);

std::string base64_encode(std::string_view bytes);

std::uint64_t splitmix64(std::uint64_t x);

/// FNV-1a, 64 bit. Stable across platforms, unlike std::hash.
std::uint64_t fnv1a64(std::string_view s);

/// Derives a child seed from a parent seed and a label.
std::uint64_t derive_seed(std::uint64_t seed, std::string_view label);
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t index);

/// Portable uniform draws on top of a 64-bit generator state. The standard
/// distributions are implementation-defined, so sampling that must be
/// reproducible across toolchains goes through these instead.
class SeededRng {
 public:
  explicit SeededRng(std::uint64_t seed) : state_(seed) {}
  std::uint64_t next();
  /// Uniform double in [0, 1).
  double uniform();
  /// Uniform integer in [0, bound). bound must be > 0.
  std::uint64_t below(std::uint64_t bound);

 private:
  std::uint64_t state_;
};

}  // namespace repare
