#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace outfit {

std::vector<std::uint8_t> read_file(const std::filesystem::path& path);
std::string read_text_file(const std::filesystem::path& path);

/// Writes to a sibling temp file and renames it over the target, so readers
/// never observe a partially written file.
void write_file_atomic(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);
void write_file_atomic(const std::filesystem::path& path, std::string_view text);

std::string sha256_hex(std::span<const std::uint8_t> bytes);
std::string sha256_hex(std::string_view text);
std::string sha256_file(const std::filesystem::path& path);

std::uint64_t splitmix64(std::uint64_t x);

/// Seed for item `id` of a stream; stable across platforms.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t id);

/// Portable deterministic generator (xoshiro256**). The standard library
/// distributions are implementation-defined, so sampling helpers live here.
class Rng {
 public:
  explicit Rng(std::uint64_t seed);

  std::uint64_t next();
  double uniform();                        // [0,1)
  double uniform(double lo, double hi);    // [lo,hi)
  std::uint64_t below(std::uint64_t n);    // [0,n)
  bool bernoulli(double p);
  double normal();

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[below(i)]);
  }

 private:
  std::uint64_t s_[4];
};

}  // namespace outfit
