#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace epic {

/// SplitMix64 finalizer. Used to derive child seeds from (parent, ordinal).
constexpr std::uint64_t mix64(std::uint64_t x) noexcept {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

constexpr std::uint64_t derive_seed(std::uint64_t parent, std::uint64_t ordinal) noexcept {
  return mix64(mix64(parent) ^ mix64(ordinal + 0x632be59bd9b4e019ULL));
}

/// FNV-1a over a stream name, so named sub-streams ("dataset", "train", ...)
/// hang off one root seed.
constexpr std::uint64_t derive_seed(std::uint64_t parent, std::string_view name) noexcept {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (char c : name) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ULL;
  }
  return derive_seed(parent, h);
}

/// A seeded random stream that remembers its seed so it can be split into
/// independent child streams.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : seed_(seed), engine_(seed) {}

  std::uint64_t seed() const noexcept { return seed_; }
  std::mt19937_64& engine() noexcept { return engine_; }

  Rng split(std::uint64_t ordinal) const { return Rng(derive_seed(seed_, ordinal)); }
  Rng split(std::string_view name) const { return Rng(derive_seed(seed_, name)); }

  /// Uniform integer in [0, n).
  std::size_t index(std::size_t n) {
    return std::uniform_int_distribution<std::size_t>(0, n - 1)(engine_);
  }
  double uniform(double lo, double hi) {
    return std::uniform_real_distribution<double>(lo, hi)(engine_);
  }
  double normal(double mean, double stddev) {
    return std::normal_distribution<double>(mean, stddev)(engine_);
  }
  std::uint64_t next() { return engine_(); }

 private:
  std::uint64_t seed_;
  std::mt19937_64 engine_;
};

}  // namespace epic
