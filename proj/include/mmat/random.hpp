#pragma once

#include <cstdint>
#include <initializer_list>
#include <string_view>

namespace mmat {

// Counter-based randomness: every draw is a pure function of (key, counter),
// so any stream can be reproduced or split without shared state.
namespace rng {

constexpr std::uint64_t mix64(std::uint64_t z) noexcept {
  z += 0x9E3779B97F4A7C15ULL;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

constexpr std::uint64_t hash_name(std::string_view name) noexcept {
  std::uint64_t h = 0xCBF29CE484222325ULL;  // FNV-1a
  for (char c : name) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001B3ULL;
  }
  return h;
}

// Derive a child key from a parent key and a sequence of integers.
inline std::uint64_t derive(std::uint64_t key, std::initializer_list<std::uint64_t> path) noexcept {
  for (auto p : path) key = mix64(key ^ mix64(p + 0x632BE59BD9B4E019ULL));
  return key;
}

inline std::uint64_t derive(std::uint64_t key, std::string_view name,
                            std::initializer_list<std::uint64_t> path = {}) noexcept {
  return derive(mix64(key ^ hash_name(name)), path);
}

}  // namespace rng

// A stream of draws over one key. Copyable; the counter is the only state.
class CounterRng {
 public:
  explicit CounterRng(std::uint64_t key, std::uint64_t counter = 0) noexcept
      : key_(key), counter_(counter) {}

  std::uint64_t key() const noexcept { return key_; }
  std::uint64_t counter() const noexcept { return counter_; }

  std::uint64_t next_u64() noexcept { return rng::mix64(key_ ^ rng::mix64(counter_++)); }

  // Uniform in [0, 1) with 53 random bits.
  double uniform() noexcept { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) noexcept { return lo + (hi - lo) * uniform(); }

  // Uniform integer in [0, n). n must be > 0.
  std::uint64_t below(std::uint64_t n) noexcept;

  // Standard normal via Box-Muller; consumes two draws per call.
  double normal() noexcept;

 private:
  std::uint64_t key_;
  std::uint64_t counter_;
};

}  // namespace mmat
