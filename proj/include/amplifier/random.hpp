#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <string_view>

namespace amp {

// 64-bit Mersenne twister with explicit conversions, so streams produce the
// same doubles on every standard library.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : gen_(seed) {}
  Rng(std::seed_seq& seq) : gen_(seq) {}

  std::uint64_t next() { return gen_(); }
  // Uniform in [0, 1).
  double uniform() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  // Standard normal via Box-Muller.
  double normal();
  // Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n);

  template <typename T>
  void shuffle(std::span<T> items) {
    for (std::size_t i = items.size(); i > 1; --i) {
      const std::size_t j = static_cast<std::size_t>(below(i));
      std::swap(items[i - 1], items[j]);
    }
  }

 private:
  std::mt19937_64 gen_;
};

// Root seed with independent named substreams ("init", "shuffle", ...).
class SeedTree {
 public:
  explicit SeedTree(std::uint64_t seed) : seed_(seed) {}
  std::uint64_t seed() const { return seed_; }
  Rng stream(std::string_view name) const;

 private:
  std::uint64_t seed_;
};

}  // namespace amp
