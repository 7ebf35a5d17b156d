#pragma once

#include <cstdint>
#include <random>
#include <utility>
#include <vector>

namespace rarity {

// Derives an independent stream seed from a master seed and a stream id
// (splitmix64 finalizer over the pair). Used for per-tree, per-class and
// per-fold seeds so that results never depend on evaluation order.
std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream);

// Seeded generator with platform-independent transforms. The standard
// <random> distributions are implementation-defined, so only the raw
// mt19937_64 stream is used.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next() { return engine_(); }

  // Uniform on [0, 1) with 53 bits of precision.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer on [0, n); n must be positive.
  std::size_t index(std::size_t n);

  // Standard normal via Box-Muller.
  double normal();

  bool bernoulli(double p) { return uniform() < p; }

  template <class T>
  void shuffle(std::vector<T>& items) {
    for (std::size_t i = items.size(); i > 1; --i) {
      std::swap(items[i - 1], items[index(i)]);
    }
  }

 private:
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace rarity
