#pragma once

#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <numbers>
#include <random>
#include <vector>

namespace xfnc {

// Seeded generator with portable draws. The engine is fully specified by the
// standard; the key mixing and the distributions below are written out so that
// a (seed, stream key) pair yields the same numbers with any standard library.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : Rng(seed, {}) {}

  // Independent stream derived from a base seed and a key path such as
  // (purpose, episode, step, node). The path is folded through SplitMix64.
  Rng(std::uint64_t seed, std::initializer_list<std::uint64_t> key) {
    std::uint64_t h = mix(seed ^ 0x6a09e667f3bcc909ull);
    for (auto k : key) h = mix(h ^ mix(k + 0x9e3779b97f4a7c15ull));
    engine_.seed(h);
  }

  std::uint64_t next() { return engine_(); }

  // Uniform in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer in [0, n); n > 0. Rejection keeps it unbiased.
  std::uint64_t index(std::uint64_t n) {
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    std::uint64_t x;
    do {
      x = engine_();
    } while (x >= limit);
    return x % n;
  }

  bool bernoulli(double p) { return uniform() < p; }

  // Standard normal via Box-Muller (one value per call, the pair is not cached).
  double normal() {
    double u1;
    do {
      u1 = uniform();
    } while (u1 <= 0.0);
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }

  // Partial Fisher-Yates: the first k entries of `items` become a uniform
  // sample without replacement, in draw order.
  template <class T>
  void partial_shuffle(std::vector<T>& items, std::size_t k) {
    const std::size_t n = items.size();
    for (std::size_t i = 0; i < k && i < n; ++i) {
      const std::size_t j = i + static_cast<std::size_t>(index(n - i));
      std::swap(items[i], items[j]);
    }
  }

 private:
  static std::uint64_t mix(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ull;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
  }

  std::mt19937_64 engine_;
};

// Stream purposes; part of the key path so that unrelated draws never share
// a generator.
namespace stream {
inline constexpr std::uint64_t kPool = 1;
inline constexpr std::uint64_t kTrainTask = 2;
inline constexpr std::uint64_t kTestTask = 3;
inline constexpr std::uint64_t kSubgraph = 4;
inline constexpr std::uint64_t kDropout = 5;
inline constexpr std::uint64_t kMask = 6;
inline constexpr std::uint64_t kInit = 7;
inline constexpr std::uint64_t kValTask = 8;
inline constexpr std::uint64_t kGenerator = 9;
}  // namespace stream

}  // namespace xfnc
