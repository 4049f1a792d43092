#pragma once

#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <stdexcept>
#include <utility>
#include <vector>

namespace brcsgan {

// SplitMix64 (Steele, Lea & Flood 2014). Chosen over std::mt19937 because the
// standard distributions are not bit-portable across library implementations;
// this generator plus the hand-rolled draws below produce identical streams on
// every conforming platform, which the reproducibility contracts rely on.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next_u64() {
    std::uint64_t z = (state_ += 0x9E3779B97F4A7C15ULL);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }

  // Uniform in [0, 1) with 53-bit resolution.
  double next_double() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  // Uniform in [lo, hi).
  double uniform(double lo, double hi) { return lo + (hi - lo) * next_double(); }

  // Unbiased integer in [0, n) via rejection sampling.
  std::uint64_t below(std::uint64_t n) {
    if (n == 0) throw std::invalid_argument("Rng::below: n must be positive");
    const std::uint64_t limit = ~std::uint64_t{0} - (~std::uint64_t{0} % n);
    std::uint64_t v = next_u64();
    while (v >= limit) v = next_u64();
    return v % n;
  }

  // Standard normal via Box-Muller; the second value of each pair is
  // discarded so a draw consumes a fixed number of raw words.
  double normal() {
    double u1 = next_double();
    double u2 = next_double();
    if (u1 < 0x1.0p-53) u1 = 0x1.0p-53;
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925286766559 * u2);
  }

  // Index draw from unnormalized nonnegative weights.
  std::size_t categorical(const std::vector<double>& weights) {
    double total = 0.0;
    for (double w : weights) total += w;
    if (!(total > 0.0)) throw std::runtime_error("Rng::categorical: zero total weight");
    double u = next_double() * total;
    double acc = 0.0;
    for (std::size_t i = 0; i < weights.size(); ++i) {
      acc += weights[i];
      if (u < acc) return i;
    }
    return weights.size() - 1;
  }

  template <class T>
  void shuffle(std::vector<T>& items) {
    for (std::size_t i = items.size(); i > 1; --i) {
      std::size_t j = static_cast<std::size_t>(below(i));
      std::swap(items[i - 1], items[j]);
    }
  }

  std::uint64_t state() const { return state_; }

 private:
  std::uint64_t state_;
};

inline std::uint64_t mix_u64(std::uint64_t z) {
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

// Derives an independent stream from a master seed and a path of labels
// (purpose id, step, sentence index, ...). Stateless keying is what makes
// runs resumable and rollouts order-independent.
inline Rng derive_rng(std::uint64_t seed, std::initializer_list<std::uint64_t> path) {
  std::uint64_t s = mix_u64(seed ^ 0xA0761D6478BD642FULL);
  for (std::uint64_t c : path) s = mix_u64(s ^ (c + 0x9E3779B97F4A7C15ULL));
  return Rng(s);
}

// Stream purpose labels; values are part of the reproducibility contract.
namespace stream {
constexpr std::uint64_t kInit = 1;
constexpr std::uint64_t kCorpus = 2;
constexpr std::uint64_t kShuffle = 3;
constexpr std::uint64_t kPgSample = 4;
constexpr std::uint64_t kPgRollout = 5;
constexpr std::uint64_t kBatchPick = 6;
constexpr std::uint64_t kNegatives = 7;
constexpr std::uint64_t kDiscBatch = 8;
constexpr std::uint64_t kMrtSample = 9;
constexpr std::uint64_t kTfBatch = 10;
}  // namespace stream

}  // namespace brcsgan
