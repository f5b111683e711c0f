#pragma once

#include <cstdint>
#include <span>
#include <vector>

namespace icpo {

// Deterministic 64-bit generator built on splitmix64. Every stochastic
// decision in the project draws from an Rng seeded through derive_seed, so
// adding or removing one consumer never shifts the draws seen by another.
class Rng {
 public:
  explicit Rng(uint64_t seed) : state_(seed) {}

  uint64_t next_u64() {
    state_ += 0x9e3779b97f4a7c15ull;
    uint64_t z = state_;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
  }

  // Uniform in [0, 1) with 53 bits of mantissa.
  double uniform01() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  // Uniform integer in [0, n). n must be > 0.
  uint32_t uniform_below(uint32_t n) {
    return static_cast<uint32_t>((static_cast<unsigned __int128>(next_u64()) * n) >> 64);
  }

  // Index draw proportional to the given nonnegative weights.
  int sample_categorical(std::span<const double> probs) {
    double total = 0.0;
    for (double p : probs) total += p;
    const double r = uniform01() * total;
    double cdf = 0.0;
    for (size_t i = 0; i + 1 < probs.size(); ++i) {
      cdf += probs[i];
      if (r < cdf) return static_cast<int>(i);
    }
    return static_cast<int>(probs.size()) - 1;
  }

  // k distinct indices from [0, n), in draw order. k must be <= n.
  std::vector<uint32_t> sample_without_replacement(uint32_t n, uint32_t k) {
    std::vector<uint32_t> pool(n);
    for (uint32_t i = 0; i < n; ++i) pool[i] = i;
    std::vector<uint32_t> out;
    out.reserve(k);
    for (uint32_t i = 0; i < k; ++i) {
      const uint32_t j = i + uniform_below(n - i);
      std::swap(pool[i], pool[j]);
      out.push_back(pool[i]);
    }
    return out;
  }

 private:
  uint64_t state_;
};

// Named substreams. Seeds are derived from (master, stream, labels...) so
// every sampling site owns an independent deterministic stream.
enum class Stream : uint64_t {
  init = 1,
  bank = 2,
  tasks = 3,
  rollout = 4,
  demos = 5,
  mix = 6,
  warm = 7,
  eval = 8,
};

inline uint64_t mix_label(uint64_t h, uint64_t label) {
  h ^= label + 0x9e3779b97f4a7c15ull + (h << 6) + (h >> 2);
  Rng r(h);
  return r.next_u64();
}

inline uint64_t derive_seed(uint64_t master, Stream stream, uint64_t a = 0, uint64_t b = 0,
                            uint64_t c = 0) {
  uint64_t h = mix_label(master, static_cast<uint64_t>(stream));
  h = mix_label(h, a);
  h = mix_label(h, b);
  h = mix_label(h, c);
  return h;
}

}  // namespace icpo
