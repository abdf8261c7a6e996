#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

#include "dictmlm/common.hpp"

namespace dictmlm {

// splitmix64 finalizer. Used to derive independent sub-stream seeds from
// (global seed, index...) so output never depends on worker count.
inline std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t derive_seed(std::uint64_t seed) { return mix64(seed); }

template <typename... Rest>
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t a, Rest... rest) {
  return derive_seed(mix64(seed ^ mix64(a)), rest...);
}

// Deterministic generator. mt19937_64 raw output is pinned by the standard;
// all draws below are built directly on it rather than on the std
// distributions, whose sequences are implementation-defined.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  double uniform() {  // [0, 1), 53-bit
    return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Unbiased uniform integer in [0, n), rejection sampled.
  std::uint64_t below(std::uint64_t n) {
    if (n == 0) fail_usage("Rng::below: n must be positive");
    const std::uint64_t threshold = (0 - n) % n;  // 2^64 mod n
    for (;;) {
      std::uint64_t r = engine_();
      if (r >= threshold) return r % n;
    }
  }

  bool bernoulli(double p) {
    if (p <= 0.0) return false;
    if (p >= 1.0) return true;
    return uniform() < p;
  }

  // Marsaglia polar method, cache-free so the draw count per call is
  // reproducible regardless of call history.
  double normal(double mean, double stddev) {
    for (;;) {
      double u = uniform(-1.0, 1.0);
      double v = uniform(-1.0, 1.0);
      double s = u * u + v * v;
      if (s > 0.0 && s < 1.0) {
        return mean + stddev * u * std::sqrt(-2.0 * std::log(s) / s);
      }
    }
  }

  // Redraw outside +/- 2 stddev (BERT-style init).
  double truncated_normal(double mean, double stddev) {
    for (;;) {
      double v = normal(mean, stddev);
      if (v >= mean - 2.0 * stddev && v <= mean + 2.0 * stddev) return v;
    }
  }

  // Categorical draw from a probability vector (sums to ~1).
  std::size_t categorical(const std::vector<double>& probs) {
    double u = uniform();
    double acc = 0.0;
    for (std::size_t i = 0; i < probs.size(); ++i) {
      acc += probs[i];
      if (u < acc) return i;
    }
    return probs.size() - 1;
  }

  // k distinct indices from [0, n), selection order preserved.
  std::vector<std::size_t> sample_without_replacement(std::size_t n,
                                                      std::size_t k) {
    if (k > n) fail_usage("sample_without_replacement: k=", k, " > n=", n);
    std::vector<std::size_t> pool(n);
    for (std::size_t i = 0; i < n; ++i) pool[i] = i;
    std::vector<std::size_t> out;
    out.reserve(k);
    for (std::size_t i = 0; i < k; ++i) {
      std::size_t j = i + static_cast<std::size_t>(below(n - i));
      std::swap(pool[i], pool[j]);
      out.push_back(pool[i]);
    }
    return out;
  }

  std::mt19937_64& engine() { return engine_; }

 private:
  std::mt19937_64 engine_;
};

}  // namespace dictmlm
