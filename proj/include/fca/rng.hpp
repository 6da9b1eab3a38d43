#pragma once

#include <cstdint>
#include <random>
#include <vector>

namespace fca::rng {

// Combines seeds into a derived stream id (splitmix64 finalizer).
std::uint64_t mix(std::uint64_t a, std::uint64_t b);

// Deterministic random source. std::mt19937_64 output is fully specified by
// the standard; the distribution mappings below are implemented by hand so
// that identical seeds give identical draws on every platform.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : eng_(seed) {}

  std::uint64_t next_u64() { return eng_(); }

  // Uniform in [0, 1), 53 random bits.
  double uniform();
  double uniform(double lo, double hi);

  // Uniform integer in [0, bound), bound > 0. Rejection sampling, unbiased.
  std::uint64_t uniform_int(std::uint64_t bound);

  // Standard normal via Box-Muller (two fresh uniforms per draw).
  double normal();

  // Gamma(alpha, 1) via Marsaglia-Tsang; alpha < 1 handled by boosting.
  double gamma(double alpha);

  // Dirichlet(alpha * 1_k): k gamma draws, normalized.
  std::vector<double> dirichlet(double alpha, std::size_t k);

  // Fisher-Yates.
  template <typename T>
  void shuffle(std::vector<T>& v) {
    if (v.size() < 2) return;
    for (std::size_t i = v.size() - 1; i > 0; --i) {
      std::size_t j = static_cast<std::size_t>(uniform_int(i + 1));
      std::swap(v[i], v[j]);
    }
  }

 private:
  std::mt19937_64 eng_;
};

}  // namespace fca::rng
