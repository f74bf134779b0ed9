#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

namespace finex {

// Deterministic RNG wrapper. std::mt19937_64 output is pinned by the
// standard; the distributions are hand-rolled here because libstdc++ /
// libc++ distribution algorithms are implementation-defined and would
// break cross-toolchain reproducibility of seeded runs.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }

  // Uniform integer in [0, n). n must be > 0.
  std::uint64_t below(std::uint64_t n) {
    // rejection sampling to avoid modulo bias
    const std::uint64_t limit = ~std::uint64_t{0} - (~std::uint64_t{0} % n);
    std::uint64_t x;
    do {
      x = engine_();
    } while (x >= limit);
    return x % n;
  }

  int range(int lo, int hi) {  // inclusive bounds
    return lo + static_cast<int>(below(static_cast<std::uint64_t>(hi - lo + 1)));
  }

  // Uniform double in [0, 1).
  double real01() {
    return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
  }

  // Standard Gumbel(0,1) sample.
  double gumbel() {
    double u = real01();
    // keep u in (0,1) so both logs are finite
    if (u <= 0.0) u = 0x1.0p-53;
    return -std::log(-std::log(u));
  }

  double normal(double mean, double stddev) {
    // Box-Muller, one value per call (cache discarded for simplicity)
    double u1 = real01();
    double u2 = real01();
    if (u1 <= 0.0) u1 = 0x1.0p-53;
    return mean + stddev * std::sqrt(-2.0 * std::log(u1)) *
                      std::cos(2.0 * 3.14159265358979323846 * u2);
  }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::size_t j = static_cast<std::size_t>(below(i));
      std::swap(v[i - 1], v[j]);
    }
  }

 private:
  std::mt19937_64 engine_;
};

// FNV-1a, used to fold strings into derived seeds.
inline std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 14695981039346656037ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

// Stable seed derivation for named substreams, e.g. per (step, sentence).
inline std::uint64_t derive_seed(std::uint64_t root, std::uint64_t a,
                                 std::uint64_t b = 0) {
  std::uint64_t h = 14695981039346656037ULL;
  auto mix = [&h](std::uint64_t v) {
    for (int i = 0; i < 8; ++i) {
      h ^= (v >> (8 * i)) & 0xff;
      h *= 1099511628211ULL;
    }
  };
  mix(root);
  mix(a);
  mix(b);
  return h;
}

}  // namespace finex
