#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string_view>
#include <vector>

#include "pen/common.hpp"

namespace pen {

inline uint64_t splitmix64(uint64_t& state) {
  uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

// Derives an independent stream seed from a base seed and a tag. Used to give
// every consumer (model init, batch order, augmentation, synthesis) its own
// stream so adding or removing one consumer never shifts another.
inline uint64_t derive_seed(uint64_t base, std::string_view tag, uint64_t a = 0,
                            uint64_t b = 0) {
  uint64_t s = base ^ 0x6a09e667f3bcc908ULL;
  s ^= fnv1a64(tag);
  s = splitmix64(s);
  s ^= a * 0x9e3779b97f4a7c15ULL;
  s = splitmix64(s);
  s ^= b * 0xc2b2ae3d27d4eb4fULL;
  return splitmix64(s);
}

// mt19937_64 is bit-exact across platforms; the distributions below are
// implemented here because the <random> distribution classes are
// implementation-defined and would break cross-platform reproducibility.
class Rng {
 public:
  explicit Rng(uint64_t seed) : engine_(seed) {}
  Rng(uint64_t base, std::string_view tag, uint64_t a = 0, uint64_t b = 0)
      : engine_(derive_seed(base, tag, a, b)) {}

  uint64_t next_u64() { return engine_(); }

  // [0, 1)
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // [0, n)
  int uniform_int(int n) {
    return n <= 1 ? 0 : static_cast<int>(next_u64() % static_cast<uint64_t>(n));
  }
  // closed interval [lo, hi]
  int uniform_int(int lo, int hi) { return lo + uniform_int(hi - lo + 1); }

  bool bernoulli(double p) { return uniform() < p; }

  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = 0.0;
    do {
      u1 = uniform();
    } while (u1 <= 0.0);
    double u2 = uniform();
    double r = std::sqrt(-2.0 * std::log(u1));
    double theta = 6.283185307179586476925286766559 * u2;
    spare_ = r * std::sin(theta);
    has_spare_ = true;
    return r * std::cos(theta);
  }

  double normal(double mean, double stddev) { return mean + stddev * normal(); }

  template <class T>
  void shuffle(std::vector<T>& v) {
    for (size_t i = v.size(); i > 1; --i) {
      size_t j = static_cast<size_t>(next_u64() % i);
      std::swap(v[i - 1], v[j]);
    }
  }

 private:
  std::mt19937_64 engine_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

}  // namespace pen
