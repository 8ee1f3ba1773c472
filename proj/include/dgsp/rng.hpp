#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

namespace dgsp {

// splitmix64, used to derive independent stream seeds from a master seed.
inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t fnv1a64(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

// Deterministic RNG. mt19937_64 output is pinned by the C++ standard, and the
// distributions below are hand-rolled so the byte streams we derive from a seed
// are identical across standard libraries.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : gen_(seed) {}

  std::uint64_t raw() { return gen_(); }

  // Uniform in [0,1) with 53 random bits.
  double uniform() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Standard normal via Box-Muller (cosine branch only, two draws per sample).
  double normal() {
    double u1 = uniform();
    double u2 = uniform();
    if (u1 <= 0) u1 = 0x1.0p-53;
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * 3.14159265358979323846 * u2);
  }

  // Integer in [lo, hi] inclusive.
  long randint(long lo, long hi) {
    std::uint64_t n = static_cast<std::uint64_t>(hi - lo + 1);
    return lo + static_cast<long>(gen_() % n);
  }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (long i = static_cast<long>(v.size()) - 1; i > 0; --i) {
      long j = randint(0, i);
      std::swap(v[static_cast<size_t>(i)], v[static_cast<size_t>(j)]);
    }
  }

 private:
  std::mt19937_64 gen_;
};

// Seed for a named parameter tensor, stable under registration order.
inline std::uint64_t seed_for(std::uint64_t master, const std::string& name) {
  return splitmix64(master ^ fnv1a64(name));
}

}  // namespace dgsp
