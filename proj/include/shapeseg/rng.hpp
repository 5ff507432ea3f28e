#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <sstream>
#include <string>

namespace shapeseg {

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

// Deterministic RNG. The engine is std::mt19937_64 (bit-exact across
// platforms); all value mappings are implemented here rather than with
// std::*_distribution, whose outputs are implementation-defined.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : eng_(seed) {}

  // Independent stream for (seed, id); used to give every sample/epoch its
  // own reproducible stream regardless of scheduling.
  static Rng stream(std::uint64_t seed, std::uint64_t id) {
    return Rng(splitmix64(seed ^ splitmix64(id + 0x632be59bd9b4e019ull)));
  }

  std::uint64_t next_u64() { return eng_(); }

  // Uniform in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(eng_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Integer in [0, n).
  std::uint64_t below(std::uint64_t n) {
    // Rejection sampling keeps the mapping exact.
    const std::uint64_t lim = UINT64_MAX - UINT64_MAX % n;
    std::uint64_t v;
    do {
      v = eng_();
    } while (v >= lim);
    return v % n;
  }

  // Standard normal via Box-Muller (no cached spare, keeps streams simple).
  double normal() {
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
  }

  double normal(double mean, double sd) { return mean + sd * normal(); }

  template <typename It>
  void shuffle(It first, It last) {
    const auto n = static_cast<std::uint64_t>(last - first);
    for (std::uint64_t i = n; i > 1; --i) {
      const auto j = below(i);
      std::swap(first[i - 1], first[j]);
    }
  }

  std::string save_state() const {
    std::ostringstream ss;
    ss << eng_;
    return ss.str();
  }

  void load_state(const std::string& s) {
    std::istringstream ss(s);
    ss >> eng_;
  }

 private:
  std::mt19937_64 eng_;
};

}  // namespace shapeseg
