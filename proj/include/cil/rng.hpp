#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <sstream>
#include <string>
#include <vector>

namespace cil {

/// Seed derivation via splitmix64 so that independent streams (model init,
/// batch order, replay draws) never share state.
inline std::uint64_t derive_seed(std::uint64_t base, std::uint64_t salt) {
  std::uint64_t z = base + 0x9e3779b97f4a7c15ull * (salt + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

/// Deterministic random source. Wraps std::mt19937_64 (whose output sequence
/// is pinned by the standard) and hand-rolls every distribution, because the
/// std::*_distribution adapters are implementation-defined and would break
/// bit-reproducibility across standard libraries.
class Rng {
public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }

  /// Uniform in [0, 1), 53-bit resolution.
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Unbiased uniform integer in [0, n). Rejection sampling over the top of
  /// the 64-bit range.
  std::uint64_t uniform_int(std::uint64_t n) {
    const std::uint64_t threshold = (-n) % n; // 2^64 mod n
    for (;;) {
      std::uint64_t x = next_u64();
      if (x >= threshold) return x % n;
    }
  }

  /// Standard normal via Box-Muller. No cached spare: keeps the whole state
  /// inside the engine so serialization is just the engine state.
  double normal() {
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    const double two_pi = 6.283185307179586476925286766559;
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(two_pi * u2);
  }

  /// Fisher-Yates shuffle using uniform_int draws.
  template <class T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      const std::size_t j = static_cast<std::size_t>(uniform_int(i));
      std::swap(v[i - 1], v[j]);
    }
  }

  std::string save_state() const {
    std::ostringstream os;
    os << engine_;
    return os.str();
  }

  void load_state(const std::string& s) {
    std::istringstream is(s);
    is >> engine_;
  }

private:
  std::mt19937_64 engine_;
};

} // namespace cil
