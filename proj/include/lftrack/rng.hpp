#pragma once

#include <cmath>
#include <cstdint>

namespace lftrack {

// Deterministic, platform-independent random stream (splitmix64 core).
// All distributions are derived from explicit bit manipulation so that a
// given seed produces the same sequence on every build.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next_u64() {
    std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  // Uniform in [0, 1): top 53 bits.
  double uniform() { return double(next_u64() >> 11) * 0x1.0p-53; }

  // Uniform in (0, 1), both endpoints excluded; safe under log().
  double uniform_open() { return (double(next_u64() >> 12) + 0.5) * 0x1.0p-52; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer in [0, n). Modulo bias is ~n/2^64 and irrelevant here.
  int uniform_int(int n) { return int(next_u64() % std::uint64_t(n)); }

  // Standard normal via Box-Muller on open-interval uniforms.
  double normal() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    const double u1 = uniform_open();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double a = 6.283185307179586476925286766559 * u2;
    spare_ = r * std::sin(a);
    have_spare_ = true;
    return r * std::cos(a);
  }

  // Normal(0, sigma) with samples beyond `lim` standard deviations redrawn.
  double truncated_normal(double sigma, double lim = 2.0) {
    for (;;) {
      const double z = normal();
      if (std::abs(z) <= lim) return sigma * z;
    }
  }

  // Standard Gumbel(0,1): -log(-log(U)), U in (0,1) exclusive.
  double gumbel() { return -std::log(-std::log(uniform_open())); }

  // Derive a decorrelated seed for substream `k` of stream `seed`.
  static std::uint64_t derive(std::uint64_t seed, std::uint64_t k) {
    Rng r(seed ^ (0x632be59bd9b4e019ULL * (k + 1)));
    return r.next_u64();
  }

 private:
  std::uint64_t state_ = 0;
  bool have_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace lftrack
