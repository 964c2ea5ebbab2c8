#pragma once

#include "subgp/common.hpp"

#include <array>
#include <cmath>
#include <cstdint>

namespace subgp {

namespace detail {
inline std::uint64_t splitmix64(std::uint64_t& x) {
  std::uint64_t z = (x += 0x9e3779b97f4a7c15ULL);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}
inline std::uint64_t rotl64(std::uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }
}  // namespace detail

/// xoshiro256++ with explicit seeding. std:: distributions are avoided on
/// purpose: the chain output must be bit-reproducible for a given seed, and
/// libstdc++ makes no such promise across versions.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : seed_(seed) {
    std::uint64_t s = seed;
    for (auto& w : state_) w = detail::splitmix64(s);
  }

  std::uint64_t next_u64() {
    const std::uint64_t result = detail::rotl64(state_[0] + state_[3], 23) + state_[0];
    const std::uint64_t t = state_[1] << 17;
    state_[2] ^= state_[0];
    state_[3] ^= state_[1];
    state_[1] ^= state_[2];
    state_[0] ^= state_[3];
    state_[2] ^= t;
    state_[3] = detail::rotl64(state_[3], 45);
    return result;
  }

  /// Uniform on [0, 1).
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  /// Uniform on (0, 1]; safe to pass to log().
  double uniform_pos() { return static_cast<double>((next_u64() >> 11) + 1) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Integer in {0, ..., n-1}.
  std::uint64_t below(std::uint64_t n) { return next_u64() % n; }

  /// Standard normal, Box-Muller with one cached deviate.
  double normal() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    const double u1 = uniform_pos();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double th = 2.0 * M_PI * u2;
    spare_ = r * std::sin(th);
    have_spare_ = true;
    return r * std::cos(th);
  }

  double exponential(double rate) {
    require(rate > 0.0, "exponential: rate must be positive");
    return -std::log(uniform_pos()) / rate;
  }

  Vector normal_vector(int n) {
    Vector z(n);
    for (int i = 0; i < n; ++i) z(i) = normal();
    return z;
  }

  Matrix normal_matrix(int rows, int cols) {
    Matrix z(rows, cols);
    for (int j = 0; j < cols; ++j)
      for (int i = 0; i < rows; ++i) z(i, j) = normal();
    return z;
  }

  /// Independent substream, deterministic in (seed, idx).
  Rng stream(std::uint64_t idx) const {
    std::uint64_t s = seed_ ^ (0x9e3779b97f4a7c15ULL * (idx + 1));
    return Rng(detail::splitmix64(s));
  }

  std::uint64_t seed() const { return seed_; }

 private:
  std::array<std::uint64_t, 4> state_{};
  std::uint64_t seed_;
  double spare_ = 0.0;
  bool have_spare_ = false;
};

}  // namespace subgp
