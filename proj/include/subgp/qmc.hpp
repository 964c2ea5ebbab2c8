#pragma once

#include "subgp/common.hpp"
#include "subgp/rng.hpp"

#include <cmath>
#include <cstdint>

namespace subgp::qmc {

/// Volume of the unit ball in R^d: pi^{d/2} / Gamma(d/2 + 1).
inline double ball_volume(int d) {
  require(d >= 1, "ball_volume: d must be positive");
  return std::pow(M_PI, 0.5 * d) / std::tgamma(0.5 * d + 1.0);
}

inline constexpr int kHaltonPrimes[8] = {2, 3, 5, 7, 11, 13, 17, 19};

/// Radical-inverse (van der Corput) value of index i in the given base.
inline double radical_inverse(std::uint64_t i, int base) {
  double inv = 1.0 / base, f = inv, x = 0.0;
  while (i > 0) {
    x += f * static_cast<double>(i % base);
    i /= base;
    f *= inv;
  }
  return x;
}

/// Halton sequence in [0,1)^d with a Cranley-Patterson random shift. The
/// shift is what gives QMC point sets a seed: two seeds yield two
/// independent randomizations of the same low-discrepancy structure.
class Halton {
 public:
  Halton(int dim, std::uint64_t seed) : dim_(dim), shift_(dim) {
    require(dim >= 1 && dim <= 8, "Halton: dim must be in [1, 8]");
    Rng rng(seed);
    for (int k = 0; k < dim; ++k) shift_(k) = rng.uniform();
  }

  Vector next() {
    ++index_;
    Vector x(dim_);
    for (int k = 0; k < dim_; ++k) {
      double v = radical_inverse(index_, kHaltonPrimes[k]) + shift_(k);
      x(k) = v - std::floor(v);
    }
    return x;
  }

  int dim() const { return dim_; }

 private:
  int dim_;
  Vector shift_;
  std::uint64_t index_ = 0;  // index 0 skipped (origin)
};

/// n_points low-discrepancy points inside the unit ball, by rejection from
/// the enclosing cube [-1,1)^d.
inline PointList halton_in_ball(int d, int n_points, std::uint64_t seed) {
  Halton seq(d, seed);
  PointList pts;
  pts.reserve(n_points);
  while (static_cast<int>(pts.size()) < n_points) {
    Vector u = seq.next();
    Vector x = 2.0 * u.array() - 1.0;
    if (x.squaredNorm() <= 1.0) pts.push_back(std::move(x));
  }
  return pts;
}

/// Exact uniform draw from the unit ball: Gaussian direction, radius U^{1/d}.
inline Vector sample_unit_ball(int d, Rng& rng) {
  Vector z = rng.normal_vector(d);
  double nrm = z.norm();
  while (nrm == 0.0) {
    z = rng.normal_vector(d);
    nrm = z.norm();
  }
  const double r = std::pow(rng.uniform_pos(), 1.0 / d);
  return (r / nrm) * z;
}

inline Vector sample_unit_sphere(int d, Rng& rng) {
  Vector z = rng.normal_vector(d);
  double nrm = z.norm();
  while (nrm == 0.0) {
    z = rng.normal_vector(d);
    nrm = z.norm();
  }
  return z / nrm;
}

/// Regular product grid on [-1,1]^b restricted to the unit ball. Used as the
/// sup-norm surrogate grid; resolution is points per intrinsic dimension.
inline PointList grid_on_ball(int b, int per_dim) {
  require(b >= 1 && per_dim >= 2, "grid_on_ball: need b >= 1, per_dim >= 2");
  PointList pts;
  std::vector<int> idx(b, 0);
  const double step = 2.0 / (per_dim - 1);
  while (true) {
    Vector x(b);
    for (int k = 0; k < b; ++k) x(k) = -1.0 + step * idx[k];
    if (x.squaredNorm() <= 1.0 + 1e-12) pts.push_back(x);
    int k = 0;
    for (; k < b; ++k) {
      if (++idx[k] < per_dim) break;
      idx[k] = 0;
    }
    if (k == b) break;
  }
  return pts;
}

}  // namespace subgp::qmc
