#pragma once

#include "subgp/common.hpp"
#include "subgp/qmc.hpp"

#include <cmath>
#include <functional>
#include <iostream>

namespace subgp::metrics {

/// Hosts every integral over the unit ball: one shared quasi-Monte-Carlo
/// point set per run, so metric comparisons across posterior draws share the
/// same randomization (common random numbers).
class BallIntegrator {
 public:
  BallIntegrator(int dim, int n_qmc, std::uint64_t seed)
      : dim_(dim),
        volume_(qmc::ball_volume(dim)),
        points_(qmc::halton_in_ball(dim, n_qmc, seed)) {
    require(n_qmc >= 1, "BallIntegrator: n_qmc must be positive");
  }

  int dim() const { return dim_; }
  double volume() const { return volume_; }
  const PointList& points() const { return points_; }
  int n_points() const { return static_cast<int>(points_.size()); }

  struct Estimate {
    double value = 0.0;
    double se = 0.0;  // iid-formula standard error; conservative for QMC
  };

  Estimate integrate_values(const Vector& values_at_points) const {
    const int n = n_points();
    require(values_at_points.size() == n, "BallIntegrator: value vector size mismatch");
    const double mean = values_at_points.mean();
    const double var = (values_at_points.array() - mean).square().sum() / std::max(n - 1, 1);
    return {volume_ * mean, volume_ * std::sqrt(var / n)};
  }

  Estimate integrate(const std::function<double(const Vector&)>& f) const {
    Vector vals(n_points());
    for (int i = 0; i < n_points(); ++i) vals(i) = f(points_[i]);
    return integrate_values(vals);
  }

 private:
  int dim_;
  double volume_;
  PointList points_;
};

struct MetricValue {
  double value = 0.0;
  double mc_se = 0.0;
};

/// Hellinger distance h(p, p') = ||sqrt(p) - sqrt(p')||_2 over the unit ball,
/// clamped into [0, sqrt(2) (1 + tol)].
inline MetricValue hellinger_values(const Vector& p, const Vector& p2,
                                    const BallIntegrator& integrator) {
  const int n = integrator.n_points();
  require(p.size() == n && p2.size() == n, "hellinger: value vector size mismatch");
  Vector sq(n);
  for (int i = 0; i < n; ++i) {
    if (p(i) < -1e-12 || p2(i) < -1e-12)
      throw numerical_error("hellinger: negative density value " +
                            format17(std::min(p(i), p2(i))));
    const double diff = std::sqrt(std::max(p(i), 0.0)) - std::sqrt(std::max(p2(i), 0.0));
    sq(i) = diff * diff;
  }
  const auto est = integrator.integrate_values(sq);
  const double h2 = std::max(est.value, 0.0);
  const double h = std::min(std::sqrt(h2), std::sqrt(2.0) * (1.0 + 1e-9));
  // delta method: se(h) = se(h^2) / (2h), degenerate at h = 0
  const double se = h > 1e-12 ? est.se / (2.0 * h) : std::sqrt(std::max(est.se, 0.0));
  return {h, se};
}

inline MetricValue hellinger(const std::function<double(const Vector&)>& p,
                             const std::function<double(const Vector&)>& p2,
                             const BallIntegrator& integrator) {
  const int n = integrator.n_points();
  Vector a(n), b(n);
  for (int i = 0; i < n; ++i) {
    a(i) = p(integrator.points()[i]);
    b(i) = p2(integrator.points()[i]);
  }
  return hellinger_values(a, b, integrator);
}

/// Design-dependent semi-metric ||f - g||_n = sqrt(n^{-1} sum (f_i - g_i)^2).
inline double empirical_l2(const Vector& f, const Vector& g) {
  require(f.size() == g.size() && f.size() >= 1, "empirical_l2: length mismatch or empty");
  return std::sqrt((f - g).squaredNorm() / f.size());
}

/// Truncated L^2(G) distance ||f^Q - g^Q||_{2,G}; truncation before squaring.
/// A design density below the declared floor gets a warning, not an error.
inline MetricValue l2_design_values(const Vector& f, const Vector& g, double q_trunc,
                                    const Vector& g_density, const BallIntegrator& integrator,
                                    double density_floor = 0.0) {
  const int n = integrator.n_points();
  require(f.size() == n && g.size() == n && g_density.size() == n,
          "l2_design: value vector size mismatch");
  require(q_trunc > 0.0, "l2_design: truncation level must be positive");
  const double observed_min = g_density.minCoeff();
  if (observed_min < density_floor)
    std::cerr << "l2_design: warning, design density dipped to " << format17(observed_min)
              << " below the declared floor " << format17(density_floor) << "\n";
  Vector sq(n);
  for (int i = 0; i < n; ++i) {
    const double fi = std::clamp(f(i), -q_trunc, q_trunc);
    const double gi = std::clamp(g(i), -q_trunc, q_trunc);
    sq(i) = (fi - gi) * (fi - gi) * g_density(i);
  }
  const auto est = integrator.integrate_values(sq);
  const double v = std::sqrt(std::max(est.value, 0.0));
  const double se = v > 1e-12 ? est.se / (2.0 * v) : std::sqrt(std::max(est.se, 0.0));
  return {v, se};
}

inline MetricValue l2_design(const std::function<double(const Vector&)>& f,
                             const std::function<double(const Vector&)>& g, double q_trunc,
                             const std::function<double(const Vector&)>& design_density,
                             const BallIntegrator& integrator, double density_floor = 0.0) {
  const int n = integrator.n_points();
  Vector a(n), b(n), w(n);
  for (int i = 0; i < n; ++i) {
    const Vector& x = integrator.points()[i];
    a(i) = f(x);
    b(i) = g(x);
    w(i) = design_density(x);
  }
  return l2_design_values(a, b, q_trunc, w, integrator, density_floor);
}

}  // namespace subgp::metrics
