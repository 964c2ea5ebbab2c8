#pragma once

#include "subgp/common.hpp"
#include "subgp/gp.hpp"
#include "subgp/metrics.hpp"
#include "subgp/model.hpp"

#include <json.hpp>

#include <cmath>
#include <optional>

namespace subgp::theory {

struct RateInputs {
  double n = 0;
  double beta = 1.0;
  int dstar = 1;
  double K_n = 1.0;
  double C_eps = 1.0;   // unspecified in the source material; reported, never baked in
  double c_int = 1.0;
  double window_L = 0.5;
  double detect_D = 1.0;
  int ambient_dim = 2;
  double C_r = 1.0;
  double design_density_min = 1.0;  // sqrt of this divides the delta rates under random design
};

struct RateSpec {
  RateInputs in;
  double eps_lower = 0.0;  // n^{-beta/(2 beta + d*)}
  double kappa = 0.0;      // beta (d* + 1) / (d* + 2 beta)
  double eps_n = 0.0;      // C_eps^{d*} K_n^2 eps_lower (log n)^kappa
  int dim_cap = 1;         // ceil(c_int sqrt(log n))
  double d_n_bound = 0.0;  // K_n^4 n^{d*/(2 beta + d*)} (log n)^{2 kappa - 2}, unit constant
  double delta1 = 0.0, delta2 = 0.0, delta3 = 0.0;
  double delta1_random_design = 0.0, delta3_random_design = 0.0;
  bool theorem2_applicable = false;

  nlohmann::json to_json() const {
    return {
        {"inputs",
         {{"n", in.n},
          {"beta", in.beta},
          {"dstar", in.dstar},
          {"K_n", in.K_n},
          {"C_eps", in.C_eps},
          {"c_int", in.c_int},
          {"window_L", in.window_L},
          {"detect_D", in.detect_D},
          {"d", in.ambient_dim},
          {"C_r", in.C_r},
          {"design_density_min", in.design_density_min}}},
        {"eps_lower", eps_lower},
        {"kappa", kappa},
        {"eps_n", eps_n},
        {"dim_cap", dim_cap},
        {"d_n_bound", d_n_bound},
        {"d_n_bound_note", "scaling only; the growth constant is unspecified and set to 1"},
        {"delta1", delta1},
        {"delta2", delta2},
        {"delta3", delta3},
        {"delta1_random_design", delta1_random_design},
        {"delta3_random_design", delta3_random_design},
        {"theorem2_applicable", theorem2_applicable},
    };
  }
};

inline RateSpec rates(const RateInputs& in) {
  require(in.n >= 3, "rates: need n >= 3");
  require(in.beta > 0.0, "rates: beta must be positive");
  require(in.K_n >= 1.0, "rates: K_n must be >= 1");
  require(in.window_L > 0.0 && in.window_L < 1.0, "rates: window L must lie in (0, 1)");
  require(in.detect_D > 0.0, "rates: D must be positive");
  require(in.dstar >= 1 && in.ambient_dim >= in.dstar, "rates: need d >= d* >= 1");
  require(in.C_eps > 0.0 && in.c_int > 0.0 && in.C_r > 0.0, "rates: constants must be positive");
  RateSpec r;
  r.in = in;
  const double logn = std::log(in.n);
  r.kappa = in.beta * (in.dstar + 1.0) / (in.dstar + 2.0 * in.beta);
  r.eps_lower = std::pow(in.n, -in.beta / (2.0 * in.beta + in.dstar));
  r.eps_n = std::pow(in.C_eps, in.dstar) * in.K_n * in.K_n * r.eps_lower * std::pow(logn, r.kappa);
  r.dim_cap = static_cast<int>(std::ceil(in.c_int * std::sqrt(logn)));
  r.d_n_bound = std::pow(in.K_n, 4.0) * std::pow(in.n, in.dstar / (2.0 * in.beta + in.dstar)) *
                std::pow(logn, 2.0 * r.kappa - 2.0);
  const double d = in.ambient_dim;
  r.delta1 = std::sqrt(2.0 / in.detect_D) *
             std::pow(d / (in.window_L * in.window_L), 0.25 * (d + 2.0)) * r.eps_n;
  r.delta2 = r.delta1;
  r.delta3 = std::sqrt(2.0 * in.dstar) * r.delta1;
  const double g = std::sqrt(in.design_density_min);
  require(g > 0.0, "rates: design density floor must be positive");
  r.delta1_random_design = r.delta1 / g;
  r.delta3_random_design = r.delta3 / g;
  r.theorem2_applicable = r.delta1 < 1.0;
  return r;
}

/// Unique r > 1 with r^b (log r)^{b+1} = rhs. The solver asserts a 1e-12
/// relative residual in log space, which is stricter than 1e-10 rhs wherever
/// the residual is representable at double precision; for rhs below ~1e-3
/// substituting the rounded root back in linear space is itself conditioned
/// worse than that bound, so the check lives in the solver.
inline double solve_rnb(int b, double rhs) {
  require(rhs > 0.0, "solve_rnb: rhs must be positive");
  return model::solve_rescale(b, rhs);
}

struct ConcentrationParts {
  double rkhs_norm2 = 0.0;
  double smallball_neglog = 0.0;
  double smallball_se = 0.0;
  double total = 0.0;
  nlohmann::json metadata;
};

/// phi_f^{a,b,q}(eps) assembled from its two surrogate halves. Both are
/// documented surrogates: the RKHS term is an upper bound from ridge
/// interpolation, and both sup-norms are grid maxima.
inline ConcentrationParts concentration(const Vector& f_on_grid, const PointList& grid,
                                        const gp::SparsityPattern& pattern, double eps, int n_mc,
                                        Rng& rng) {
  require(pattern.intrinsic_dim <= 2, "concentration: desk scale is b <= 2");
  ConcentrationParts out;
  const auto rk = gp::rkhs_min_norm(f_on_grid, grid, gp::SEKernel{pattern.rescale}, eps);
  const auto sb = gp::small_ball_neglog(pattern, eps, grid, n_mc, rng);
  out.rkhs_norm2 = rk.norm2;
  out.smallball_neglog = sb.neglog;
  out.smallball_se = sb.se;
  out.total = rk.norm2 + sb.neglog;
  out.metadata = {
      {"rkhs_term", "upper-bound surrogate: ridge interpolant norm, grid sup-error " +
                        format17(rk.sup_error)},
      {"smallball_term", "Monte-Carlo estimate on a grid sup-norm, se " + format17(sb.se)},
      {"eps", eps},
      {"grid_size", grid.size()},
      {"n_mc", n_mc},
  };
  return out;
}

namespace detail {
/// Gauss-Legendre nodes/weights on [-1, 1], Newton on the Legendre recurrence.
inline void gauss_legendre(int n, std::vector<double>& nodes, std::vector<double>& weights) {
  nodes.assign(n, 0.0);
  weights.assign(n, 0.0);
  for (int i = 0; i < (n + 1) / 2; ++i) {
    double x = std::cos(M_PI * (i + 0.75) / (n + 0.5));
    double pp = 0.0;
    for (int it = 0; it < 100; ++it) {
      double p0 = 1.0, p1 = 0.0;
      for (int j = 0; j < n; ++j) {
        const double p2 = p1;
        p1 = p0;
        p0 = ((2.0 * j + 1.0) * x * p1 - j * p2) / (j + 1.0);
      }
      pp = n * (x * p0 - p1) / (x * x - 1.0);
      const double dx = p0 / pp;
      x -= dx;
      if (std::abs(dx) < 1e-15) break;
    }
    nodes[i] = -x;
    nodes[n - 1 - i] = x;
    weights[i] = weights[n - 1 - i] = 2.0 / ((1.0 - x * x) * pp * pp);
  }
}

/// integral of fn over the segment t + y v, y in (-l/2, l/2), 64-point rule.
template <typename Fn>
double segment_integral(const Fn& fn, const Vector& t, const Vector& v, double l) {
  static std::vector<double> nodes, weights;
  if (nodes.empty()) gauss_legendre(64, nodes, weights);
  double acc = 0.0;
  for (std::size_t i = 0; i < nodes.size(); ++i)
    acc += weights[i] * fn(t + (0.5 * l * nodes[i]) * v);
  return 0.5 * l * acc;
}
}  // namespace detail

struct GradientCheck {
  bool pass = false;
  double min_singular_value = 0.0;
  double r = 0.0;
  double D_regression = 0.0;
  double D_density = 0.0;
  double L = 0.0;
  double max_p0 = 0.0;
  std::vector<double> b_k;
};

/// Sufficient condition for detectability: d* points with linearly
/// independent core gradients yield the constants
///   r = (1/2) min_k b_k ||grad g*(x_k)||,  D = r^2/24 (regression),
///   D = r^2 / (96 max p_0) (density),
/// with b_k the infimum of the normalized gradient alignment over the
/// direction cell assigned to x_k. At d* = 1 the two directions are
/// enumerated exactly (b_1 = 1); at d* >= 2 the infimum is sampled over
/// n_dirs directions and r carries a 0.9 safety factor against the sampling
/// over-estimate.
inline GradientCheck check_gradient_condition(const model::GroundTruth& truth,
                                              const PointList& points, double delta_margin,
                                              int n_dirs, Rng& rng) {
  const int dstar = truth.intrinsic_dim;
  require(static_cast<int>(points.size()) == dstar,
          "check_gradient_condition: need exactly d* points");
  require(delta_margin > 0.0 && delta_margin < 1.0,
          "check_gradient_condition: margin must lie in (0, 1)");
  if (!truth.core_gradient)
    throw invalid_argument_error("check_gradient_condition: truth has no gradient");
  for (const Vector& x : points)
    require(x.norm() <= 1.0 - delta_margin + 1e-12,
            "check_gradient_condition: points must lie in B_{1-margin}(0)");

  GradientCheck out;
  Matrix grads(dstar, dstar);
  std::vector<Vector> g(dstar);
  std::vector<double> gnorm(dstar);
  for (int k = 0; k < dstar; ++k) {
    g[k] = truth.core_gradient(points[k]);
    gnorm[k] = g[k].norm();
    grads.col(k) = g[k];
  }
  Eigen::JacobiSVD<Matrix> svd(grads);
  out.min_singular_value = svd.singularValues().minCoeff();
  if (out.min_singular_value <= 1e-8) return out;  // rank deficient: fail with the value reported

  out.b_k.assign(dstar, std::numeric_limits<double>::infinity());
  if (dstar == 1) {
    out.b_k[0] = 1.0;  // directions are {+1, -1}, alignment is exact
  } else {
    for (int s = 0; s < n_dirs; ++s) {
      const Vector u = qmc::sample_unit_sphere(dstar, rng);
      int best = 0;
      double best_val = -1.0;
      for (int k = 0; k < dstar; ++k) {
        const double v = std::abs(g[k].dot(u)) / gnorm[k];
        if (v > best_val) {
          best_val = v;
          best = k;
        }
      }
      out.b_k[best] = std::min(out.b_k[best], best_val);
    }
    for (double& b : out.b_k)
      if (!std::isfinite(b)) b = 0.0;  // cell never hit: treat as failure
  }

  double r = std::numeric_limits<double>::infinity();
  for (int k = 0; k < dstar; ++k) r = std::min(r, out.b_k[k] * gnorm[k]);
  r *= 0.5;
  if (dstar >= 2) r *= 0.9;
  out.r = r;
  if (!(r > 0.0)) return out;

  // Continuity neighborhoods: largest radius where the gradient stays within
  // half the cell alignment of its anchor value, by grid search.
  double min_delta_k = delta_margin;
  const PointList ball = qmc::grid_on_ball(dstar, dstar == 1 ? 65 : 17);
  for (int k = 0; k < dstar; ++k) {
    const double budget = 0.5 * out.b_k[k] * gnorm[k];
    double rho_ok = 0.0;
    for (int step = 1; step <= 40; ++step) {
      const double rho = step / 40.0;
      bool ok = true;
      for (const Vector& u : ball) {
        const Vector x = points[k] + rho * u;
        if (x.norm() > 1.0) continue;
        if ((truth.core_gradient(x) - g[k]).norm() > budget) {
          ok = false;
          break;
        }
      }
      if (!ok) break;
      rho_ok = rho;
    }
    min_delta_k = std::min(min_delta_k, rho_ok);
  }
  out.L = min_delta_k;

  out.D_regression = r * r / 24.0;
  {
    metrics::BallIntegrator amb(truth.ambient_dim, 8192, 0x90a7ULL);
    const auto z = amb.integrate([&truth](const Vector& x) { return std::exp(truth(x)); });
    const PointList grid = qmc::halton_in_ball(dstar, 4096, 0x90a8ULL);
    double maxp = 0.0;
    for (const Vector& t : grid) maxp = std::max(maxp, std::exp(truth.core(t)) / z.value);
    out.max_p0 = maxp;
    out.D_density = r * r / (96.0 * maxp);
  }
  out.pass = out.L > 0.0;
  return out;
}

struct DetectabilityFailure {
  Vector direction;
  Vector origin;
  Vector center;
  double l = 0.0;
  double best_constant = 0.0;
  double lhs = 0.0;
  double rhs = 0.0;
};

struct DetectabilityReport {
  bool pass = false;
  int n_dirs_checked = 0;
  std::vector<DetectabilityFailure> failures;
};

/// Direct numerical probe of the detectability condition: for each probe
/// direction, hunt for an origin o in B_{1-L}(0) such that every sampled
/// window (l, t) has the 1-D residual against the best constant at least
/// D l^3. The inner minimum over the constant is exact: the mean for L^2,
/// the mean of sqrt(p_0) for Hellinger.
inline DetectabilityReport check_detectability(const model::GroundTruth& truth,
                                               const model::Setting& setting, double window_L,
                                               double detect_D, int n_probe, Rng& rng) {
  const int dstar = truth.intrinsic_dim;
  require(dstar <= 2, "check_detectability: numeric quadrature scale is d* <= 2");
  require(window_L > 0.0 && window_L < 1.0, "check_detectability: L must lie in (0, 1)");
  require(detect_D > 0.0, "check_detectability: D must be positive");

  const bool density = setting.kind == model::SettingKind::density;
  double log_z = 0.0;
  if (density) {
    metrics::BallIntegrator amb(truth.ambient_dim, 8192, 0x90a7ULL);
    log_z = std::log(
        amb.integrate([&truth](const Vector& x) { return std::exp(truth(x)); }).value);
  }
  const auto p0 = [&](const Vector& t) { return std::exp(truth.core(t) - log_z); };
  const auto gq = [&](const Vector& t) {
    return std::clamp(truth.core(t), -setting.truncation, setting.truncation);
  };

  // segment residual against the optimal constant
  const auto residual = [&](const Vector& t, const Vector& v, double l) {
    if (density) {
      const double int_p = detail::segment_integral(p0, t, v, l);
      const double int_sqrtp = detail::segment_integral(
          [&](const Vector& u) { return std::sqrt(p0(u)); }, t, v, l);
      const double best_sqrt_c = int_sqrtp / l;
      return std::pair<double, double>{int_p - best_sqrt_c * best_sqrt_c * l,
                                       best_sqrt_c * best_sqrt_c};
    }
    const double int_g = detail::segment_integral(gq, t, v, l);
    const double int_g2 = detail::segment_integral(
        [&](const Vector& u) { const double g = gq(u); return g * g; }, t, v, l);
    const double best_c = int_g / l;
    return std::pair<double, double>{int_g2 - best_c * best_c * l, best_c};
  };

  DetectabilityReport rep;
  rep.n_dirs_checked = n_probe;
  PointList origins;
  for (const Vector& u : qmc::grid_on_ball(dstar, dstar == 1 ? 41 : 13))
    origins.push_back((1.0 - window_L) * u);
  const std::vector<double> lengths = {0.25 * window_L, 0.5 * window_L, 0.75 * window_L,
                                       window_L};

  for (int probe = 0; probe < n_probe; ++probe) {
    const Vector v = qmc::sample_unit_sphere(dstar, rng);
    bool dir_ok = false;
    DetectabilityFailure worst;
    worst.lhs = std::numeric_limits<double>::infinity();
    for (const Vector& o : origins) {
      bool all_ok = true;
      for (double l : lengths) {
        for (int ti = 0; ti < 6 && all_ok; ++ti) {
          Vector t = o;
          if (ti > 0) t += 0.5 * window_L * std::pow(rng.uniform_pos(), 1.0 / dstar) *
                           qmc::sample_unit_sphere(dstar, rng);
          const auto [lhs, best_c] = residual(t, v, l);
          const double rhs = detect_D * l * l * l;
          if (lhs < rhs) {
            all_ok = false;
            if (lhs < worst.lhs)
              worst = {v, o, t, l, best_c, lhs, rhs};
          }
        }
        if (!all_ok) break;
      }
      if (all_ok) {
        dir_ok = true;
        break;
      }
    }
    if (!dir_ok) rep.failures.push_back(worst);
  }
  rep.pass = rep.failures.empty();
  return rep;
}

}  // namespace subgp::theory
