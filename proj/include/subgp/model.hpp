#pragma once

#include "subgp/common.hpp"
#include "subgp/lingeom.hpp"
#include "subgp/metrics.hpp"
#include "subgp/qmc.hpp"
#include "subgp/rng.hpp"

#include <json.hpp>

#include <cmath>
#include <functional>
#include <iostream>
#include <istream>
#include <optional>
#include <sstream>
#include <string>
#include <utility>

namespace subgp::model {

enum class SettingKind { density, fixed_design, random_design };

inline std::string to_string(SettingKind k) {
  switch (k) {
    case SettingKind::density: return "density";
    case SettingKind::fixed_design: return "fixed_design";
    case SettingKind::random_design: return "random_design";
  }
  return "?";
}

inline SettingKind setting_kind_from_string(const std::string& s) {
  if (s == "density") return SettingKind::density;
  if (s == "fixed_design") return SettingKind::fixed_design;
  if (s == "random_design") return SettingKind::random_design;
  throw invalid_argument_error("unknown setting kind: " + s);
}

/// One of the three statistical settings. sigma is restricted to [1, 2]
/// unless relax_sigma is set, in which case the restriction is only warned
/// about (the theory extends at the price of adjusted constants).
struct Setting {
  SettingKind kind = SettingKind::fixed_design;
  double noise_sd = 1.0;
  double truncation = 3.0;          // Q, random-design metric truncation
  double design_density_min = 0.0;  // floor of G_n, recorded for the delta_n scaling
  bool relax_sigma = false;

  static Setting density() {
    Setting s;
    s.kind = SettingKind::density;
    return s;
  }
  static Setting fixed_design(double sigma, bool relax = false) {
    Setting s;
    s.kind = SettingKind::fixed_design;
    s.noise_sd = sigma;
    s.relax_sigma = relax;
    s.validate();
    return s;
  }
  static Setting random_design(double sigma, double q_trunc, int dim, bool relax = false) {
    Setting s;
    s.kind = SettingKind::random_design;
    s.noise_sd = sigma;
    s.truncation = q_trunc;
    s.design_density_min = 1.0 / qmc::ball_volume(dim);  // uniform design default
    s.relax_sigma = relax;
    s.validate();
    return s;
  }

  void validate() const {
    if (kind == SettingKind::density) return;
    require(noise_sd > 0.0, "Setting: sigma must be positive");
    if (noise_sd < 1.0 || noise_sd > 2.0) {
      if (!relax_sigma)
        throw invalid_argument_error("Setting: sigma must lie in [1, 2] (set relax_sigma to lift)");
      std::cerr << "Setting: warning, sigma = " << format17(noise_sd)
                << " outside [1, 2]; constants in the theory change\n";
    }
    require(truncation > 0.0, "Setting: truncation Q must be positive");
  }
};

/// Covariates in the unit ball plus optional responses.
struct Dataset {
  SettingKind kind = SettingKind::fixed_design;
  Matrix covariates;  // n x d
  Vector responses;   // empty in the density setting
  nlohmann::json metadata;

  int size() const { return static_cast<int>(covariates.rows()); }
  int dim() const { return static_cast<int>(covariates.cols()); }
  bool has_responses() const { return responses.size() == covariates.rows(); }

  void write_csv(std::ostream& os) const {
    for (int k = 1; k <= dim(); ++k) os << (k == 1 ? "" : ",") << "x" << k;
    if (has_responses()) os << ",y";
    os << "\n";
    for (int i = 0; i < size(); ++i) {
      for (int k = 0; k < dim(); ++k) os << (k == 0 ? "" : ",") << format17(covariates(i, k));
      if (has_responses()) os << "," << format17(responses(i));
      os << "\n";
    }
  }

  static Dataset read_csv(std::istream& is) {
    std::string line;
    require(static_cast<bool>(std::getline(is, line)), "Dataset: empty CSV");
    bool with_y = line.size() >= 2 && line.substr(line.size() - 2) == ",y";
    int d = 0;
    {
      std::stringstream hs(line);
      std::string tok;
      while (std::getline(hs, tok, ',')) ++d;
      if (with_y) --d;
    }
    std::vector<std::vector<double>> rows;
    while (std::getline(is, line)) {
      if (line.empty()) continue;
      std::stringstream ls(line);
      std::string tok;
      std::vector<double> row;
      while (std::getline(ls, tok, ',')) row.push_back(std::stod(tok));
      require(static_cast<int>(row.size()) == d + (with_y ? 1 : 0), "Dataset: ragged CSV row");
      rows.push_back(std::move(row));
    }
    Dataset ds;
    ds.covariates.resize(rows.size(), d);
    if (with_y) ds.responses.resize(rows.size());
    for (std::size_t i = 0; i < rows.size(); ++i) {
      for (int k = 0; k < d; ++k) ds.covariates(i, k) = rows[i][k];
      if (with_y) ds.responses(i) = rows[i][d];
    }
    ds.kind = with_y ? SettingKind::fixed_design : SettingKind::density;
    return ds;
  }
};

/// g(a) = a^b (log a)^{b+1}, strictly increasing from 0 on (1, inf).
inline double rescale_transform(int b, double a) {
  return std::pow(a, b) * std::pow(std::log(a), b + 1);
}

/// Inverse of the rescale transform. Bisection runs on u = log a against
/// b u + (b+1) log u = log(value), with geometric midpoints; u stays
/// resolvable to full relative precision however close the root is to 1,
/// which an a-space bisection cannot deliver for tiny targets. Residual
/// asserted below 1e-12 relative to max(1, value).
inline double solve_rescale(int b, double value) {
  require(b >= 1, "solve_rescale: b must be positive");
  require(value > 0.0, "solve_rescale: target must be positive");
  const double target = std::log(value);
  const auto h = [b](double u) { return b * u + (b + 1.0) * std::log(u); };
  double lo = 1.0, hi = 1.0;
  int guard = 0;
  while (h(lo) > target) {
    lo *= 0.5;
    require(++guard < 1200, "solve_rescale: lower bracket failed");
  }
  guard = 0;
  while (h(hi) < target) {
    hi *= 2.0;
    require(++guard < 1200, "solve_rescale: upper bracket failed");
  }
  for (int it = 0; it < 300; ++it) {
    const double mid = std::sqrt(lo * hi);
    if (mid <= lo || mid >= hi) break;
    (h(mid) < target ? lo : hi) = mid;
  }
  const double u = std::sqrt(lo * hi);
  const double rel_residual = std::abs(std::expm1(h(u) - target));
  if (rel_residual > 1e-12)
    throw numerical_error("solve_rescale: relative residual " + format17(rel_residual));
  return std::exp(u);
}

/// Hierarchical prior on (dimension, rescaling): pi_Gamma on {1..dim_cap}
/// with dim_cap = ceil(c_int sqrt(log n)), and a | (Gamma = b) defined by
/// a^b (log a)^{b+1} ~ Exp(lambda), supported on (1, inf).
struct HierarchicalPrior {
  int ambient_dim = 0;
  int dim_cap = 1;  // \bar d
  Vector dim_pmf;   // on {1..dim_cap}
  double rescale_rate = 1.0;

  static int cap_for(int n, double c_int, int ambient_dim) {
    require(n >= 3, "HierarchicalPrior: need n >= 3");
    const int cap = static_cast<int>(std::ceil(c_int * std::sqrt(std::log(double(n)))));
    return std::clamp(cap, 1, ambient_dim);
  }

  static HierarchicalPrior uniform(int ambient_dim, int n, double c_int = 1.0,
                                   double lambda = 1.0) {
    HierarchicalPrior p;
    p.ambient_dim = ambient_dim;
    p.dim_cap = cap_for(n, c_int, ambient_dim);
    p.dim_pmf = Vector::Constant(p.dim_cap, 1.0 / p.dim_cap);
    p.rescale_rate = lambda;
    return p;
  }

  static HierarchicalPrior truncated_poisson(int ambient_dim, int n, double mean,
                                             double c_int = 1.0, double lambda = 1.0) {
    HierarchicalPrior p;
    p.ambient_dim = ambient_dim;
    p.dim_cap = cap_for(n, c_int, ambient_dim);
    p.dim_pmf.resize(p.dim_cap);
    for (int b = 1; b <= p.dim_cap; ++b)
      p.dim_pmf(b - 1) = std::exp(b * std::log(mean) - std::lgamma(b + 1.0));
    p.dim_pmf /= p.dim_pmf.sum();
    p.rescale_rate = lambda;
    return p;
  }

  void validate() const {
    require(dim_pmf.size() == dim_cap && dim_cap >= 1, "HierarchicalPrior: bad pmf support");
    require(std::abs(dim_pmf.sum() - 1.0) <= 1e-12, "HierarchicalPrior: pmf must sum to 1");
    require(dim_pmf.minCoeff() >= 0.0, "HierarchicalPrior: negative pmf entry");
    require(rescale_rate > 0.0, "HierarchicalPrior: lambda must be positive");
  }

  /// pi_Gamma(d*) >= 1/n, checked when the truth's dimension is known.
  void check_supports_truth(int dstar, int n) const {
    require(dstar >= 1 && dstar <= dim_cap,
            "HierarchicalPrior: true dimension outside the pmf support");
    require(dim_pmf(dstar - 1) >= 1.0 / n,
            "HierarchicalPrior: pi_Gamma(d*) < 1/n");
  }

  double log_dim_pmf(int b) const {
    if (b < 1 || b > dim_cap) return -std::numeric_limits<double>::infinity();
    const double p = dim_pmf(b - 1);
    return p > 0.0 ? std::log(p) : -std::numeric_limits<double>::infinity();
  }

  int sample_dim(Rng& rng) const {
    double u = rng.uniform();
    for (int b = 1; b <= dim_cap; ++b) {
      u -= dim_pmf(b - 1);
      if (u <= 0.0) return b;
    }
    return dim_cap;
  }

  /// Prior density of a | (Gamma = b) by change of variables through the
  /// exponential construction.
  double log_rescale_density(int b, double a) const {
    if (a <= 1.0) return -std::numeric_limits<double>::infinity();
    const double la = std::log(a);
    const double gprime = std::pow(a, b - 1) * std::pow(la, b) * (b * la + b + 1.0);
    return std::log(rescale_rate) - rescale_rate * rescale_transform(b, a) + std::log(gprime);
  }

  double sample_rescale(int b, Rng& rng) const {
    return solve_rescale(b, rng.exponential(rescale_rate));
  }
};

/// Draws a > 1 with a^b (log a)^{b+1} ~ Exp(lambda).
inline double sample_rescale(int b, double lambda, Rng& rng) {
  require(lambda > 0.0, "sample_rescale: lambda must be positive");
  return solve_rescale(b, rng.exponential(lambda));
}

inline Vector truncate(Vector f, double q_trunc) {
  require(q_trunc > 0.0, "truncate: Q must be positive");
  return f.cwiseMax(-q_trunc).cwiseMin(q_trunc);
}

enum class TruthFamily { linear, sine, quadratic, custom };

inline std::string to_string(TruthFamily f) {
  switch (f) {
    case TruthFamily::linear: return "linear";
    case TruthFamily::sine: return "sine";
    case TruthFamily::quadratic: return "quadratic";
    case TruthFamily::custom: return "custom";
  }
  return "?";
}

inline TruthFamily truth_family_from_string(const std::string& s) {
  if (s == "linear") return TruthFamily::linear;
  if (s == "sine") return TruthFamily::sine;
  if (s == "quadratic") return TruthFamily::quadratic;
  if (s == "custom") return TruthFamily::custom;
  throw invalid_argument_error("unknown truth family: " + s);
}

/// Ground truth f*(x) = g*((q* x)_{d*}): a core function on the intrinsic
/// ball, an orientation, and the smoothness bookkeeping.
struct GroundTruth {
  int ambient_dim = 0;
  int intrinsic_dim = 0;
  double beta = 1.0;
  double holder_bound = 1.0;  // K_n
  lingeom::Orthogonal orientation;
  std::function<double(const Vector&)> core;
  std::function<Vector(const Vector&)> core_gradient;  // may be empty for custom truths
  TruthFamily family = TruthFamily::custom;

  double operator()(const Vector& x) const {
    return core((orientation.matrix() * x).head(intrinsic_dim));
  }

  lingeom::SubspaceFrame central_subspace() const {
    return lingeom::SubspaceFrame::from_orientation(orientation, intrinsic_dim);
  }
};

namespace detail {
/// Numeric Hoelder-ball radius: sup |g| and the l1 gradient norm (the
/// Lipschitz constant w.r.t. the max-norm on increments) over a dense grid.
inline double numeric_holder_bound(const std::function<double(const Vector&)>& g,
                                   const std::function<Vector(const Vector&)>& grad, int dstar) {
  const PointList grid = qmc::grid_on_ball(dstar, dstar == 1 ? 4097 : 129);
  double k = 1.0;
  for (const Vector& t : grid) {
    k = std::max(k, std::abs(g(t)));
    if (grad) k = std::max(k, grad(t).cwiseAbs().sum());
  }
  return k;
}
}  // namespace detail

inline GroundTruth make_truth(TruthFamily family, int d, int dstar, lingeom::Orthogonal qstar) {
  require(dstar >= 1 && dstar <= d, "make_truth: need 1 <= d* <= d");
  require(qstar.dim() == d, "make_truth: orientation dimension mismatch");
  GroundTruth t{d, dstar, 1.0, 1.0, std::move(qstar), nullptr, nullptr, family};
  const double scale = 1.0 / std::sqrt(static_cast<double>(dstar));
  switch (family) {
    case TruthFamily::linear:
      t.core = [dstar, scale](const Vector& u) { return scale * u.sum(); };
      t.core_gradient = [dstar, scale](const Vector&) {
        return Vector::Constant(dstar, scale).eval();
      };
      t.beta = 1.0;
      break;
    case TruthFamily::sine: {
      // distinct frequencies and phases keep the core genuinely
      // d*-dimensional (equal frequencies would factor through t_1 + t_2)
      Vector freq(dstar), phase(dstar);
      for (int k = 0; k < dstar; ++k) {
        freq(k) = 2.0 + 1.3 * k;
        phase(k) = 0.4 * k;
      }
      t.core = [scale, freq, phase](const Vector& u) {
        return scale * (freq.array() * u.array() + phase.array()).sin().sum();
      };
      t.core_gradient = [scale, freq, phase](const Vector& u) {
        return (scale * freq.array() * (freq.array() * u.array() + phase.array()).cos())
            .matrix()
            .eval();
      };
      t.beta = 1.0;
      break;
    }
    case TruthFamily::quadratic:
      t.core = [](const Vector& u) { return u.squaredNorm(); };
      t.core_gradient = [](const Vector& u) { return (2.0 * u).eval(); };
      t.beta = 2.0;
      break;
    case TruthFamily::custom:
      throw invalid_argument_error("make_truth: custom family needs explicit callables");
  }
  t.holder_bound = detail::numeric_holder_bound(t.core, t.core_gradient, dstar);
  return t;
}

inline GroundTruth make_truth(TruthFamily family, int d, int dstar, Rng& rng) {
  return make_truth(family, d, dstar, lingeom::haar_sample(d, rng));
}

inline GroundTruth make_custom_truth(int d, int dstar, lingeom::Orthogonal qstar,
                                     std::function<double(const Vector&)> core,
                                     std::function<Vector(const Vector&)> gradient, double beta) {
  require(dstar >= 1 && dstar <= d, "make_custom_truth: need 1 <= d* <= d");
  GroundTruth t{d,    dstar,           beta,
                1.0,  std::move(qstar), std::move(core),
                std::move(gradient),    TruthFamily::custom};
  t.holder_bound = detail::numeric_holder_bound(t.core, t.core_gradient, dstar);
  return t;
}

/// Spec default: the truncation level must not bite on the truth.
inline double default_truncation(const GroundTruth& truth) { return 3.0 * truth.holder_bound; }

/// Normalized density p(x) = e^{w(x)} / Z on the unit ball, Z estimated by
/// quasi-Monte-Carlo; log Z cached, relative error reported.
class LogisticDensity {
 public:
  LogisticDensity(std::function<double(const Vector&)> w, int dim, int n_qmc,
                  std::uint64_t qmc_seed = 0x5eedULL)
      : w_(std::move(w)), integrator_(dim, n_qmc, qmc_seed) {
    require(n_qmc >= 1000, "logistic_density: n_qmc < 1e3 gives an unreliable normalizer");
    Vector ew(integrator_.n_points());
    max_density_unnormalized_ = 0.0;
    for (int i = 0; i < integrator_.n_points(); ++i) {
      ew(i) = std::exp(w_(integrator_.points()[i]));
      max_density_unnormalized_ = std::max(max_density_unnormalized_, ew(i));
    }
    const auto z = integrator_.integrate_values(ew);
    require(z.value > 0.0 && std::isfinite(z.value), "logistic_density: degenerate normalizer");
    log_z_ = std::log(z.value);
    rel_err_ = z.se / z.value;
  }

  double operator()(const Vector& x) const { return std::exp(w_(x) - log_z_); }
  double log_density(const Vector& x) const { return w_(x) - log_z_; }
  double log_normalizer() const { return log_z_; }
  double relative_error() const { return rel_err_; }
  const metrics::BallIntegrator& integrator() const { return integrator_; }

  /// Grid maximum of p, the rejection-sampling envelope ingredient.
  double grid_max_density() const { return max_density_unnormalized_ * std::exp(-log_z_); }

 private:
  std::function<double(const Vector&)> w_;
  metrics::BallIntegrator integrator_;
  double log_z_ = 0.0;
  double rel_err_ = 0.0;
  double max_density_unnormalized_ = 0.0;
};

inline LogisticDensity logistic_density(std::function<double(const Vector&)> w, int dim,
                                        int n_qmc, std::uint64_t qmc_seed = 0x5eedULL) {
  return LogisticDensity(std::move(w), dim, n_qmc, qmc_seed);
}

/// Log-likelihood of the data under the setting, both settings sharing the
/// latent evaluator f.
inline double loglik(const Setting& setting, const std::function<double(const Vector&)>& f,
                     const Dataset& data, int density_n_qmc = 16384) {
  require(data.size() >= 1, "loglik: empty data");
  const int n = data.size();
  if (setting.kind == SettingKind::density) {
    LogisticDensity p(f, data.dim(), density_n_qmc);
    double acc = 0.0;
    for (int i = 0; i < n; ++i) {
      const double lp = p.log_density(data.covariates.row(i).transpose());
      require(std::isfinite(lp), "loglik: non-finite latent value");
      acc += lp;
    }
    return acc;
  }
  require(data.has_responses(), "loglik: regression data lacks responses");
  const double s2 = setting.noise_sd * setting.noise_sd;
  double acc = -0.5 * n * std::log(2.0 * M_PI * s2);
  for (int i = 0; i < n; ++i) {
    const double fi = f(data.covariates.row(i).transpose());
    if (!std::isfinite(fi)) throw numerical_error("loglik: non-finite latent value");
    const double r = data.responses(i) - fi;
    acc -= 0.5 * r * r / s2;
  }
  return acc;
}

/// Synthetic data generation for all three settings. Covariates are uniform
/// on the unit ball unless a custom design sampler is configured; the
/// density setting samples from p_{f*} by rejection against 1.1x the
/// QMC-grid maximum.
inline Dataset sample_dataset(const GroundTruth& truth, const Setting& setting, int n, Rng& rng,
                              int density_n_qmc = 16384,
                              const std::function<Vector(Rng&)>& custom_design = nullptr) {
  require(n >= 1, "sample_dataset: n must be positive");
  const int d = truth.ambient_dim;
  Dataset ds;
  ds.kind = setting.kind;
  ds.covariates.resize(n, d);

  if (setting.kind == SettingKind::density) {
    LogisticDensity p([&truth](const Vector& x) { return truth(x); }, d, density_n_qmc,
                      rng.next_u64());
    const double envelope = 1.1 * p.grid_max_density();
    long accepted = 0, proposed = 0;
    while (accepted < n) {
      ++proposed;
      const Vector x = qmc::sample_unit_ball(d, rng);
      if (rng.uniform() * envelope <= p(x)) ds.covariates.row(accepted++) = x.transpose();
      if (proposed > 10000 && accepted < proposed * 1e-4)
        throw numerical_error("sample_dataset: rejection acceptance below 1e-4; envelope too loose");
    }
  } else {
    ds.responses.resize(n);
    for (int i = 0; i < n; ++i) {
      const Vector x = custom_design ? custom_design(rng) : qmc::sample_unit_ball(d, rng);
      require(x.size() == d && x.norm() <= 1.0 + 1e-9,
              "sample_dataset: design point outside the unit ball");
      ds.covariates.row(i) = x.transpose();
      ds.responses(i) = truth(x) + setting.noise_sd * rng.normal();
    }
  }

  ds.metadata = {
      {"kind", to_string(setting.kind)},
      {"sigma", setting.noise_sd},
      {"Q", setting.truncation},
      {"truth_family", to_string(truth.family)},
      {"dstar", truth.intrinsic_dim},
      {"d", truth.ambient_dim},
      {"beta", truth.beta},
      {"K_n", truth.holder_bound},
  };
  auto& qmat = ds.metadata["qstar"] = nlohmann::json::array();
  for (int i = 0; i < d; ++i) {
    nlohmann::json row = nlohmann::json::array();
    for (int j = 0; j < d; ++j) row.push_back(truth.orientation.matrix()(i, j));
    qmat.push_back(row);
  }
  return ds;
}

}  // namespace subgp::model
