#pragma once

#include "subgp/common.hpp"
#include "subgp/gp.hpp"
#include "subgp/lingeom.hpp"
#include "subgp/metrics.hpp"
#include "subgp/model.hpp"
#include "subgp/qmc.hpp"
#include "subgp/rng.hpp"

#include <json.hpp>
#include <unsupported/Eigen/MatrixFunctions>

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <ostream>

namespace subgp::inference {

struct ChainConfig {
  long n_iter = 5000;
  long burn_in = 1000;
  int thin = 10;
  double step_a = 0.3;  // sd of the log random walk on a
  double step_q = 0.1;  // geodesic step, radians
  double move_prob_a = 0.4;
  double move_prob_q = 0.4;
  double dim_move_prob = 0.2;
  bool adapt_step_q = true;  // Robbins-Monro during burn-in, frozen after
  double target_accept_q = 0.25;
  std::uint64_t seed = 1;
  int density_anchor_count = 256;
  int density_normalizer_qmc = 2048;
  bool likelihood_disabled = false;  // prior-reproduction mode
  bool debug_checks = false;
  int reorthonormalize_every = 100;
  double jitter = 1e-8;
  // Optional pinned initialization; combined with zeroed move gates this
  // freezes (a, b, q) for the conjugate-oracle regime.
  std::optional<int> init_b;
  std::optional<double> init_a;
  std::optional<Matrix> init_q;

  void validate() const {
    require(n_iter > burn_in && burn_in >= 0, "ChainConfig: need n_iter > burn_in >= 0");
    require(thin >= 1, "ChainConfig: thin must be >= 1");
    require(step_a > 0.0 && step_q > 0.0, "ChainConfig: proposal scales must be positive");
    require(move_prob_a >= 0.0 && move_prob_a <= 1.0 && move_prob_q >= 0.0 &&
                move_prob_q <= 1.0 && dim_move_prob >= 0.0 && dim_move_prob <= 1.0,
            "ChainConfig: move probabilities must lie in [0, 1]");
  }
};

struct MoveStats {
  long proposed = 0;
  long accepted = 0;
  double rate() const { return proposed > 0 ? double(accepted) / double(proposed) : 0.0; }
};

struct DrawRecord {
  long iter = 0;
  int b = 1;
  double a = 1.0;
  Matrix q;       // orthogonal up to the tracked drift
  Vector latent;  // values at the anchors
  double log_post = 0.0;
};

struct Chain {
  std::vector<DrawRecord> draws;
  PointList anchors;
  model::SettingKind kind = model::SettingKind::fixed_design;
  MoveStats ess_stats;  // proposed = shrink proposals, accepted = updates
  MoveStats a_stats, q_stats, b_stats;
  double max_q_drift = 0.0;
  double final_step_q = 0.0;
  ChainConfig config;
};

namespace detail {

/// Everything the likelihood needs that depends only on (b, q, a): the
/// anchor Gram factor and, in the density setting, the cross kernels to the
/// data and to the shared normalizer point set.
struct PatternWork {
  int b = 1;
  double a = 1.0;
  Matrix q;
  PointList projected;
  gp::GramFactor factor;
  Matrix cross_data;   // density only: n x m
  Matrix cross_zgrid;  // density only: n_z x m
};

class LikelihoodModel {
 public:
  LikelihoodModel(const model::Dataset& data, const model::Setting& setting,
                  const ChainConfig& cfg)
      : setting_(setting), cfg_(cfg) {
    require(data.size() >= 1 || cfg.likelihood_disabled,
            "mcmc: empty data requires likelihood_disabled");
    const int d = data.size() > 0 ? data.dim() : 0;
    if (setting.kind == model::SettingKind::density) {
      if (data.size() > 0) {
        anchors_ = qmc::halton_in_ball(d, cfg.density_anchor_count, cfg.seed ^ 0xA11C0125ULL);
        zgrid_ = qmc::halton_in_ball(d, cfg.density_normalizer_qmc, cfg.seed ^ 0x2B5EEDULL);
        log_volume_ = std::log(qmc::ball_volume(d));
        data_points_.reserve(data.size());
        for (int i = 0; i < data.size(); ++i)
          data_points_.push_back(data.covariates.row(i).transpose());
      }
    } else {
      require(cfg.likelihood_disabled || data.has_responses(),
              "mcmc: regression data lacks responses");
      for (int i = 0; i < data.size(); ++i)
        anchors_.push_back(data.covariates.row(i).transpose());
      if (data.has_responses()) responses_ = data.responses;
      sigma_ = setting.noise_sd;
      const double s2 = sigma_ * sigma_;
      gauss_const_ = -0.5 * data.size() * std::log(2.0 * M_PI * s2);
      inv_2s2_ = 0.5 / s2;
    }
  }

  /// Gaussian likelihood admits the collapsed dimension move.
  bool can_collapse() const {
    return setting_.kind != model::SettingKind::density && !cfg_.likelihood_disabled &&
           responses_.size() > 0;
  }

  /// log N(y; 0, K_j + sigma^2 I), the latent integrated out.
  double log_marginal(const PatternWork& w) const {
    const int n = static_cast<int>(responses_.size());
    Matrix b = w.factor.k;
    b.diagonal().array() += sigma_ * sigma_;
    Eigen::LLT<Matrix> chol(b);
    if (chol.info() != Eigen::Success) return -std::numeric_limits<double>::infinity();
    double logdet = 0.0;
    const Matrix l = chol.matrixL();
    for (int i = 0; i < n; ++i) logdet += std::log(l(i, i));
    return -0.5 * n * std::log(2.0 * M_PI) - logdet -
           0.5 * responses_.dot(chol.solve(responses_));
  }

  /// Whitened draw from the exact conditional posterior z | y under w,
  /// via Matheron residual sampling (reuses the marginal factor shape).
  Vector conditional_whitened(const PatternWork& w, Rng& rng) const {
    const int n = static_cast<int>(responses_.size());
    const Vector z0 = rng.normal_vector(n);
    const Vector v0 = w.factor.unwhiten(z0);
    Vector y0 = v0;
    for (int i = 0; i < n; ++i) y0(i) += sigma_ * rng.normal();
    Matrix b = w.factor.k;
    b.diagonal().array() += sigma_ * sigma_;
    const Vector v = v0 + w.factor.k * Eigen::LLT<Matrix>(b).solve(responses_ - y0);
    return w.factor.llt.matrixL().solve(v);
  }

  const PointList& anchors() const { return anchors_; }
  int n_anchors() const { return static_cast<int>(anchors_.size()); }

  PatternWork prepare(int b, double a, const Matrix& q) const {
    PatternWork w;
    w.b = b;
    w.a = a;
    w.q = q;
    w.projected.reserve(anchors_.size());
    for (const Vector& x : anchors_) w.projected.push_back(a * (q * x).head(b));
    if (!anchors_.empty()) w.factor = gp::gram(w.projected, gp::SEKernel{1.0}, cfg_.jitter);
    if (setting_.kind == model::SettingKind::density && !data_points_.empty()) {
      w.cross_data = cross(w, data_points_);
      w.cross_zgrid = cross(w, zgrid_);
    }
    return w;
  }

  double loglik(const PatternWork& w, const Vector& values) const {
    if (cfg_.likelihood_disabled) return 0.0;
    if (setting_.kind == model::SettingKind::density) {
      const Vector alpha = w.factor.solve(values);
      const Vector w_data = w.cross_data * alpha;
      const Vector w_z = w.cross_zgrid * alpha;
      // shared z-grid: the QMC noise in log Z cancels across states
      const double log_z = log_volume_ + std::log(w_z.array().exp().mean());
      return w_data.sum() - data_points_.size() * log_z;
    }
    double acc = gauss_const_;
    for (int i = 0; i < responses_.size(); ++i) {
      const double r = responses_(i) - values(i);
      acc -= inv_2s2_ * r * r;
    }
    return acc;
  }

 private:
  Matrix cross(const PatternWork& w, const PointList& pts) const {
    const int m = static_cast<int>(w.projected.size());
    Matrix c(pts.size(), m);
    const gp::SEKernel kernel{1.0};
    for (std::size_t i = 0; i < pts.size(); ++i) {
      const Vector p = w.a * (w.q * pts[i]).head(w.b);
      for (int j = 0; j < m; ++j) c(i, j) = kernel(p, w.projected[j]);
    }
    return c;
  }

  model::Setting setting_;
  ChainConfig cfg_;
  PointList anchors_;
  PointList data_points_;
  PointList zgrid_;
  Vector responses_;
  double log_volume_ = 0.0;
  double gauss_const_ = 0.0;
  double inv_2s2_ = 0.0;
  double sigma_ = 1.0;
};

inline Matrix gaussian_skew(int d, Rng& rng) {
  const Matrix g = rng.normal_matrix(d, d);
  return (g - g.transpose()) / std::sqrt(2.0);
}

inline Matrix reorthonormalize(const Matrix& q, double* drift) {
  const int d = static_cast<int>(q.rows());
  if (drift)
    *drift = std::max(*drift, (q.transpose() * q - Matrix::Identity(d, d)).cwiseAbs().maxCoeff());
  Eigen::HouseholderQR<Matrix> qr(q);
  Matrix out = qr.householderQ();
  const Matrix r = qr.matrixQR();
  for (int j = 0; j < d; ++j)
    if (r(j, j) < 0.0) out.col(j) = -out.col(j);
  return out;
}

}  // namespace detail

/// Metropolis-within-Gibbs over (b, q, a, latent) with the four reversible
/// moves: elliptical latent update on the whitened coordinates, log random
/// walk on a against the exponential-construction prior, geodesic step on q
/// (with a component flip so the chain covers all of O(d)), and a reflecting
/// +-1 walk on b with a fresh whitened block as independence proposal. The
/// prior on (q, z) is the reference measure in whitened coordinates, so only
/// the likelihood and the (b, a) prior terms enter the acceptance ratios.
inline Chain mcmc_run(const model::Dataset& data, const model::Setting& setting,
                      const model::HierarchicalPrior& prior, const ChainConfig& cfg) {
  cfg.validate();
  prior.validate();
  const detail::LikelihoodModel like(data, setting, cfg);
  const int d = prior.ambient_dim;
  require(data.size() == 0 || data.dim() == d, "mcmc: data dimension != prior dimension");
  const int m = like.n_anchors();
  Rng rng(cfg.seed);

  Chain chain;
  chain.anchors = like.anchors();
  chain.kind = setting.kind;
  chain.config = cfg;

  // state
  int b = 1;
  double a = 1.5;
  Matrix q;
  Vector z, values;
  detail::PatternWork work;
  double ll = 0.0, lp = 0.0;

  const auto log_prior_ba = [&prior](int bb, double aa) {
    return prior.log_dim_pmf(bb) + prior.log_rescale_density(bb, aa);
  };

  bool initialized = false;
  for (int attempt = 0; attempt < 10 && !initialized; ++attempt) {
    b = cfg.init_b.value_or(prior.sample_dim(rng));
    a = cfg.init_a.value_or(prior.sample_rescale(b, rng));
    q = cfg.init_q ? *cfg.init_q : lingeom::haar_sample(d, rng).matrix();
    z = rng.normal_vector(m);
    work = like.prepare(b, a, q);
    values = m > 0 ? Vector(work.factor.unwhiten(z)) : Vector();
    ll = like.loglik(work, values);
    lp = log_prior_ba(b, a);
    initialized = std::isfinite(ll) && std::isfinite(lp);
  }
  if (!initialized)
    throw numerical_error("mcmc: non-finite log-posterior after 10 prior re-initializations");

  double step_q = cfg.step_q;
  long q_moves_accepted = 0;
  const Matrix flip = [&] {
    Matrix j = Matrix::Identity(d, d);
    j(d - 1, d - 1) = -1.0;
    return j;
  }();

  chain.draws.reserve(static_cast<std::size_t>((cfg.n_iter - cfg.burn_in + cfg.thin - 1) / cfg.thin));

  for (long iter = 0; iter < cfg.n_iter; ++iter) {
    // (i) elliptical update of the whitened latent block
    if (m > 0) {
      const Vector nu = rng.normal_vector(m);
      const double threshold = ll + std::log(rng.uniform_pos());
      double theta = rng.uniform(0.0, 2.0 * M_PI);
      double lo = theta - 2.0 * M_PI, hi = theta;
      while (true) {
        ++chain.ess_stats.proposed;
        const Vector z_prop = z * std::cos(theta) + nu * std::sin(theta);
        const Vector v_prop = work.factor.unwhiten(z_prop);
        const double ll_prop = like.loglik(work, v_prop);
        if (ll_prop > threshold || (hi - lo) < 1e-12) {
          z = z_prop;
          values = v_prop;
          ll = ll_prop;
          break;
        }
        (theta < 0.0 ? lo : hi) = theta;
        theta = rng.uniform(lo, hi);
      }
      ++chain.ess_stats.accepted;
    }

    // (ii) rescale move: log random walk, Jacobian a'/a
    if (rng.uniform() < cfg.move_prob_a) {
      ++chain.a_stats.proposed;
      const double a_prop = a * std::exp(cfg.step_a * rng.normal());
      if (a_prop > 1.0) {
        detail::PatternWork w_prop = like.prepare(b, a_prop, q);
        const Vector v_prop = m > 0 ? Vector(w_prop.factor.unwhiten(z)) : Vector();
        const double ll_prop = like.loglik(w_prop, v_prop);
        const double lp_prop = log_prior_ba(b, a_prop);
        const double log_ratio = ll_prop + lp_prop - ll - lp + std::log(a_prop / a);
        if (std::isfinite(ll_prop) && std::log(rng.uniform_pos()) <= log_ratio) {
          a = a_prop;
          work = std::move(w_prop);
          values = v_prop;
          ll = ll_prop;
          lp = lp_prop;
          ++chain.a_stats.accepted;
        }
      }
    }

    // (iii) orientation move: q' = q exp(step Omega) J^s; the increment law
    // is symmetric and the Haar prior is the reference, so the acceptance is
    // the bare likelihood ratio (latent kept whitened).
    if (rng.uniform() < cfg.move_prob_q) {
      ++chain.q_stats.proposed;
      Matrix q_prop = q * (step_q * detail::gaussian_skew(d, rng)).exp();
      if (rng.uniform() < 0.5) q_prop = q_prop * flip;
      detail::PatternWork w_prop = like.prepare(b, a, q_prop);
      const Vector v_prop = m > 0 ? Vector(w_prop.factor.unwhiten(z)) : Vector();
      const double ll_prop = like.loglik(w_prop, v_prop);
      const bool accept = std::isfinite(ll_prop) && std::log(rng.uniform_pos()) <= ll_prop - ll;
      if (accept) {
        q = std::move(q_prop);
        work = std::move(w_prop);
        values = v_prop;
        ll = ll_prop;
        ++chain.q_stats.accepted;
        if (++q_moves_accepted % cfg.reorthonormalize_every == 0) {
          q = detail::reorthonormalize(q, &chain.max_q_drift);
          if (chain.max_q_drift >= 1e-8)
            throw numerical_error("mcmc: orthogonality drift " + format17(chain.max_q_drift));
          work = like.prepare(b, a, q);
          if (m > 0) values = work.factor.unwhiten(z);
          ll = like.loglik(work, values);
        }
      }
      if (cfg.adapt_step_q && iter < cfg.burn_in) {
        const double gamma = 1.0 / std::sqrt(1.0 + static_cast<double>(chain.q_stats.proposed));
        step_q *= std::exp(gamma * ((accept ? 1.0 : 0.0) - cfg.target_accept_q));
        step_q = std::clamp(step_q, 1e-4, 2.0);
      }
    }

    // (iv) dimension move: reflecting +-1 walk on b with a fresh whitened
    // block. Under a Gaussian likelihood the block proposal is the exact
    // conditional posterior and the acceptance uses the collapsed marginal;
    // otherwise (density, prior-only) the block comes from the prior, where
    // the two variants coincide in the zero-likelihood regime.
    if (prior.dim_cap > 1 && rng.uniform() < cfg.dim_move_prob) {
      ++chain.b_stats.proposed;
      const auto step_of = [cap = prior.dim_cap](int from, Rng& r) {
        if (from == 1) return 2;
        if (from == cap) return cap - 1;
        return r.uniform() < 0.5 ? from - 1 : from + 1;
      };
      const auto log_prob = [cap = prior.dim_cap](int from, int to) {
        (void)to;
        return (from == 1 || from == cap) ? 0.0 : std::log(0.5);
      };
      const int b_prop = step_of(b, rng);
      // Haar gauge rotation of the leading block: the likelihood at level
      // max(b, b') is invariant under it, and it decides which direction a
      // down-move drops (an up-move gains). Uniform in both directions, so
      // no Hastings term beyond the reflecting walk's.
      Matrix q_prop = q;
      const int gauge = std::max(b, b_prop);
      if (gauge > 1)
        q_prop.topRows(gauge) =
            lingeom::haar_sample(gauge, rng).matrix() * q.topRows(gauge);
      detail::PatternWork w_prop = like.prepare(b_prop, a, q_prop);
      const double lp_prop = log_prior_ba(b_prop, a);
      const double hastings = log_prob(b_prop, b) - log_prob(b, b_prop);
      if (like.can_collapse()) {
        const double log_ratio =
            lp_prop - lp + like.log_marginal(w_prop) - like.log_marginal(work) + hastings;
        if (std::isfinite(log_ratio) && std::log(rng.uniform_pos()) <= log_ratio) {
          b = b_prop;
          q = std::move(q_prop);
          z = like.conditional_whitened(w_prop, rng);
          values = w_prop.factor.unwhiten(z);
          ll = like.loglik(w_prop, values);
          work = std::move(w_prop);
          lp = lp_prop;
          ++chain.b_stats.accepted;
        }
      } else {
        const Vector z_prop = rng.normal_vector(m);
        const Vector v_prop = m > 0 ? Vector(w_prop.factor.unwhiten(z_prop)) : Vector();
        const double ll_prop = like.loglik(w_prop, v_prop);
        const double log_ratio = ll_prop + lp_prop - ll - lp + hastings;
        if (std::isfinite(ll_prop) && std::isfinite(lp_prop) &&
            std::log(rng.uniform_pos()) <= log_ratio) {
          b = b_prop;
          q = std::move(q_prop);
          z = z_prop;
          work = std::move(w_prop);
          values = v_prop;
          ll = ll_prop;
          lp = lp_prop;
          ++chain.b_stats.accepted;
        }
      }
    }

    if (cfg.debug_checks && (iter + 1) % 1000 == 0) {
      detail::PatternWork w_check = like.prepare(b, a, q);
      const Vector v_check = m > 0 ? Vector(w_check.factor.unwhiten(z)) : Vector();
      const double ll_check = like.loglik(w_check, v_check);
      if (std::abs(ll_check + lp - (ll + lp)) > 1e-6)
        throw numerical_error("mcmc: cached log-posterior drifted by " +
                              format17(std::abs(ll_check - ll)));
    }

    if (iter >= cfg.burn_in && (iter - cfg.burn_in) % cfg.thin == 0)
      chain.draws.push_back({iter, b, a, q, values, ll + lp});
  }
  chain.final_step_q = step_q;
  return chain;
}

/// One record per retained draw; every float carries 17 significant digits.
inline void write_chain_jsonl(const Chain& chain, std::ostream& os) {
  const auto vec = [](const auto& v, auto&& get, std::size_t n) {
    std::string s = "[";
    for (std::size_t i = 0; i < n; ++i) {
      if (i) s += ",";
      s += get(v, i);
    }
    return s + "]";
  };
  for (const DrawRecord& d : chain.draws) {
    os << "{\"iter\":" << d.iter << ",\"b\":" << d.b << ",\"a\":" << format17(d.a) << ",\"q\":"
       << vec(d.q,
              [](const Matrix& q, std::size_t i) {
                return format17(q(i / q.cols(), i % q.cols()));
              },
              static_cast<std::size_t>(d.q.size()))
       << ",\"latent\":"
       << vec(d.latent, [](const Vector& v, std::size_t i) { return format17(v(i)); },
              static_cast<std::size_t>(d.latent.size()))
       << ",\"log_post\":" << format17(d.log_post) << ",\"acc\":{\"latent\":"
       << format17(chain.ess_stats.rate()) << ",\"a\":" << format17(chain.a_stats.rate())
       << ",\"q\":" << format17(chain.q_stats.rate()) << ",\"b\":"
       << format17(chain.b_stats.rate()) << "}}\n";
  }
}

inline Chain read_chain_jsonl(std::istream& is) {
  Chain chain;
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    const auto j = nlohmann::json::parse(line);
    DrawRecord d;
    d.iter = j.at("iter").get<long>();
    d.b = j.at("b").get<int>();
    d.a = j.at("a").get<double>();
    const auto& qf = j.at("q");
    const int dim = static_cast<int>(std::lround(std::sqrt(double(qf.size()))));
    d.q.resize(dim, dim);
    for (int i = 0; i < dim * dim; ++i) d.q(i / dim, i % dim) = qf[i].get<double>();
    const auto& lat = j.at("latent");
    d.latent.resize(lat.size());
    for (std::size_t i = 0; i < lat.size(); ++i) d.latent(i) = lat[i].get<double>();
    d.log_post = j.at("log_post").get<double>();
    chain.draws.push_back(std::move(d));
  }
  return chain;
}

/// One hierarchical posterior state in domain terms: the sparsity pattern,
/// the latent field pinned to the draw's anchor values, and the cached
/// log-posterior.
struct HyperState {
  gp::SparsityPattern pattern;
  gp::LatentField latent;
  double log_post = 0.0;
};

inline HyperState hyper_state(const Chain& chain, std::size_t draw_index) {
  require(draw_index < chain.draws.size(), "hyper_state: draw index out of range");
  const DrawRecord& d = chain.draws[draw_index];
  const gp::SparsityPattern pattern(d.b, lingeom::Orthogonal::from_matrix(d.q), d.a);
  return {pattern, gp::field_from_values(pattern, chain.anchors, d.latent), d.log_post};
}

struct PosteriorSummary {
  int dstar = 0;
  std::vector<long> iters;
  std::vector<int> dims;
  std::vector<double> rescales;
  std::vector<double> function_error;  // per-setting metric against the truth
  std::vector<double> d1, d2, d3;
  std::vector<double> function_error_se;
  std::vector<double> log_post;
  double mass_dim_below = 0.0;        // posterior mass of {Gamma < d*}
  double median_function_error = 0.0;
  double median_d2_dim_ok = 0.0;      // median d2 over draws with Gamma >= d*
};

namespace detail {
inline double median(std::vector<double> v) {
  if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}
}  // namespace detail

/// Per-draw function-space error and subspace losses against the truth.
/// Fixed design reads the latent values at the design anchors; the other
/// settings evaluate draws on the integrator's point set by conditioning.
inline PosteriorSummary posterior_functionals(const Chain& chain,
                                              const model::GroundTruth& truth,
                                              const model::Setting& setting,
                                              const metrics::BallIntegrator* integrator = nullptr) {
  require(!chain.draws.empty(), "posterior_functionals: empty chain");
  PosteriorSummary s;
  s.dstar = truth.intrinsic_dim;
  const auto truth_frame = truth.central_subspace();

  Vector truth_at_anchors(chain.anchors.size());
  for (std::size_t i = 0; i < chain.anchors.size(); ++i)
    truth_at_anchors(static_cast<int>(i)) = truth(chain.anchors[i]);

  Vector truth_at_grid, ones_grid;
  const bool needs_grid = setting.kind != model::SettingKind::fixed_design;
  if (needs_grid) {
    require(integrator != nullptr, "posterior_functionals: setting needs a ball integrator");
    truth_at_grid.resize(integrator->n_points());
    for (int i = 0; i < integrator->n_points(); ++i)
      truth_at_grid(i) = truth(integrator->points()[i]);
    ones_grid = Vector::Ones(integrator->n_points());
  }

  int below = 0;
  std::vector<double> d2_dim_ok;
  for (std::size_t di = 0; di < chain.draws.size(); ++di) {
    const DrawRecord& draw = chain.draws[di];
    try {
      const auto q = lingeom::Orthogonal::from_matrix(draw.q);
      const auto frame = lingeom::SubspaceFrame::from_orientation(q, draw.b);
      s.iters.push_back(draw.iter);
      s.dims.push_back(draw.b);
      s.rescales.push_back(draw.a);
      s.log_post.push_back(draw.log_post);
      s.d1.push_back(lingeom::subspace_distance(lingeom::SubspaceLoss::d1, truth_frame, frame));
      s.d2.push_back(lingeom::subspace_distance(lingeom::SubspaceLoss::d2, truth_frame, frame));
      s.d3.push_back(lingeom::subspace_distance(lingeom::SubspaceLoss::d3, truth_frame, frame));
      if (draw.b < truth.intrinsic_dim) ++below;
      else d2_dim_ok.push_back(s.d2.back());

      double err = 0.0, err_se = 0.0;
      if (setting.kind == model::SettingKind::fixed_design) {
        err = metrics::empirical_l2(draw.latent, truth_at_anchors);
      } else {
        const gp::SparsityPattern pattern(draw.b, q, draw.a);
        const auto field = gp::field_from_values(pattern, chain.anchors, draw.latent);
        const Vector at_grid = gp::conditional_mean(field, integrator->points());
        if (setting.kind == model::SettingKind::random_design) {
          const auto mv = metrics::l2_design_values(at_grid, truth_at_grid, setting.truncation,
                                                    ones_grid / integrator->volume(), *integrator,
                                                    setting.design_density_min);
          err = mv.value;
          err_se = mv.mc_se;
        } else {
          const Vector p_draw =
              (at_grid.array() - std::log((at_grid.array().exp()).mean() * integrator->volume()))
                  .exp();
          const Vector p_true =
              (truth_at_grid.array() -
               std::log((truth_at_grid.array().exp()).mean() * integrator->volume()))
                  .exp();
          const auto mv = metrics::hellinger_values(p_draw, p_true, *integrator);
          err = mv.value;
          err_se = mv.mc_se;
        }
      }
      s.function_error.push_back(err);
      s.function_error_se.push_back(err_se);
    } catch (const error& e) {
      throw numerical_error("posterior_functionals: draw " + std::to_string(di) + ": " +
                            e.what());
    }
  }
  s.mass_dim_below = static_cast<double>(below) / static_cast<double>(chain.draws.size());
  s.median_function_error = detail::median(s.function_error);
  s.median_d2_dim_ok = detail::median(d2_dim_ok);
  return s;
}

/// Classic split-R-hat across chains for a scalar stream.
inline double split_rhat(const std::vector<std::vector<double>>& per_chain) {
  std::vector<std::vector<double>> halves;
  std::size_t len = std::numeric_limits<std::size_t>::max();
  for (const auto& c : per_chain) len = std::min(len, c.size());
  if (len < 4 || per_chain.empty()) return std::numeric_limits<double>::quiet_NaN();
  const std::size_t h = len / 2;
  for (const auto& c : per_chain) {
    halves.emplace_back(c.begin(), c.begin() + h);
    halves.emplace_back(c.begin() + h, c.begin() + 2 * h);
  }
  const double m = static_cast<double>(halves.size());
  const double n = static_cast<double>(h);
  double grand = 0.0;
  std::vector<double> means;
  for (const auto& seq : halves) {
    double mu = 0.0;
    for (double x : seq) mu += x;
    mu /= n;
    means.push_back(mu);
    grand += mu;
  }
  grand /= m;
  double w = 0.0, bvar = 0.0;
  for (std::size_t j = 0; j < halves.size(); ++j) {
    double s2 = 0.0;
    for (double x : halves[j]) s2 += (x - means[j]) * (x - means[j]);
    w += s2 / (n - 1.0);
    bvar += (means[j] - grand) * (means[j] - grand);
  }
  w /= m;
  bvar = n * bvar / (m - 1.0);
  if (w <= 0.0) return 1.0;
  return std::sqrt(((n - 1.0) / n * w + bvar / n) / w);
}

}  // namespace subgp::inference
