#pragma once

#include "subgp/common.hpp"
#include "subgp/lingeom.hpp"
#include "subgp/rng.hpp"

#include <Eigen/Cholesky>

#include <cmath>
#include <utility>

namespace subgp::gp {

/// Squared exponential kernel k(s, t) = exp(-a^2 ||s - t||^2). The projected
/// process pre-scales its inputs by the rescaling, so it uses a = 1 here.
struct SEKernel {
  double inv_lengthscale = 1.0;

  double operator()(const Vector& s, const Vector& t) const {
    const double a2 = inv_lengthscale * inv_lengthscale;
    return std::exp(-a2 * (s - t).squaredNorm());
  }
};

/// Sparsity pattern (a, b, q): rescaling, intrinsic dimension, orientation.
struct SparsityPattern {
  int ambient_dim = 0;
  int intrinsic_dim = 0;
  lingeom::Orthogonal orientation;
  double rescale = 1.0;

  SparsityPattern(int b, lingeom::Orthogonal q, double a)
      : ambient_dim(q.dim()), intrinsic_dim(b), orientation(std::move(q)), rescale(a) {
    require(b >= 1 && b <= ambient_dim, "SparsityPattern: need 1 <= b <= d");
    require(a > 0.0, "SparsityPattern: rescale must be positive");
  }

  /// a * (q x)_b, the intrinsic coordinates the process actually sees.
  Vector projected_input(const Vector& x) const {
    return rescale * (orientation.matrix() * x).head(intrinsic_dim);
  }

  /// Orthogonal projector R = q^{-1} diag(b) q onto q^{-1}(E_b).
  Matrix projector() const {
    const Matrix& q = orientation.matrix();
    return q.transpose().leftCols(intrinsic_dim) * q.topRows(intrinsic_dim);
  }

  /// Upsilon(t) = (1/a) q^{-1}(t^b): pulls an intrinsic point back to the
  /// ambient subspace. projected_input(upsilon(t)) = t exactly.
  Vector upsilon(const Vector& intrinsic) const {
    Vector padded = Vector::Zero(ambient_dim);
    padded.head(intrinsic_dim) = intrinsic;
    return orientation.matrix().transpose() * padded / rescale;
  }

  lingeom::SubspaceFrame subspace() const {
    return lingeom::SubspaceFrame::from_orientation(orientation, intrinsic_dim);
  }
};

inline Vector projected_input(const Vector& x, const SparsityPattern& pattern) {
  return pattern.projected_input(x);
}

/// Gram matrix plus its Cholesky factor. Jitter escalates x10 on
/// factorization failure, up to three retries.
struct GramFactor {
  Matrix k;  // includes the jitter on the diagonal
  Eigen::LLT<Matrix> llt;
  double jitter_used = 0.0;

  int size() const { return static_cast<int>(k.rows()); }
  Matrix lower() const { return llt.matrixL(); }
  Vector unwhiten(const Vector& z) const { return llt.matrixL() * z; }
  Vector solve(const Vector& rhs) const { return llt.solve(rhs); }
  Matrix solve(const Matrix& rhs) const { return llt.solve(rhs); }
};

inline Matrix gram_matrix(const PointList& pts, const SEKernel& kernel) {
  const int m = static_cast<int>(pts.size());
  Matrix k(m, m);
  for (int i = 0; i < m; ++i) {
    k(i, i) = 1.0;
    for (int j = i + 1; j < m; ++j) {
      const double v = kernel(pts[i], pts[j]);
      k(i, j) = v;
      k(j, i) = v;
    }
  }
  return k;
}

inline GramFactor gram(const PointList& pts, const SEKernel& kernel, double jitter = 1e-8) {
  require(!pts.empty(), "gram: need at least one point");
  require(jitter >= 0.0, "gram: jitter must be nonnegative");
  GramFactor out;
  out.k = gram_matrix(pts, kernel);
  const int m = out.size();
  double j = jitter;
  for (int attempt = 0; attempt < 4; ++attempt) {
    Matrix kj = out.k;
    kj.diagonal().array() += j;
    out.llt.compute(kj);
    if (out.llt.info() == Eigen::Success) {
      out.k = std::move(kj);
      out.jitter_used = j;
      return out;
    }
    j = (j == 0.0) ? 1e-10 : j * 10.0;
  }
  throw numerical_error("gram: Gram matrix of " + std::to_string(m) +
                        " points stayed non-PSD after jitter escalation to " + format17(j));
}

/// The projected process held by its values at anchor points. Anchors whose
/// projected inputs coincide bit-for-bit share one latent coordinate, which
/// is what makes fiber constancy exact rather than jitter-blurred; the
/// whitened block and the Gram factor live on the deduplicated points.
struct LatentField {
  SparsityPattern pattern;
  PointList anchors;
  PointList projected;          // per-anchor projected_input images
  std::vector<int> rep;         // anchor -> index into unique_projected
  PointList unique_projected;
  GramFactor factor;            // Gram of the unique projected points
  Vector whitened;              // length = unique count
  Vector values;                // per anchor; duplicates are bit-identical
};

namespace detail {
inline LatentField field_skeleton(const SparsityPattern& pattern, PointList anchors,
                                  double jitter) {
  require(!anchors.empty(), "LatentField: need at least one anchor");
  LatentField f{pattern, std::move(anchors), {}, {}, {}, {}, {}, {}};
  f.projected.reserve(f.anchors.size());
  for (const Vector& x : f.anchors) f.projected.push_back(pattern.projected_input(x));
  f.rep.resize(f.anchors.size());
  for (std::size_t i = 0; i < f.projected.size(); ++i) {
    int found = -1;
    for (std::size_t u = 0; u < f.unique_projected.size() && found < 0; ++u)
      if (f.unique_projected[u] == f.projected[i]) found = static_cast<int>(u);
    if (found < 0) {
      found = static_cast<int>(f.unique_projected.size());
      f.unique_projected.push_back(f.projected[i]);
    }
    f.rep[i] = found;
  }
  f.factor = gram(f.unique_projected, SEKernel{1.0}, jitter);
  return f;
}

inline void expand_values(LatentField& f, const Vector& unique_values) {
  f.values.resize(static_cast<int>(f.anchors.size()));
  for (std::size_t i = 0; i < f.anchors.size(); ++i) f.values(i) = unique_values(f.rep[i]);
}
}  // namespace detail

/// Prior draw of the field at the anchors: values = L z on the unique
/// projected points, replicated along fibers.
inline LatentField sample_path(const SparsityPattern& pattern, PointList anchors, Rng& rng,
                               double jitter = 1e-8) {
  LatentField f = detail::field_skeleton(pattern, std::move(anchors), jitter);
  f.whitened = rng.normal_vector(f.factor.size());
  detail::expand_values(f, f.factor.unwhiten(f.whitened));
  return f;
}

/// Field pinned to given anchor values; the whitened block is recovered by a
/// triangular solve so values = L z holds on the unique points.
inline LatentField field_from_values(const SparsityPattern& pattern, PointList anchors,
                                     const Vector& values, double jitter = 1e-8) {
  LatentField f = detail::field_skeleton(pattern, std::move(anchors), jitter);
  require(values.size() == static_cast<int>(f.anchors.size()),
          "field_from_values: value count != anchor count");
  Vector unique_values(f.factor.size());
  for (std::size_t i = 0; i < f.anchors.size(); ++i) unique_values(f.rep[i]) = values(i);
  f.whitened = f.factor.llt.matrixL().solve(unique_values);
  detail::expand_values(f, unique_values);
  return f;
}

struct Predictive {
  Vector mean;
  Matrix cov;
};

/// Standard GP conditioning on the anchor values, all Gram blocks on
/// projected inputs. Negative predictive variances within -1e-9 are clamped.
inline Predictive condition(const LatentField& field, const PointList& query) {
  const int m = field.factor.size();
  const int k = static_cast<int>(query.size());
  require(k >= 1, "condition: empty query");
  const SEKernel kernel{1.0};
  Vector unique_values(m);
  for (std::size_t i = 0; i < field.anchors.size(); ++i)
    unique_values(field.rep[i]) = field.values(i);
  Matrix cross(m, k);
  PointList qproj;
  qproj.reserve(k);
  for (const Vector& x : query) qproj.push_back(field.pattern.projected_input(x));
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < k; ++j) cross(i, j) = kernel(field.unique_projected[i], qproj[j]);
  const Matrix kinv_cross = field.factor.solve(cross);
  Predictive out;
  out.mean = kinv_cross.transpose() * unique_values;
  out.cov = gram_matrix(qproj, kernel) - cross.transpose() * kinv_cross;
  for (int j = 0; j < k; ++j)
    if (out.cov(j, j) < 0.0 && out.cov(j, j) > -1e-9) out.cov(j, j) = 0.0;
  return out;
}

/// Mean-only conditioning; the workhorse for off-anchor evaluation.
inline Vector conditional_mean(const LatentField& field, const PointList& query) {
  const int m = field.factor.size();
  const int k = static_cast<int>(query.size());
  const SEKernel kernel{1.0};
  Vector unique_values(m);
  for (std::size_t i = 0; i < field.anchors.size(); ++i)
    unique_values(field.rep[i]) = field.values(i);
  const Vector alpha = field.factor.solve(unique_values);
  Vector mean(k);
  for (int j = 0; j < k; ++j) {
    const Vector qp = field.pattern.projected_input(query[j]);
    double acc = 0.0;
    for (int i = 0; i < m; ++i) acc += kernel(field.unique_projected[i], qp) * alpha(i);
    mean(j) = acc;
  }
  return mean;
}

struct RkhsApprox {
  double norm2 = 0.0;
  Vector values;      // approximant on the grid
  double ridge = 0.0; // ridge weight the bisection settled on
  double sup_error = 0.0;
};

/// Upper-bound surrogate of the concentration function's RKHS term: kernel
/// ridge interpolation of f on the grid with the ridge weight bisected so the
/// grid sup-error sits just below eps; returns the representer norm
/// alpha^T K alpha. This bounds the true infimum from above because the
/// returned h is one feasible element, and the sup-norm itself is a grid
/// surrogate.
inline RkhsApprox rkhs_min_norm(const Vector& f_on_grid, const PointList& grid,
                                const SEKernel& kernel, double eps) {
  const int m = static_cast<int>(grid.size());
  require(m >= 1 && f_on_grid.size() == m, "rkhs_min_norm: grid/value size mismatch");
  require(eps > 0.0, "rkhs_min_norm: eps must be positive");
  RkhsApprox out;
  const double sup_f = f_on_grid.cwiseAbs().maxCoeff();
  if (eps >= sup_f) {
    out.values = Vector::Zero(m);
    out.sup_error = sup_f;  // h = 0 is feasible
    return out;
  }
  const Matrix k = gram_matrix(grid, kernel);
  const auto eval = [&](double ridge) {
    Matrix kr = k;
    kr.diagonal().array() += ridge;
    const Vector alpha = kr.ldlt().solve(f_on_grid);
    const Vector h = k * alpha;
    return std::pair<double, Vector>{(h - f_on_grid).cwiseAbs().maxCoeff(), alpha};
  };
  double lo = 1e-13, hi = 1e8;  // sup-error is increasing in the ridge weight
  if (eval(hi).first < eps) {
    lo = hi;
  } else {
    for (int it = 0; it < 80; ++it) {
      const double mid = std::sqrt(lo * hi);
      (eval(mid).first < eps ? lo : hi) = mid;
    }
  }
  const auto [err, alpha] = eval(lo);
  out.ridge = lo;
  out.sup_error = err;
  out.values = k * alpha;
  out.norm2 = alpha.dot(out.values);
  return out;
}

struct SmallBall {
  double neglog = 0.0;
  double se = 0.0;  // delta-method standard error of -log p
  int hits = 0;
  int n_mc = 0;
};

/// -log P(sup |W^{a,b,q}| < eps), the sup taken over a grid of the intrinsic
/// ball (the ambient sup equals the intrinsic one by fiber constancy).
inline SmallBall small_ball_neglog(const SparsityPattern& pattern, double eps,
                                   const PointList& intrinsic_grid, int n_mc, Rng& rng) {
  require(eps > 0.0 && eps <= 4.0, "small_ball_neglog: eps must lie in (0, 4]");
  require(n_mc >= 1, "small_ball_neglog: n_mc must be positive");
  PointList scaled;
  scaled.reserve(intrinsic_grid.size());
  for (const Vector& t : intrinsic_grid) {
    require(t.size() == pattern.intrinsic_dim, "small_ball_neglog: grid must be intrinsic");
    scaled.push_back(pattern.rescale * t);
  }
  const GramFactor factor = gram(scaled, SEKernel{1.0});
  const Matrix l = factor.lower();
  const int m = factor.size();
  SmallBall out;
  out.n_mc = n_mc;
  for (int i = 0; i < n_mc; ++i) {
    const Vector v = l * rng.normal_vector(m);
    if (v.cwiseAbs().maxCoeff() < eps) ++out.hits;
  }
  if (out.hits < 10)
    throw numerical_error("small_ball_neglog: only " + std::to_string(out.hits) +
                          " of " + std::to_string(n_mc) +
                          " paths landed in the ball; enlarge eps or n_mc");
  const double p = static_cast<double>(out.hits) / n_mc;
  out.neglog = -std::log(p);
  out.se = std::sqrt((1.0 - p) / (static_cast<double>(n_mc) * p));
  return out;
}

}  // namespace subgp::gp
