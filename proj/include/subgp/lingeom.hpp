#pragma once

#include "subgp/common.hpp"
#include "subgp/qmc.hpp"
#include "subgp/rng.hpp"

#include <Eigen/SVD>

#include <algorithm>
#include <cmath>
#include <iostream>
#include <ostream>

namespace subgp::lingeom {

/// A linear isometry of R^d, kept as its d x d matrix. Construction checks
/// Q^T Q = I (1e-10) and |det| = 1 (1e-8).
class Orthogonal {
 public:
  static Orthogonal from_matrix(Matrix q) {
    require(q.rows() == q.cols() && q.rows() >= 1, "Orthogonal: matrix must be square, d >= 1");
    const int d = static_cast<int>(q.rows());
    const double ortho_err = (q.transpose() * q - Matrix::Identity(d, d)).cwiseAbs().maxCoeff();
    require(ortho_err <= 1e-10, "Orthogonal: Q^T Q deviates from I by " + format17(ortho_err));
    const double det_err = std::abs(std::abs(q.determinant()) - 1.0);
    require(det_err <= 1e-8, "Orthogonal: |det Q| deviates from 1 by " + format17(det_err));
    return Orthogonal(std::move(q));
  }

  static Orthogonal identity(int d) { return Orthogonal(Matrix::Identity(d, d)); }

  int dim() const { return static_cast<int>(q_.rows()); }
  const Matrix& matrix() const { return q_; }
  Vector apply(const Vector& x) const { return q_ * x; }
  Vector apply_inverse(const Vector& x) const { return q_.transpose() * x; }
  double det_sign() const { return q_.determinant() < 0.0 ? -1.0 : 1.0; }

 private:
  explicit Orthogonal(Matrix q) : q_(std::move(q)) {}
  Matrix q_;
};

/// A b-dimensional subspace of R^d held as a d x b orthonormal frame.
/// Frames are a gauge choice; comparisons go through principal angles or
/// projection matrices only.
class SubspaceFrame {
 public:
  static SubspaceFrame from_orthonormal(Matrix f) {
    require(f.rows() >= f.cols() && f.cols() >= 1, "SubspaceFrame: need d >= b >= 1");
    const int b = static_cast<int>(f.cols());
    const double err = (f.transpose() * f - Matrix::Identity(b, b)).cwiseAbs().maxCoeff();
    require(err <= 1e-10, "SubspaceFrame: columns not orthonormal, deviation " + format17(err));
    SubspaceFrame s(std::move(f));
    const Matrix p = s.projector();
    const double idem = (p * p - p).cwiseAbs().maxCoeff();
    require(idem <= 1e-9, "SubspaceFrame: projector not idempotent, deviation " + format17(idem));
    return s;
  }

  /// Canonical frame for span(M): QR with positive diagonal of R.
  static SubspaceFrame span_of(const Matrix& m) {
    require(m.rows() >= m.cols() && m.cols() >= 1, "SubspaceFrame::span_of: need d >= b >= 1");
    const int d = static_cast<int>(m.rows()), b = static_cast<int>(m.cols());
    Eigen::HouseholderQR<Matrix> qr(m);
    Matrix q = qr.householderQ() * Matrix::Identity(d, b);
    Matrix r = qr.matrixQR().topRows(b).triangularView<Eigen::Upper>();
    for (int j = 0; j < b; ++j) {
      require(std::abs(r(j, j)) > 1e-12, "SubspaceFrame::span_of: rank-deficient input");
      if (r(j, j) < 0.0) q.col(j) = -q.col(j);
    }
    return from_orthonormal(std::move(q));
  }

  /// E_b = span(e_1, ..., e_b).
  static SubspaceFrame canonical(int d, int b) {
    return SubspaceFrame(Matrix::Identity(d, d).leftCols(b));
  }

  /// q^{-1}(E_b), the subspace oriented by the isometry q.
  static SubspaceFrame from_orientation(const Orthogonal& q, int b) {
    require(b >= 1 && b <= q.dim(), "SubspaceFrame::from_orientation: b out of range");
    return SubspaceFrame(q.matrix().transpose().leftCols(b));
  }

  int ambient_dim() const { return static_cast<int>(f_.rows()); }
  int sub_dim() const { return static_cast<int>(f_.cols()); }
  const Matrix& frame() const { return f_; }
  Matrix projector() const { return f_ * f_.transpose(); }

 private:
  explicit SubspaceFrame(Matrix f) : f_(std::move(f)) {}
  Matrix f_;
};

/// Exact Haar draw on O(d): QR of a standard Gaussian matrix with the signs
/// of R's diagonal absorbed into Q.
inline Orthogonal haar_sample(int d, Rng& rng) {
  require(d >= 1, "haar_sample: invalid dimension d = " + std::to_string(d));
  const Matrix g = rng.normal_matrix(d, d);
  Eigen::HouseholderQR<Matrix> qr(g);
  Matrix q = qr.householderQ();
  const Matrix r = qr.matrixQR();
  for (int j = 0; j < d; ++j)
    if (r(j, j) < 0.0) q.col(j) = -q.col(j);
  return Orthogonal::from_matrix(std::move(q));
}

/// Principal angles between two subspaces of the same ambient space, in
/// nonincreasing order; min(b1, b2) angles via singular values of F1^T F2
/// with cosines clamped to [0, 1]. Small angles are recovered from the
/// complementary sine SVD of (I - P1) F2, which keeps them accurate where
/// arccos loses half the significant digits.
inline Vector principal_angles(const SubspaceFrame& s1, const SubspaceFrame& s2) {
  if (s1.ambient_dim() != s2.ambient_dim())
    throw dimension_mismatch_error("principal_angles: ambient dims differ");
  const Matrix m = s1.frame().transpose() * s2.frame();
  Eigen::JacobiSVD<Matrix> cos_svd(m);
  const Matrix residual = s2.frame() - s1.frame() * m;
  Eigen::JacobiSVD<Matrix> sin_svd(residual);
  const Vector cosines = cos_svd.singularValues();  // nonincreasing
  const Vector sines = sin_svd.singularValues();    // nonincreasing, (b2 - k) leading ones
  const int k = static_cast<int>(cosines.size());
  const int extra = static_cast<int>(sines.size()) - k;
  Vector theta(k);
  for (int i = 0; i < k; ++i) {
    const double c = std::clamp(cosines(k - 1 - i), 0.0, 1.0);
    const double s = std::clamp(sines(extra + i), 0.0, 1.0);
    theta(i) = c * c > 0.5 ? std::asin(s) : std::acos(c);
  }
  return theta;  // theta(0) is the largest angle
}

enum class SubspaceLoss { d1, d2, d3 };

/// The three subspace losses. For equal dimensions d1 = d2 = 2 sin(theta_1/2)
/// (chord between the extremal principal vectors) and d3 = ||P - P'||_F =
/// sqrt(2 sum_i sin^2 theta_i). For unequal dimensions the same formulas over
/// the min(b1, b2) principal angles realize both minima of the extended loss,
/// so the value is 0 whenever one subspace contains the other.
inline double subspace_distance(SubspaceLoss loss, const SubspaceFrame& s1,
                                const SubspaceFrame& s2) {
  const Vector theta = principal_angles(s1, s2);
  switch (loss) {
    case SubspaceLoss::d1:
    case SubspaceLoss::d2:
      return 2.0 * std::sin(0.5 * theta(0));
    case SubspaceLoss::d3: {
      double acc = 0.0;
      for (int i = 0; i < theta.size(); ++i) {
        const double s = std::sin(theta(i));
        acc += s * s;
      }
      return std::sqrt(2.0 * acc);
    }
  }
  throw invalid_argument_error("subspace_distance: unknown loss");
}

/// Completes b orthonormal vectors g (within eps of the first b reference
/// vectors e_1..e_b) to a full orthonormal basis whose tail stays within
/// 2 sqrt(b) eps of the reference tail. The tail is the orthogonal polar
/// factor of the reference tail projected onto span(g)^perp, with the SVD
/// factors living in that complement.
inline Matrix complete_basis(const Matrix& g, const Matrix& e, double eps) {
  const int d = static_cast<int>(g.rows());
  const int b = static_cast<int>(g.cols());
  require(e.rows() == d && e.cols() == d, "complete_basis: reference basis must be d x d");
  require(b >= 1 && b <= d, "complete_basis: need 1 <= b <= d");
  require((g.transpose() * g - Matrix::Identity(b, b)).cwiseAbs().maxCoeff() <= 1e-10,
          "complete_basis: input vectors not orthonormal");
  for (int i = 0; i < b; ++i) {
    const double gap = (e.col(i) - g.col(i)).norm();
    if (gap > eps + 1e-12)
      std::cerr << "complete_basis: warning, ||e_" << i + 1 << " - g_" << i + 1 << "|| = "
                << format17(gap) << " exceeds eps = " << format17(eps) << "\n";
  }
  if (b == d) return g;

  const Matrix p_perp = Matrix::Identity(d, d) - g * g.transpose();
  const Matrix a = p_perp * e.rightCols(d - b);
  Eigen::JacobiSVD<Matrix> svd(a, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const double sigma_min = svd.singularValues().minCoeff();
  if (sigma_min <= 1e-10)
    throw numerical_error("complete_basis: projected block is rank deficient (sigma_min = " +
                          format17(sigma_min) + "); requires eps >= 1/sqrt(b)");
  Matrix out(d, d);
  out.leftCols(b) = g;
  out.rightCols(d - b) = svd.matrixU() * svd.matrixV().transpose();
  return out;
}

/// A finite net of orthonormal b-tuples covering the Stiefel-like set at the
/// stored radius, with the proved cardinality bound it must respect.
struct NetSpec {
  int ambient_dim = 0;
  int tuple_size = 0;
  double radius = 0.0;
  std::vector<Matrix> points;  // each d x b, orthonormal columns
  double cardinality_bound = 0.0;

  std::size_t size() const { return points.size(); }

  /// One vector per row with a tuple index column: tuple,vec,x1,...,xd.
  void write_csv(std::ostream& os) const {
    os << "tuple,vec";
    for (int k = 1; k <= ambient_dim; ++k) os << ",x" << k;
    os << "\n";
    for (std::size_t t = 0; t < points.size(); ++t)
      for (int j = 0; j < tuple_size; ++j) {
        os << t << "," << j;
        for (int k = 0; k < ambient_dim; ++k) os << "," << format17(points[t](k, j));
        os << "\n";
      }
  }
};

namespace detail {
/// Per-vector sup distance between two d x b tuples.
inline double tuple_distance(const Matrix& a, const Matrix& b) {
  double worst = 0.0;
  for (int j = 0; j < a.cols(); ++j) worst = std::max(worst, (a.col(j) - b.col(j)).norm());
  return worst;
}
}  // namespace detail

struct NetLimits {
  int max_ambient_dim = 4;
  int max_tuple_size = 2;
};

/// Greedy maximal eps/2-packing of S^{d-1} from a random candidate stream;
/// a maximal packing at radius eps/2 is an eps-covering. Termination after
/// 200 d consecutive rejections. Cardinality respects the packing bound
/// sqrt(pi d / 2) (8/eps)^{d-1} (d = 1: S^0 has exactly two points).
inline NetSpec sphere_net(int d, double eps, Rng& rng) {
  require(d >= 1, "sphere_net: invalid dimension");
  require(eps > 0.0 && eps <= 1.0, "sphere_net: radius must lie in (0, 1]");
  NetSpec net;
  net.ambient_dim = d;
  net.tuple_size = 1;
  net.radius = eps;
  net.cardinality_bound =
      d == 1 ? 2.0 : std::sqrt(M_PI * d / 2.0) * std::pow(8.0 / eps, d - 1);
  const int max_streak = 200 * d;
  int streak = 0;
  while (streak < max_streak) {
    const Vector cand = qmc::sample_unit_sphere(d, rng);
    bool ok = true;
    for (const Matrix& p : net.points)
      if ((p.col(0) - cand).norm() < 0.5 * eps) {
        ok = false;
        break;
      }
    if (ok) {
      net.points.push_back(cand);
      streak = 0;
    } else {
      ++streak;
    }
  }
  if (static_cast<double>(net.size()) > net.cardinality_bound)
    throw numerical_error("sphere_net: packing exceeded its cardinality bound");
  return net;
}

/// Same greedy packing over b-tuples of orthonormal vectors (Haar columns as
/// candidates) under the per-vector sup distance. Desk scale only; the
/// cardinality bound (pi d / 2)^{b/2} (8/eps)^{b(d-1)} explodes beyond it.
inline NetSpec stiefel_net(int d, int b, double eps, Rng& rng, const NetLimits& limits = {}) {
  require(b >= 1 && b <= d, "stiefel_net: need 1 <= b <= d");
  require(eps > 0.0 && eps <= 1.0, "stiefel_net: radius must lie in (0, 1]");
  if (d > limits.max_ambient_dim || b > limits.max_tuple_size)
    throw invalid_argument_error(
        "stiefel_net: refused, d = " + std::to_string(d) + ", b = " + std::to_string(b) +
        " exceeds the configured desk scale (d <= " + std::to_string(limits.max_ambient_dim) +
        ", b <= " + std::to_string(limits.max_tuple_size) + "); the cardinality bound explodes");
  if (b == 1) return sphere_net(d, eps, rng);

  NetSpec net;
  net.ambient_dim = d;
  net.tuple_size = b;
  net.radius = eps;
  net.cardinality_bound =
      std::pow(M_PI * d / 2.0, 0.5 * b) * std::pow(8.0 / eps, double(b) * (d - 1));
  const int max_streak = 200 * d;
  int streak = 0;
  while (streak < max_streak) {
    const Matrix cand = haar_sample(d, rng).matrix().leftCols(b);
    bool ok = true;
    for (const Matrix& p : net.points)
      if (detail::tuple_distance(p, cand) < 0.5 * eps) {
        ok = false;
        break;
      }
    if (ok) {
      net.points.push_back(cand);
      streak = 0;
    } else {
      ++streak;
    }
  }
  if (static_cast<double>(net.size()) > net.cardinality_bound)
    throw numerical_error("stiefel_net: packing exceeded its cardinality bound");
  return net;
}

/// Frobenius-relaxed gap to the orbit {q* q' : q' fixes (q*)^{-1}(E_b)
/// pointwise}. Writing N = q (q*)^T in the adapted basis, the stabilizer
/// contributes an orthogonal Procrustes problem on the complement block,
/// solved in closed form through the nuclear norm. Since op-norm <= Frobenius
/// norm, (gap <= eps) is a sufficient (conservative) membership certificate.
inline double qset_frobenius_gap(const Orthogonal& qstar, int b, const Orthogonal& q) {
  const int d = qstar.dim();
  require(q.dim() == d, "qset_frobenius_gap: dimension mismatch");
  require(b >= 1 && b <= d, "qset_frobenius_gap: b out of range");
  const Matrix n = q.matrix() * qstar.matrix().transpose();
  const int c = d - b;
  double sq = (Matrix::Identity(b, b) - n.topLeftCorner(b, b)).squaredNorm() +
              n.bottomLeftCorner(c, b).squaredNorm() + n.topRightCorner(b, c).squaredNorm();
  if (c > 0) {
    const Matrix block = n.bottomRightCorner(c, c);
    Eigen::JacobiSVD<Matrix> svd(block);
    sq += block.squaredNorm() + c - 2.0 * svd.singularValues().sum();
  }
  return std::sqrt(std::max(sq, 0.0));
}

struct HaarMassResult {
  double estimate = 0.0;  // MC fraction of Haar draws certified as members
  double bound = 0.0;     // lower bound on the true mass
  double mc_se = 0.0;
  int n_member = 0;
  int n_mc = 0;
};

/// Monte-Carlo check of the Haar-mass lower bound
///   (2/(pi d))^{b/2} (eps / (16 sqrt(b d)))^{b(d-1)}.
/// Membership uses the conservative Frobenius certificate, so the reported
/// estimate underestimates the true mass; eps >= 2 certifies everything
/// outright because the operator-norm diameter of O(d) is 2. When the MC
/// error is small enough to resolve the bound, estimate < bound is a hard
/// failure.
inline HaarMassResult haar_mass_check(const Orthogonal& qstar, int b, double eps, int n_mc,
                                      Rng& rng) {
  require(eps > 0.0, "haar_mass_check: eps must be positive");
  require(n_mc >= 1, "haar_mass_check: n_mc must be positive");
  const int d = qstar.dim();
  require(b >= 1 && b <= d, "haar_mass_check: b out of range");
  HaarMassResult res;
  res.n_mc = n_mc;
  res.bound = std::pow(2.0 / (M_PI * d), 0.5 * b) *
              std::pow(eps / (16.0 * std::sqrt(double(b) * d)), double(b) * (d - 1));
  for (int i = 0; i < n_mc; ++i) {
    const Orthogonal theta = haar_sample(d, rng);
    if (eps >= 2.0 || qset_frobenius_gap(qstar, b, theta) <= eps) ++res.n_member;
  }
  res.estimate = static_cast<double>(res.n_member) / n_mc;
  res.mc_se = std::sqrt(std::max(res.estimate * (1.0 - res.estimate), 0.0) / n_mc);
  const double worst_case_se = 0.5 / std::sqrt(static_cast<double>(n_mc));
  if (worst_case_se < 0.5 * res.bound && res.estimate < res.bound)
    throw numerical_error("haar_mass_check: estimate " + format17(res.estimate) +
                          " fell below the bound " + format17(res.bound) +
                          " with the MC error resolved");
  return res;
}

}  // namespace subgp::lingeom
