#include "subgp/gp.hpp"

#include "support/stats.hpp"

#include <catch2/catch_amalgamated.hpp>

#include <cmath>

using namespace subgp;
using namespace subgp::gp;
using Catch::Approx;

namespace {

// Textbook GP conditioning in extended precision, straight dense inverse;
// independent of the library's Cholesky path.
void oracle_condition(const std::vector<long double>& pts, const std::vector<long double>& vals,
                      long double jitter, const std::vector<long double>& query,
                      std::vector<long double>& mean_out, std::vector<long double>& var_out) {
  const int m = static_cast<int>(pts.size());
  std::vector<std::vector<long double>> a(m, std::vector<long double>(2 * m, 0.0L));
  for (int i = 0; i < m; ++i) {
    for (int j = 0; j < m; ++j) {
      const long double d = pts[i] - pts[j];
      a[i][j] = std::exp(-d * d);
    }
    a[i][i] += jitter;
    a[i][m + i] = 1.0L;
  }
  for (int col = 0; col < m; ++col) {  // Gauss-Jordan
    int piv = col;
    for (int r = col + 1; r < m; ++r)
      if (std::abs(a[r][col]) > std::abs(a[piv][col])) piv = r;
    std::swap(a[piv], a[col]);
    const long double p = a[col][col];
    for (int c = 0; c < 2 * m; ++c) a[col][c] /= p;
    for (int r = 0; r < m; ++r) {
      if (r == col) continue;
      const long double f = a[r][col];
      for (int c = 0; c < 2 * m; ++c) a[r][c] -= f * a[col][c];
    }
  }
  mean_out.clear();
  var_out.clear();
  for (long double q : query) {
    std::vector<long double> k(m);
    for (int i = 0; i < m; ++i) {
      const long double d = q - pts[i];
      k[i] = std::exp(-d * d);
    }
    long double mu = 0.0L, reduction = 0.0L;
    for (int i = 0; i < m; ++i) {
      long double kinv_k = 0.0L;
      for (int j = 0; j < m; ++j) kinv_k += a[i][m + j] * k[j];
      mu += kinv_k * vals[i];
      reduction += kinv_k * k[i];
    }
    mean_out.push_back(mu);
    var_out.push_back(1.0L - reduction);
  }
}

}  // namespace

TEST_CASE("projected_input: identity pattern and projector constancy", "[gp]") {
  Rng rng(31);
  const Vector x = qmc::sample_unit_ball(3, rng);
  const SparsityPattern ident(3, lingeom::Orthogonal::identity(3), 1.0);
  CHECK((ident.projected_input(x) - x).cwiseAbs().maxCoeff() == 0.0);

  const SparsityPattern pattern(2, lingeom::haar_sample(3, rng), 1.7);
  const Matrix r = pattern.projector();
  CHECK((r * r - r).cwiseAbs().maxCoeff() <= 1e-9);
  CHECK((pattern.projected_input(x) - pattern.projected_input(r * x)).cwiseAbs().maxCoeff() <=
        1e-12);
  CHECK((pattern.projected_input(pattern.upsilon(Vector::Constant(2, 0.2))) -
         Vector::Constant(2, 0.2))
            .cwiseAbs()
            .maxCoeff() <= 1e-12);
}

TEST_CASE("projected process: intrinsic covariance matches the kernel", "[gp][slow]") {
  Rng rng(32);
  const SparsityPattern pattern(1, lingeom::haar_sample(3, rng), 2.0);
  Vector x(1), y(1);
  x << 0.4;
  y << -0.3;
  PointList anchors = {pattern.upsilon(x), pattern.upsilon(y)};
  const int n = 20000;
  std::vector<double> products;
  for (int i = 0; i < n; ++i) {
    const auto field = sample_path(pattern, anchors, rng);
    products.push_back(field.values(0) * field.values(1));
  }
  const double cov = teststat::mean_of(products);
  double sd = 0.0;
  for (double p : products) sd += (p - cov) * (p - cov);
  sd = std::sqrt(sd / (n - 1.0) / n);
  const double expected = std::exp(-(x - y).squaredNorm());
  CHECK(std::abs(cov - expected) <= 3.0 * sd);
}

TEST_CASE("projected process: law does not depend on the orientation", "[gp][slow]") {
  Rng rng(33);
  Vector x(1), y(1);
  x << 0.5;
  y << 0.1;
  double cov[2], se[2];
  for (int which = 0; which < 2; ++which) {
    const SparsityPattern pattern(1, lingeom::haar_sample(3, rng), 2.0);
    PointList anchors = {pattern.upsilon(x), pattern.upsilon(y)};
    std::vector<double> products;
    for (int i = 0; i < 10000; ++i) {
      const auto field = sample_path(pattern, anchors, rng);
      products.push_back(field.values(0) * field.values(1));
    }
    cov[which] = teststat::mean_of(products);
    double s = 0.0;
    for (double p : products) s += (p - cov[which]) * (p - cov[which]);
    se[which] = std::sqrt(s / (products.size() - 1.0) / products.size());
  }
  CHECK(std::abs(cov[0] - cov[1]) <= 3.0 * std::hypot(se[0], se[1]));
}

TEST_CASE("gram: tiny cases and jitter escalation", "[gp]") {
  const SEKernel k{1.0};
  PointList one = {Vector::Zero(1)};
  const auto g1 = gram(one, k);
  CHECK(g1.k(0, 0) == Approx(1.0 + 1e-8).margin(1e-15));

  PointList same = {Vector::Constant(1, 0.3), Vector::Constant(1, 0.3)};
  const auto g2 = gram(same, k);
  CHECK(g2.k(0, 1) == 1.0);
  CHECK(g2.llt.info() == Eigen::Success);
  CHECK(g2.k == g2.k.transpose());

  PointList unit = {Vector::Zero(1), Vector::Constant(1, 1.0)};
  const auto g3 = gram(unit, k, 0.0);
  CHECK(g3.k(0, 1) == Approx(std::exp(-1.0)).margin(1e-15));
  CHECK_THROWS_AS(gram({}, k), invalid_argument_error);
}

TEST_CASE("sample_path: unit marginal variance at a single anchor", "[gp]") {
  Rng rng(34);
  const SparsityPattern pattern(1, lingeom::Orthogonal::identity(2), 1.0);
  PointList anchors = {Vector::Zero(2)};
  double s2 = 0.0;
  const int n = 10000;
  for (int i = 0; i < n; ++i) {
    const auto f = sample_path(pattern, anchors, rng);
    s2 += f.values(0) * f.values(0);
  }
  s2 /= n;
  CHECK(s2 > 0.97);
  CHECK(s2 < 1.03);
}

TEST_CASE("sample_path: fiber constancy is exact", "[gp]") {
  Rng rng(35);
  const SparsityPattern pattern(1, lingeom::Orthogonal::identity(2), 1.7);
  Vector p1(2), p2(2);
  p1 << 0.3, 0.1;
  p2 << 0.3, -0.5;  // same fiber: identical first coordinate
  const auto f = sample_path(pattern, {p1, p2}, rng);
  CHECK(f.values(0) == f.values(1));
  CHECK(f.factor.size() == 1);
  // values = L z on the unique block
  CHECK((f.factor.unwhiten(f.whitened) - Vector::Constant(1, f.values(0)))
            .cwiseAbs()
            .maxCoeff() <= 1e-8);
}

TEST_CASE("sample_path: large rescaling decorrelates distinct anchors", "[gp]") {
  Rng rng(36);
  const SparsityPattern pattern(1, lingeom::Orthogonal::identity(2), 50.0);
  Vector p1(2), p2(2);
  p1 << 0.5, 0.0;
  p2 << -0.5, 0.0;
  std::vector<double> v1, v2;
  for (int i = 0; i < 10000; ++i) {
    const auto f = sample_path(pattern, {p1, p2}, rng);
    v1.push_back(f.values(0));
    v2.push_back(f.values(1));
  }
  const double m1 = teststat::mean_of(v1), m2 = teststat::mean_of(v2);
  double c = 0.0, s1 = 0.0, s2 = 0.0;
  for (std::size_t i = 0; i < v1.size(); ++i) {
    c += (v1[i] - m1) * (v2[i] - m2);
    s1 += (v1[i] - m1) * (v1[i] - m1);
    s2 += (v2[i] - m2) * (v2[i] - m2);
  }
  CHECK(std::abs(c / std::sqrt(s1 * s2)) < 0.05);
}

TEST_CASE("condition: interpolation, fiber queries, predictive variance", "[gp]") {
  Rng rng(37);
  const SparsityPattern pattern(1, lingeom::Orthogonal::identity(2), 1.0);
  PointList anchors;
  for (int i = 0; i < 4; ++i) anchors.push_back(qmc::sample_unit_ball(2, rng));
  const auto f = sample_path(pattern, anchors, rng);

  const auto at_anchor = condition(f, {anchors[1]});
  CHECK(std::abs(at_anchor.mean(0) - f.values(1)) <= 1e-6);
  CHECK(at_anchor.cov(0, 0) >= 0.0);
  CHECK(at_anchor.cov(0, 0) <= 2e-8);

  Vector fiber = anchors[1];
  fiber(1) = -fiber(1) * 0.5 + 0.1;  // identity pattern: same first coordinate
  const auto at_fiber = condition(f, {fiber});
  CHECK(at_fiber.mean(0) == at_anchor.mean(0));
  CHECK(at_fiber.cov(0, 0) == at_anchor.cov(0, 0));

  for (int i = 0; i < 50; ++i) {
    const auto pr = condition(f, {qmc::sample_unit_ball(2, rng)});
    CHECK(pr.cov(0, 0) >= 0.0);
  }
}

TEST_CASE("condition: long-double textbook oracle at b = 1", "[gp]") {
  Rng rng(38);
  const SparsityPattern pattern(1, lingeom::haar_sample(2, rng), 1.3);
  PointList anchors;
  for (int i = 0; i < 5; ++i) anchors.push_back(qmc::sample_unit_ball(2, rng));
  const auto f = sample_path(pattern, anchors, rng);

  PointList query;
  for (int i = 0; i < 3; ++i) query.push_back(qmc::sample_unit_ball(2, rng));
  const auto pred = condition(f, query);

  std::vector<long double> pts, vals, q;
  for (int i = 0; i < 5; ++i) {
    pts.push_back(static_cast<long double>(f.projected[i](0)));
    vals.push_back(static_cast<long double>(f.values(i)));
  }
  for (const Vector& x : query) q.push_back(static_cast<long double>(pattern.projected_input(x)(0)));
  std::vector<long double> mean, var;
  oracle_condition(pts, vals, 1e-8L, q, mean, var);
  for (int j = 0; j < 3; ++j) {
    CHECK(pred.mean(j) == Approx(static_cast<double>(mean[j])).margin(1e-9));
    CHECK(pred.cov(j, j) == Approx(static_cast<double>(var[j])).margin(1e-9));
  }
}

TEST_CASE("rkhs_min_norm: zero target, slack eps, reproducing norm", "[gp]") {
  const PointList grid = qmc::grid_on_ball(1, 65);
  const SEKernel k{1.0};

  Vector zero = Vector::Zero(grid.size());
  CHECK(rkhs_min_norm(zero, grid, k, 0.1).norm2 == 0.0);

  Vector f(grid.size());
  for (std::size_t i = 0; i < grid.size(); ++i) f(i) = 0.5 * std::sin(3.0 * grid[i](0));
  CHECK(rkhs_min_norm(f, grid, k, 0.51).norm2 == 0.0);

  // kernel section: ||k(., 0)||^2 = k(0, 0) = 1
  Vector section(grid.size());
  for (std::size_t i = 0; i < grid.size(); ++i) section(i) = k(grid[i], Vector::Zero(1));
  const auto tight = rkhs_min_norm(section, grid, k, 1e-4);
  CHECK(tight.norm2 == Approx(1.0).epsilon(0.05));
  CHECK(tight.sup_error < 1e-4);

  // monotone nonincreasing in eps
  double last = 1e300;
  for (double eps : {0.02, 0.05, 0.1, 0.2, 0.4}) {
    const double n2 = rkhs_min_norm(section, grid, k, eps).norm2;
    CHECK(n2 <= last + 1e-12);
    last = n2;
  }
}

TEST_CASE("small_ball_neglog: trivial eps, monotonicity, grid refinement", "[gp]") {
  const SparsityPattern mild(1, lingeom::Orthogonal::identity(1), 0.5);
  const PointList grid32 = qmc::grid_on_ball(1, 32);
  const PointList grid64 = qmc::grid_on_ball(1, 64);

  Rng rng(39);
  const auto trivial = small_ball_neglog(mild, 4.0, grid32, 4000, rng);
  CHECK(trivial.neglog < 0.05);

  const SparsityPattern pattern(1, lingeom::Orthogonal::identity(1), 1.0);
  Rng rng_a(40), rng_b(40);  // same seed set: event inclusion is exact
  const auto tight = small_ball_neglog(pattern, 0.5, grid32, 20000, rng_a);
  const auto loose = small_ball_neglog(pattern, 1.0, grid32, 20000, rng_b);
  CHECK(tight.neglog >= loose.neglog);

  Rng rng_c(41), rng_d(41);
  const auto coarse = small_ball_neglog(pattern, 1.0, grid32, 20000, rng_c);
  const auto fine = small_ball_neglog(pattern, 1.0, grid64, 20000, rng_d);
  CHECK(std::abs(coarse.neglog - fine.neglog) <= 0.1 * std::max(coarse.neglog, fine.neglog));

  Rng rng_e(42);
  CHECK_THROWS_AS(small_ball_neglog(pattern, 0.001, grid32, 500, rng_e), numerical_error);
  CHECK_THROWS_AS(small_ball_neglog(pattern, 5.0, grid32, 500, rng_e), invalid_argument_error);
}
