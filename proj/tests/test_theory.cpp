#include "subgp/theory.hpp"

#include "support/stats.hpp"

#include <catch2/catch_amalgamated.hpp>

#include <cmath>

using namespace subgp;
using namespace subgp::theory;
using Catch::Approx;

TEST_CASE("rates: kappa, bare rate, delta ratios, applicability flag", "[theory]") {
  RateInputs in;
  in.n = 1024;
  in.beta = 1.0;
  in.dstar = 1;
  in.ambient_dim = 3;
  const auto spec = rates(in);
  CHECK(spec.kappa == Approx(2.0 / 3.0).margin(1e-15));
  CHECK(spec.eps_lower == Approx(std::pow(1024.0, -1.0 / 3.0)).margin(1e-12));
  CHECK(spec.eps_lower == Approx(0.09921).margin(5e-5));
  CHECK(spec.delta3 == Approx(std::sqrt(2.0) * spec.delta1).margin(1e-15));
  CHECK(spec.eps_n / spec.eps_lower ==
        Approx(std::pow(std::log(1024.0), spec.kappa)).margin(1e-12));

  RateInputs wide = in;
  wide.dstar = 2;
  wide.K_n = 2.0;
  wide.C_eps = 1.5;
  const auto s2 = rates(wide);
  CHECK(s2.delta3 == Approx(2.0 * s2.delta1).margin(1e-15));  // sqrt(2 d*)
  CHECK(s2.eps_n == Approx(std::pow(1.5, 2) * 4.0 * s2.eps_lower *
                           std::pow(std::log(1024.0), s2.kappa))
                        .margin(1e-12));

  // small n and a harsh window make delta1 >= 1: flagged, not an error
  RateInputs harsh = in;
  harsh.n = 10;
  harsh.window_L = 0.1;
  const auto s3 = rates(harsh);
  CHECK_FALSE(s3.theorem2_applicable);
  CHECK(s3.to_json().contains("d_n_bound_note"));

  // dim cap nondecreasing in n
  int last = 1;
  for (double n : {10.0, 100.0, 1000.0, 10000.0, 100000.0}) {
    RateInputs r = in;
    r.n = n;
    const int cap = rates(r).dim_cap;
    CHECK(cap >= last);
    last = cap;
  }

  // random-design rates divide by sqrt of the design-density floor
  RateInputs rd = in;
  rd.design_density_min = 0.25;
  const auto s4 = rates(rd);
  CHECK(s4.delta1_random_design == Approx(2.0 * s4.delta1).margin(1e-15));
}

TEST_CASE("solve_rnb: limits, monotonicity, residual substitution", "[theory]") {
  CHECK(solve_rnb(1, 1e-12) < 1.01);
  CHECK(solve_rnb(2, 2.0) > solve_rnb(2, 1.0));
  const double r = solve_rnb(1, 10.0);
  CHECK(std::abs(r * std::log(r) * std::log(r) - 10.0) <= 1e-9);
  CHECK_THROWS_AS(solve_rnb(1, 0.0), invalid_argument_error);
}

TEST_CASE("concentration: zero target, eps monotonicity, rescale trend", "[theory]") {
  const auto grid = qmc::grid_on_ball(1, 33);
  const gp::SparsityPattern pattern(1, lingeom::Orthogonal::identity(1), 1.0);

  Rng rng(70);
  const auto zero = concentration(Vector::Zero(grid.size()), grid, pattern, 1.0, 20000, rng);
  CHECK(zero.rkhs_norm2 == 0.0);
  CHECK(zero.total == zero.smallball_neglog);
  CHECK(zero.metadata.contains("rkhs_term"));

  Vector f(grid.size());
  for (std::size_t i = 0; i < grid.size(); ++i) f(i) = std::sin(2.0 * grid[i](0));
  Rng ra(71), rb(71);
  const auto tight = concentration(f, grid, pattern, 0.5, 20000, ra);
  const auto loose = concentration(f, grid, pattern, 1.0, 20000, rb);
  CHECK(tight.total >= loose.total);

  double prev = -1.0;
  for (double a : {1.0, 2.0, 4.0}) {
    Rng r(72);
    const gp::SparsityPattern p(1, lingeom::Orthogonal::identity(1), a);
    const auto parts = concentration(Vector::Zero(grid.size()), grid, p, 1.0, 20000, r);
    if (prev >= 0.0) CHECK(parts.smallball_neglog - prev > 3.0 * parts.smallball_se);
    prev = parts.smallball_neglog;
  }

  const gp::SparsityPattern too_big(3, lingeom::Orthogonal::identity(3), 1.0);
  CHECK_THROWS_AS(concentration(Vector::Zero(1), {Vector::Zero(3)}, too_big, 1.0, 100, rng),
                  invalid_argument_error);
}

TEST_CASE("check_gradient_condition: degenerate cores fail with diagnostics", "[theory]") {
  Rng rng(73);
  const auto constant = model::make_custom_truth(
      2, 1, lingeom::haar_sample(2, rng), [](const Vector&) { return 1.0; },
      [](const Vector& t) { return Vector::Zero(t.size()).eval(); }, 1.0);
  const auto res = check_gradient_condition(constant, {Vector::Constant(1, 0.2)}, 0.2, 100, rng);
  CHECK_FALSE(res.pass);
  CHECK(res.min_singular_value <= 1e-8);

  // d* = 2 with parallel gradients at the two probe points
  const auto additive = model::make_custom_truth(
      3, 2, lingeom::haar_sample(3, rng),
      [](const Vector& t) { return t(0) + t(1); },
      [](const Vector&) { return Vector::Constant(2, 1.0).eval(); }, 1.0);
  Vector p1(2), p2(2);
  p1 << 0.3, 0.0;
  p2 << -0.2, 0.4;
  const auto res2 = check_gradient_condition(additive, {p1, p2}, 0.2, 2000, rng);
  CHECK_FALSE(res2.pass);
  CHECK(res2.min_singular_value <= 1e-8);
}

TEST_CASE("check_gradient_condition: linear family closed form", "[theory]") {
  Rng rng(74);
  for (double scale : {1.0, 0.8}) {
    const auto lin = model::make_custom_truth(
        3, 1, lingeom::haar_sample(3, rng),
        [scale](const Vector& t) { return scale * t(0); },
        [scale](const Vector&) { return Vector::Constant(1, scale).eval(); }, 1.0);
    const auto res = check_gradient_condition(lin, {Vector::Constant(1, 0.1)}, 0.3, 100, rng);
    CHECK(res.pass);
    CHECK(res.b_k[0] == 1.0);
    CHECK(res.r == Approx(scale / 2.0).margin(1e-15));
    CHECK(res.D_regression == Approx(scale * scale / 96.0).margin(1e-12));
    CHECK(res.D_density > 0.0);
    CHECK(res.L > 0.0);
  }
}

TEST_CASE("check_detectability: linear residual threshold at 1/12", "[theory]") {
  Rng rng(75);
  const auto lin = model::make_custom_truth(
      2, 1, lingeom::haar_sample(2, rng), [](const Vector& t) { return t(0); },
      [](const Vector&) { return Vector::Constant(1, 1.0).eval(); }, 1.0);
  const auto setting = model::Setting::random_design(1.0, 10.0, 2);

  // best-constant L2 residual of a linear segment of length l is l^3 / 12
  const auto pass = check_detectability(lin, setting, 0.4, 0.05, 16, rng);
  CHECK(pass.pass);
  const auto fail = check_detectability(lin, setting, 0.4, 0.09, 16, rng);
  CHECK_FALSE(fail.pass);
  CHECK_FALSE(fail.failures.empty());
  CHECK(fail.failures[0].lhs < fail.failures[0].rhs);

  const auto constant = model::make_custom_truth(
      2, 1, lingeom::haar_sample(2, rng), [](const Vector&) { return 0.7; },
      [](const Vector& t) { return Vector::Zero(t.size()).eval(); }, 1.0);
  const auto flat = check_detectability(constant, setting, 0.4, 0.05, 8, rng);
  CHECK_FALSE(flat.pass);
}

TEST_CASE("gradient check implies detectability with its own constants", "[theory]") {
  Rng rng(76);
  const auto sine = model::make_truth(model::TruthFamily::sine, 2, 1, rng);
  const auto grad = check_gradient_condition(sine, {Vector::Constant(1, 0.3)}, 0.25, 100, rng);
  REQUIRE(grad.pass);
  const auto setting = model::Setting::fixed_design(1.0);
  const auto detect =
      check_detectability(sine, setting, grad.L, grad.D_regression, 12, rng);
  CHECK(detect.pass);

  // density variant cross-check with the density constant
  const auto detect_dens = check_detectability(sine, model::Setting::density(), grad.L,
                                               grad.D_density, 12, rng);
  CHECK(detect_dens.pass);
}
