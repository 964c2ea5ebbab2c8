#include "subgp/metrics.hpp"

#include "support/stats.hpp"

#include <catch2/catch_amalgamated.hpp>

#include <cmath>

using namespace subgp;
using namespace subgp::metrics;
using Catch::Approx;

TEST_CASE("ball integrator: analytic volume and containment", "[metrics]") {
  CHECK(BallIntegrator(1, 1000, 1).volume() == Approx(2.0).margin(1e-12));
  CHECK(BallIntegrator(2, 1000, 1).volume() == Approx(M_PI).margin(1e-12));
  CHECK(BallIntegrator(3, 1000, 1).volume() == Approx(4.0 * M_PI / 3.0).margin(1e-12));
  CHECK(BallIntegrator(4, 1000, 1).volume() == Approx(M_PI * M_PI / 2.0).margin(1e-12));
  const BallIntegrator ball(3, 4096, 9);
  for (const auto& x : ball.points()) CHECK(x.norm() <= 1.0 + 1e-12);
}

TEST_CASE("hellinger: identical, disjoint, and 1-D quadrature oracle", "[metrics]") {
  const BallIntegrator ball2(2, 16384, 2);
  const auto uniform2 = [](const Vector&) { return 1.0 / M_PI; };
  CHECK(hellinger(uniform2, uniform2, ball2).value <= 1e-12);

  const auto left = [](const Vector& x) { return x(0) < 0.0 ? 2.0 / M_PI : 0.0; };
  const auto right = [](const Vector& x) { return x(0) >= 0.0 ? 2.0 / M_PI : 0.0; };
  const auto disj = hellinger(left, right, ball2);
  CHECK(std::abs(disj.value - std::sqrt(2.0)) <= 3.0 * disj.mc_se + 1e-3);

  const BallIntegrator ball1(1, 16384, 3);
  const double z = std::exp(1.0) - std::exp(-1.0);
  const auto uniform1 = [](const Vector&) { return 0.5; };
  const auto tilted = [z](const Vector& x) { return std::exp(x(0)) / z; };
  const auto got = hellinger(uniform1, tilted, ball1);
  const double h2 = teststat::adaptive_simpson(
      [z](double x) {
        const double d = std::sqrt(0.5) - std::sqrt(std::exp(x) / z);
        return d * d;
      },
      -1.0, 1.0);
  CHECK(got.value == Approx(std::sqrt(h2)).epsilon(0.003));

  const auto negative = [](const Vector&) { return -1.0; };
  CHECK_THROWS_AS(hellinger(uniform1, negative, ball1), numerical_error);
}

TEST_CASE("hellinger: symmetry, sqrt-2 bound, triangle, seed stability", "[metrics]") {
  const BallIntegrator ball(2, 8192, 4);
  Rng rng(60);
  const auto make_density = [&](double c1, double c2) {
    // normalized on the fly against the shared integrator
    auto w = [c1, c2](const Vector& x) { return c1 * x(0) + c2 * x(0) * x(1); };
    const auto z = ball.integrate([&w](const Vector& x) { return std::exp(w(x)); });
    const double logz = std::log(z.value);
    return [w, logz](const Vector& x) { return std::exp(w(x) - logz); };
  };
  const auto p = make_density(0.8, -0.4);
  const auto q = make_density(-0.5, 0.9);
  const auto r = make_density(0.1, 0.3);
  const auto pq = hellinger(p, q, ball), qp = hellinger(q, p, ball);
  CHECK(pq.value == Approx(qp.value).margin(1e-12));
  CHECK(pq.value <= std::sqrt(2.0) * (1.0 + 1e-9));
  const auto pr = hellinger(p, r, ball), rq = hellinger(r, q, ball);
  CHECK(pq.value <= pr.value + rq.value + 3.0 * (pq.mc_se + pr.mc_se + rq.mc_se));

  const BallIntegrator other_seed(2, 8192, 44);
  const auto pq2 = hellinger(p, q, other_seed);
  CHECK(std::abs(pq.value - pq2.value) <= 3.0 * std::hypot(pq.mc_se, pq2.mc_se) + 1e-4);
}

TEST_CASE("empirical_l2: norm properties and elementwise oracle", "[metrics]") {
  Rng rng(61);
  Vector f = rng.normal_vector(40), g = rng.normal_vector(40);
  CHECK(empirical_l2(f, f) == 0.0);
  CHECK(empirical_l2(f, f.array() + 0.7) == Approx(0.7).margin(1e-12));

  double rms = 0.0;
  for (int i = 0; i < 40; ++i) rms += (f(i) - g(i)) * (f(i) - g(i));
  rms = std::sqrt(rms / 40.0);
  CHECK(empirical_l2(f, g) == Approx(rms).margin(1e-12));

  // homogeneity and triangle inequality of the induced norm
  const Vector zero = Vector::Zero(40);
  CHECK(empirical_l2(3.0 * f, zero) == Approx(3.0 * empirical_l2(f, zero)).margin(1e-12));
  CHECK(empirical_l2(f + g, zero) <=
        empirical_l2(f, zero) + empirical_l2(g, zero) + 1e-12);

  Vector short_v = rng.normal_vector(5);
  CHECK_THROWS_AS(empirical_l2(f, short_v), invalid_argument_error);
}

TEST_CASE("l2_design: clipping algebra and analytic integral", "[metrics]") {
  const BallIntegrator ball1(1, 16384, 5);
  const double vol = ball1.volume();
  const auto uniform_g = [vol](const Vector&) { return 1.0 / vol; };

  const auto same = [](const Vector& x) { return x(0); };
  CHECK(l2_design(same, same, 1.0, uniform_g, ball1).value == 0.0);

  const double q = 0.8;
  const auto hi = [q](const Vector&) { return 2.0 * q; };
  const auto lo = [q](const Vector&) { return -2.0 * q; };
  CHECK(l2_design(hi, lo, q, uniform_g, ball1).value == Approx(2.0 * q).margin(1e-12));

  const auto linear = [](const Vector& x) { return x(0); };
  const auto zero = [](const Vector&) { return 0.0; };
  const auto got = l2_design(linear, zero, 100.0, uniform_g, ball1);
  CHECK(got.value == Approx(1.0 / std::sqrt(3.0)).epsilon(0.005));

  // f is never evaluated outside the unit ball
  const auto poisoned = [](const Vector& x) {
    return x.norm() <= 1.0 + 1e-12 ? x(0) : std::nan("");
  };
  CHECK(l2_design(poisoned, zero, 100.0, uniform_g, ball1).value == got.value);
}
