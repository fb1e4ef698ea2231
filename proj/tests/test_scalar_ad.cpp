#include <cmath>
#include <random>
#include <vector>

#include "doctest.h"
#include "gradkernel/errors.hpp"
#include "gradkernel/taylor.hpp"

using gradkernel::ScalarFunction;
using gradkernel::Taylor4;

namespace {

struct Case {
  ScalarFunction f;
  double lo, hi;  // sampling interval inside the domain
};

std::vector<Case> zoo_functions() {
  return {
      {ScalarFunction::exponential(-0.5), -2.0, 4.0},
      {ScalarFunction::exponential(1.0), -2.0, 2.0},
      {ScalarFunction::rational_quadratic(2.0), 0.0, 5.0},
      {ScalarFunction::rational_quadratic(0.7), 0.0, 5.0},
      {ScalarFunction::matern52(), 0.05, 4.0},
      {ScalarFunction::power(3.0, 1.0), -2.0, 2.0},
      {ScalarFunction::power(2.0, 1.0), -2.0, 2.0},
      {ScalarFunction::power(2.5, 1.0), -0.5, 2.0},
      {ScalarFunction::cosine(), -3.0, 3.0},
      {ScalarFunction::arcsin(), -0.8, 0.8},
      {ScalarFunction::inv_sqrt_1p(), -0.5, 3.0},
      {ScalarFunction::compose(ScalarFunction::exponential(1.0), ScalarFunction::cosine()), -2.0, 2.0},
  };
}

}  // namespace

TEST_CASE("exp derivatives at zero are all one") {
  const auto d = gradkernel::eval_derivs(ScalarFunction::exponential(1.0), 0.0, 4);
  for (double v : d) CHECK(v == 1.0);
}

TEST_CASE("square derivatives at three") {
  const auto d = gradkernel::eval_derivs(ScalarFunction::power(2.0), 3.0, 4);
  CHECK(d[0] == 9.0);
  CHECK(d[1] == 6.0);
  CHECK(d[2] == 2.0);
  CHECK(d[3] == 0.0);
  CHECK(d[4] == 0.0);
}

TEST_CASE("rational quadratic matches central differences at alpha 2") {
  const auto f = ScalarFunction::rational_quadratic(2.0);
  const double s = 0.5, h = 1e-5;
  const auto d = gradkernel::eval_derivs(f, s, 2);
  const double d1 = (f.eval(s + h) - f.eval(s - h)) / (2 * h);
  const double d2 = (f.eval(s + h) - 2 * f.eval(s) + f.eval(s - h)) / (h * h);
  CHECK(std::abs(d[1] - d1) <= 1e-6 * std::abs(d1));
  CHECK(std::abs(d[2] - d2) <= 1e-6 * std::abs(d2) * 10);  // second difference loses ~5 digits at h=1e-5
}

TEST_CASE("every order matches central differences of the order below") {
  std::mt19937_64 rng(11);
  for (const auto& c : zoo_functions()) {
    std::uniform_real_distribution<double> u(c.lo, c.hi);
    for (int trial = 0; trial < 100; ++trial) {
      const double s = u(rng);
      const auto d = c.f.derivs(s, 4);
      CHECK(d[0] == doctest::Approx(c.f.eval(s)).epsilon(1e-15));
      for (int k = 1; k <= 4; ++k) {
        const double h = 1e-5 * std::max(1.0, std::abs(s));
        const auto dp = c.f.derivs(s + h, 4);
        const auto dm = c.f.derivs(s - h, 4);
        const double fd = (dp[k - 1] - dm[k - 1]) / (2 * h);
        const double scale = std::max(std::abs(d[k]), 1e-3 * std::abs(d[k - 1]) + 1e-12);
        INFO(c.f.name(), " s=", s, " order=", k);
        CHECK(std::abs(d[k] - fd) <= 1e-5 * scale);
      }
    }
  }
}

TEST_CASE("first and second derivatives match differences of eval directly") {
  std::mt19937_64 rng(5);
  for (const auto& c : zoo_functions()) {
    std::uniform_real_distribution<double> u(c.lo, c.hi);
    for (int trial = 0; trial < 100; ++trial) {
      const double s = u(rng);
      const auto d = c.f.derivs(s, 2);
      const double h1 = 1e-6, h2 = 1e-4;
      const double fd1 = (c.f.eval(s + h1) - c.f.eval(s - h1)) / (2 * h1);
      const double fd2 = (c.f.eval(s + h2) - 2 * c.f.eval(s) + c.f.eval(s - h2)) / (h2 * h2);
      INFO(c.f.name(), " s=", s);
      CHECK(std::abs(d[1] - fd1) <= 1e-5 * std::max(std::abs(d[1]), 1e-3));
      CHECK(std::abs(d[2] - fd2) <= 1e-5 * std::max(std::abs(d[2]), 1e-1));
    }
  }
}

TEST_CASE("composition of quadratics is exact") {
  // h(s) = ((s+a)² + b)², written out by hand.
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(-2.0, 2.0);
  for (int trial = 0; trial < 50; ++trial) {
    const double a = u(rng), b = u(rng), s = u(rng);
    const auto h = ScalarFunction::compose(ScalarFunction::power(2.0, b), ScalarFunction::power(2.0, a));
    const auto d = h.derivs(s, 4);
    const double w = (s + a) * (s + a) + b, w1 = 2 * (s + a), w2 = 2.0;
    const double ref[5] = {w * w, 2 * w * w1, 2 * w1 * w1 + 2 * w * w2, 6 * w1 * w2, 6 * w2 * w2};
    for (int k = 0; k <= 4; ++k) CHECK(std::abs(d[k] - ref[k]) <= 1e-13 * std::max(1.0, std::abs(ref[k])));

    // Same through bare Taylor arithmetic.
    const Taylor4 t = Taylor4::variable(s) + Taylor4::constant(a);
    const Taylor4 q = t * t + Taylor4::constant(b);
    const Taylor4 r = q * q;
    for (int k = 0; k <= 4; ++k) CHECK(std::abs(r[k] - ref[k]) <= 1e-13 * std::max(1.0, std::abs(ref[k])));
  }
}

TEST_CASE("constant lifting has vanishing derivatives") {
  const Taylor4 c = Taylor4::constant(2.5);
  CHECK(c[0] == 2.5);
  for (int k = 1; k <= 4; ++k) CHECK(c[k] == 0.0);
  const Taylor4 e = gradkernel::exp(c);
  for (int k = 1; k <= 4; ++k) CHECK(e[k] == 0.0);
}

TEST_CASE("taylor elementary functions agree with the scalar zoo") {
  const double s = 0.3;
  const Taylor4 v = Taylor4::variable(s);
  const auto cmp = [](const Taylor4& t, const std::array<double, 5>& d) {
    for (int k = 0; k <= 4; ++k) CHECK(t[k] == doctest::Approx(d[k]).epsilon(1e-13));
  };
  cmp(gradkernel::exp(v), ScalarFunction::exponential(1.0).derivs(s));
  cmp(gradkernel::cos(v), ScalarFunction::cosine().derivs(s));
  cmp(gradkernel::asin(v), ScalarFunction::arcsin().derivs(s));
  cmp(gradkernel::pow(v, 3.0), ScalarFunction::power(3.0).derivs(s));
  cmp(gradkernel::rsqrt(Taylor4::constant(1.0) + v), ScalarFunction::inv_sqrt_1p().derivs(s));
}

TEST_CASE("domain and order errors") {
  CHECK_THROWS_AS(ScalarFunction::arcsin().derivs(1.0), gradkernel::DomainError);
  CHECK_THROWS_AS(ScalarFunction::rational_quadratic(2.0).derivs(-5.0), gradkernel::DomainError);
  CHECK_THROWS_AS(ScalarFunction::rational_quadratic(-1.0), gradkernel::DomainError);
  CHECK_THROWS_AS(ScalarFunction::inv_sqrt_1p().derivs(-1.0), gradkernel::DomainError);
  CHECK_THROWS_AS(gradkernel::eval_derivs(ScalarFunction::exponential(), 0.0, 5), gradkernel::OrderError);
  CHECK_THROWS_AS(gradkernel::eval_derivs(ScalarFunction::exponential(), 0.0, 0), gradkernel::OrderError);
}

TEST_CASE("matern at zero distance") {
  const auto f = ScalarFunction::matern52();
  const auto d = f.derivs(0.0, 2);
  CHECK(d[0] == doctest::Approx(1.0));
  CHECK(d[1] == doctest::Approx(-5.0 / 6.0));
  CHECK(d[2] == doctest::Approx(25.0 / 12.0));
  // Values just off zero converge to the limits.
  const auto e = f.derivs(1e-14, 2);
  CHECK(e[1] == doctest::Approx(-5.0 / 6.0).epsilon(1e-6));
  CHECK(e[2] == doctest::Approx(25.0 / 12.0).epsilon(1e-6));
  CHECK(f.smooth_order(0.0) == 2);
  CHECK_THROWS_AS(f.derivs(0.0, 3), gradkernel::NonDifferentiable);
}
