#include <cmath>

#include "doctest.h"
#include "rscavity/error.hpp"
#include "rscavity/quadrature.hpp"
#include "rscavity/rng.hpp"

using namespace rscavity;

namespace {

constexpr double kEulerGamma = 0.5772156649015329;
constexpr double kZTanhZ = 0.6057055096021588;  // E[Z tanh Z], Z ~ N(0,1), mpmath

double sum(const std::vector<double>& v)
{
  double a = 0.0;
  for (double x : v) a += x;
  return a;
}

}  // namespace

TEST_CASE("rules are normalized and exact")
{
  for (auto kind : {QuadratureKind::GaussHermiteNormal, QuadratureKind::GaussLaguerreExp1, QuadratureKind::GaussLogExp1})
    for (int order : {1, 5, 40, 80}) {
      const QuadratureRule r = make_rule(kind, order);
      CHECK(r.nodes.size() == std::size_t(order));
      CHECK(std::abs(sum(r.weights) - 1.0) <= 1e-13);
    }

  const QuadratureRule h = make_rule(QuadratureKind::GaussHermiteNormal, 40);
  double dfact = 1.0;  // (k-1)!!
  for (int k = 0; k <= 79; ++k) {
    const double m = h.expect([k](double x) { return std::pow(x, k); });
    if (k % 2 == 1) {
      CHECK(std::abs(m) <= 1e-14 * std::max(1.0, dfact));
    }
    else {
      if (k > 0) dfact *= (k - 1);
      CHECK(std::abs(m - dfact) <= 1e-10 * dfact);
    }
  }
  CHECK(h.expect([](double x) { return x * x; }) == doctest::Approx(1.0).epsilon(1e-10));
  CHECK(h.expect([](double x) { return std::pow(x, 4); }) == doctest::Approx(3.0).epsilon(1e-10));
  CHECK(h.expect([](double x) { return std::pow(x, 6); }) == doctest::Approx(15.0).epsilon(1e-10));
  for (int k : {1, 3, 5, 7}) CHECK(std::abs(h.expect([k](double x) { return std::pow(x, k); })) <= 1e-14);

  const QuadratureRule l = make_rule(QuadratureKind::GaussLaguerreExp1, 40);
  double fact = 1.0;
  for (int k = 0; k <= 20; ++k) {
    if (k > 0) fact *= k;
    const double m = l.expect([k](double z) { return std::pow(z, k); });
    CHECK(std::abs(m - fact) <= 1e-10 * fact);
  }
}

TEST_CASE("log-exponential rule")
{
  const QuadratureRule g = make_rule(QuadratureKind::GaussLogExp1, 40);
  for (std::size_t i = 0; i < g.nodes.size(); ++i) CHECK(g.nodes[i] == std::exp(g.log_nodes[i]));
  double m1 = 0.0, m2 = 0.0, z1 = 0.0, z2 = 0.0;
  for (std::size_t i = 0; i < g.nodes.size(); ++i) {
    m1 += g.weights[i] * g.log_nodes[i];
    m2 += g.weights[i] * g.log_nodes[i] * g.log_nodes[i];
    z1 += g.weights[i] * g.nodes[i];
    z2 += g.weights[i] * g.nodes[i] * g.nodes[i];
  }
  const double pi2_6 = M_PI * M_PI / 6.0;
  CHECK(m1 == doctest::Approx(-kEulerGamma).epsilon(1e-12));
  CHECK(m2 == doctest::Approx(kEulerGamma * kEulerGamma + pi2_6).epsilon(1e-12));
  CHECK(z1 == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(z2 == doctest::Approx(2.0).epsilon(1e-12));
}

TEST_CASE("make_rule errors and determinism")
{
  CHECK_THROWS_AS(make_rule(QuadratureKind::GaussHermiteNormal, 0), InvalidArgument);
  const QuadratureRule a = make_rule(QuadratureKind::GaussLogExp1, 40), b = make_rule(QuadratureKind::GaussLogExp1, 40);
  CHECK(a.nodes == b.nodes);
  CHECK(a.weights == b.weights);
}

TEST_CASE("expect_logit")
{
  const QuadratureRule h = make_rule(QuadratureKind::GaussHermiteNormal, 40);
  CHECK(expect_logit([](int, double, double) { return 1.0; }, 1.0, h) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(std::abs(expect_logit([](int t, double, double) { return double(t); }, 1.0, h)) <= 1e-12);
  const double tz = expect_logit([](int t, double, double z0) { return t * z0; }, 1.0, h);
  CHECK(std::abs(tz - kZTanhZ) <= 1e-7);
  const QuadratureRule h120 = make_rule(QuadratureKind::GaussHermiteNormal, 120);
  CHECK(std::abs(expect_logit([](int t, double, double z0) { return t * z0; }, 1.0, h120) - kZTanhZ) <= 1e-12);

  // Monte Carlo at 10^6 draws within 3 standard errors
  Rng rng = make_stream(41);
  double acc = 0.0, acc2 = 0.0;
  const int n = 10000000;
  for (int k = 0; k < n; ++k) {
    const double z0 = standard_normal(rng);
    const double p_plus = 1.0 / (1.0 + std::exp(-2.0 * z0));
    const double v = (uniform01(rng) < p_plus ? 1.0 : -1.0) * z0;
    acc += v;
    acc2 += v * v;
  }
  const double mean = acc / n, se = std::sqrt((acc2 / n - mean * mean) / n);
  CHECK(std::abs(tz - mean) < 3.0 * se);

  // array-valued integrands and separability
  const Eigen::Array2d v = expect_logit(
      [](int, double q, double z0) { return Eigen::Array2d(q * q * z0 * z0, std::cos(q) * z0 * z0); }, 0.0, h);
  CHECK(v[0] == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(v[1] == doctest::Approx(std::exp(-0.5)).epsilon(1e-12));

  CHECK_THROWS_AS(expect_logit([](int, double q, double) { return q > 1.0 ? NAN : 0.0; }, 1.0, h), EvaluationError);
}

TEST_CASE("expect_weibull")
{
  const QuadratureRule h = make_rule(QuadratureKind::GaussHermiteNormal, 40);
  const QuadratureRule l = make_rule(QuadratureKind::GaussLaguerreExp1, 40);
  const QuadratureRule g = make_rule(QuadratureKind::GaussLogExp1, 40);
  CHECK(expect_weibull([](double, double, double) { return 1.0; }, l, h) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(std::abs(expect_weibull([](double z, double q, double) { return z * q; }, l, h)) <= 1e-12);

  // log z with the default rule pair
  const double lg = expect_weibull([](double z, double, double) { return std::log(z); }, g, h);
  CHECK(std::abs(lg + kEulerGamma) <= 1e-3);
  CHECK(lg == doctest::Approx(-kEulerGamma).epsilon(1e-12));
  const double lg2 = expect_weibull([](double, double lz, double, double) { return lz; }, g, h);
  CHECK(lg2 == doctest::Approx(-kEulerGamma).epsilon(1e-12));

  // Laguerre: error only O(1/order) for log z
  double prev_err = 1.0;
  for (int order : {40, 80, 200, 400}) {
    const QuadratureRule lo = make_rule(QuadratureKind::GaussLaguerreExp1, order);
    const double err = std::abs(expect_weibull([](double z, double, double) { return std::log(z); }, lo, h) + kEulerGamma);
    CHECK(err < prev_err);
    prev_err = err;
  }
  CHECK(prev_err < 5e-3);

  const double sep = expect_weibull([](double z, double q, double z0) { return std::exp(-z) * q * q * std::cos(z0); }, l, h);
  CHECK(sep == doctest::Approx(0.5 * 1.0 * std::exp(-0.5)).epsilon(1e-12));

  CHECK_THROWS_AS(expect_weibull([](double z, double, double) { return z > 50 ? INFINITY : 0.0; }, l, h),
                  EvaluationError);
}

TEST_CASE("rules for a tabulated density")
{
  const double c = 1.0 / std::sqrt(2.0 * M_PI);
  const QuadratureRule r = make_rule_for_density([c](double z) { return c * std::exp(-0.5 * z * z); }, -38.0, 38.0, 20);
  const QuadratureRule h = make_rule(QuadratureKind::GaussHermiteNormal, 20);
  CHECK(r.kind == QuadratureKind::Tabulated);
  CHECK(r.mass == doctest::Approx(1.0).epsilon(1e-13));
  for (int i = 0; i < 20; ++i) {
    CHECK(std::abs(r.nodes[i] - h.nodes[i]) <= 1e-10);
    CHECK(std::abs(r.weights[i] - h.weights[i]) <= 1e-12);
  }
  // normal times logistic weight: E[Z tanh Z] = 2 * int z phi(z) p(+1|z) dz exactly at low order
  const QuadratureRule p = make_rule_for_density(
      [c](double z) { return c * std::exp(-0.5 * z * z) / (1.0 + std::exp(-2.0 * z)); }, -38.0, 38.0, 10);
  CHECK(p.mass == doctest::Approx(0.5).epsilon(1e-13));
  CHECK(2.0 * p.mass * p.expect([](double z) { return z; }) == doctest::Approx(kZTanhZ).epsilon(1e-12));
  CHECK_THROWS_AS(make_rule_for_density([](double) { return -1.0; }, -1.0, 1.0, 5), InvalidArgument);
  CHECK_THROWS_AS(make_rule(QuadratureKind::Tabulated, 5), InvalidArgument);
}
