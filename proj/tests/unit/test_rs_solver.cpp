#include <cmath>

#include "doctest.h"
#include "rscavity/error.hpp"
#include "rscavity/rs_solver.hpp"

using namespace rscavity;

namespace {

using Vec5 = Eigen::Matrix<double, 5, 1>;

const PenaltyConfig kML{};

Vec5 weibull_x(const RSSolution& s)
{
  Vec5 x;
  x << s.state.zeta, s.state.nu, s.state.omega, std::sqrt(s.state.mu2), s.state.nuisance->sigma_ratio;
  return x;
}

void check_same_state(const RSState& a, const RSState& b, double tol)
{
  CHECK(std::abs(a.zeta - b.zeta) <= tol);
  CHECK(std::abs(a.u2 - b.u2) <= tol);
  CHECK(std::abs(a.v - b.v) <= tol);
  CHECK(std::abs(a.w - b.w) <= tol);
  CHECK(std::abs(a.mu2 - b.mu2) <= tol);
  CHECK(std::abs(a.nu - b.nu) <= tol);
  CHECK(std::abs(a.omega - b.omega) <= tol);
  CHECK(a.nuisance.has_value() == b.nuisance.has_value());
  if (a.nuisance && b.nuisance) {
    CHECK(std::abs(a.nuisance->sigma_ratio - b.nuisance->sigma_ratio) <= tol);
    CHECK(std::abs(a.nuisance->phi_shift - b.nuisance->phi_shift) <= tol);
  }
}

}  // namespace

TEST_CASE("transformation round trip")
{
  for (const PenaltyConfig& pen : {PenaltyConfig{0.0, 0.0}, PenaltyConfig{0.3, 0.0}, PenaltyConfig{0.0, 0.7}}) {
    const RSState s = state_from_raw(0.4, 1.3, 0.6, 0.9, pen);
    const double d = 1.0 + pen.tau_prime * 0.4 * 1.3;
    CHECK(s.mu2 == doctest::Approx(1.3 / d).epsilon(1e-15));
    const RSState r = state_from_rescaled(s.zeta, s.mu2, s.nu, s.omega, pen);
    CHECK(std::abs(r.u2 - 1.3) <= 1e-12);
    CHECK(std::abs(r.v - 0.6) <= 1e-12);
    CHECK(std::abs(r.w - 0.9) <= 1e-12);
  }
  CHECK_THROWS_AS(state_from_rescaled(0.5, 2.0, 1.0, 1.0, {0.0, 1.0}), DomainError);
}

TEST_CASE("logit fixed point and target modes")
{
  const RSSolution s = rs_solve_logit(RSTarget::zeta(0.3), 1.0, kML);
  REQUIRE(s.converged);
  CHECK(s.residual <= 1e-10);
  CHECK(s.state.zeta == 0.3);
  CHECK(s.state.w > 1.0);  // ML over-estimates

  const QuadratureRule h = make_rule(QuadratureKind::GaussHermiteNormal, 40);
  const Eigen::Vector3d x(s.state.zeta, s.state.nu, s.state.omega);
  const Eigen::Vector3d fx = rs_map_logit(x, s.state.mu2, 1.0, kML, h);
  CHECK((fx - x).norm() <= 1e-10);
  // pure
  const Eigen::Vector3d fx2 = rs_map_logit(x, s.state.mu2, 1.0, kML, h);
  CHECK(fx[0] == fx2[0]);
  CHECK(fx[1] == fx2[1]);
  CHECK(fx[2] == fx2[2]);

  const RSSolution m = rs_solve_logit(RSTarget::mu2(s.state.mu2), 1.0, kML);
  REQUIRE(m.converged);
  CHECK(m.residual <= 1e-10);
  CHECK(std::abs(m.state.zeta - 0.3) <= 1e-8);
  check_same_state(m.state, s.state, 1e-8);

  SolverControls more;
  more.max_iterations = 20000;
  const RSSolution d = rs_solve_logit(RSTarget::zeta(0.3), 1.0, kML, more);
  check_same_state(d.state, s.state, 1e-10);

  // next to the ML existence boundary: order 40 is only good to ~1e-4 here
  SolverControls o160, o320;
  o160.quadrature_order = 160;
  o320.quadrature_order = 320;
  const RSSolution s160 = rs_solve_logit(RSTarget::zeta(0.3), 1.0, kML, o160);
  check_same_state(rs_solve_logit(RSTarget::zeta(0.3), 1.0, kML, o320).state, s160.state, 1e-6);
  CHECK(std::abs(s.state.w - s160.state.w) <= 1e-3 * s160.state.w);

  // penalized solves reach the same tolerance
  for (const PenaltyConfig& pen : {PenaltyConfig{0.2, 0.0}, PenaltyConfig{0.0, 0.2}}) {
    const RSSolution p = rs_solve_logit(RSTarget::zeta(0.3), 1.0, pen);
    CHECK(p.converged);
    CHECK(p.residual <= 1e-10);
    CHECK(p.state.w < s.state.w);
    const RSSolution pm = rs_solve_logit(RSTarget::mu2(p.state.mu2), 1.0, pen);
    CHECK(std::abs(pm.state.zeta - 0.3) <= 1e-8);
  }
}

TEST_CASE("order 40 against order 80")
{
  SolverControls o80;
  o80.quadrature_order = 80;
  for (Family fam : {Family::Logit, Family::WeibullPH})
    for (double z : {0.1, 0.3, 0.5}) {
      for (const PenaltyConfig& pen : {kML, PenaltyConfig{0.1, 0.0}, PenaltyConfig{0.0, 0.1}}) {
        if (fam == Family::Logit && pen.eta_prime == 0.0 && pen.tau_prime == 0.0 && z > 0.2) continue;
        const RSSolution a = rs_solve(fam, RSTarget::zeta(z), 1.0, pen);
        const RSSolution b = rs_solve(fam, RSTarget::zeta(z), 1.0, pen, o80);
        REQUIRE(a.converged);
        REQUIRE(b.converged);
        check_same_state(a.state, b.state, 1e-6);
      }
      for (ZeroBiasMode mode : {ZeroBiasMode::Oracle, ZeroBiasMode::Empirical}) {
        const ZeroBiasResult a = zero_bias(fam, 1.0, z, mode), b = zero_bias(fam, 1.0, z, mode, o80);
        check_same_state(a.solution.state, b.solution.state, 1e-6);
        CHECK(std::abs(a.penalty - b.penalty) <= 1e-6);
      }
    }
}

TEST_CASE("logit small-zeta limit")
{
  const RSSolution s = rs_solve_logit(RSTarget::zeta(0.01), 1.0, kML);
  REQUIRE(s.converged);
  CHECK(std::abs(s.state.w / s.S - 1.0) <= 0.02);
  CHECK(s.state.v <= 0.2);
  // small mu2 in fixed-mu2 mode gives small zeta
  const RSSolution m = rs_solve_logit(RSTarget::mu2(1e-3), 1.0, kML);
  CHECK(m.converged);
  CHECK(m.state.zeta < 0.01);
  CHECK(std::abs(m.state.w - 1.0) <= 0.02);
}

TEST_CASE("logit past the ML existence boundary is reported, not faked")
{
  const RSSolution s = rs_solve_logit(RSTarget::zeta(0.5), 1.0, kML);
  CHECK_FALSE(s.converged);
  CHECK(s.residual > s.tolerance);
  CHECK_FALSE(s.message.empty());
}

TEST_CASE("logit zero-bias")
{
  for (ZeroBiasMode mode : {ZeroBiasMode::Oracle, ZeroBiasMode::Empirical}) {
    const ZeroBiasResult z = zero_bias_logit(1.0, 0.3, mode);
    REQUIRE(z.solution.converged);
    CHECK(std::abs(z.solution.state.w / z.solution.S - 1.0) <= 1e-8);
    CHECK(z.penalty > 0.0);
    CHECK(z.chi > 0.0);
    CHECK(z.chi < 1.0);
    // self-consistency with the plain solver
    const RSSolution s = rs_solve_logit(RSTarget::zeta(0.3), 1.0, z.solution.penalty);
    REQUIRE(s.converged);
    check_same_state(s.state, z.solution.state, 1e-8);
    const AsymptoticMoments m = asymptotic_moments(z.solution, 1.0, 1.0);
    CHECK(m.bias2 <= 1e-15);
  }
  // the oracle prescription closed form
  const ZeroBiasResult o = zero_bias_logit(1.0, 0.2, ZeroBiasMode::Oracle);
  const double mu2 = o.solution.state.mu2;
  CHECK(o.penalty == doctest::Approx((0.2 - o.chi) / (mu2 * 0.2)).epsilon(1e-8));
  const ZeroBiasResult e = zero_bias_logit(1.0, 0.2, ZeroBiasMode::Empirical);
  CHECK(e.penalty == doctest::Approx((0.2 - e.chi) / ((1.0 - e.chi) * e.solution.state.mu2 * 0.2)).epsilon(1e-8));
}

TEST_CASE("zero-bias penalties decrease in zeta")
{
  for (Family fam : {Family::Logit, Family::WeibullPH})
    for (ZeroBiasMode mode : {ZeroBiasMode::Oracle, ZeroBiasMode::Empirical}) {
      double prev = INFINITY;
      for (int k = 1; k <= 6; ++k) {
        const ZeroBiasResult z = zero_bias(fam, 1.0, 0.1 * k, mode);
        REQUIRE(z.solution.converged);
        CHECK(z.penalty < prev);
        CHECK(z.penalty > 0.0);
        prev = z.penalty;
      }
    }
}

TEST_CASE("logit eta* values")
{
  // frozen from an independent fixed-point prototype (double precision)
  const double expect_eta[] = {0.2657, 0.2311, 0.1972, 0.1646, 0.1334, 0.1046};
  const double expect_tau[] = {0.2780, 0.2553, 0.2314, 0.2054, 0.1766, 0.1457};
  for (int k = 1; k <= 6; ++k) {
    CHECK(zero_bias_logit(1.0, 0.1 * k, ZeroBiasMode::Oracle).penalty == doctest::Approx(expect_eta[k - 1]).epsilon(5e-4));
    CHECK(zero_bias_logit(1.0, 0.1 * k, ZeroBiasMode::Empirical).penalty ==
          doctest::Approx(expect_tau[k - 1]).epsilon(5e-4));
  }
}

TEST_CASE("weibull fixed point and target modes")
{
  const RSSolution s = rs_solve_weibull(RSTarget::zeta(0.3), 1.0, kML);
  REQUIRE(s.converged);
  REQUIRE(s.state.nuisance);
  CHECK(s.residual <= 1e-10);
  CHECK(s.state.zeta == 0.3);

  const QuadratureRule h = make_rule(QuadratureKind::GaussHermiteNormal, 40);
  const QuadratureRule e = make_rule(QuadratureKind::GaussLogExp1, 40);
  const Vec5 x = weibull_x(s);
  const Vec5 fx = rs_map_weibull(x, s.state.nuisance->phi_shift, 1.0, kML, e, h);
  CHECK((fx - x).norm() <= 1e-10);

  // zero-penalty identity omega / S = sigma0 / sigma
  CHECK(std::abs(s.state.omega / s.S - 1.0 / s.state.nuisance->sigma_ratio) <= 1e-10);

  const RSSolution f = rs_solve_weibull(RSTarget::phi_shift(s.state.nuisance->phi_shift), 1.0, kML);
  REQUIRE(f.converged);
  CHECK(f.residual <= 1e-10);
  CHECK(std::abs(f.state.zeta - 0.3) <= 1e-8);
  check_same_state(f.state, s.state, 1e-8);

  SolverControls more;
  more.max_iterations = 20000;
  check_same_state(rs_solve_weibull(RSTarget::zeta(0.3), 1.0, kML, more).state, s.state, 1e-10);

  SolverControls o80;
  o80.quadrature_order = 80;
  check_same_state(rs_solve_weibull(RSTarget::zeta(0.3), 1.0, kML, o80).state, s.state, 1e-6);

  const DebiasFactors d = nuisance_debias_factors(s);
  CHECK(d.g == s.state.nuisance->sigma_ratio);
  CHECK(d.h == s.state.nuisance->phi_shift * s.state.nuisance->sigma_ratio);
  CHECK(d.g < 1.0);

  for (const PenaltyConfig& pen : {PenaltyConfig{0.2, 0.0}, PenaltyConfig{0.0, 0.2}}) {
    const RSSolution p = rs_solve_weibull(RSTarget::zeta(0.3), 1.0, pen);
    CHECK(p.converged);
    CHECK(p.residual <= 1e-10);
  }
}

TEST_CASE("weibull small-zeta limit")
{
  const RSSolution s = rs_solve_weibull(RSTarget::zeta(0.02), 1.0, kML);
  REQUIRE(s.converged);
  CHECK(std::abs(s.state.nuisance->sigma_ratio - 1.0) <= 0.03);
  CHECK(std::abs(s.state.omega / s.S - 1.0) <= 0.03);
  const DebiasFactors d = nuisance_debias_factors(1.0, 0.005, kML);
  CHECK(std::abs(d.h) <= 0.01);
  CHECK(std::abs(d.g - 1.0) <= 0.01);
}

TEST_CASE("weibull zero-bias")
{
  for (ZeroBiasMode mode : {ZeroBiasMode::Oracle, ZeroBiasMode::Empirical}) {
    const ZeroBiasResult z = zero_bias_weibull(1.0, 0.3, mode);
    REQUIRE(z.solution.converged);
    CHECK(std::abs(z.solution.state.w / z.solution.S - 1.0) <= 1e-8);
    const double g = z.solution.state.nuisance->sigma_ratio, mu2 = z.solution.state.mu2;
    if (mode == ZeroBiasMode::Oracle) CHECK(z.penalty == doctest::Approx((1.0 - g) / mu2).epsilon(1e-8));
    else CHECK(z.penalty == doctest::Approx((1.0 - g) / ((1.0 - 0.3 * g) * mu2)).epsilon(1e-8));
    const RSSolution s = rs_solve_weibull(RSTarget::zeta(0.3), 1.0, z.solution.penalty);
    REQUIRE(s.converged);
    check_same_state(s.state, z.solution.state, 1e-8);
  }
  CHECK(zero_bias_weibull(1.0, 0.3, ZeroBiasMode::Oracle).penalty == doctest::Approx(0.26085).epsilon(1e-4));
}

TEST_CASE("asymptotic moments")
{
  RSSolution s;
  s.S = 2.0;
  s.state.w = 2.5;
  s.state.v = 0.4;
  AsymptoticMoments m = asymptotic_moments(s, 2.0, 1.0);
  CHECK(m.bias2 == doctest::Approx(4.0 * 0.25 * 0.25));
  CHECK(m.variance == doctest::Approx(0.16));
  CHECK(m.mse == doctest::Approx(0.25 + 0.16));
  m = asymptotic_moments(s, 1.0, 2.0);
  CHECK(m.bias2 == doctest::Approx(0.0625));
  CHECK(m.variance == doctest::Approx(0.32));
}

TEST_CASE("solver argument errors and warnings")
{
  CHECK_THROWS_AS(rs_solve_logit(RSTarget::zeta(0.3), 0.0, kML), InvalidArgument);
  CHECK_THROWS_AS(rs_solve_logit(RSTarget::zeta(-0.3), 1.0, kML), InvalidArgument);
  CHECK_THROWS_AS(rs_solve_logit(RSTarget::zeta(0.3), 1.0, {-1.0, 0.0}), InvalidArgument);
  CHECK_THROWS_AS(rs_solve_logit(RSTarget::phi_shift(0.1), 1.0, kML), InvalidArgument);
  CHECK_THROWS_AS(rs_solve_weibull(RSTarget::mu2(0.1), 1.0, kML), InvalidArgument);
  CHECK_THROWS_AS(zero_bias_logit(1.0, 0.0, ZeroBiasMode::Oracle), InvalidArgument);

  RSSolution ml;
  ml.family = Family::Logit;
  CHECK_THROWS_AS(nuisance_debias_factors(ml), InvalidArgument);

  const RSSolution w = rs_solve_logit(RSTarget::zeta(0.9), 1.0, {0.0, 0.5});
  CHECK_FALSE(w.warnings.empty());
  const RSSolution nw = rs_solve_logit(RSTarget::zeta(0.9), 1.0, {0.5, 0.0});
  CHECK(nw.warnings.empty());
}

TEST_CASE("solution json")
{
  const RSSolution s = rs_solve_weibull(RSTarget::zeta(0.1), 1.0, {0.1, 0.0});
  const nlohmann::json j = s;
  for (const char* k : {"model", "S", "zeta", "eta_prime", "tau_prime", "order", "tolerance", "state", "iterations",
                        "residual", "converged", "warnings"})
    CHECK(j.contains(k));
  for (const char* k : {"u2", "v", "w", "mu2", "nu", "omega", "nuisance"}) CHECK(j["state"].contains(k));
  CHECK(j["model"] == "weibull");
  CHECK(j["state"]["nuisance"]["g"].get<double>() == s.state.nuisance->sigma_ratio);
}
