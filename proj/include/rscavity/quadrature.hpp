#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <type_traits>
#include <vector>

#include <Eigen/Core>

#include "rscavity/error.hpp"

namespace rscavity {

enum class QuadratureKind {
  GaussHermiteNormal,  // Z ~ N(0, 1)
  GaussLaguerreExp1,   // Z ~ Exp(1), polynomial exactness in z
  GaussLogExp1,        // Z ~ Exp(1), polynomial exactness in log z
  Tabulated,           // arbitrary density, see make_rule_for_density
};

/// Probability-normalized Gauss rule: sum_i weights[i] f(nodes[i]) ~ E[f(Z)].
struct QuadratureRule {
  QuadratureKind kind = QuadratureKind::GaussHermiteNormal;
  int order = 0;
  std::vector<double> nodes;
  std::vector<double> weights;
  // log(nodes) for the Exp(1) kinds; computed from the underlying variable
  // for GaussLogExp1 so no precision is lost at tiny z.
  std::vector<double> log_nodes;
  // total mass of the weight function before normalization
  double mass = 1.0;

  double expect(auto&& f) const
  {
    double acc = 0.0;
    for (std::size_t i = 0; i < nodes.size(); ++i) acc += weights[i] * f(nodes[i]);
    return acc;
  }
};

/// Builds the rule from the three-term recurrence of the orthogonal
/// polynomials: nodes are eigenvalues of the Jacobi matrix (Golub-Welsch),
/// weights come from the Christoffel function.
QuadratureRule make_rule(QuadratureKind kind, int order);

/// Gauss rule for a smooth nonnegative density on [lo, hi], via a discretized
/// Stieltjes procedure on a trapezoid grid of `grid` points.
QuadratureRule make_rule_for_density(const std::function<double(double)>& density, double lo, double hi, int order,
                                     int grid = 16000);

/// Default order used throughout the solver.
inline constexpr int kDefaultQuadratureOrder = 40;

namespace detail {

template <class T>
bool all_finite(const T& v)
{
  if constexpr (std::is_arithmetic_v<T>)
    return std::isfinite(v);
  else
    return v.allFinite();
}

template <class T>
T zero_like()
{
  if constexpr (std::is_arithmetic_v<T>)
    return T(0);
  else
    return T::Zero();
}

[[noreturn]] void throw_nonfinite(const std::string& where);

}  // namespace detail

/// E over T, Q, Z0 with Q, Z0 ~ N(0,1) independent and
/// P(T = t | Z0) = exp(t S Z0) / (2 cosh(S Z0)):
///   sum_t sum_j sum_k w_j w_k p(t|S z0_k) f(t, q_j, z0_k).
/// f may return a double or a fixed-size Eigen array.
template <class F>
auto expect_logit(F&& f, double S, const QuadratureRule& hermite)
{
  using R = std::decay_t<decltype(f(1, 0.0, 0.0))>;
  R acc = detail::zero_like<R>();
  const std::size_t m = hermite.nodes.size();
  for (std::size_t k = 0; k < m; ++k) {
    const double z0 = hermite.nodes[k];
    const double y = S * z0;
    // P(+1) without overflow
    const double p_plus = y >= 0.0 ? 1.0 / (1.0 + std::exp(-2.0 * y)) : std::exp(2.0 * y) / (1.0 + std::exp(2.0 * y));
    const double p_minus = 1.0 - p_plus;
    for (std::size_t j = 0; j < m; ++j) {
      const double q = hermite.nodes[j];
      const double wjk = hermite.weights[j] * hermite.weights[k];
      for (int t : {-1, 1}) {
        R v = f(t, q, z0);
        if (!detail::all_finite(v))
          detail::throw_nonfinite("expect_logit: non-finite integrand at t=" + std::to_string(t) +
                                  ", q=" + std::to_string(q) + ", z0=" + std::to_string(z0));
        acc += (wjk * (t > 0 ? p_plus : p_minus)) * v;
      }
    }
  }
  return acc;
}

/// E over Z ~ Exp(1), Q, Z0 ~ N(0,1), all independent. f receives
/// (z, log z, q, z0).
template <class F>
auto expect_weibull(F&& f, const QuadratureRule& exp_rule, const QuadratureRule& hermite)
{
  using R = std::decay_t<decltype(f(1.0, 0.0, 0.0, 0.0))>;
  R acc = detail::zero_like<R>();
  const std::size_t m = hermite.nodes.size();
  for (std::size_t i = 0; i < exp_rule.nodes.size(); ++i) {
    const double z = exp_rule.nodes[i];
    const double lz = exp_rule.log_nodes[i];
    for (std::size_t k = 0; k < m; ++k) {
      const double z0 = hermite.nodes[k];
      R inner = detail::zero_like<R>();
      for (std::size_t j = 0; j < m; ++j) {
        const double q = hermite.nodes[j];
        R v = f(z, lz, q, z0);
        if (!detail::all_finite(v))
          detail::throw_nonfinite("expect_weibull: non-finite integrand at z=" + std::to_string(z) +
                                  ", q=" + std::to_string(q) + ", z0=" + std::to_string(z0));
        inner += hermite.weights[j] * v;
      }
      acc += (exp_rule.weights[i] * hermite.weights[k]) * inner;
    }
  }
  return acc;
}

/// Convenience overload for integrands written in (z, q, z0).
template <class F>
  requires std::is_invocable_v<F, double, double, double>
auto expect_weibull(F&& f, const QuadratureRule& exp_rule, const QuadratureRule& hermite)
{
  return expect_weibull([&](double z, double, double q, double z0) { return f(z, q, z0); }, exp_rule, hermite);
}

}  // namespace rscavity
