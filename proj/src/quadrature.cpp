#include "rscavity/quadrature.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <Eigen/Eigenvalues>

namespace rscavity {

namespace detail {

void throw_nonfinite(const std::string& where) { throw EvaluationError(where); }

}  // namespace detail

namespace {

// Monic recurrence p_{k+1} = (x - a_k) p_k - b_k p_{k-1}, b_0 = total mass = 1.
struct Recurrence {
  std::vector<double> a;
  std::vector<double> b;
};

Recurrence hermite_recurrence(int n)
{
  Recurrence r;
  r.a.assign(n, 0.0);
  r.b.resize(n);
  for (int k = 0; k < n; ++k) r.b[k] = k == 0 ? 1.0 : double(k);
  return r;
}

Recurrence laguerre_recurrence(int n)
{
  Recurrence r;
  r.a.resize(n);
  r.b.resize(n);
  for (int k = 0; k < n; ++k) {
    r.a[k] = 2.0 * k + 1.0;
    r.b[k] = k == 0 ? 1.0 : double(k) * double(k);
  }
  return r;
}

// Discretized Stieltjes procedure on a fixed grid with (unnormalized) weights w.
Recurrence stieltjes_recurrence(const Eigen::ArrayXd& x, Eigen::ArrayXd w, int n)
{
  w /= w.sum();
  Recurrence r;
  r.a.resize(n);
  r.b.resize(n);
  // Normalized polynomials avoid overflow of the monic ones far from the bulk.
  Eigen::ArrayXd prev = Eigen::ArrayXd::Zero(x.size());
  Eigen::ArrayXd cur = Eigen::ArrayXd::Ones(x.size());
  double sb_prev = 0.0;
  for (int k = 0; k < n; ++k) {
    const double a = (w * x * cur * cur).sum();
    r.a[k] = a;
    r.b[k] = k == 0 ? 1.0 : sb_prev * sb_prev;
    Eigen::ArrayXd next = (x - a) * cur - sb_prev * prev;
    const double nrm = std::sqrt((w * next * next).sum());
    prev = cur;
    cur = next / nrm;
    sb_prev = nrm;
  }
  return r;
}

// density of L = log Z, Z ~ Exp(1): exp(l - e^l)
Recurrence log_exp1_recurrence(int n)
{
  const int M = 8000;
  const double lo = -60.0, hi = 6.0;
  const double h = (hi - lo) / (M - 1);
  Eigen::ArrayXd x(M), w(M);
  for (int i = 0; i < M; ++i) {
    x[i] = lo + h * i;
    w[i] = std::exp(x[i] - std::exp(x[i]));
  }
  return stieltjes_recurrence(x, w, n);
}

QuadratureRule gauss_from_recurrence(const Recurrence& r, int n)
{
  Eigen::VectorXd diag(n), sub(std::max(n - 1, 0));
  for (int k = 0; k < n; ++k) diag[k] = r.a[k];
  for (int k = 1; k < n; ++k) sub[k - 1] = std::sqrt(r.b[k]);

  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es;
  es.computeFromTridiagonal(diag, sub, Eigen::EigenvaluesOnly);
  if (es.info() != Eigen::Success) throw ConvergenceError("make_rule: tridiagonal eigensolver failed");

  QuadratureRule rule;
  rule.order = n;
  rule.nodes.resize(n);
  rule.weights.resize(n);
  for (int i = 0; i < n; ++i) {
    double x = es.eigenvalues()[i];
    // orthonormal recurrence: Newton polish on p_n, then Christoffel weight
    for (int it = 0; it < 3; ++it) {
      double p0 = 1.0, p1 = 0.0, d0 = 0.0, d1 = 0.0;
      for (int k = 0; k < n; ++k) {
        const double sbk = k == 0 ? 0.0 : std::sqrt(r.b[k]);
        const double sbk1 = std::sqrt(k + 1 < n ? r.b[k + 1] : r.b[k]);
        const double p2 = ((x - r.a[k]) * p0 - sbk * p1) / sbk1;
        const double d2 = (p0 + (x - r.a[k]) * d0 - sbk * d1) / sbk1;
        p1 = p0;
        p0 = p2;
        d1 = d0;
        d0 = d2;
      }
      if (d0 == 0.0 || !std::isfinite(p0 / d0)) break;
      const double step = p0 / d0;
      if (std::abs(step) > 1e-8 * (1.0 + std::abs(x))) break;
      x -= step;
    }
    double s = 0.0, p0 = 1.0, p1 = 0.0;
    for (int k = 0; k < n; ++k) {
      s += p0 * p0;
      if (k + 1 == n || s > 1e300) break;
      const double sbk = k == 0 ? 0.0 : std::sqrt(r.b[k]);
      const double p2 = ((x - r.a[k]) * p0 - sbk * p1) / std::sqrt(r.b[k + 1]);
      p1 = p0;
      p0 = p2;
    }
    rule.nodes[i] = x;
    // far tail nodes: weight below double range
    rule.weights[i] = s > 1e300 || !std::isfinite(s) ? 0.0 : 1.0 / s;
  }
  const double total = std::accumulate(rule.weights.begin(), rule.weights.end(), 0.0);
  for (double& w : rule.weights) w /= total;
  return rule;
}

}  // namespace

QuadratureRule make_rule(QuadratureKind kind, int order)
{
  if (order < 1) throw InvalidArgument("make_rule: order must be >= 1");
  QuadratureRule rule;
  switch (kind) {
    case QuadratureKind::GaussHermiteNormal: {
      rule = gauss_from_recurrence(hermite_recurrence(order), order);
      // exact symmetry
      const int n = order;
      for (int i = 0; i < n / 2; ++i) {
        const double x = 0.5 * (rule.nodes[n - 1 - i] - rule.nodes[i]);
        const double w = 0.5 * (rule.weights[n - 1 - i] + rule.weights[i]);
        rule.nodes[i] = -x;
        rule.nodes[n - 1 - i] = x;
        rule.weights[i] = rule.weights[n - 1 - i] = w;
      }
      if (n % 2 == 1) rule.nodes[n / 2] = 0.0;
      break;
    }
    case QuadratureKind::GaussLaguerreExp1:
      rule = gauss_from_recurrence(laguerre_recurrence(order), order);
      rule.log_nodes.resize(order);
      for (int i = 0; i < order; ++i) rule.log_nodes[i] = std::log(rule.nodes[i]);
      break;
    case QuadratureKind::GaussLogExp1:
      rule = gauss_from_recurrence(log_exp1_recurrence(order), order);
      rule.log_nodes = rule.nodes;
      for (int i = 0; i < order; ++i) rule.nodes[i] = std::exp(rule.log_nodes[i]);
      break;
    case QuadratureKind::Tabulated:
      throw InvalidArgument("make_rule: tabulated rules need a density");
  }
  rule.kind = kind;
  rule.order = order;
  return rule;
}

QuadratureRule make_rule_for_density(const std::function<double(double)>& density, double lo, double hi, int order,
                                     int grid)
{
  if (order < 1) throw InvalidArgument("make_rule_for_density: order must be >= 1");
  if (!(hi > lo) || grid < 4 * order) throw InvalidArgument("make_rule_for_density: bad grid");
  const double h = (hi - lo) / (grid - 1);
  Eigen::ArrayXd x(grid), w(grid);
  for (int i = 0; i < grid; ++i) {
    x[i] = lo + h * i;
    w[i] = density(x[i]);
    if (!(w[i] >= 0.0) || !std::isfinite(w[i])) throw InvalidArgument("make_rule_for_density: density must be finite and >= 0");
  }
  const double mass = h * (w.sum() - 0.5 * (w[0] + w[grid - 1]));
  if (!(mass > 0.0)) throw InvalidArgument("make_rule_for_density: zero mass");
  QuadratureRule rule = gauss_from_recurrence(stieltjes_recurrence(x, w, order), order);
  rule.kind = QuadratureKind::Tabulated;
  rule.order = order;
  rule.mass = mass;
  return rule;
}

}  // namespace rscavity
