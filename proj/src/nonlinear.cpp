#include "rscavity/nonlinear.hpp"

#include <cmath>
#include <exception>
#include <limits>
#include <optional>

namespace rscavity {

namespace {

std::optional<Eigen::VectorXd> try_eval(const ResidualFn& F, const Eigen::VectorXd& x, int& count)
{
  ++count;
  try {
    Eigen::VectorXd r = F(x);
    if (!r.allFinite()) return std::nullopt;
    return r;
  } catch (const std::exception&) {
    return std::nullopt;
  }
}

}  // namespace

LMResult solve_levenberg_marquardt(const ResidualFn& F, const Eigen::VectorXd& x0, const LMOptions& opt)
{
  LMResult out;
  out.x = x0;
  auto r0 = try_eval(F, x0, out.evaluations);
  if (!r0) {
    out.residual = Eigen::VectorXd::Constant(x0.size(), std::numeric_limits<double>::quiet_NaN());
    out.residual_norm = std::numeric_limits<double>::infinity();
    return out;
  }
  Eigen::VectorXd r = *r0;
  double norm = r.norm();
  double lambda = opt.lambda0;
  const int n = int(x0.size());

  for (int it = 0; it < opt.max_iterations && norm > opt.tolerance; ++it) {
    out.iterations = it + 1;
    Eigen::MatrixXd J(r.size(), n);
    bool jac_ok = true;
    for (int j = 0; j < n && jac_ok; ++j) {
      Eigen::VectorXd xp = out.x;
      double h = opt.fd_step * std::max(1.0, std::abs(xp[j]));
      xp[j] += h;
      auto rp = try_eval(F, xp, out.evaluations);
      if (!rp) {
        xp[j] = out.x[j] - h;
        rp = try_eval(F, xp, out.evaluations);
        h = -h;
      }
      if (!rp) jac_ok = false;
      else J.col(j) = (*rp - r) / h;
    }
    if (!jac_ok) break;

    const Eigen::MatrixXd JtJ = J.transpose() * J;
    const Eigen::VectorXd g = J.transpose() * r;
    bool accepted = false;
    for (int tries = 0; tries < 30; ++tries) {
      Eigen::MatrixXd A = JtJ;
      for (int k = 0; k < n; ++k) A(k, k) += lambda * std::max(JtJ(k, k), 1e-12);
      const Eigen::VectorXd dx = A.ldlt().solve(-g);
      if (!dx.allFinite()) {
        lambda *= 10.0;
        continue;
      }
      const Eigen::VectorXd xn = out.x + dx;
      auto rn = try_eval(F, xn, out.evaluations);
      if (rn && rn->norm() < norm) {
        out.x = xn;
        r = *rn;
        norm = rn->norm();
        lambda = std::max(lambda / 5.0, 1e-12);
        accepted = true;
        break;
      }
      lambda *= 4.0;
    }
    if (!accepted) break;
  }
  out.residual = r;
  out.residual_norm = norm;
  out.converged = norm <= opt.tolerance;
  return out;
}

}  // namespace rscavity
