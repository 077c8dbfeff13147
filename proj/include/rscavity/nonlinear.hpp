#pragma once

#include <functional>

#include <Eigen/Dense>

namespace rscavity {

struct LMOptions {
  double tolerance = 1e-10;  // on the Euclidean norm of the residual
  int max_iterations = 200;
  double fd_step = 1e-7;
  double lambda0 = 1e-3;
};

struct LMResult {
  Eigen::VectorXd x;
  Eigen::VectorXd residual;
  double residual_norm = 0.0;
  int iterations = 0;
  int evaluations = 0;
  bool converged = false;
};

/// Residual function; may throw, or return non-finite entries, to signal an
/// infeasible trial point.
using ResidualFn = std::function<Eigen::VectorXd(const Eigen::VectorXd&)>;

/// Levenberg-Marquardt on a square system F(x) = 0 with a forward-difference
/// Jacobian. Non-finite or throwing evaluations are treated as rejected steps.
LMResult solve_levenberg_marquardt(const ResidualFn& F, const Eigen::VectorXd& x0, const LMOptions& opt = {});

}  // namespace rscavity
