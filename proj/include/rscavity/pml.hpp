#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "json.hpp"
#include "rscavity/glm.hpp"
#include "rscavity/population.hpp"
#include "rscavity/rs_solver.hpp"

namespace rscavity {

struct FitControls {
  int max_iterations = 200;
  double gradient_tolerance = 1e-8;  // relative to max(1, |objective|)
  double armijo_slope = 1e-4;
  double backtrack = 0.5;
};

struct FitResult {
  Eigen::VectorXd beta_hat;
  NuisanceParams nuisance_hat;  // Weibull only
  double objective = 0.0;
  double gradient_norm = 0.0;
  int iterations = 0;
  bool converged = false;
  std::vector<double> objective_trace;  // value after each accepted step
  std::vector<std::string> warnings;
};

/// p (tau' X^T X / n + eta' A0): the quadratic form of the penalty (times 2).
Eigen::MatrixXd penalty_matrix(const Eigen::MatrixXd& X, const Eigen::MatrixXd& A0, const PenaltyConfig& pen);

/// Penalized log-likelihood sum_i log p(T_i | X_i beta) - beta^T P beta / 2 at
/// theta = beta (Logit) or theta = (beta, phi, log sigma) (Weibull), with its
/// gradient and Hessian in theta.
struct ObjectiveEval {
  double value = 0.0;
  Eigen::VectorXd gradient;
  Eigen::MatrixXd hessian;
};

ObjectiveEval pml_objective(const Eigen::MatrixXd& X, const Eigen::VectorXd& responses, Family family,
                            const Eigen::MatrixXd& P, const Eigen::VectorXd& theta, bool with_hessian = true);

/// Newton's method with Levenberg damping and Armijo backtracking.
FitResult fit_pml(const Eigen::MatrixXd& X, const Eigen::VectorXd& responses, Family family,
                  const PopulationSpec& spec, const PenaltyConfig& pen, const FitControls& controls = {});

/// Responses for the design under the population's beta0: labels +-1 for Logit,
/// event times for Weibull.
Eigen::VectorXd sample_responses(const Eigen::MatrixXd& X, const Eigen::VectorXd& beta0, Family family,
                                 const NuisanceParams& truth, Rng& rng);

struct OverlapSample {
  double K_n = 0.0;
  double V_n = 0.0;
  int replicate_id = 0;
  std::uint64_t seed = 0;
};

OverlapSample compute_overlaps(const Eigen::VectorXd& beta_hat, const PopulationSpec& spec);
OverlapSample compute_overlaps(const FitResult& fit, const PopulationSpec& spec);

/// sigma_c = sigma_hat / g, phi_c = phi_hat - sigma_c h.
NuisanceParams corrected_nuisance(const NuisanceParams& fitted, const DebiasFactors& factors);

void to_json(nlohmann::json& j, const FitResult& f);
void to_json(nlohmann::json& j, const OverlapSample& o);

}  // namespace rscavity
