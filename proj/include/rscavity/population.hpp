#pragma once

#include <cstdint>
#include <optional>

#include <Eigen/Dense>

#include "json.hpp"
#include "rscavity/rng.hpp"

namespace rscavity {

struct EigSupport {
  double lo = 0.1;
  double hi = 10.0;
};

/// Synthetic population: covariance A0 of the covariates, the true parameter
/// vector and the scalars the asymptotic theory depends on.
struct PopulationSpec {
  int p = 0;
  Eigen::MatrixXd A0;
  Eigen::VectorXd beta0;
  double S = 0.0;       // sqrt(beta0 . A0 beta0)
  double S0 = 0.0;      // |beta0|
  double alpha2 = 0.0;  // Tr(A0^{-1}) / p

  // Spectral data: A0 = rotation * diag(eigenvalues) * rotation^T.
  Eigen::MatrixXd rotation;
  Eigen::VectorXd eigenvalues;
  double scale = 1.0;  // common factor applied to the raw spectrum
  std::optional<std::uint64_t> seed;

  /// Symmetric square root of A0.
  Eigen::MatrixXd sqrt_A0() const;
};

/// Haar-distributed orthogonal matrix: QR of a Gaussian matrix with the
/// signs of diag(R) folded into Q.
Eigen::MatrixXd sample_haar_orthogonal(int p, Rng& rng);

/// A0 = O diag(lambda) O^T with lambda ~ Uniform(support), rescaled by the
/// common factor that makes beta0 . A0 beta0 = S_target^2, beta0 = e1.
PopulationSpec build_population(int p, EigSupport support, double S_target, Rng& rng);

/// Wraps an explicit covariance and parameter vector (for tests and replay).
PopulationSpec population_from_covariance(const Eigen::MatrixXd& A0, const Eigen::VectorXd& beta0);

/// Tr(A0^{-1}) / p through a Cholesky factorization.
double alpha_squared(const Eigen::MatrixXd& A0);

/// n rows drawn i.i.d. from N(0, A0).
Eigen::MatrixXd sample_covariates(int n, const PopulationSpec& spec, Rng& rng);

void to_json(nlohmann::json& j, const PopulationSpec& spec);
void from_json(const nlohmann::json& j, PopulationSpec& spec);

}  // namespace rscavity
