#pragma once

#include <optional>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "json.hpp"
#include "rscavity/glm.hpp"
#include "rscavity/quadrature.hpp"

namespace rscavity {

struct PenaltyConfig {
  double eta_prime = 0.0;  // oracle strength
  double tau_prime = 0.0;  // empirical strength
};

/// Weibull nuisance order parameters.
struct WeibullNuisance {
  double sigma_ratio = 1.0;  // g = sigma / sigma0
  double phi_shift = 0.0;    // s = (phi - phi0) / sigma
  double h() const { return phi_shift * sigma_ratio; }
};

struct RSState {
  double zeta = 0.0;
  double u2 = 0.0;
  double v = 0.0;
  double w = 0.0;
  double mu2 = 0.0;
  double nu = 0.0;
  double omega = 0.0;
  std::optional<WeibullNuisance> nuisance;
};

/// Builds a consistent state from the rescaled parameters (mu2, nu, omega).
RSState state_from_rescaled(double zeta, double mu2, double nu, double omega, const PenaltyConfig& pen);
/// Builds a consistent state from the raw order parameters (u2, v, w).
RSState state_from_raw(double zeta, double u2, double v, double w, const PenaltyConfig& pen);

enum class SolveTarget { FixedZeta, FixedMu2, FixedPhiShift };

struct RSTarget {
  SolveTarget kind = SolveTarget::FixedZeta;
  double value = 0.0;

  static RSTarget zeta(double z) { return {SolveTarget::FixedZeta, z}; }
  static RSTarget mu2(double m) { return {SolveTarget::FixedMu2, m}; }
  static RSTarget phi_shift(double s) { return {SolveTarget::FixedPhiShift, s}; }
};

struct SolverControls {
  double tolerance = 1e-10;
  int max_iterations = 10000;
  double damping = 0.5;
  int quadrature_order = kDefaultQuadratureOrder;
  QuadratureKind exp_rule = QuadratureKind::GaussLogExp1;
  // Starting point. If unset, fixed-zeta solves start from the small-zeta
  // asymptotics and fixed-mu2 / fixed-phi-shift iterations from
  // (zeta, nu, omega) = (0.5, 0.5, S/2), (mu, g) = (1, 1).
  std::optional<RSState> initial;
  bool continuation = true;
};

struct RSSolution {
  Family family = Family::Logit;
  RSState state;
  PenaltyConfig penalty;
  double S = 0.0;
  int iterations = 0;
  double residual = 0.0;
  bool converged = false;
  int quadrature_order = kDefaultQuadratureOrder;
  double tolerance = 1e-10;
  std::vector<std::string> warnings;
  std::string message;
};

// ---- Logit ----

/// One application of the Logit RS map at fixed mu2: x = (zeta, nu, omega) -> x'.
Eigen::Vector3d rs_map_logit(const Eigen::Vector3d& x, double mu2, double S, const PenaltyConfig& pen,
                             const QuadratureRule& hermite);

RSSolution rs_solve_logit(const RSTarget& target, double S, const PenaltyConfig& pen,
                          const SolverControls& controls = {});

enum class ZeroBiasMode { Oracle, Empirical };

struct ZeroBiasResult {
  ZeroBiasMode mode = ZeroBiasMode::Oracle;
  double penalty = 0.0;  // eta* or tau*
  double chi = 0.0;      // Logit only
  RSSolution solution;
};

ZeroBiasResult zero_bias_logit(double S, double zeta, ZeroBiasMode mode, const SolverControls& controls = {});

// ---- Weibull ----

/// One application of the Weibull RS map at fixed phi_shift:
/// x = (zeta, nu, omega, mu, sigma_ratio) -> x'.
Eigen::Matrix<double, 5, 1> rs_map_weibull(const Eigen::Matrix<double, 5, 1>& x, double phi_shift, double S,
                                           const PenaltyConfig& pen, const QuadratureRule& exp_rule,
                                           const QuadratureRule& hermite);

RSSolution rs_solve_weibull(const RSTarget& target, double S, const PenaltyConfig& pen,
                            const SolverControls& controls = {});

ZeroBiasResult zero_bias_weibull(double S, double zeta, ZeroBiasMode mode, const SolverControls& controls = {});

struct DebiasFactors {
  double h = 0.0;  // asymptotic (phi_hat - phi0) / sigma0
  double g = 1.0;  // asymptotic sigma_hat / sigma0
};

DebiasFactors nuisance_debias_factors(const RSSolution& weibull_solution);
DebiasFactors nuisance_debias_factors(double S, double zeta, const PenaltyConfig& pen,
                                      const SolverControls& controls = {});

// ---- common ----

struct AsymptoticMoments {
  double bias2 = 0.0;
  double variance = 0.0;
  double mse = 0.0;
};

AsymptoticMoments asymptotic_moments(const RSSolution& sol, double S0, double alpha2);

/// Dispatches on family.
RSSolution rs_solve(Family family, const RSTarget& target, double S, const PenaltyConfig& pen,
                    const SolverControls& controls = {});
ZeroBiasResult zero_bias(Family family, double S, double zeta, ZeroBiasMode mode,
                         const SolverControls& controls = {});

std::string_view zero_bias_mode_name(ZeroBiasMode m);

void to_json(nlohmann::json& j, const RSState& s);
void to_json(nlohmann::json& j, const RSSolution& s);
void from_json(const nlohmann::json& j, RSState& s);
void from_json(const nlohmann::json& j, RSSolution& s);

}  // namespace rscavity
