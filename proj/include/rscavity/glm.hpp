#pragma once

#include <functional>
#include <string>
#include <string_view>

#include "rscavity/rng.hpp"

namespace rscavity {

enum class Family { Logit, WeibullPH };

std::string_view family_name(Family f);
Family parse_family(std::string_view name);

/// Number of nuisance parameters carried by the family (0 for Logit, 2 for Weibull).
int nuisance_dim(Family f);

/// Weibull nuisance parameters in the H(T) = exp(phi/sigma) T^(1/sigma) parametrization.
struct NuisanceParams {
  double phi = 0.0;
  double sigma = 1.0;
};

// ---- Logit: p(t|y) = exp(t y) / (2 cosh y), t in {-1, +1} ----

double logit_logdensity(int t, double y);
int sample_logit(double y, Rng& rng);

/// Unique root of x + b tanh(x) = a for b >= 0 (safeguarded Newton on [a-b, a+b]).
double solve_tanh_fixed_point(double a, double b);

/// Proximal point argmin_y { (y - x)^2 / (2 mu2) - log p(t|y) } of the Logit log-density.
double logit_proximal(double x, double mu2, int t);

// ---- Lambert W, principal branch ----

double lambert_w0(double x);

/// W0(exp(log_x)), accurate when exp(log_x) would overflow or underflow.
double lambert_w0_from_log(double log_x);

// ---- Weibull proportional hazards ----

double weibull_H(double t, const NuisanceParams& nu);
double weibull_logdensity(double t, double y, const NuisanceParams& nu);

/// T = H^{-1}(Z e^{-y}) with Z ~ Exp(1).
double sample_weibull(double y, const NuisanceParams& truth, Rng& rng);

/// Inverse of the change of variable: returns Z for a draw T.
double weibull_unit_exponential(double t, double y, const NuisanceParams& truth);

/// xi = x + mu2 - W(H mu2 exp(mu2 + x)); solves (xi - x)/mu2 = 1 - H exp(xi).
double weibull_proximal(double x, double mu2, double H_val);

struct ScoreHessian {
  double score = 0.0;      // d log p / dy
  double curvature = 0.0;  // d^2 log p / dy^2
  double d_phi = 0.0;      // Weibull only
  double d_sigma = 0.0;    // Weibull only
};

/// Derivatives of log p(t|y, nuisance) in the linear predictor and the nuisance
/// parameters. For Logit the response is +-1 and the nuisance is ignored.
ScoreHessian glm_score_hessian(Family family, double response, double y, const NuisanceParams& nu = {});

/// Proximal point of an arbitrary concave log-density, by bisection on a central
/// difference of the prox objective. Slow; intended for testing closed forms and
/// for prototyping new families.
double numeric_proximal(const std::function<double(double)>& logdensity, double x, double mu2);

}  // namespace rscavity
