#include "rscavity/pml.hpp"

#include <cmath>
#include <limits>

#include "rscavity/error.hpp"

namespace rscavity {

Eigen::MatrixXd penalty_matrix(const Eigen::MatrixXd& X, const Eigen::MatrixXd& A0, const PenaltyConfig& pen)
{
  const Eigen::Index n = X.rows(), p = X.cols();
  Eigen::MatrixXd P = Eigen::MatrixXd::Zero(p, p);
  if (pen.tau_prime > 0.0) {
    P.selfadjointView<Eigen::Lower>().rankUpdate(X.transpose(), double(p) * pen.tau_prime / double(n));
    P.triangularView<Eigen::StrictlyUpper>() = P.transpose();
  }
  if (pen.eta_prime > 0.0) {
    if (A0.rows() != p || A0.cols() != p) throw InvalidArgument("penalty_matrix: A0 has the wrong size");
    P += double(p) * pen.eta_prime * A0;
  }
  return P;
}

ObjectiveEval pml_objective(const Eigen::MatrixXd& X, const Eigen::VectorXd& resp, Family family,
                            const Eigen::MatrixXd& P, const Eigen::VectorXd& theta, bool with_hessian)
{
  const Eigen::Index n = X.rows(), p = X.cols();
  const int extra = nuisance_dim(family);
  if (theta.size() != p + extra) throw InvalidArgument("pml_objective: theta has the wrong size");
  if (resp.size() != n) throw InvalidArgument("pml_objective: responses have the wrong size");

  const Eigen::VectorXd beta = theta.head(p);
  const Eigen::VectorXd y = X * beta;
  const Eigen::VectorXd Pb = P * beta;
  ObjectiveEval ev;
  ev.gradient.resize(p + extra);
  Eigen::VectorXd score(n), curv(n);

  if (family == Family::Logit) {
    double ll = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
      const int t = resp[i] > 0.0 ? 1 : -1;
      ll += logit_logdensity(t, y[i]);
      const double th = std::tanh(y[i]);
      score[i] = t - th;
      curv[i] = 1.0 - th * th;
    }
    ev.value = ll - 0.5 * beta.dot(Pb);
    ev.gradient = X.transpose() * score - Pb;
    if (with_hessian) {
      const Eigen::MatrixXd Xw = X.array().colwise() * curv.array().sqrt();
      ev.hessian = -P;
      ev.hessian.selfadjointView<Eigen::Lower>().rankUpdate(Xw.transpose(), -1.0);
      ev.hessian.triangularView<Eigen::StrictlyUpper>() = ev.hessian.transpose();
    }
    return ev;
  }

  const double phi = theta[p], lam = theta[p + 1];
  const double sigma = std::exp(lam);
  double ll = 0.0, g_phi = 0.0, g_lam = 0.0, h_pp = 0.0, h_pl = 0.0, h_ll = 0.0;
  Eigen::VectorXd d_phi(n), d_lam(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    if (!(resp[i] > 0.0)) throw DomainError("pml_objective: Weibull times must be positive");
    const double lt = std::log(resp[i]);
    const double l = (phi + lt) / sigma;
    const double E = std::exp(l + y[i]);
    ll += l - lam - lt + y[i] - E;
    score[i] = 1.0 - E;
    curv[i] = E;
    g_phi += (1.0 - E) / sigma;
    g_lam += -l * (1.0 - E) - 1.0;
    d_phi[i] = -E / sigma;
    d_lam[i] = E * l;
    h_pp += -E / (sigma * sigma);
    h_pl += (E * l - 1.0 + E) / sigma;
    h_ll += l * (1.0 - E) - l * l * E;
  }
  ev.value = ll - 0.5 * beta.dot(Pb);
  ev.gradient.head(p) = X.transpose() * score - Pb;
  ev.gradient[p] = g_phi;
  ev.gradient[p + 1] = g_lam;
  if (with_hessian) {
    ev.hessian.resize(p + 2, p + 2);
    Eigen::MatrixXd Hbb = -P;
    const Eigen::MatrixXd Xw = X.array().colwise() * curv.array().sqrt();
    Hbb.selfadjointView<Eigen::Lower>().rankUpdate(Xw.transpose(), -1.0);
    Hbb.triangularView<Eigen::StrictlyUpper>() = Hbb.transpose();
    ev.hessian.topLeftCorner(p, p) = Hbb;
    ev.hessian.block(0, p, p, 1) = X.transpose() * d_phi;
    ev.hessian.block(0, p + 1, p, 1) = X.transpose() * d_lam;
    ev.hessian.block(p, 0, 1, p) = ev.hessian.block(0, p, p, 1).transpose();
    ev.hessian.block(p + 1, 0, 1, p) = ev.hessian.block(0, p + 1, p, 1).transpose();
    ev.hessian(p, p) = h_pp;
    ev.hessian(p, p + 1) = ev.hessian(p + 1, p) = h_pl;
    ev.hessian(p + 1, p + 1) = h_ll;
  }
  return ev;
}

namespace {

// Small gradient alone is not enough: on separable Logit data the gradient
// decays like exp(-margin) while the Newton step stays O(1).
bool at_optimum(const ObjectiveEval& ev, const Eigen::VectorXd& theta, const FitControls& c)
{
  if (!(ev.gradient.norm() <= c.gradient_tolerance * std::max(1.0, std::abs(ev.value)))) return false;
  if (ev.gradient.norm() == 0.0 && ev.hessian.norm() > 0.0) return true;
  Eigen::LLT<Eigen::MatrixXd> llt(-ev.hessian);
  if (llt.info() != Eigen::Success) return false;
  const Eigen::VectorXd step = llt.solve(ev.gradient);
  return step.allFinite() && step.norm() <= 1e-4 * (1.0 + theta.norm());
}

}  // namespace

FitResult fit_pml(const Eigen::MatrixXd& X, const Eigen::VectorXd& resp, Family family, const PopulationSpec& spec,
                  const PenaltyConfig& pen, const FitControls& c)
{
  const Eigen::Index n = X.rows(), p = X.cols();
  if (n < 1 || p < 1) throw InvalidArgument("fit_pml: empty design");
  const int extra = nuisance_dim(family);
  const Eigen::MatrixXd P = penalty_matrix(X, spec.A0, pen);

  FitResult fit;
  if (pen.tau_prime > 0.0 && double(p) / double(n) >= 0.9)
    fit.warnings.push_back("zeta >= 0.9 with empirical penalty: sample covariance is near-singular");

  Eigen::VectorXd theta = Eigen::VectorXd::Zero(p + extra);
  if (family == Family::WeibullPH) {
    // phi maximizing the likelihood at beta = 0, sigma = 1
    theta[p] = std::log(double(n) / resp.sum());
  }

  ObjectiveEval ev = pml_objective(X, resp, family, P, theta);
  fit.objective_trace.push_back(ev.value);
  double lambda = 0.0;
  for (int it = 0; it < c.max_iterations; ++it) {
    fit.iterations = it;
    fit.gradient_norm = ev.gradient.norm();
    if (at_optimum(ev, theta, c)) {
      fit.converged = true;
      break;
    }
    const Eigen::MatrixXd negH = -ev.hessian;
    Eigen::VectorXd step;
    // Levenberg damping until the Newton system is positive definite
    for (int k = 0; k < 60; ++k) {
      Eigen::MatrixXd A = negH;
      A.diagonal().array() += lambda;
      Eigen::LLT<Eigen::MatrixXd> llt(A);
      if (llt.info() == Eigen::Success) {
        step = llt.solve(ev.gradient);
        if (step.allFinite() && step.dot(ev.gradient) > 0.0) break;
      }
      step.resize(0);
      lambda = lambda == 0.0 ? 1e-8 * std::max(1.0, negH.diagonal().cwiseAbs().maxCoeff()) : lambda * 10.0;
    }
    if (step.size() == 0) break;

    const double slope = step.dot(ev.gradient);
    // objective changes below this are roundoff
    const double slack = 64.0 * std::numeric_limits<double>::epsilon() * std::max(1.0, std::abs(ev.value));
    double alpha = 1.0;
    bool accepted = false;
    for (int k = 0; k < 60; ++k) {
      const Eigen::VectorXd trial = theta + alpha * step;
      double val;
      try {
        val = pml_objective(X, resp, family, P, trial, false).value;
      } catch (const std::exception&) {
        val = -std::numeric_limits<double>::infinity();
      }
      if (std::isfinite(val) && val >= ev.value + c.armijo_slope * alpha * slope - slack) {
        theta = trial;
        accepted = true;
        break;
      }
      alpha *= c.backtrack;
    }
    if (!accepted) {
      // at the floating point floor of the objective: stop, and let the
      // gradient check decide
      fit.gradient_norm = ev.gradient.norm();
      fit.converged = at_optimum(ev, theta, c);
      break;
    }
    lambda = alpha == 1.0 ? lambda / 10.0 : lambda;
    if (lambda < 1e-12) lambda = 0.0;
    ev = pml_objective(X, resp, family, P, theta);
    fit.objective_trace.push_back(ev.value);
    fit.iterations = it + 1;
    fit.gradient_norm = ev.gradient.norm();
    if (at_optimum(ev, theta, c)) {
      fit.converged = true;
      break;
    }
  }
  if (!fit.converged && fit.gradient_norm <= c.gradient_tolerance * std::max(1.0, std::abs(ev.value)))
    fit.warnings.push_back("objective flat but Newton steps do not shrink: estimate diverges (separable data?)");
  fit.objective = ev.value;
  fit.beta_hat = theta.head(p);
  if (family == Family::WeibullPH) fit.nuisance_hat = NuisanceParams{theta[p], std::exp(theta[p + 1])};
  return fit;
}

Eigen::VectorXd sample_responses(const Eigen::MatrixXd& X, const Eigen::VectorXd& beta0, Family family,
                                 const NuisanceParams& truth, Rng& rng)
{
  const Eigen::VectorXd y = X * beta0;
  Eigen::VectorXd out(y.size());
  for (Eigen::Index i = 0; i < y.size(); ++i)
    out[i] = family == Family::Logit ? double(sample_logit(y[i], rng)) : sample_weibull(y[i], truth, rng);
  return out;
}

OverlapSample compute_overlaps(const Eigen::VectorXd& beta_hat, const PopulationSpec& spec)
{
  const double b2 = spec.beta0.squaredNorm();
  if (!(b2 > 0.0)) throw InvalidArgument("compute_overlaps: beta0 = 0");
  if (!(spec.alpha2 > 0.0)) throw InvalidArgument("compute_overlaps: alpha2 must be > 0");
  OverlapSample o;
  o.K_n = beta_hat.dot(spec.beta0) / b2;
  o.V_n = (beta_hat - o.K_n * spec.beta0).norm() / std::sqrt(spec.alpha2);
  return o;
}

OverlapSample compute_overlaps(const FitResult& fit, const PopulationSpec& spec)
{
  return compute_overlaps(fit.beta_hat, spec);
}

NuisanceParams corrected_nuisance(const NuisanceParams& fitted, const DebiasFactors& f)
{
  if (!(f.g > 0.0)) throw InvalidArgument("corrected_nuisance: g must be > 0");
  NuisanceParams c;
  c.sigma = fitted.sigma / f.g;
  c.phi = fitted.phi - c.sigma * f.h;
  return c;
}

void to_json(nlohmann::json& j, const FitResult& f)
{
  j = nlohmann::json{{"beta_hat", std::vector<double>(f.beta_hat.data(), f.beta_hat.data() + f.beta_hat.size())},
                     {"phi", f.nuisance_hat.phi},
                     {"sigma", f.nuisance_hat.sigma},
                     {"objective", f.objective},
                     {"gradient_norm", f.gradient_norm},
                     {"iterations", f.iterations},
                     {"converged", f.converged},
                     {"warnings", f.warnings}};
}

void to_json(nlohmann::json& j, const OverlapSample& o)
{
  j = nlohmann::json{{"K_n", o.K_n}, {"V_n", o.V_n}, {"replicate_id", o.replicate_id}, {"seed", o.seed}};
}

}  // namespace rscavity
