#include "rscavity/rs_solver.hpp"

#include <cmath>
#include <limits>
#include <map>
#include <utility>

#include "rscavity/error.hpp"
#include "rscavity/nonlinear.hpp"

namespace rscavity {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();
constexpr double kDampingCutoff = 1e-6;
constexpr int kPicardBudget = 500;
constexpr int kNewtonBudget = 200;

double sq(double x) { return x * x; }

// sech^2 without overflow
double sech2(double x)
{
  const double e = std::exp(-2.0 * std::abs(x));
  return 4.0 * e / sq(1.0 + e);
}

// RS2 solved for zeta: a (1 - zeta + zeta mu2 eta' a) = resp, a = 1/(1 - tau' zeta mu2).
// With t = tau' mu2, e = eta' mu2 this is the quadratic
// (t - resp t^2) zeta^2 + (e - 1 - t + 2 resp t) zeta + (1 - resp) = 0.
double zeta_from_response(double t, double e, double resp)
{
  const double A = t - resp * t * t;
  const double B = e - 1.0 - t + 2.0 * resp * t;
  const double C = 1.0 - resp;
  const double disc = B * B - 4.0 * A * C;
  if (disc < 0.0) return kNaN;
  return 2.0 * C / (-B + std::sqrt(disc));
}

void check_penalty(const PenaltyConfig& pen)
{
  if (!(pen.eta_prime >= 0.0) || !(pen.tau_prime >= 0.0))
    throw InvalidArgument("penalty strengths must be >= 0");
}

void check_S(double S)
{
  if (!(S > 0.0) || !std::isfinite(S)) throw InvalidArgument("S must be > 0");
}

// ---- Logit ----

struct LogitMoments {
  double r1 = 0.0;    // E[(mu2 l' - c x0)^2]
  double resp = 0.0;  // E[1 / (1 + mu2 kappa)]
  double r3 = 0.0;    // E[xi (T - tanh(S Z0))]
};

// Gauss rules in z0 for the label-weighted normal densities. The logistic
// factor has poles at distance pi/(2S) from the real axis, which stalls plain
// Gauss-Hermite around 1e-7; absorbing it into the weight removes that.
struct LogitRules {
  QuadratureRule plus;    // phi(z) p(+1 | S z)
  QuadratureRule fisher;  // phi(z) 2 p(+1 | S z) p(-1 | S z)
};

const LogitRules& logit_rules(double S, int order)
{
  thread_local std::map<std::pair<double, int>, LogitRules> cache;
  const auto key = std::make_pair(S, order);
  auto it = cache.find(key);
  if (it != cache.end()) return it->second;
  if (cache.size() > 64) cache.clear();
  const double c = 1.0 / std::sqrt(2.0 * M_PI);
  auto plus = [&](double z) {
    const double y = S * z;
    const double p = y >= 0.0 ? 1.0 / (1.0 + std::exp(-2.0 * y)) : std::exp(2.0 * y) / (1.0 + std::exp(2.0 * y));
    return c * std::exp(-0.5 * z * z) * p;
  };
  auto fisher = [&](double z) { return c * std::exp(-0.5 * z * z) * 0.5 * sech2(S * z); };
  LogitRules r{make_rule_for_density(plus, -38.0, 38.0, order), make_rule_for_density(fisher, -38.0, 38.0, order)};
  r.plus.mass = 0.5;
  return cache.emplace(key, std::move(r)).first->second;
}

LogitMoments logit_moments(double mu2, double nu, double omega, double S, double zeta, const PenaltyConfig& pen,
                           const QuadratureRule& hermite)
{
  const double tz = pen.tau_prime * zeta * mu2;
  if (!(mu2 > 0.0) || !(tz < 1.0)) throw DomainError("logit RS map: need mu2 > 0 and tau' zeta mu2 < 1");
  const double c = tz / (1.0 - tz);
  const LogitRules& rules = logit_rules(S, int(hermite.nodes.size()));
  auto xi_at = [&](int t, double q, double z0) {
    const double xi = solve_tanh_fixed_point(nu * q + omega * z0 + mu2 * t, mu2);
    if (!std::isfinite(xi))
      throw EvaluationError("logit RS map: non-finite proximal point at t=" + std::to_string(t) +
                            ", q=" + std::to_string(q) + ", z0=" + std::to_string(z0));
    return xi;
  };
  LogitMoments m;
  // r1 and resp: p(-1 | S z) = p(+1 | -S z), so the t = -1 term uses the mirrored node
  for (std::size_t k = 0; k < rules.plus.nodes.size(); ++k) {
    for (int t : {-1, 1}) {
      const double z0 = t * rules.plus.nodes[k];
      for (std::size_t j = 0; j < hermite.nodes.size(); ++j) {
        const double q = hermite.nodes[j];
        const double x0 = nu * q + omega * z0;
        const double xi = xi_at(t, q, z0);
        const double w = rules.plus.weights[k] * hermite.weights[j];
        m.r1 += w * sq(mu2 * (t - std::tanh(xi)) - c * x0);
        m.resp += w / (1.0 + mu2 * sech2(xi));
      }
    }
  }
  m.r1 *= rules.plus.mass;
  m.resp *= rules.plus.mass;
  // sum_t p_t (t - tanh y) xi_t = 2 p_+ p_- (xi_+ - xi_-)
  for (std::size_t k = 0; k < rules.fisher.nodes.size(); ++k) {
    const double z0 = rules.fisher.nodes[k];
    for (std::size_t j = 0; j < hermite.nodes.size(); ++j) {
      const double q = hermite.nodes[j];
      m.r3 += rules.fisher.weights[k] * hermite.weights[j] * (xi_at(1, q, z0) - xi_at(-1, q, z0));
    }
  }
  m.r3 *= rules.fisher.mass;
  return m;
}

double logit_fisher_info(double S, const QuadratureRule& hermite)
{
  return hermite.expect([&](double z0) { return sech2(S * z0); });
}

// ---- Weibull ----

struct WeibullMoments {
  double r1 = 0.0;    // E[(mu2 - W - c x0)^2]
  double resp = 0.0;  // E[1 / (1 + W)]
  double mean_w = 0.0;
  double gq = 0.0;    // E[(log Z - S Z0)(W / mu2 - 1)]
};

WeibullMoments weibull_moments(double mu2, double nu, double omega, double g, double s, double S, double zeta,
                               const PenaltyConfig& pen, const QuadratureRule& exp_rule,
                               const QuadratureRule& hermite)
{
  const double tz = pen.tau_prime * zeta * mu2;
  if (!(mu2 > 0.0) || !(g > 0.0) || !(tz < 1.0))
    throw DomainError("weibull RS map: need mu2 > 0, sigma ratio > 0 and tau' zeta mu2 < 1");
  const double c = tz / (1.0 - tz);
  const double r = 1.0 / g;
  const double base = std::log(mu2) + mu2 + s;
  auto f = [&](double, double lz, double q, double z0) {
    const double x0 = nu * q + omega * z0;
    // W(H mu2 e^{mu2 + x0}) with H e^{...} written through Z and the true predictor
    const double W = lambert_w0_from_log(base + x0 + r * (lz - S * z0));
    Eigen::Array4d out;
    out << sq(mu2 - W - c * x0), 1.0 / (1.0 + W), W, (lz - S * z0) * (W / mu2 - 1.0);
    return out;
  };
  const Eigen::Array4d m = expect_weibull(f, exp_rule, hermite);
  return {m[0], m[1], m[2], m[3]};
}

using Vec5 = Eigen::Matrix<double, 5, 1>;

Vec5 weibull_map_from_moments(const Vec5& x, const WeibullMoments& m, double S, const PenaltyConfig& pen)
{
  const double zeta = x[0], mu2 = sq(x[3]), g = x[4];
  const double tz = pen.tau_prime * zeta * mu2;
  const double a = 1.0 / (1.0 - tz);
  Vec5 out;
  out[0] = zeta_from_response(pen.tau_prime * mu2, pen.eta_prime * mu2, m.resp);
  out[1] = std::sqrt(m.r1 / zeta) * (1.0 - tz);
  out[2] = S * (1.0 - pen.tau_prime * mu2 - pen.eta_prime * mu2 * a) / g;
  out[3] = std::sqrt(m.mean_w);
  out[4] = m.gq;
  return out;
}

PenaltyConfig penalty_for(ZeroBiasMode mode, double value)
{
  PenaltyConfig p;
  if (mode == ZeroBiasMode::Oracle) p.eta_prime = value;
  else p.tau_prime = value;
  return p;
}

void add_common_warnings(RSSolution& sol)
{
  if (sol.penalty.tau_prime > 0.0 && sol.state.zeta >= 0.9)
    sol.warnings.push_back("zeta >= 0.9 with empirical penalty: sample covariance is near-singular");
}

LMOptions lm_options(const SolverControls& c)
{
  LMOptions o;
  o.tolerance = c.tolerance;
  o.max_iterations = std::min(c.max_iterations, kNewtonBudget);
  return o;
}

// Solves F(theta; zeta) = 0 at the target zeta. If the direct attempt fails,
// walks zeta up geometrically from a small value, reusing each solution as
// the next starting point.
template <class MakeResidual, class Init>
LMResult solve_in_zeta(double zeta, const MakeResidual& make_residual, const Init& init,
                       const std::optional<Eigen::VectorXd>& user_start, const SolverControls& c)
{
  const LMOptions opt = lm_options(c);
  Eigen::VectorXd start = user_start ? *user_start : init(zeta);
  LMResult res = solve_levenberg_marquardt(make_residual(zeta), start, opt);
  if (res.converged || !c.continuation) return res;

  const double z0 = std::min(0.01, zeta / 4.0);
  if (!(zeta > z0)) return res;
  const int steps = 12;
  Eigen::VectorXd theta = init(z0);
  LMResult step_res;
  int iterations = res.iterations;
  for (int k = 0; k <= steps; ++k) {
    const double zk = z0 * std::pow(zeta / z0, double(k) / steps);
    step_res = solve_levenberg_marquardt(make_residual(zk), theta, opt);
    iterations += step_res.iterations;
    if (!step_res.converged) break;
    theta = step_res.x;
  }
  step_res.iterations = iterations;
  if (step_res.converged || step_res.residual_norm < res.residual_norm) return step_res;
  res.iterations = iterations;
  return res;
}

struct PicardResult {
  Eigen::VectorXd x;
  int iterations = 0;
  double residual = 0.0;
  bool converged = false;
  std::string message;
};

// Damped Picard iteration on the map, followed by a Newton polish.
template <class Map, class ToTheta, class FromTheta>
PicardResult picard_then_polish(const Eigen::VectorXd& x_start, const Map& map, const ToTheta& to_theta,
                                const FromTheta& from_theta, const SolverControls& c)
{
  PicardResult out;
  Eigen::VectorXd x = x_start;
  double resid = std::numeric_limits<double>::infinity();
  int it = 0;
  const int budget = std::min(c.max_iterations, kPicardBudget);
  bool ok = true;
  for (; it < budget; ++it) {
    Eigen::VectorXd fx;
    try {
      fx = map(x);
    } catch (const std::exception& e) {
      ok = false;
      out.message = e.what();
      break;
    }
    if (!fx.allFinite()) {
      ok = false;
      break;
    }
    resid = (fx - x).norm();
    if (resid <= c.tolerance) break;
    x = resid > kDampingCutoff ? Eigen::VectorXd((1.0 - c.damping) * x + c.damping * fx) : fx;
  }
  out.iterations = it;
  if (!(resid <= c.tolerance)) {
    const Eigen::VectorXd theta0 = ok ? to_theta(x) : to_theta(x_start);
    auto F = [&](const Eigen::VectorXd& th) {
      const Eigen::VectorXd xx = from_theta(th);
      return Eigen::VectorXd(map(xx) - xx);
    };
    LMResult lm = solve_levenberg_marquardt(F, theta0, lm_options(c));
    out.iterations += lm.iterations;
    if (lm.residual_norm < resid || !ok) {
      x = from_theta(lm.x);
      resid = lm.residual_norm;
    }
  }
  out.x = x;
  out.residual = resid;
  out.converged = resid <= c.tolerance;
  if (out.converged) out.message.clear();
  else if (out.message.empty()) out.message = "fixed-point iteration did not converge";
  return out;
}

}  // namespace

RSState state_from_rescaled(double zeta, double mu2, double nu, double omega, const PenaltyConfig& pen)
{
  const double tz = pen.tau_prime * zeta * mu2;
  if (!(tz < 1.0)) throw DomainError("state: need 1 - tau' zeta mu2 > 0");
  const double a = 1.0 / (1.0 - tz);
  RSState s;
  s.zeta = zeta;
  s.mu2 = mu2;
  s.nu = nu;
  s.omega = omega;
  s.u2 = mu2 * a;
  s.v = nu * a;
  s.w = omega * a;
  return s;
}

RSState state_from_raw(double zeta, double u2, double v, double w, const PenaltyConfig& pen)
{
  const double d = 1.0 + pen.tau_prime * zeta * u2;
  RSState s;
  s.zeta = zeta;
  s.u2 = u2;
  s.v = v;
  s.w = w;
  s.mu2 = u2 / d;
  s.nu = v / d;
  s.omega = w / d;
  return s;
}

// ---------------------------------------------------------------- Logit

Eigen::Vector3d rs_map_logit(const Eigen::Vector3d& x, double mu2, double S, const PenaltyConfig& pen,
                             const QuadratureRule& hermite)
{
  const double zeta = x[0], nu = x[1], omega = x[2];
  const LogitMoments m = logit_moments(mu2, nu, omega, S, zeta, pen, hermite);
  const double tz = pen.tau_prime * zeta * mu2;
  Eigen::Vector3d out;
  out[0] = zeta_from_response(pen.tau_prime * mu2, pen.eta_prime * mu2, m.resp);
  out[1] = std::sqrt(m.r1 / zeta) * (1.0 - tz);
  out[2] = S * (1.0 - tz) * m.r3 / zeta;
  return out;
}

RSSolution rs_solve_logit(const RSTarget& target, double S, const PenaltyConfig& pen, const SolverControls& c)
{
  check_S(S);
  check_penalty(pen);
  if (!(target.value > 0.0)) throw InvalidArgument("rs_solve_logit: target value must be > 0");
  const QuadratureRule hermite = make_rule(QuadratureKind::GaussHermiteNormal, c.quadrature_order);

  RSSolution sol;
  sol.family = Family::Logit;
  sol.penalty = pen;
  sol.S = S;
  sol.quadrature_order = c.quadrature_order;
  sol.tolerance = c.tolerance;

  if (target.kind == SolveTarget::FixedZeta) {
    const double zeta = target.value;
    const double info = logit_fisher_info(S, hermite);
    auto make_residual = [&](double z) {
      return [&, z](const Eigen::VectorXd& th) {
        const double mu2 = std::exp(th[0]), nu = std::exp(th[1]);
        const Eigen::Vector3d x(z, nu, th[2]);
        return Eigen::VectorXd(rs_map_logit(x, mu2, S, pen, hermite) - x);
      };
    };
    auto init = [&](double z) {
      Eigen::VectorXd th(3);
      th << std::log(z / info), 0.5 * std::log(z / info), S;
      return th;
    };
    std::optional<Eigen::VectorXd> user;
    if (c.initial) {
      user = Eigen::VectorXd(3);
      *user << std::log(c.initial->mu2), std::log(c.initial->nu), c.initial->omega;
    }
    const LMResult r = solve_in_zeta(zeta, make_residual, init, user, c);
    sol.iterations = r.iterations;
    sol.residual = r.residual_norm;
    sol.converged = r.converged;
    sol.state = state_from_rescaled(zeta, std::exp(r.x[0]), std::exp(r.x[1]), r.x[2], pen);
    if (!sol.converged)
      sol.message = "no RS solution found at zeta=" + std::to_string(zeta) + " (residual " +
                    std::to_string(r.residual_norm) + ")";
  }
  else if (target.kind == SolveTarget::FixedMu2) {
    const double mu2 = target.value;
    Eigen::VectorXd x0(3);
    if (c.initial) x0 << c.initial->zeta, c.initial->nu, c.initial->omega;
    else x0 << 0.5, 0.5, S / 2.0;
    auto map = [&](const Eigen::VectorXd& x) {
      return Eigen::VectorXd(rs_map_logit(Eigen::Vector3d(x), mu2, S, pen, hermite));
    };
    auto to_theta = [](const Eigen::VectorXd& x) {
      Eigen::VectorXd th(3);
      th << std::log(x[0]), std::log(x[1]), x[2];
      return th;
    };
    auto from_theta = [](const Eigen::VectorXd& th) {
      Eigen::VectorXd x(3);
      x << std::exp(th[0]), std::exp(th[1]), th[2];
      return x;
    };
    const PicardResult r = picard_then_polish(x0, map, to_theta, from_theta, c);
    sol.iterations = r.iterations;
    sol.residual = r.residual;
    sol.converged = r.converged;
    sol.message = r.message;
    sol.state = state_from_rescaled(r.x[0], mu2, r.x[1], r.x[2], pen);
  }
  else {
    throw InvalidArgument("rs_solve_logit: phi-shift targets apply to the Weibull model only");
  }
  add_common_warnings(sol);
  return sol;
}

ZeroBiasResult zero_bias_logit(double S, double zeta, ZeroBiasMode mode, const SolverControls& c)
{
  check_S(S);
  if (!(zeta > 0.0)) throw InvalidArgument("zero_bias_logit: zeta must be > 0");
  const QuadratureRule hermite = make_rule(QuadratureKind::GaussHermiteNormal, c.quadrature_order);

  auto prescription = [&](double z, double mu2, double chi) {
    if (mode == ZeroBiasMode::Oracle) return (z - chi) / (mu2 * z);
    if (!(1.0 - chi > 0.0)) throw DegenerateRegimeError("zero_bias_logit: 1 - chi <= 0");
    return (z - chi) / ((1.0 - chi) * mu2 * z);
  };

  // theta = (log mu2, log nu, penalty); omega = S (1 - tau' zeta mu2) keeps w = S.
  auto residual_at = [&](double z, const Eigen::VectorXd& th, double* chi_out) {
    const double mu2 = std::exp(th[0]), nu = std::exp(th[1]), pv = th[2];
    const PenaltyConfig pen = penalty_for(mode, pv);
    const double tz = pen.tau_prime * z * mu2;
    const double omega = S * (1.0 - tz);
    const LogitMoments m = logit_moments(mu2, nu, omega, S, z, pen, hermite);
    const double chi = 1.0 - m.resp;
    if (chi_out) *chi_out = chi;
    Eigen::VectorXd r(3);
    r[0] = m.r3 - z;
    r[1] = std::sqrt(m.r1 / z) * (1.0 - tz) - nu;
    r[2] = prescription(z, mu2, chi) - pv;
    return r;
  };
  auto make_residual = [&](double z) {
    return [&, z](const Eigen::VectorXd& th) { return residual_at(z, th, nullptr); };
  };
  const double info = logit_fisher_info(S, hermite);
  auto init = [&](double z) {
    Eigen::VectorXd th(3);
    th << std::log(z / info), 0.5 * std::log(z / info), 0.0;
    try {
      const Eigen::VectorXd r = residual_at(z, th, nullptr);
      if (std::isfinite(r[2])) th[2] = r[2];
    } catch (const std::exception&) {
    }
    return th;
  };
  std::optional<Eigen::VectorXd> user;
  if (c.initial) {
    user = Eigen::VectorXd(3);
    *user << std::log(c.initial->mu2), std::log(c.initial->nu), 0.2;
  }
  const LMResult r = solve_in_zeta(zeta, make_residual, init, user, c);

  ZeroBiasResult out;
  out.mode = mode;
  out.penalty = r.x[2];
  double chi = kNaN;
  try {
    residual_at(zeta, r.x, &chi);
  } catch (const DegenerateRegimeError&) {
    throw;
  } catch (const std::exception&) {
  }
  if (mode == ZeroBiasMode::Empirical && std::isfinite(chi) && !(1.0 - chi > 0.0))
    throw DegenerateRegimeError("zero_bias_logit: 1 - chi <= 0 at zeta=" + std::to_string(zeta));
  out.chi = chi;

  RSSolution& sol = out.solution;
  sol.family = Family::Logit;
  sol.penalty = penalty_for(mode, out.penalty);
  sol.S = S;
  sol.quadrature_order = c.quadrature_order;
  sol.tolerance = c.tolerance;
  sol.iterations = r.iterations;
  sol.residual = r.residual_norm;
  sol.converged = r.converged;
  const double mu2 = std::exp(r.x[0]);
  const double omega = S * (1.0 - sol.penalty.tau_prime * zeta * mu2);
  sol.state = state_from_rescaled(zeta, mu2, std::exp(r.x[1]), omega, sol.penalty);
  if (!sol.converged) sol.message = "zero-bias solve did not converge at zeta=" + std::to_string(zeta);
  add_common_warnings(sol);
  return out;
}

// ---------------------------------------------------------------- Weibull

Vec5 rs_map_weibull(const Vec5& x, double phi_shift, double S, const PenaltyConfig& pen,
                    const QuadratureRule& exp_rule, const QuadratureRule& hermite)
{
  const WeibullMoments m =
      weibull_moments(sq(x[3]), x[1], x[2], x[4], phi_shift, S, x[0], pen, exp_rule, hermite);
  return weibull_map_from_moments(x, m, S, pen);
}

namespace {

RSSolution weibull_solution_shell(double S, const PenaltyConfig& pen, const SolverControls& c)
{
  RSSolution sol;
  sol.family = Family::WeibullPH;
  sol.penalty = pen;
  sol.S = S;
  sol.quadrature_order = c.quadrature_order;
  sol.tolerance = c.tolerance;
  return sol;
}

Eigen::VectorXd weibull_init_theta(double z, double S)
{
  // (s, log nu, omega, log mu, log g) from the small-zeta asymptotics
  Eigen::VectorXd th(5);
  th << 0.0, 0.5 * std::log(z), S, 0.5 * std::log(z), 0.0;
  return th;
}

}  // namespace

RSSolution rs_solve_weibull(const RSTarget& target, double S, const PenaltyConfig& pen, const SolverControls& c)
{
  check_S(S);
  check_penalty(pen);
  const QuadratureRule hermite = make_rule(QuadratureKind::GaussHermiteNormal, c.quadrature_order);
  const QuadratureRule exp_rule = make_rule(c.exp_rule, c.quadrature_order);
  RSSolution sol = weibull_solution_shell(S, pen, c);

  if (target.kind == SolveTarget::FixedZeta) {
    const double zeta = target.value;
    if (!(zeta > 0.0)) throw InvalidArgument("rs_solve_weibull: zeta must be > 0");
    auto make_residual = [&](double z) {
      return [&, z](const Eigen::VectorXd& th) {
        Vec5 x;
        x << z, std::exp(th[1]), th[2], std::exp(th[3]), std::exp(th[4]);
        return Eigen::VectorXd(rs_map_weibull(x, th[0], S, pen, exp_rule, hermite) - x);
      };
    };
    auto init = [&](double z) { return weibull_init_theta(z, S); };
    std::optional<Eigen::VectorXd> user;
    if (c.initial) {
      const WeibullNuisance nu = c.initial->nuisance.value_or(WeibullNuisance{});
      user = Eigen::VectorXd(5);
      *user << nu.phi_shift, std::log(c.initial->nu), c.initial->omega, 0.5 * std::log(c.initial->mu2),
          std::log(nu.sigma_ratio);
    }
    const LMResult r = solve_in_zeta(zeta, make_residual, init, user, c);
    sol.iterations = r.iterations;
    sol.residual = r.residual_norm;
    sol.converged = r.converged;
    sol.state = state_from_rescaled(zeta, std::exp(2.0 * r.x[3]), std::exp(r.x[1]), r.x[2], pen);
    sol.state.nuisance = WeibullNuisance{std::exp(r.x[4]), r.x[0]};
    if (!sol.converged)
      sol.message = "no RS solution found at zeta=" + std::to_string(zeta) + " (residual " +
                    std::to_string(r.residual_norm) + ")";
  }
  else if (target.kind == SolveTarget::FixedPhiShift) {
    const double s = target.value;
    Eigen::VectorXd x0(5);
    if (c.initial) {
      const WeibullNuisance nu = c.initial->nuisance.value_or(WeibullNuisance{});
      x0 << c.initial->zeta, c.initial->nu, c.initial->omega, std::sqrt(c.initial->mu2), nu.sigma_ratio;
    }
    else {
      x0 << 0.5, 0.5, S / 2.0, 1.0, 1.0;
    }
    auto map = [&](const Eigen::VectorXd& x) {
      return Eigen::VectorXd(rs_map_weibull(Vec5(x), s, S, pen, exp_rule, hermite));
    };
    auto to_theta = [](const Eigen::VectorXd& x) {
      Eigen::VectorXd th(5);
      th << std::log(x[0]), std::log(x[1]), x[2], std::log(x[3]), std::log(x[4]);
      return th;
    };
    auto from_theta = [](const Eigen::VectorXd& th) {
      Eigen::VectorXd x(5);
      x << std::exp(th[0]), std::exp(th[1]), th[2], std::exp(th[3]), std::exp(th[4]);
      return x;
    };
    const PicardResult r = picard_then_polish(x0, map, to_theta, from_theta, c);
    sol.iterations = r.iterations;
    sol.residual = r.residual;
    sol.converged = r.converged;
    sol.message = r.message;
    const double g = r.x[4];
    sol.state = state_from_rescaled(r.x[0], r.x[3] * r.x[3], r.x[1], r.x[2], pen);
    sol.state.nuisance = WeibullNuisance{g, s};
  }
  else {
    throw InvalidArgument("rs_solve_weibull: fixed-mu2 targets apply to the Logit model only");
  }
  add_common_warnings(sol);
  return sol;
}

ZeroBiasResult zero_bias_weibull(double S, double zeta, ZeroBiasMode mode, const SolverControls& c)
{
  check_S(S);
  if (!(zeta > 0.0)) throw InvalidArgument("zero_bias_weibull: zeta must be > 0");
  const QuadratureRule hermite = make_rule(QuadratureKind::GaussHermiteNormal, c.quadrature_order);
  const QuadratureRule exp_rule = make_rule(c.exp_rule, c.quadrature_order);

  auto prescription = [&](double z, double mu2, double g) {
    if (mode == ZeroBiasMode::Oracle) return (1.0 - g) / mu2;
    const double d = 1.0 - z * g;
    if (std::abs(d) < 1e-10) throw DegenerateRegimeError("zero_bias_weibull: 1 - zeta sigma/sigma0 is near 0");
    return (1.0 - g) / (d * mu2);
  };

  // theta = (s, log nu, penalty, log mu, log g)
  auto residual_at = [&](double z, const Eigen::VectorXd& th) {
    const double s = th[0], nu = std::exp(th[1]), pv = th[2], mu = std::exp(th[3]), g = std::exp(th[4]);
    const double mu2 = mu * mu;
    const PenaltyConfig pen = penalty_for(mode, pv);
    const double omega = S * (1.0 - pen.tau_prime * z * mu2);
    Vec5 x;
    x << z, nu, omega, mu, g;
    const WeibullMoments m = weibull_moments(mu2, nu, omega, g, s, S, z, pen, exp_rule, hermite);
    const Vec5 fx = weibull_map_from_moments(x, m, S, pen);
    Eigen::VectorXd r(5);
    r << fx[0] - z, fx[1] - nu, prescription(z, mu2, g) - pv, fx[3] - mu, fx[4] - g;
    return r;
  };
  auto make_residual = [&](double z) {
    return [&, z](const Eigen::VectorXd& th) { return residual_at(z, th); };
  };
  auto init = [&](double z) {
    Eigen::VectorXd th = weibull_init_theta(z, S);
    th[2] = 0.0;
    try {
      const Eigen::VectorXd r = residual_at(z, th);
      if (std::isfinite(r[2])) th[2] = r[2];
    } catch (const std::exception&) {
    }
    return th;
  };
  std::optional<Eigen::VectorXd> user;
  if (c.initial) {
    const WeibullNuisance nu = c.initial->nuisance.value_or(WeibullNuisance{});
    user = Eigen::VectorXd(5);
    *user << nu.phi_shift, std::log(c.initial->nu), 0.2, 0.5 * std::log(c.initial->mu2), std::log(nu.sigma_ratio);
  }
  const LMResult r = solve_in_zeta(zeta, make_residual, init, user, c);

  const double g = std::exp(r.x[4]);
  if (mode == ZeroBiasMode::Empirical && std::abs(1.0 - zeta * g) < 1e-10)
    throw DegenerateRegimeError("zero_bias_weibull: 1 - zeta sigma/sigma0 is near 0");

  ZeroBiasResult out;
  out.mode = mode;
  out.penalty = r.x[2];
  out.chi = kNaN;
  RSSolution& sol = out.solution;
  sol = weibull_solution_shell(S, penalty_for(mode, out.penalty), c);
  sol.iterations = r.iterations;
  sol.residual = r.residual_norm;
  sol.converged = r.converged;
  const double mu2 = std::exp(2.0 * r.x[3]);
  const double omega = S * (1.0 - sol.penalty.tau_prime * zeta * mu2);
  sol.state = state_from_rescaled(zeta, mu2, std::exp(r.x[1]), omega, sol.penalty);
  sol.state.nuisance = WeibullNuisance{g, r.x[0]};
  if (!sol.converged) sol.message = "zero-bias solve did not converge at zeta=" + std::to_string(zeta);
  add_common_warnings(sol);
  return out;
}

DebiasFactors nuisance_debias_factors(const RSSolution& sol)
{
  if (sol.family != Family::WeibullPH || !sol.state.nuisance)
    throw InvalidArgument("nuisance_debias_factors: needs a Weibull solution");
  if (!sol.converged) throw ConvergenceError("nuisance_debias_factors: solution did not converge");
  return {sol.state.nuisance->h(), sol.state.nuisance->sigma_ratio};
}

DebiasFactors nuisance_debias_factors(double S, double zeta, const PenaltyConfig& pen, const SolverControls& c)
{
  return nuisance_debias_factors(rs_solve_weibull(RSTarget::zeta(zeta), S, pen, c));
}

// ---------------------------------------------------------------- common

AsymptoticMoments asymptotic_moments(const RSSolution& sol, double S0, double alpha2)
{
  AsymptoticMoments m;
  m.bias2 = sq(S0) * sq(sol.state.w / sol.S - 1.0);
  m.variance = sq(sol.state.v) * alpha2;
  m.mse = m.bias2 + m.variance;
  return m;
}

RSSolution rs_solve(Family family, const RSTarget& target, double S, const PenaltyConfig& pen,
                    const SolverControls& c)
{
  return family == Family::Logit ? rs_solve_logit(target, S, pen, c) : rs_solve_weibull(target, S, pen, c);
}

ZeroBiasResult zero_bias(Family family, double S, double zeta, ZeroBiasMode mode, const SolverControls& c)
{
  return family == Family::Logit ? zero_bias_logit(S, zeta, mode, c) : zero_bias_weibull(S, zeta, mode, c);
}

std::string_view zero_bias_mode_name(ZeroBiasMode m) { return m == ZeroBiasMode::Oracle ? "oracle" : "empirical"; }

void to_json(nlohmann::json& j, const RSState& s)
{
  j = nlohmann::json{{"zeta", s.zeta}, {"u2", s.u2}, {"v", s.v}, {"w", s.w},
                     {"mu2", s.mu2},   {"nu", s.nu}, {"omega", s.omega}};
  if (s.nuisance) {
    j["nuisance"] = {{"sigma_ratio", s.nuisance->sigma_ratio},
                     {"phi_shift", s.nuisance->phi_shift},
                     {"h", s.nuisance->h()},
                     {"g", s.nuisance->sigma_ratio}};
  }
}

void to_json(nlohmann::json& j, const RSSolution& s)
{
  j = nlohmann::json{{"model", family_name(s.family)},
                     {"S", s.S},
                     {"zeta", s.state.zeta},
                     {"eta_prime", s.penalty.eta_prime},
                     {"tau_prime", s.penalty.tau_prime},
                     {"order", s.quadrature_order},
                     {"tolerance", s.tolerance},
                     {"state", s.state},
                     {"iterations", s.iterations},
                     {"residual", s.residual},
                     {"converged", s.converged},
                     {"warnings", s.warnings}};
  if (!s.message.empty()) j["message"] = s.message;
}

void from_json(const nlohmann::json& j, RSState& s)
{
  s = RSState{};
  s.zeta = j.at("zeta").get<double>();
  s.u2 = j.at("u2").get<double>();
  s.v = j.at("v").get<double>();
  s.w = j.at("w").get<double>();
  s.mu2 = j.at("mu2").get<double>();
  s.nu = j.at("nu").get<double>();
  s.omega = j.at("omega").get<double>();
  if (j.contains("nuisance") && !j.at("nuisance").is_null())
    s.nuisance = WeibullNuisance{j.at("nuisance").at("sigma_ratio").get<double>(),
                                 j.at("nuisance").at("phi_shift").get<double>()};
}

void from_json(const nlohmann::json& j, RSSolution& s)
{
  s = RSSolution{};
  s.family = parse_family(j.at("model").get<std::string>());
  s.S = j.at("S").get<double>();
  s.penalty = {j.at("eta_prime").get<double>(), j.at("tau_prime").get<double>()};
  s.quadrature_order = j.at("order").get<int>();
  s.tolerance = j.at("tolerance").get<double>();
  s.state = j.at("state").get<RSState>();
  s.iterations = j.at("iterations").get<int>();
  s.residual = j.at("residual").get<double>();
  s.converged = j.at("converged").get<bool>();
  s.warnings = j.at("warnings").get<std::vector<std::string>>();
  s.message = j.value("message", std::string());
}

}  // namespace rscavity
