#include "rscavity/glm.hpp"

#include <cmath>
#include <limits>

#include "rscavity/error.hpp"

namespace rscavity {

std::string_view family_name(Family f)
{
  return f == Family::Logit ? "logit" : "weibull";
}

Family parse_family(std::string_view name)
{
  if (name == "logit") return Family::Logit;
  if (name == "weibull" || name == "weibull_ph") return Family::WeibullPH;
  throw InvalidArgument("unknown model family '" + std::string(name) + "'");
}

int nuisance_dim(Family f)
{
  return f == Family::Logit ? 0 : 2;
}

namespace {

void check_label(int t)
{
  if (t != 1 && t != -1) throw InvalidArgument("Logit label must be -1 or +1");
}

// log(2 cosh y)
double log2cosh(double y)
{
  double a = std::fabs(y);
  return a + std::log1p(std::exp(-2.0 * a));
}

}  // namespace

double logit_logdensity(int t, double y)
{
  check_label(t);
  return t * y - log2cosh(y);
}

int sample_logit(double y, Rng& rng)
{
  // P(+1) = 1 / (1 + exp(-2y))
  double p_plus = y >= 0.0 ? 1.0 / (1.0 + std::exp(-2.0 * y)) : std::exp(2.0 * y) / (1.0 + std::exp(2.0 * y));
  return uniform01(rng) < p_plus ? 1 : -1;
}

double solve_tanh_fixed_point(double a, double b)
{
  if (!(b >= 0.0)) throw InvalidArgument("solve_tanh_fixed_point: b must be >= 0");
  if (!std::isfinite(a)) throw InvalidArgument("solve_tanh_fixed_point: a must be finite");
  if (b == 0.0) return a;

  // g(x) = x + b tanh x - a is strictly increasing, g(a-b) <= 0 <= g(a+b)
  double lo = a - b, hi = a + b;
  double x = a / (1.0 + b);
  const double tol = 1e-14 * std::max(1.0, std::fabs(a));
  for (int it = 0; it < 200; ++it) {
    double th = std::tanh(x);
    double g = x + b * th - a;
    if (std::fabs(g) <= tol) return x;
    if (g > 0.0)
      hi = x;
    else
      lo = x;
    double step = g / (1.0 + b * (1.0 - th * th));
    double next = x - step;
    if (!(next > lo && next < hi)) next = 0.5 * (lo + hi);
    if (next == x || hi - lo <= 4.0 * std::numeric_limits<double>::epsilon() * std::max(1.0, std::fabs(x)))
      return next;
    x = next;
  }
  throw ConvergenceError("solve_tanh_fixed_point: no convergence for a=" + std::to_string(a) +
                         ", b=" + std::to_string(b));
}

double logit_proximal(double x, double mu2, int t)
{
  check_label(t);
  if (!(mu2 > 0.0)) throw InvalidArgument("logit_proximal: mu2 must be positive");
  // the proximal point itself solves xi = x + mu2 t - mu2 tanh(xi)
  return solve_tanh_fixed_point(x + mu2 * t, mu2);
}

double lambert_w0(double x)
{
  if (std::isnan(x) || x < 0.0) throw DomainError("lambert_w0: argument must be >= 0");
  if (x == 0.0) return 0.0;
  if (std::isinf(x)) return x;
  if (x > 1e300) return lambert_w0_from_log(std::log(x));

  // Winitzki's approximation as the starting point, then Halley.
  double l1 = std::log1p(x);
  double w = l1 * (1.0 - std::log1p(l1) / (2.0 + l1));
  for (int it = 0; it < 50; ++it) {
    double ew = std::exp(w);
    double f = w * ew - x;
    double wp1 = w + 1.0;
    double dw = f / (ew * wp1 - (w + 2.0) * f / (2.0 * wp1));
    w -= dw;
    if (std::fabs(dw) <= 4.0 * std::numeric_limits<double>::epsilon() * std::max(1.0, std::fabs(w))) break;
  }
  return w;
}

double lambert_w0_from_log(double log_x)
{
  if (std::isnan(log_x)) throw DomainError("lambert_w0_from_log: NaN argument");
  if (log_x < 2.0) return lambert_w0(std::exp(log_x));
  // w + log w = log_x, Newton from the asymptotic guess
  double l2 = std::log(log_x);
  double w = log_x - l2 + l2 / log_x;
  for (int it = 0; it < 50; ++it) {
    double f = w + std::log(w) - log_x;
    double dw = f / (1.0 + 1.0 / w);
    w -= dw;
    if (std::fabs(dw) <= 4.0 * std::numeric_limits<double>::epsilon() * w) break;
  }
  return w;
}

double weibull_H(double t, const NuisanceParams& nu)
{
  if (!(t > 0.0)) throw DomainError("weibull_H: time must be positive");
  if (!(nu.sigma > 0.0)) throw InvalidArgument("weibull_H: sigma must be positive");
  return std::exp((nu.phi + std::log(t)) / nu.sigma);
}

double weibull_logdensity(double t, double y, const NuisanceParams& nu)
{
  if (!(t > 0.0)) throw DomainError("weibull_logdensity: time must be positive");
  if (!(nu.sigma > 0.0)) throw InvalidArgument("weibull_logdensity: sigma must be positive");
  // log h(t) + y - H(t) e^y with h = H / (sigma t)
  double logH = (nu.phi + std::log(t)) / nu.sigma;
  return logH - std::log(nu.sigma) - std::log(t) + y - std::exp(logH + y);
}

double sample_weibull(double y, const NuisanceParams& truth, Rng& rng)
{
  if (!(truth.sigma > 0.0)) throw InvalidArgument("sample_weibull: sigma must be positive");
  double z = standard_exponential(rng);
  // H(T) = z e^{-y}  =>  T = (z e^{-y})^sigma e^{-phi}
  return std::exp(truth.sigma * (std::log(z) - y) - truth.phi);
}

double weibull_unit_exponential(double t, double y, const NuisanceParams& truth)
{
  return weibull_H(t, truth) * std::exp(y);
}

double weibull_proximal(double x, double mu2, double H_val)
{
  if (!(mu2 > 0.0)) throw InvalidArgument("weibull_proximal: mu2 must be positive");
  if (!(H_val >= 0.0)) throw InvalidArgument("weibull_proximal: H must be >= 0");
  if (H_val == 0.0) return x + mu2;
  double w = lambert_w0_from_log(std::log(H_val) + std::log(mu2) + mu2 + x);
  return x + mu2 - w;
}

ScoreHessian glm_score_hessian(Family family, double response, double y, const NuisanceParams& nu)
{
  ScoreHessian out;
  if (family == Family::Logit) {
    int t = response > 0.0 ? 1 : -1;
    if (response != 1.0 && response != -1.0) throw InvalidArgument("Logit response must be -1 or +1");
    double th = std::tanh(y);
    out.score = t - th;
    out.curvature = -(1.0 - th * th);
    return out;
  }
  if (!(response > 0.0)) throw DomainError("Weibull response must be positive");
  if (!(nu.sigma > 0.0)) throw InvalidArgument("sigma must be positive");
  double logH = (nu.phi + std::log(response)) / nu.sigma;
  double e = std::exp(logH + y);
  out.score = 1.0 - e;
  out.curvature = -e;
  out.d_phi = (1.0 - e) / nu.sigma;
  out.d_sigma = (-logH * (1.0 - e) - 1.0) / nu.sigma;
  return out;
}

double numeric_proximal(const std::function<double(double)>& logdensity, double x, double mu2)
{
  if (!(mu2 > 0.0)) throw InvalidArgument("numeric_proximal: mu2 must be positive");
  auto objective = [&](double y) { return 0.5 * (y - x) * (y - x) / mu2 - logdensity(y); };
  auto slope = [&](double y) {
    double h = 1e-5 * std::max(1.0, std::fabs(y));
    return (objective(y + h) - objective(y - h)) / (2.0 * h);
  };
  // the objective is convex, so its slope is nondecreasing: grow a bracket
  double width = std::max(1.0, mu2);
  double lo = x - width, hi = x + width;
  for (int k = 0; slope(lo) > 0.0; ++k) {
    if (k > 200) throw ConvergenceError("numeric_proximal: cannot bracket from below");
    lo -= width;
    width *= 2.0;
  }
  width = std::max(1.0, mu2);
  for (int k = 0; slope(hi) < 0.0; ++k) {
    if (k > 200) throw ConvergenceError("numeric_proximal: cannot bracket from above");
    hi += width;
    width *= 2.0;
  }
  for (int it = 0; it < 200 && hi - lo > 1e-13 * std::max(1.0, std::fabs(lo)); ++it) {
    double mid = 0.5 * (lo + hi);
    if (slope(mid) > 0.0)
      hi = mid;
    else
      lo = mid;
  }
  return 0.5 * (lo + hi);
}

}  // namespace rscavity
