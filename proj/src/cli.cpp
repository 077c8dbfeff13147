#include "rscavity/cli.hpp"

#include <cmath>
#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"
#include "rscavity/error.hpp"
#include "rscavity/experiment.hpp"
#include "rscavity/rs_solver.hpp"

namespace rscavity {

namespace {

constexpr int kOk = 0;
constexpr int kNoConvergence = 1;
constexpr int kInvalid = 2;

struct Common {
  std::string model = "logit";
  double S = 1.0;
  double S0 = std::numeric_limits<double>::quiet_NaN();
  double alpha2 = 1.0;
  double eta_prime = 0.0;
  double tau_prime = 0.0;
  int order = kDefaultQuadratureOrder;
  double tol = 1e-10;
  std::string out;
  std::string format = "json";
};

void add_common(CLI::App* cmd, Common& c, bool with_penalty)
{
  cmd->add_option("--model", c.model, "model family")->check(CLI::IsMember({"logit", "weibull"}));
  cmd->add_option("--S", c.S, "signal strength sqrt(beta0 . A0 beta0)");
  cmd->add_option("--S0", c.S0, "|beta0| for the bias term (default: S)");
  cmd->add_option("--alpha2", c.alpha2, "Tr(A0^-1)/p for the variance term");
  if (with_penalty) {
    cmd->add_option("--eta-prime", c.eta_prime, "oracle penalty strength");
    cmd->add_option("--tau-prime", c.tau_prime, "empirical penalty strength");
  }
  cmd->add_option("--order", c.order, "quadrature order");
  cmd->add_option("--tol", c.tol, "fixed-point tolerance");
  cmd->add_option("--out", c.out, "output path (default: stdout)");
  cmd->add_option("--format", c.format, "output format")->check(CLI::IsMember({"json", "csv"}));
}

SolverControls controls_of(const Common& c)
{
  if (c.order < 1) throw InvalidArgument("--order must be >= 1");
  if (!(c.tol > 0.0)) throw InvalidArgument("--tol must be > 0");
  SolverControls sc;
  sc.quadrature_order = c.order;
  sc.tolerance = c.tol;
  return sc;
}

void emit(const std::string& text, const std::string& path, std::ostream& out)
{
  if (path.empty()) {
    out << text;
    return;
  }
  std::ofstream f(path, std::ios::binary);
  if (!f) throw InvalidArgument("cannot open output file '" + path + "'");
  f << text;
}

std::string fmt(double v)
{
  if (!std::isfinite(v)) return "";
  return nlohmann::json(v).dump();
}

nlohmann::json solution_record(const RSSolution& sol, const Common& c)
{
  nlohmann::json j = sol;
  const double S0 = std::isnan(c.S0) ? c.S : c.S0;
  if (sol.converged) {
    const AsymptoticMoments m = asymptotic_moments(sol, S0, c.alpha2);
    j["bias2"] = m.bias2;
    j["variance"] = m.variance;
    j["mse"] = m.mse;
  }
  j["S0"] = S0;
  j["alpha2"] = c.alpha2;
  return j;
}

std::string solution_csv_header(Family f)
{
  std::string h = "zeta,converged,residual,u2,v,w,mu2,nu,omega,eta_prime,tau_prime,bias2,variance,mse";
  if (f == Family::WeibullPH) h += ",sigma_ratio,phi_shift,h";
  return h + "\n";
}

std::string solution_csv_row(const RSSolution& s, const Common& c)
{
  const double S0 = std::isnan(c.S0) ? c.S : c.S0;
  AsymptoticMoments m{NAN, NAN, NAN};
  if (s.converged) m = asymptotic_moments(s, S0, c.alpha2);
  std::ostringstream os;
  os << fmt(s.state.zeta) << ',' << (s.converged ? "true" : "false") << ',' << fmt(s.residual) << ','
     << fmt(s.state.u2) << ',' << fmt(s.state.v) << ',' << fmt(s.state.w) << ',' << fmt(s.state.mu2) << ','
     << fmt(s.state.nu) << ',' << fmt(s.state.omega) << ',' << fmt(s.penalty.eta_prime) << ','
     << fmt(s.penalty.tau_prime) << ',' << fmt(m.bias2) << ',' << fmt(m.variance) << ',' << fmt(m.mse);
  if (s.state.nuisance)
    os << ',' << fmt(s.state.nuisance->sigma_ratio) << ',' << fmt(s.state.nuisance->phi_shift) << ','
       << fmt(s.state.nuisance->h());
  os << '\n';
  return os.str();
}

int run_solve(const Common& c, const std::string& zeta_spec, double mu2, double phi_shift, std::ostream& out)
{
  const Family fam = parse_family(c.model);
  const PenaltyConfig pen{c.eta_prime, c.tau_prime};
  RSTarget target;
  if (!std::isnan(mu2)) {
    if (fam != Family::Logit) throw InvalidArgument("--mu2 applies to the logit model");
    target = RSTarget::mu2(mu2);
  }
  else if (!std::isnan(phi_shift)) {
    if (fam != Family::WeibullPH) throw InvalidArgument("--phi-shift applies to the weibull model");
    target = RSTarget::phi_shift(phi_shift);
  }
  else {
    const auto z = parse_zeta_spec(zeta_spec);
    if (z.size() != 1) throw InvalidArgument("solve takes a single --zeta value");
    target = RSTarget::zeta(z[0]);
  }
  const RSSolution sol = rs_solve(fam, target, c.S, pen, controls_of(c));
  if (c.format == "json") emit(solution_record(sol, c).dump(2) + "\n", c.out, out);
  else emit(solution_csv_header(fam) + solution_csv_row(sol, c), c.out, out);
  return sol.converged ? kOk : kNoConvergence;
}

int run_zero_bias(const Common& c, const std::string& zeta_spec, const std::string& mode, std::ostream& out)
{
  const Family fam = parse_family(c.model);
  const auto grid = parse_zeta_spec(zeta_spec);
  const SolverControls sc = controls_of(c);
  std::vector<ZeroBiasMode> modes;
  if (mode != "empirical") modes.push_back(ZeroBiasMode::Oracle);
  if (mode != "oracle") modes.push_back(ZeroBiasMode::Empirical);

  bool all_ok = true;
  nlohmann::json rows = nlohmann::json::array();
  std::ostringstream csv;
  csv << "zeta,eta_star,tau_star,oracle_converged,empirical_converged\n";
  for (double z : grid) {
    nlohmann::json row{{"zeta", z}};
    std::optional<double> eta, tau;
    std::optional<bool> ok_o, ok_e;
    for (ZeroBiasMode m : modes) {
      const std::string key(zero_bias_mode_name(m));
      try {
        const ZeroBiasResult r = zero_bias(fam, c.S, z, m, sc);
        row[key] = {{"penalty", r.penalty}, {"solution", solution_record(r.solution, c)}};
        if (fam == Family::Logit) row[key]["chi"] = r.chi;
        if (!r.solution.converged) all_ok = false;
        (m == ZeroBiasMode::Oracle ? eta : tau) = r.penalty;
        (m == ZeroBiasMode::Oracle ? ok_o : ok_e) = r.solution.converged;
      } catch (const DegenerateRegimeError& e) {
        row[key] = {{"penalty", nullptr}, {"error", e.what()}};
        all_ok = false;
        (m == ZeroBiasMode::Oracle ? ok_o : ok_e) = false;
      }
    }
    if (eta) row["eta_star"] = *eta;
    if (tau) row["tau_star"] = *tau;
    rows.push_back(row);
    auto b = [](const std::optional<bool>& v) { return v ? (*v ? "true" : "false") : ""; };
    csv << fmt(z) << ',' << (eta ? fmt(*eta) : "") << ',' << (tau ? fmt(*tau) : "") << ',' << b(ok_o) << ','
        << b(ok_e) << '\n';
  }
  if (c.format == "json") {
    nlohmann::json j{{"model", c.model}, {"S", c.S}, {"order", c.order}, {"tolerance", c.tol}, {"rows", rows}};
    emit(j.dump(2) + "\n", c.out, out);
  }
  else {
    emit(csv.str(), c.out, out);
  }
  return all_ok ? kOk : kNoConvergence;
}

int run_curves(const Common& c, const std::string& zeta_spec, std::ostream& out)
{
  const Family fam = parse_family(c.model);
  const auto grid = parse_zeta_spec(zeta_spec);
  const PenaltyConfig pen{c.eta_prime, c.tau_prime};
  const SolverControls sc = controls_of(c);
  bool all_ok = true;
  nlohmann::json rows = nlohmann::json::array();
  std::string csv = solution_csv_header(fam);
  for (double z : grid) {
    const RSSolution sol = rs_solve(fam, RSTarget::zeta(z), c.S, pen, sc);
    all_ok = all_ok && sol.converged;
    rows.push_back(solution_record(sol, c));
    csv += solution_csv_row(sol, c);
  }
  if (c.format == "json") {
    nlohmann::json j{{"model", c.model}, {"S", c.S}, {"eta_prime", c.eta_prime}, {"tau_prime", c.tau_prime},
                     {"rows", rows}};
    emit(j.dump(2) + "\n", c.out, out);
  }
  else {
    emit(csv, c.out, out);
  }
  return all_ok ? kOk : kNoConvergence;
}

nlohmann::json read_json_file(const std::string& path)
{
  std::ifstream f(path);
  if (!f) throw InvalidArgument("cannot read '" + path + "'");
  try {
    return nlohmann::json::parse(f);
  } catch (const nlohmann::json::exception& e) {
    throw InvalidArgument("'" + path + "' is not valid JSON: " + e.what());
  }
}

int run_simulate(const std::string& config_path, std::optional<std::uint64_t> seed, std::optional<int> replicates,
                 std::optional<int> order, std::optional<double> tol, const std::string& out_path,
                 const std::string& format, std::ostream& out)
{
  ExperimentConfig cfg = read_json_file(config_path).get<ExperimentConfig>();
  if (seed) cfg.seed = *seed;
  if (replicates) cfg.replicates = *replicates;
  if (order) cfg.quadrature_order = *order;
  if (tol) cfg.tolerance = *tol;
  cfg.validate();
  const ReplicationSummary s = run_experiment(cfg);
  if (format == "json") emit(nlohmann::json(s).dump(2) + "\n", out_path, out);
  else emit(to_csv(s), out_path, out);
  for (const auto& r : s.rows)
    if (r.rs_solution && !r.rs_solution->converged) return kNoConvergence;
  return kOk;
}

int run_compare(const std::string& input, const std::map<std::string, double>& tol, const std::string& out_path,
                const std::string& format, std::ostream& out)
{
  ReplicationSummary s = read_json_file(input).get<ReplicationSummary>();
  attach_predictions(s);
  const CompareReport rep = compare_report(s, tol);
  if (format == "json") emit(nlohmann::json(rep).dump(2) + "\n", out_path, out);
  else emit(to_csv(rep), out_path, out);
  return kOk;
}

}  // namespace

std::vector<double> parse_zeta_spec(const std::string& spec)
{
  auto number = [&](const std::string& s) {
    std::size_t pos = 0;
    double v;
    try {
      v = std::stod(s, &pos);
    } catch (const std::exception&) {
      throw InvalidArgument("bad zeta value '" + s + "'");
    }
    if (pos != s.size()) throw InvalidArgument("bad zeta value '" + s + "'");
    return v;
  };
  std::vector<double> out;
  if (spec.empty()) throw InvalidArgument("--zeta is required");
  if (spec.find(':') != std::string::npos) {
    std::vector<std::string> parts;
    std::stringstream ss(spec);
    for (std::string p; std::getline(ss, p, ':');) parts.push_back(p);
    if (parts.size() != 3) throw InvalidArgument("zeta range must be a:b:step");
    const double a = number(parts[0]), b = number(parts[1]), step = number(parts[2]);
    if (!(step > 0.0) || b < a) throw InvalidArgument("zeta range needs step > 0 and b >= a");
    const long count = long(std::floor((b - a) / step + 1e-9)) + 1;
    for (long k = 0; k < count; ++k) out.push_back(std::round((a + k * step) * 1e12) / 1e12);
  }
  else {
    std::stringstream ss(spec);
    for (std::string p; std::getline(ss, p, ',');) out.push_back(number(p));
  }
  for (double z : out)
    if (!(z > 0.0)) throw InvalidArgument("zeta values must be > 0");
  return out;
}

int cli_main(int argc, const char* const* argv) { return cli_main(argc, argv, std::cout, std::cerr); }

int cli_main(int argc, const char* const* argv, std::ostream& out, std::ostream& err)
{
  CLI::App app{"Replica-symmetric theory and simulation for penalized GLMs"};
  app.require_subcommand(1);

  Common solve_opts, zb_opts, curve_opts;
  std::string solve_zeta, zb_zeta = "0.1:0.6:0.1", curve_zeta = "0.05:0.6:0.05", zb_mode = "both";
  double mu2 = NAN, phi_shift = NAN;

  auto* solve = app.add_subcommand("solve", "one RS solve, printed as JSON");
  add_common(solve, solve_opts, true);
  solve->add_option("--zeta", solve_zeta, "dimension ratio p/n");
  solve->add_option("--mu2", mu2, "solve at fixed mu2 instead (logit)");
  solve->add_option("--phi-shift", phi_shift, "solve at fixed (phi - phi0)/sigma instead (weibull)");

  auto* zb = app.add_subcommand("zero-bias", "eta* and tau* over a zeta grid");
  add_common(zb, zb_opts, false);
  zb->add_option("--zeta", zb_zeta, "a:b:step or comma list");
  zb->add_option("--mode", zb_mode, "which prescription")->check(CLI::IsMember({"oracle", "empirical", "both"}));

  auto* curves = app.add_subcommand("curves", "theory curves over zeta");
  add_common(curves, curve_opts, true);
  curves->add_option("--zeta", curve_zeta, "a:b:step or comma list");

  std::string config_path, sim_out, sim_format = "json";
  std::optional<std::uint64_t> seed;
  std::optional<int> replicates, sim_order;
  std::optional<double> sim_tol;
  auto* sim = app.add_subcommand("simulate", "Monte-Carlo experiment from a JSON config");
  sim->add_option("--config", config_path, "experiment config (JSON)")->required();
  sim->add_option("--seed", seed, "override the config seed");
  sim->add_option("--replicates", replicates, "override the replicate count");
  sim->add_option("--order", sim_order, "override the quadrature order");
  sim->add_option("--tol", sim_tol, "override the fixed-point tolerance");
  sim->add_option("--out", sim_out, "output path (default: stdout)");
  sim->add_option("--format", sim_format, "output format")->check(CLI::IsMember({"json", "csv"}));

  std::string cmp_in, cmp_out, cmp_format = "json";
  std::map<std::string, double> tolerances = default_tolerances();
  double tol_K = tolerances["K_n"], tol_V = tolerances["V_n"], tol_E = tolerances["sq_error"];
  double tol_nuis = tolerances["sigma_ratio"];
  auto* cmp = app.add_subcommand("compare", "deviation report of a simulation output against RS predictions");
  cmp->add_option("--input", cmp_in, "output of `simulate` (JSON)")->required();
  cmp->add_option("--tol-K", tol_K, "tolerance on mean K_n");
  cmp->add_option("--tol-V", tol_V, "tolerance on mean V_n");
  cmp->add_option("--tol-mse", tol_E, "tolerance on mean squared error");
  cmp->add_option("--tol-nuisance", tol_nuis, "tolerance on the nuisance statistics");
  cmp->add_option("--out", cmp_out, "output path (default: stdout)");
  cmp->add_option("--format", cmp_format, "output format")->check(CLI::IsMember({"json", "csv"}));

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n\n" << app.help();
    return kInvalid;
  }

  try {
    if (*solve) return run_solve(solve_opts, solve_zeta, mu2, phi_shift, out);
    if (*zb) return run_zero_bias(zb_opts, zb_zeta, zb_mode, out);
    if (*curves) return run_curves(curve_opts, curve_zeta, out);
    if (*sim) return run_simulate(config_path, seed, replicates, sim_order, sim_tol, sim_out, sim_format, out);
    if (*cmp) {
      tolerances["K_n"] = tol_K;
      tolerances["V_n"] = tol_V;
      tolerances["sq_error"] = tol_E;
      for (const char* k : {"sigma_ratio", "phi_shift", "sigma_corrected", "phi_corrected"}) tolerances[k] = tol_nuis;
      return run_compare(cmp_in, tolerances, cmp_out, cmp_format, out);
    }
  } catch (const InvalidArgument& e) {
    err << "error: " << e.what() << "\n";
    return kInvalid;
  } catch (const DomainError& e) {
    err << "error: " << e.what() << "\n";
    return kInvalid;
  } catch (const DegenerateRegimeError& e) {
    err << "error: " << e.what() << "\n";
    return kNoConvergence;
  } catch (const ConvergenceError& e) {
    err << "error: " << e.what() << "\n";
    return kNoConvergence;
  } catch (const RangeError& e) {
    err << "error: " << e.what() << "\n";
    return kNoConvergence;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kNoConvergence;
  }
  return kInvalid;
}

}  // namespace rscavity
