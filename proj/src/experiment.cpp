#include "rscavity/experiment.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdlib>
#include <cstdio>
#include <sstream>
#include <thread>

#include "rscavity/error.hpp"
#include "rscavity/pml.hpp"
#include "rscavity/rng.hpp"

namespace rscavity {

std::string_view penalty_mode_name(PenaltyMode m)
{
  switch (m) {
    case PenaltyMode::None: return "none";
    case PenaltyMode::Oracle: return "oracle";
    case PenaltyMode::Empirical: return "empirical";
    case PenaltyMode::ZeroBiasOracle: return "zero_bias_oracle";
    case PenaltyMode::ZeroBiasEmpirical: return "zero_bias_empirical";
  }
  return "none";
}

PenaltyMode parse_penalty_mode(std::string_view s)
{
  if (s == "none") return PenaltyMode::None;
  if (s == "oracle") return PenaltyMode::Oracle;
  if (s == "empirical") return PenaltyMode::Empirical;
  if (s == "zero_bias_oracle") return PenaltyMode::ZeroBiasOracle;
  if (s == "zero_bias_empirical") return PenaltyMode::ZeroBiasEmpirical;
  throw InvalidArgument("unknown penalty_mode '" + std::string(s) + "'");
}

void ExperimentConfig::validate() const
{
  if (n < 1) throw InvalidArgument("n must be >= 1");
  if (zeta_grid.empty()) throw InvalidArgument("zeta_grid is empty");
  for (double z : zeta_grid) {
    if (!(z > 0.0)) throw InvalidArgument("zeta_grid values must be > 0");
    if (std::lround(z * n) < 1) throw InvalidArgument("n * zeta must round to p >= 1");
  }
  if (!(S_target > 0.0)) throw InvalidArgument("S_target must be > 0");
  if (replicates < 1) throw InvalidArgument("replicates must be >= 1");
  if (quadrature_order < 1) throw InvalidArgument("quadrature_order must be >= 1");
  if (!(tolerance > 0.0)) throw InvalidArgument("tolerance must be > 0");
  if (!(sigma0 > 0.0)) throw InvalidArgument("sigma0 must be > 0");
  if (!(eig_support.lo > 0.0) || eig_support.hi < eig_support.lo)
    throw InvalidArgument("eig_support must satisfy 0 < lo <= hi");
  if (penalty_mode == PenaltyMode::Oracle || penalty_mode == PenaltyMode::Empirical) {
    if (!penalty_value) throw InvalidArgument("penalty_value is required for oracle and empirical modes");
    if (!(*penalty_value >= 0.0)) throw InvalidArgument("penalty_value must be >= 0");
  }
}

void to_json(nlohmann::json& j, const ExperimentConfig& c)
{
  j = nlohmann::json{{"family", family_name(c.family)},
                     {"n", c.n},
                     {"zeta_grid", c.zeta_grid},
                     {"S_target", c.S_target},
                     {"penalty_mode", penalty_mode_name(c.penalty_mode)},
                     {"penalty_value", c.penalty_value ? nlohmann::json(*c.penalty_value) : nlohmann::json(nullptr)},
                     {"replicates", c.replicates},
                     {"seed", c.seed},
                     {"quadrature_order", c.quadrature_order},
                     {"tolerance", c.tolerance},
                     {"freeze_population", c.freeze_population},
                     {"phi0", c.phi0},
                     {"sigma0", c.sigma0},
                     {"eig_support", {c.eig_support.lo, c.eig_support.hi}}};
}

void from_json(const nlohmann::json& j, ExperimentConfig& c)
{
  static const char* known[] = {"family",     "n",         "zeta_grid",        "S_target",
                                "penalty_mode", "penalty_value", "replicates", "seed",
                                "quadrature_order", "tolerance", "freeze_population", "phi0",
                                "sigma0",     "eig_support"};
  if (!j.is_object()) throw InvalidArgument("experiment config must be a JSON object");
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (std::find_if(std::begin(known), std::end(known), [&](const char* k) { return it.key() == k; }) ==
        std::end(known))
      throw InvalidArgument("unknown config field '" + it.key() + "'");
  }
  c = ExperimentConfig{};
  try {
    if (j.contains("family")) c.family = parse_family(j.at("family").get<std::string>());
    if (j.contains("n")) c.n = j.at("n").get<int>();
    if (j.contains("zeta_grid")) c.zeta_grid = j.at("zeta_grid").get<std::vector<double>>();
    if (j.contains("S_target")) c.S_target = j.at("S_target").get<double>();
    if (j.contains("penalty_mode")) c.penalty_mode = parse_penalty_mode(j.at("penalty_mode").get<std::string>());
    if (j.contains("penalty_value") && !j.at("penalty_value").is_null())
      c.penalty_value = j.at("penalty_value").get<double>();
    if (j.contains("replicates")) c.replicates = j.at("replicates").get<int>();
    if (j.contains("seed")) c.seed = j.at("seed").get<std::uint64_t>();
    if (j.contains("quadrature_order")) c.quadrature_order = j.at("quadrature_order").get<int>();
    if (j.contains("tolerance")) c.tolerance = j.at("tolerance").get<double>();
    if (j.contains("freeze_population")) c.freeze_population = j.at("freeze_population").get<bool>();
    if (j.contains("phi0")) c.phi0 = j.at("phi0").get<double>();
    if (j.contains("sigma0")) c.sigma0 = j.at("sigma0").get<double>();
    if (j.contains("eig_support")) {
      auto e = j.at("eig_support").get<std::vector<double>>();
      if (e.size() != 2) throw InvalidArgument("eig_support must have two entries");
      c.eig_support = {e[0], e[1]};
    }
  } catch (const nlohmann::json::exception& e) {
    throw InvalidArgument(std::string("bad config field: ") + e.what());
  }
}

std::string config_hash(const ExperimentConfig& c)
{
  const std::string s = nlohmann::json(c).dump();
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char ch : s) {
    h ^= ch;
    h *= 1099511628211ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

const StatSummary& ZetaSummary::stat(const std::string& name) const
{
  for (const auto& s : stats)
    if (s.stat == name) return s;
  throw InvalidArgument("no statistic named '" + name + "'");
}

int worker_count()
{
  if (const char* env = std::getenv("RS_CAVITY_THREADS")) {
    char* end = nullptr;
    long v = std::strtol(env, &end, 10);
    if (end != env && v > 0) return int(v);
  }
  unsigned hw = std::thread::hardware_concurrency();
  return hw == 0 ? 1 : int(hw);
}

double quantile(std::vector<double> v, double q)
{
  if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
  std::sort(v.begin(), v.end());
  const double h = (double(v.size()) - 1.0) * q;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  if (lo + 1 >= v.size()) return v.back();
  return v[lo] + (h - double(lo)) * (v[lo + 1] - v[lo]);
}

namespace {

constexpr std::uint64_t kFrozenPopulationStream = ~std::uint64_t(0);

struct Outcome {
  bool ok = false;
  std::string reason;
  double K = 0.0, V = 0.0, sq_error = 0.0, alpha2 = 0.0;
  NuisanceParams nuisance;
};

PenaltyConfig fixed_penalty(const ExperimentConfig& c)
{
  PenaltyConfig p;
  if (c.penalty_mode == PenaltyMode::Oracle) p.eta_prime = *c.penalty_value;
  if (c.penalty_mode == PenaltyMode::Empirical) p.tau_prime = *c.penalty_value;
  return p;
}

bool is_zero_bias(PenaltyMode m) { return m == PenaltyMode::ZeroBiasOracle || m == PenaltyMode::ZeroBiasEmpirical; }

SolverControls controls_for(const ExperimentConfig& c)
{
  SolverControls sc;
  sc.quadrature_order = c.quadrature_order;
  sc.tolerance = c.tolerance;
  return sc;
}

Outcome run_replicate(const ExperimentConfig& c, std::size_t zeta_index, int p, int rep, const PenaltyConfig& pen,
                      const PopulationSpec* frozen)
{
  Outcome o;
  try {
    Rng rng = make_stream(c.seed, {std::uint64_t(zeta_index), std::uint64_t(rep)});
    PopulationSpec spec = frozen ? *frozen : build_population(p, c.eig_support, c.S_target, rng);
    const Eigen::MatrixXd X = sample_covariates(c.n, spec, rng);
    const NuisanceParams truth{c.phi0, c.sigma0};
    const Eigen::VectorXd resp = sample_responses(X, spec.beta0, c.family, truth, rng);
    const FitResult fit = fit_pml(X, resp, c.family, spec, pen);
    if (!fit.converged) {
      o.reason = "fit did not converge (gradient norm " + std::to_string(fit.gradient_norm) + ")";
      return o;
    }
    const OverlapSample ov = compute_overlaps(fit, spec);
    o.K = ov.K_n;
    o.V = ov.V_n;
    o.sq_error = (fit.beta_hat - spec.beta0).squaredNorm();
    o.alpha2 = spec.alpha2;
    o.nuisance = fit.nuisance_hat;
    o.ok = std::isfinite(o.K) && std::isfinite(o.V);
    if (!o.ok) o.reason = "non-finite overlaps";
  } catch (const std::exception& e) {
    o.ok = false;
    o.reason = e.what();
  }
  return o;
}

StatSummary summarize(const std::string& name, const std::vector<double>& v)
{
  StatSummary s;
  s.stat = name;
  double acc = 0.0;
  for (double x : v) acc += x;
  s.mean = v.empty() ? std::numeric_limits<double>::quiet_NaN() : acc / double(v.size());
  s.median = quantile(v, 0.5);
  s.q1 = quantile(v, 0.25);
  s.q3 = quantile(v, 0.75);
  return s;
}

void set_prediction(ZetaSummary& row, const std::string& name, double value)
{
  for (auto& s : row.stats) {
    if (s.stat != name) continue;
    s.rs_prediction = value;
    s.deviation = s.mean - value;
  }
}

void fill_predictions(ZetaSummary& row, const ExperimentConfig& c)
{
  for (auto& s : row.stats) {
    s.rs_prediction.reset();
    s.deviation.reset();
  }
  if (!row.rs_solution || !row.rs_solution->converged) return;
  const RSSolution& sol = *row.rs_solution;
  set_prediction(row, "K_n", sol.state.w / c.S_target);
  set_prediction(row, "V_n", sol.state.v);
  // beta0 = e1, so S0 = 1
  set_prediction(row, "sq_error", asymptotic_moments(sol, 1.0, row.mean_alpha2).mse);
  if (c.family == Family::WeibullPH && sol.state.nuisance) {
    set_prediction(row, "sigma_ratio", sol.state.nuisance->sigma_ratio);
    set_prediction(row, "phi_shift", sol.state.nuisance->h());
    set_prediction(row, "sigma_corrected", 1.0);
    set_prediction(row, "phi_corrected", 0.0);
  }
}

// RS solution (and the penalty it implies) at zeta_effective.
void solve_row(ZetaSummary& row, const ExperimentConfig& c)
{
  const SolverControls sc = controls_for(c);
  row.rs_solution.reset();
  row.rs_error.clear();
  try {
    if (is_zero_bias(c.penalty_mode)) {
      const ZeroBiasMode m =
          c.penalty_mode == PenaltyMode::ZeroBiasOracle ? ZeroBiasMode::Oracle : ZeroBiasMode::Empirical;
      ZeroBiasResult zb = zero_bias(c.family, c.S_target, row.zeta_effective, m, sc);
      row.rs_solution = zb.solution;
    }
    else {
      row.rs_solution = rs_solve(c.family, RSTarget::zeta(row.zeta_effective), c.S_target, fixed_penalty(c), sc);
    }
    if (!row.rs_solution->converged) row.rs_error = row.rs_solution->message;
  } catch (const std::exception& e) {
    row.rs_error = e.what();
  }
}

}  // namespace

ReplicationSummary run_experiment(const ExperimentConfig& c)
{
  c.validate();
  ReplicationSummary out;
  out.config = c;
  out.config_hash = config_hash(c);
  const int threads = std::max(1, std::min(worker_count(), c.replicates));

  for (std::size_t zi = 0; zi < c.zeta_grid.size(); ++zi) {
    ZetaSummary row;
    row.zeta = c.zeta_grid[zi];
    row.p = int(std::lround(row.zeta * c.n));
    row.zeta_effective = double(row.p) / double(c.n);

    solve_row(row, c);
    if (is_zero_bias(c.penalty_mode)) {
      if (!row.rs_solution || !row.rs_solution->converged)
        throw ConvergenceError("zero-bias penalty unavailable at zeta=" + std::to_string(row.zeta) + ": " +
                               row.rs_error);
      row.penalty = row.rs_solution->penalty;
    }
    else {
      row.penalty = fixed_penalty(c);
    }

    std::optional<PopulationSpec> frozen;
    if (c.freeze_population) {
      Rng rng = make_stream(c.seed, {std::uint64_t(zi), kFrozenPopulationStream});
      frozen = build_population(row.p, c.eig_support, c.S_target, rng);
    }

    std::vector<Outcome> outcomes(c.replicates);
    std::atomic<int> next{0};
    auto worker = [&]() {
      for (int r = next++; r < c.replicates; r = next++)
        outcomes[r] = run_replicate(c, zi, row.p, r, row.penalty, frozen ? &*frozen : nullptr);
    };
    if (threads == 1) {
      worker();
    }
    else {
      std::vector<std::thread> pool;
      for (int t = 0; t < threads; ++t) pool.emplace_back(worker);
      for (auto& t : pool) t.join();
    }

    std::vector<double> K, V, E, sr, ps, sc, pc;
    double alpha_acc = 0.0;
    std::optional<DebiasFactors> factors;
    if (c.family == Family::WeibullPH && row.rs_solution && row.rs_solution->converged)
      factors = nuisance_debias_factors(*row.rs_solution);
    for (int r = 0; r < c.replicates; ++r) {
      const Outcome& o = outcomes[r];
      if (!o.ok) {
        row.failures.push_back({r, o.reason});
        continue;
      }
      K.push_back(o.K);
      V.push_back(o.V);
      E.push_back(o.sq_error);
      alpha_acc += o.alpha2;
      if (c.family == Family::WeibullPH) {
        sr.push_back(o.nuisance.sigma / c.sigma0);
        ps.push_back((o.nuisance.phi - c.phi0) / c.sigma0);
        if (factors) {
          const NuisanceParams corr = corrected_nuisance(o.nuisance, *factors);
          sc.push_back(corr.sigma / c.sigma0);
          pc.push_back((corr.phi - c.phi0) / c.sigma0);
        }
      }
    }
    row.n_success = int(K.size());
    row.n_fail = int(row.failures.size());
    row.mean_alpha2 = K.empty() ? std::numeric_limits<double>::quiet_NaN() : alpha_acc / double(K.size());
    row.stats.push_back(summarize("K_n", K));
    row.stats.push_back(summarize("V_n", V));
    row.stats.push_back(summarize("sq_error", E));
    if (c.family == Family::WeibullPH) {
      row.stats.push_back(summarize("sigma_ratio", sr));
      row.stats.push_back(summarize("phi_shift", ps));
      if (factors) {
        row.stats.push_back(summarize("sigma_corrected", sc));
        row.stats.push_back(summarize("phi_corrected", pc));
      }
    }
    fill_predictions(row, c);
    out.rows.push_back(std::move(row));
  }
  return out;
}

void attach_predictions(ReplicationSummary& s)
{
  for (auto& row : s.rows) {
    solve_row(row, s.config);
    fill_predictions(row, s.config);
  }
}

namespace {

nlohmann::json opt_json(const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(nullptr); }

}  // namespace

void to_json(nlohmann::json& j, const ReplicationSummary& s)
{
  j = nlohmann::json::object();
  j["config"] = s.config;
  j["config_hash"] = s.config_hash;
  j["seed"] = s.config.seed;
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& r : s.rows) {
    nlohmann::json jr{{"zeta", r.zeta},
                      {"zeta_effective", r.zeta_effective},
                      {"p", r.p},
                      {"eta_prime", r.penalty.eta_prime},
                      {"tau_prime", r.penalty.tau_prime},
                      {"n_success", r.n_success},
                      {"n_fail", r.n_fail},
                      {"mean_alpha2", r.mean_alpha2},
                      {"seed", s.config.seed},
                      {"config_hash", s.config_hash}};
    nlohmann::json fails = nlohmann::json::array();
    for (const auto& f : r.failures) fails.push_back({{"replicate_id", f.replicate_id}, {"reason", f.reason}});
    jr["failures"] = fails;
    nlohmann::json stats = nlohmann::json::array();
    for (const auto& st : r.stats)
      stats.push_back({{"stat", st.stat},
                       {"mean", st.mean},
                       {"median", st.median},
                       {"q1", st.q1},
                       {"q3", st.q3},
                       {"rs_prediction", opt_json(st.rs_prediction)},
                       {"deviation", opt_json(st.deviation)}});
    jr["stats"] = stats;
    jr["rs_solution"] = r.rs_solution ? nlohmann::json(*r.rs_solution) : nlohmann::json(nullptr);
    if (!r.rs_error.empty()) jr["rs_error"] = r.rs_error;
    rows.push_back(jr);
  }
  j["rows"] = rows;
}

void from_json(const nlohmann::json& j, ReplicationSummary& s)
{
  try {
    s = ReplicationSummary{};
    s.config = j.at("config").get<ExperimentConfig>();
    s.config_hash = j.value("config_hash", config_hash(s.config));
    for (const auto& jr : j.at("rows")) {
      ZetaSummary r;
      r.zeta = jr.at("zeta").get<double>();
      r.zeta_effective = jr.at("zeta_effective").get<double>();
      r.p = jr.at("p").get<int>();
      r.penalty.eta_prime = jr.value("eta_prime", 0.0);
      r.penalty.tau_prime = jr.value("tau_prime", 0.0);
      r.n_success = jr.at("n_success").get<int>();
      r.n_fail = jr.at("n_fail").get<int>();
      r.mean_alpha2 = jr.at("mean_alpha2").is_null() ? std::numeric_limits<double>::quiet_NaN()
                                                       : jr.at("mean_alpha2").get<double>();
      if (jr.contains("failures"))
        for (const auto& f : jr.at("failures"))
          r.failures.push_back({f.at("replicate_id").get<int>(), f.at("reason").get<std::string>()});
      for (const auto& js : jr.at("stats")) {
        StatSummary st;
        auto num = [&](const char* k) {
          return js.at(k).is_null() ? std::numeric_limits<double>::quiet_NaN() : js.at(k).get<double>();
        };
        st.stat = js.at("stat").get<std::string>();
        st.mean = num("mean");
        st.median = num("median");
        st.q1 = num("q1");
        st.q3 = num("q3");
        if (js.contains("rs_prediction") && !js.at("rs_prediction").is_null()) st.rs_prediction = num("rs_prediction");
        if (js.contains("deviation") && !js.at("deviation").is_null()) st.deviation = num("deviation");
        r.stats.push_back(st);
      }
      if (jr.contains("rs_solution") && !jr.at("rs_solution").is_null())
        r.rs_solution = jr.at("rs_solution").get<RSSolution>();
      r.rs_error = jr.value("rs_error", std::string());
      s.rows.push_back(std::move(r));
    }
  } catch (const nlohmann::json::exception& e) {
    throw InvalidArgument(std::string("malformed simulation output: ") + e.what());
  }
}

namespace {

std::string fmt(double v)
{
  if (!std::isfinite(v)) return "";
  return nlohmann::json(v).dump();
}

std::string fmt(const std::optional<double>& v) { return v ? fmt(*v) : std::string(); }

}  // namespace

std::string to_csv(const ReplicationSummary& s)
{
  std::ostringstream os;
  os << "zeta,zeta_effective,stat,mean,q1,q3,rs_prediction,deviation,n_fail\n";
  for (const auto& r : s.rows)
    for (const auto& st : r.stats)
      os << fmt(r.zeta) << ',' << fmt(r.zeta_effective) << ',' << st.stat << ',' << fmt(st.mean) << ','
         << fmt(st.q1) << ',' << fmt(st.q3) << ',' << fmt(st.rs_prediction) << ',' << fmt(st.deviation) << ','
         << r.n_fail << '\n';
  return os.str();
}

std::map<std::string, double> default_tolerances()
{
  return {{"K_n", 0.03},         {"V_n", 0.1},       {"sq_error", 0.1},       {"sigma_ratio", 0.03},
          {"phi_shift", 0.03},   {"sigma_corrected", 0.03}, {"phi_corrected", 0.03}};
}

CompareReport compare_report(const ReplicationSummary& s, const std::map<std::string, double>& tol)
{
  CompareReport rep;
  rep.config_hash = s.config_hash;
  rep.seed = s.config.seed;
  for (const auto& r : s.rows) {
    for (const auto& st : r.stats) {
      CompareRow cr;
      cr.zeta = r.zeta;
      cr.stat = st.stat;
      cr.mean = st.mean;
      cr.rs_prediction = st.rs_prediction;
      cr.deviation = st.deviation;
      cr.iqr_width = st.q3 - st.q1;
      auto it = tol.find(st.stat);
      cr.tolerance = it == tol.end() ? 0.0 : it->second;
      if (st.rs_prediction && st.deviation) {
        cr.prediction_in_iqr = st.q1 <= *st.rs_prediction && *st.rs_prediction <= st.q3;
        cr.pass = std::abs(*st.deviation) <= cr.tolerance;
        if (*cr.pass) ++rep.n_pass;
        else ++rep.n_fail;
      }
      else {
        ++rep.n_skipped;
      }
      rep.rows.push_back(cr);
    }
  }
  rep.n_rows = int(rep.rows.size());
  return rep;
}

void to_json(nlohmann::json& j, const CompareReport& r)
{
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& cr : r.rows)
    rows.push_back({{"zeta", cr.zeta},
                    {"stat", cr.stat},
                    {"mean", cr.mean},
                    {"rs_prediction", opt_json(cr.rs_prediction)},
                    {"deviation", opt_json(cr.deviation)},
                    {"iqr_width", cr.iqr_width},
                    {"prediction_in_iqr", cr.prediction_in_iqr},
                    {"tolerance", cr.tolerance},
                    {"pass", cr.pass ? nlohmann::json(*cr.pass) : nlohmann::json(nullptr)}});
  j = nlohmann::json{{"config_hash", r.config_hash}, {"seed", r.seed},     {"rows", rows},
                     {"n_rows", r.n_rows},           {"n_pass", r.n_pass}, {"n_fail", r.n_fail},
                     {"n_skipped", r.n_skipped}};
}

std::string to_csv(const CompareReport& r)
{
  std::ostringstream os;
  os << "zeta,stat,mean,rs_prediction,deviation,iqr_width,prediction_in_iqr,tolerance,pass\n";
  for (const auto& cr : r.rows)
    os << fmt(cr.zeta) << ',' << cr.stat << ',' << fmt(cr.mean) << ',' << fmt(cr.rs_prediction) << ','
       << fmt(cr.deviation) << ',' << fmt(cr.iqr_width) << ',' << (cr.prediction_in_iqr ? "true" : "false") << ','
       << fmt(cr.tolerance) << ',' << (cr.pass ? (*cr.pass ? "true" : "false") : "") << '\n';
  return os.str();
}

}  // namespace rscavity
