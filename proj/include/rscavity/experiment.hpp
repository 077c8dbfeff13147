#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "rscavity/glm.hpp"
#include "rscavity/population.hpp"
#include "rscavity/rs_solver.hpp"

namespace rscavity {

enum class PenaltyMode { None, Oracle, Empirical, ZeroBiasOracle, ZeroBiasEmpirical };

std::string_view penalty_mode_name(PenaltyMode m);
PenaltyMode parse_penalty_mode(std::string_view s);

struct ExperimentConfig {
  Family family = Family::Logit;
  int n = 200;
  std::vector<double> zeta_grid{0.05, 0.1, 0.15, 0.2, 0.25, 0.3, 0.35, 0.4, 0.45, 0.5, 0.55, 0.6};
  double S_target = 1.0;
  PenaltyMode penalty_mode = PenaltyMode::None;
  std::optional<double> penalty_value;
  int replicates = 500;
  std::uint64_t seed = 0;
  int quadrature_order = kDefaultQuadratureOrder;
  double tolerance = 1e-10;
  // one A0 per zeta instead of one per replicate
  bool freeze_population = false;
  double phi0 = 0.0;
  double sigma0 = 1.0;
  EigSupport eig_support;

  void validate() const;
};

void to_json(nlohmann::json& j, const ExperimentConfig& c);
void from_json(const nlohmann::json& j, ExperimentConfig& c);

/// FNV-1a of the canonical JSON form of the config, as 16 hex digits.
std::string config_hash(const ExperimentConfig& c);

struct StatSummary {
  std::string stat;
  double mean = 0.0;
  double median = 0.0;
  double q1 = 0.0;
  double q3 = 0.0;
  std::optional<double> rs_prediction;
  std::optional<double> deviation;  // mean - prediction
};

struct ReplicateFailure {
  int replicate_id = 0;
  std::string reason;
};

struct ZetaSummary {
  double zeta = 0.0;
  double zeta_effective = 0.0;
  int p = 0;
  PenaltyConfig penalty;
  int n_success = 0;
  int n_fail = 0;
  std::vector<ReplicateFailure> failures;
  std::vector<StatSummary> stats;
  double mean_alpha2 = 0.0;
  std::optional<RSSolution> rs_solution;
  std::string rs_error;

  const StatSummary& stat(const std::string& name) const;
};

struct ReplicationSummary {
  ExperimentConfig config;
  std::string config_hash;
  std::vector<ZetaSummary> rows;
};

/// Number of worker threads: RS_CAVITY_THREADS if set and > 0, else the
/// hardware concurrency.
int worker_count();

ReplicationSummary run_experiment(const ExperimentConfig& config);

/// Solves the RS system for each row (at zeta_effective) and fills the
/// predictions and deviations.
void attach_predictions(ReplicationSummary& summary);

/// Sample quartiles with linear interpolation between order statistics.
double quantile(std::vector<double> values, double q);

void to_json(nlohmann::json& j, const ReplicationSummary& s);
void from_json(const nlohmann::json& j, ReplicationSummary& s);
std::string to_csv(const ReplicationSummary& s);

struct CompareRow {
  double zeta = 0.0;
  std::string stat;
  double mean = 0.0;
  std::optional<double> rs_prediction;
  std::optional<double> deviation;
  double iqr_width = 0.0;
  bool prediction_in_iqr = false;
  double tolerance = 0.0;
  std::optional<bool> pass;  // empty when there is no prediction
};

struct CompareReport {
  std::string config_hash;
  std::uint64_t seed = 0;
  std::vector<CompareRow> rows;
  int n_rows = 0;
  int n_pass = 0;
  int n_fail = 0;
  int n_skipped = 0;
};

std::map<std::string, double> default_tolerances();

/// pass iff |mean - prediction| <= tolerance for the statistic.
CompareReport compare_report(const ReplicationSummary& s,
                             const std::map<std::string, double>& tolerances = default_tolerances());

void to_json(nlohmann::json& j, const CompareReport& r);
std::string to_csv(const CompareReport& r);

}  // namespace rscavity
