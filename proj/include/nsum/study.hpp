#pragma once

#include <Eigen/Dense>
#include <optional>
#include <string>
#include <vector>

#include "nsum/correlated.hpp"
#include "nsum/posterior.hpp"
#include "nsum/scaling.hpp"
#include "nsum/simulation.hpp"

namespace nsum {

enum class ScenarioKind {
  correlated_model,
  missing_covariate,
  sbm_transmission,
  copula_gamma,
  copula_beta
};
ScenarioKind parse_scenario_kind(const std::string& s);
std::string scenario_kind_name(ScenarioKind k);

/// A simulation scenario: kind, size, parameter block, seed.
struct Scenario {
  ScenarioKind kind = ScenarioKind::correlated_model;
  int n = 1000;
  std::uint64_t seed = 1;
  double total_population = 1e6;

  // correlated-model block
  double sigma_delta = PaperDefaults::sigma_delta();
  Eigen::VectorXd rho;
  Eigen::VectorXd tau;
  Eigen::MatrixXd omega;

  // sbm block
  Eigen::VectorXd proportions;
  Eigen::MatrixXd P, T;

  // copula block
  Eigen::VectorXd dispersion;
  double mean_prevalence = 0.015;
  bool copula_correlated = true;

  static Scenario correlated_defaults(int n, std::uint64_t seed);
  static Scenario missing_covariate_defaults(int n, std::uint64_t seed);
  static Scenario sbm_defaults(int n, std::uint64_t seed);
  static Scenario copula(CopulaEffectKind kind, int n, bool correlated, std::uint64_t seed);

  void validate() const;
  SimResult generate(int replicate) const;  // deterministic per (seed, replicate)
};

enum class StudyModel {
  correlated,
  correlated_uncorr,  // identity-correlation variant
  zheng_poisson,
  zheng_negbin,
  maltiel_integrated,
  maltiel_sampled,
  killworth
};
StudyModel parse_study_model(const std::string& s);
std::string study_model_name(StudyModel m);

struct StudyRecord {
  int replicate = 0;
  std::string model, scaling;
  std::vector<double> post_mean, q2_5, q97_5, truth, rel_error;  // per group
  bool failed = false;
  std::string error;
};

struct StudyGroupAggregate {
  std::string model, scaling;
  int group = 0;  // 1-based
  double mean_of_means = 0, q2_5_of_means = 0, q97_5_of_means = 0;
  double mean_rel_error = 0, median_rel_error = 0, median_abs_rel_error = 0;
  double coverage95 = 0;
  int replicates = 0;
};

struct StudyReport {
  std::vector<StudyRecord> records;
  std::vector<StudyGroupAggregate> aggregates;
  int failed_records = 0;
};

struct StudyConfig {
  int replicates = 30;
  std::vector<StudyModel> models = {StudyModel::correlated};
  std::vector<ScalingMethod> scalings = {ScalingMethod::all_standardized};
  ChainConfig chain;
  std::string jsonl_path;  // per-record persistence; completed triples resume
  int threads = 1;
  int maltiel_unknown_group = 0;  // 0-based group treated as unknown for Maltiel fits
};

// Repeats generate -> fit -> scale -> score.  Failed fits are recorded and
// skipped; per-record JSONL lines make interrupted studies resumable.
StudyReport run_study(const Scenario& scenario, const StudyConfig& cfg);

std::vector<StudyGroupAggregate> aggregate_study_records(const std::vector<StudyRecord>& records);
void write_study_summary_csv(const StudyReport& report, const std::string& path);

}  // namespace nsum
