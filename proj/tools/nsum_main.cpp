// nsum: correlated network scale-up toolkit.
// Pipelines compose through files only: simulate -> fit -> scale -> diagnose.

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "nsum/ard.hpp"
#include "nsum/baselines.hpp"
#include "nsum/chain_stats.hpp"
#include "nsum/correlated.hpp"
#include "nsum/csv.hpp"
#include "nsum/diagnostics.hpp"
#include "nsum/draws_io.hpp"
#include "nsum/log.hpp"
#include "nsum/manifest.hpp"
#include "nsum/scaling.hpp"
#include "nsum/stats.hpp"
#include "nsum/study.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace nsum;

namespace {

struct CliError {
  int code;          // exit code: 1 user error, 2 sampler failure
  std::string kind;  // machine-readable
  std::string message;
};

[[noreturn]] void fail(int code, const std::string& kind, const std::string& message) {
  throw CliError{code, kind, message};
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(1, "missing_file", "expected file not found: " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ','))
    if (!item.empty()) out.push_back(item);
  return out;
}

std::uint64_t effective_seed(std::uint64_t cli_seed) {
  if (const char* env = std::getenv("NSUM_SEED")) return std::strtoull(env, nullptr, 10);
  return cli_seed;
}

// shared sampler options
struct ChainOpts {
  std::string preset = "desk";
  int chains = -1, iterations = -1, warmup = -1, thin = -1, leapfrog = -1;
  std::uint64_t seed = 20240901;
  int threads = 1;

  ChainConfig build() const {
    ChainConfig c = preset == "paper" ? ChainConfig::paper() : ChainConfig::desk();
    if (preset != "paper" && preset != "desk")
      fail(1, "unknown_preset", "preset must be desk or paper");
    if (chains > 0) c.chains = chains;
    if (iterations > 0) c.iterations = iterations;
    if (warmup >= 0) c.warmup = warmup;
    if (thin > 0) c.thin = thin;
    if (leapfrog > 0) c.leapfrog_steps = leapfrog;
    c.seed = effective_seed(seed);
    c.threads = threads;
    return c;
  }
  void attach(CLI::App* cmd) {
    cmd->add_option("--preset", preset, "Sampler preset: desk or paper");
    cmd->add_option("--chains", chains);
    cmd->add_option("--iterations", iterations);
    cmd->add_option("--warmup", warmup);
    cmd->add_option("--thin", thin);
    cmd->add_option("--leapfrog", leapfrog);
    cmd->add_option("--seed", seed, "RNG seed (env NSUM_SEED overrides)");
    cmd->add_option("--threads", threads);
  }
};

PreparedDesign load_design(const std::string& config_path, bool with_covariates) {
  const DatasetConfig cfg = parse_dataset_config(config_path);
  ArdDataset data = load_dataset(cfg, fs::path(config_path).parent_path().string());
  auto [clean, summary] = listwise_delete(data);
  (void)summary;
  const ArdDataset truncated = truncate_responses(clean, cfg.truncation_cap);
  if (with_covariates) return prepare_design(truncated, cfg.covariates);
  return prepare_design(truncated);
}

RunManifest start_manifest(const std::string& command, const std::string& config_bytes,
                           std::uint64_t seed) {
  RunManifest m;
  m.command = command;
  m.config_hash = fnv1a_hex(config_bytes);
  m.seed = seed;
  m.started_at = iso8601_now();
  return m;
}

void finish_manifest(RunManifest m, const std::string& out_dir) {
  m.finished_at = iso8601_now();
  write_manifest(m, out_dir + "/manifest.json");
}

void write_omega_outputs(const Draws& draws, const PreparedDesign& d,
                         const std::string& out_dir, RunManifest* manifest) {
  const int K = d.num_groups();
  if (!draws.has_param("omega[2,1]")) return;
  const Eigen::MatrixXd omega = posterior_mean_omega(draws, K);
  {
    std::vector<std::string> header{"group"};
    for (int k = 0; k < K; ++k) header.push_back(d.groups[static_cast<std::size_t>(k)].id);
    std::vector<std::vector<std::string>> rows;
    for (int i = 0; i < K; ++i) {
      std::vector<std::string> row{d.groups[static_cast<std::size_t>(i)].id};
      for (int j = 0; j < K; ++j) {
        std::ostringstream os;
        os.precision(10);
        os << omega(i, j);
        row.push_back(os.str());
      }
      rows.push_back(std::move(row));
    }
    write_csv(out_dir + "/omega.csv", header, rows);
    manifest->outputs.push_back("omega.csv");
  }
  {
    const std::vector<int> order = hierarchical_cluster_order(omega);
    std::ofstream out(out_dir + "/omega_order.txt");
    for (int k : order) out << d.groups[static_cast<std::size_t>(k)].id << '\n';
    manifest->outputs.push_back("omega_order.txt");
  }
}

// ---------------------------------------------------------------------------

int cmd_fit(const std::string& config_path, const std::string& model, const ChainOpts& copts,
            const std::string& out_dir, bool light_draws, const std::string& bias_convention,
            bool identity_correlation, const std::string& rho_prior,
            const std::string& slope_prior, double lkj_eta, const std::string& tau_prior) {
  const std::vector<std::string> known_models = {
      "correlated",        "zheng-poisson", "zheng-negbin",
      "maltiel-integrated", "maltiel-sampled", "killworth"};
  if (std::find(known_models.begin(), known_models.end(), model) == known_models.end())
    fail(1, "unknown_model", "model must be one of correlated, zheng-poisson, zheng-negbin, "
                             "maltiel-integrated, maltiel-sampled, killworth");

  const std::string config_bytes = read_file(config_path);
  fs::create_directories(out_dir);
  const ChainConfig chain = copts.build();
  RunManifest manifest = start_manifest("fit " + model, config_bytes, chain.seed);

  const bool needs_covariates = model == "correlated";
  const PreparedDesign design = load_design(config_path, needs_covariates);

  if (model == "killworth") {
    const KillworthFit fit = killworth_fit(design);
    std::vector<std::vector<std::string>> rows;
    for (int k = 0; k < design.num_groups(); ++k) {
      const std::string& id = design.groups[static_cast<std::size_t>(k)].id;
      std::ostringstream os;
      os.precision(10);
      os << fit.sizes.at(id);
      rows.push_back({id, "killworth", os.str()});
    }
    write_csv(out_dir + "/sizes.csv", {"group", "method", "estimate"}, rows);
    std::vector<std::vector<std::string>> deg;
    for (int i = 0; i < design.n(); ++i) {
      std::ostringstream os;
      os.precision(10);
      os << fit.degrees(i);
      deg.push_back({std::to_string(i + 1), os.str()});
    }
    write_csv(out_dir + "/degrees.csv", {"respondent", "degree"}, deg);
    manifest.outputs = {"sizes.csv", "degrees.csv"};
    finish_manifest(std::move(manifest), out_dir);
    return 0;
  }

  Draws draws;
  if (model == "correlated") {
    CorrelatedPriorConfig pc;
    pc.identity_correlation = identity_correlation;
    if (bias_convention == "paper-literal")
      pc.bias_convention = CorrelatedPriorConfig::BiasConvention::paper_literal;
    else if (bias_convention != "mean-one")
      fail(1, "unknown_bias_convention", "bias convention must be mean-one or paper-literal");
    if (rho_prior == "flat") pc.rho_prior = CorrelatedPriorConfig::RhoPrior::flat;
    else if (rho_prior != "hierarchical")
      fail(1, "unknown_rho_prior", "rho prior must be hierarchical or flat");
    if (slope_prior == "cauchy") pc.slope_prior = CorrelatedPriorConfig::SlopePrior::cauchy;
    else if (slope_prior != "normal")
      fail(1, "unknown_slope_prior", "slope prior must be normal or cauchy");
    if (tau_prior == "gamma") pc.tau_prior = CorrelatedPriorConfig::TauPrior::gamma;
    else if (tau_prior != "half-cauchy")
      fail(1, "unknown_tau_prior", "tau prior must be half-cauchy or gamma");
    pc.lkj_eta = lkj_eta;
    draws = fit_correlated(design, pc, chain);
  } else if (model == "zheng-poisson" || model == "zheng-negbin") {
    draws = fit_zheng(design, parse_zheng_variant(model.substr(6)), chain);
  } else {
    draws = fit_maltiel_barrier(design, parse_maltiel_variant(model.substr(8)), chain);
  }

  std::vector<std::string> skip;
  if (light_draws) skip = {"eps[", "gamma[", "q["};
  write_draws_bundle(draws, out_dir, skip);
  write_summary_json(draws, out_dir + "/summary.json");
  manifest.outputs = {"draws.csv", "draws_info.json", "summary.json"};
  if (model == "correlated") write_omega_outputs(draws, design, out_dir, &manifest);
  finish_manifest(std::move(manifest), out_dir);
  return 0;
}

int cmd_simulate(const std::string& scenario_name, int n, std::uint64_t seed,
                 const std::string& out_dir, bool uncorrelated) {
  Scenario sc;
  const ScenarioKind kind = parse_scenario_kind(scenario_name);
  switch (kind) {
    case ScenarioKind::correlated_model:
      sc = Scenario::correlated_defaults(n, seed);
      if (uncorrelated) sc.omega = Eigen::MatrixXd::Identity(5, 5);
      break;
    case ScenarioKind::missing_covariate:
      sc = Scenario::missing_covariate_defaults(n, seed);
      break;
    case ScenarioKind::sbm_transmission:
      sc = Scenario::sbm_defaults(n, seed);
      break;
    case ScenarioKind::copula_gamma:
      sc = Scenario::copula(CopulaEffectKind::gamma, n, !uncorrelated, seed);
      break;
    case ScenarioKind::copula_beta:
      sc = Scenario::copula(CopulaEffectKind::beta, n, !uncorrelated, seed);
      break;
  }
  sc.seed = effective_seed(seed);
  sc.validate();

  fs::create_directories(out_dir);
  RunManifest manifest = start_manifest("simulate " + scenario_name,
                                        scenario_name + ":" + std::to_string(n), sc.seed);
  const SimResult sim = sc.generate(0);
  write_dataset_csvs(sim.data, out_dir);

  json config;
  config["total_population"] = sim.data.total_population;
  config["files"] = {{"ard", "ard.csv"}, {"groups", "groups.csv"}};
  if (sim.data.num_covariates() > 0) config["files"]["covariates"] = "covariates.csv";
  config["truncation_cap"] = 1000000;  // simulated data is never truncated
  {
    std::ofstream out(out_dir + "/config.json");
    out << config.dump(1) << '\n';
  }

  json truth;
  truth["scenario"] = scenario_name;
  truth["n"] = n;
  truth["seed"] = sc.seed;
  truth["total_population"] = sim.truth.total_population;
  for (long k = 0; k < sim.truth.sizes.size(); ++k) {
    truth["sizes"].push_back(sim.truth.sizes(k));
    truth["prevalence"].push_back(sim.truth.prevalence(k));
  }
  if (kind == ScenarioKind::correlated_model) {
    truth["sigma_delta"] = sc.sigma_delta;
    for (long k = 0; k < sc.rho.size(); ++k) truth["rho"].push_back(sc.rho(k));
    for (long k = 0; k < sc.tau.size(); ++k) truth["tau"].push_back(sc.tau(k));
    for (long i = 0; i < sc.omega.rows(); ++i) {
      json row = json::array();
      for (long j = 0; j < sc.omega.cols(); ++j) row.push_back(sc.omega(i, j));
      truth["omega"].push_back(row);
    }
  }
  {
    std::ofstream out(out_dir + "/truth.json");
    out << truth.dump(1) << '\n';
  }
  manifest.outputs = {"ard.csv", "groups.csv", "config.json", "truth.json"};
  finish_manifest(std::move(manifest), out_dir);
  return 0;
}

int cmd_scale(const std::string& draws_dir, const std::string& config_path,
              const std::string& method_name, const std::string& group,
              const std::string& g1, const std::string& g2, const std::string& b2,
              const std::string& out_dir, bool degree_shift) {
  if (!fs::exists(draws_dir + "/draws.csv"))
    fail(1, "missing_file", "expected file not found: " + draws_dir + "/draws.csv");
  const std::string config_bytes = read_file(config_path);
  fs::create_directories(out_dir);

  const Draws draws = read_draws_bundle(draws_dir);
  const PreparedDesign design = load_design(config_path, false);
  RunManifest manifest = start_manifest("scale " + method_name, config_bytes, draws.seed);

  const ScalingMethod method = parse_scaling_method(method_name);
  ScaledDraws scaled;
  try {
    if (method == ScalingMethod::single) {
      if (group.empty()) fail(1, "missing_group", "--group is required for single scaling");
      scaled = scale_single(draws, design, group);
    } else if (method == ScalingMethod::paired) {
      scaled = scale_paired(draws, design, split_list(g1), split_list(g2), split_list(b2));
    } else {
      scaled = scale_draws(draws, design, method);
    }
  } catch (const std::invalid_argument& e) {
    if (std::string(e.what()) == "no_correlation_draws")
      fail(1, "no_correlation_draws",
           "correlated scaling needs omega draws; fit the correlated model");
    throw;
  }
  write_sizes_csv(summarize_sizes(scaled, design), out_dir + "/sizes.csv");
  manifest.outputs = {"sizes.csv"};

  if (degree_shift) {
    const ScaledDraws base = scale_all_standardized(draws, design);
    const Draws shifted = apply_degree_shift(draws, base.C.col(0));
    write_draws_bundle(shifted, out_dir);
    manifest.outputs.push_back("draws.csv");
    manifest.outputs.push_back("draws_info.json");
  }
  finish_manifest(std::move(manifest), out_dir);
  return 0;
}

int cmd_diagnose(const std::string& draws_dir, const std::string& config_path,
                 const std::string& mode_name, const std::string& values_csv, long max_draws,
                 std::uint64_t seed, const std::string& out_dir) {
  if (!fs::exists(draws_dir + "/draws.csv"))
    fail(1, "missing_file", "expected file not found: " + draws_dir + "/draws.csv");
  const std::string config_bytes = read_file(config_path);
  fs::create_directories(out_dir);

  const Draws draws = read_draws_bundle(draws_dir);
  const PreparedDesign design = load_design(config_path, false);
  const PredictMode mode = parse_predict_mode(mode_name);
  RunManifest manifest = start_manifest("diagnose", config_bytes, effective_seed(seed));

  RngStream rng(effective_seed(seed), 0xd1a6);
  const PredictiveDraws rep = posterior_predict(draws, design, mode, rng, max_draws);

  std::vector<long> values;
  for (const std::string& v : split_list(values_csv)) values.push_back(std::stol(v));
  write_ppc_csv(ppc_pmf(design.y, rep, values), out_dir + "/ppc_pmf.csv");
  write_ppc_csv(ppc_moments(design.y, rep, false), out_dir + "/ppc_moments.csv");
  write_ppc_csv(ppc_moments(design.y, rep, true), out_dir + "/ppc_moments_positive.csv");
  write_ppc_csv(ppc_pairwise_corr(design.y, rep), out_dir + "/ppc_corr.csv");

  RngStream srng(effective_seed(seed), 0x5u);
  const SurrogateResiduals sr = surrogate_residuals(draws, design, srng, max_draws, mode);
  write_surrogate_csv(sr, out_dir + "/surrogate_residuals.csv");

  manifest.outputs = {"ppc_pmf.csv", "ppc_moments.csv", "ppc_moments_positive.csv",
                      "ppc_corr.csv", "surrogate_residuals.csv"};
  finish_manifest(std::move(manifest), out_dir);
  return 0;
}

int cmd_loo(const std::string& draws_dir, const std::string& config_path,
            const std::string& scalings_csv, const std::string& out_dir) {
  if (!fs::exists(draws_dir + "/draws.csv"))
    fail(1, "missing_file", "expected file not found: " + draws_dir + "/draws.csv");
  const std::string config_bytes = read_file(config_path);
  fs::create_directories(out_dir);

  const Draws draws = read_draws_bundle(draws_dir);
  const PreparedDesign design = load_design(config_path, false);
  RunManifest manifest = start_manifest("loo", config_bytes, draws.seed);

  std::vector<LooRow> rows;
  for (const std::string& s : split_list(scalings_csv)) {
    const auto part = loo_known_groups(draws, design, parse_scaling_method(s));
    rows.insert(rows.end(), part.begin(), part.end());
  }
  write_loo_csv(rows, out_dir + "/loo.csv");
  manifest.outputs = {"loo.csv"};
  finish_manifest(std::move(manifest), out_dir);
  return 0;
}

int cmd_study(const std::string& scenario_name, int n, int replicates,
              const std::string& models_csv, const std::string& scalings_csv,
              const ChainOpts& copts, const std::string& out_dir, bool uncorrelated,
              int maltiel_unknown_group) {
  Scenario sc;
  switch (parse_scenario_kind(scenario_name)) {
    case ScenarioKind::correlated_model:
      sc = Scenario::correlated_defaults(n, copts.seed);
      if (uncorrelated) sc.omega = Eigen::MatrixXd::Identity(5, 5);
      break;
    case ScenarioKind::missing_covariate:
      sc = Scenario::missing_covariate_defaults(n, copts.seed);
      break;
    case ScenarioKind::sbm_transmission:
      sc = Scenario::sbm_defaults(n, copts.seed);
      break;
    case ScenarioKind::copula_gamma:
      sc = Scenario::copula(CopulaEffectKind::gamma, n, !uncorrelated, copts.seed);
      break;
    case ScenarioKind::copula_beta:
      sc = Scenario::copula(CopulaEffectKind::beta, n, !uncorrelated, copts.seed);
      break;
  }
  sc.seed = effective_seed(copts.seed);

  StudyConfig cfg;
  cfg.replicates = replicates;
  cfg.chain = copts.build();
  cfg.threads = 1;
  cfg.chain.threads = 1;
  cfg.models.clear();
  for (const std::string& m : split_list(models_csv)) cfg.models.push_back(parse_study_model(m));
  cfg.scalings.clear();
  for (const std::string& s : split_list(scalings_csv))
    cfg.scalings.push_back(parse_scaling_method(s));
  cfg.maltiel_unknown_group = maltiel_unknown_group;
  if (copts.threads > 1) cfg.threads = copts.threads;

  fs::create_directories(out_dir);
  cfg.jsonl_path = out_dir + "/study.jsonl";
  RunManifest manifest =
      start_manifest("study " + scenario_name, models_csv + "|" + scalings_csv, sc.seed);

  const StudyReport report = run_study(sc, cfg);
  write_study_summary_csv(report, out_dir + "/study_summary.csv");
  manifest.outputs = {"study.jsonl", "study_summary.csv"};
  finish_manifest(std::move(manifest), out_dir);
  std::cout << "study records: " << report.records.size()
            << " (failed: " << report.failed_records << ")\n";
  return 0;
}

int cmd_decompose(const std::string& draws_dir, const std::string& config_path,
                  const std::string& nu_csv, const std::string& eta_csv,
                  const std::string& scaling_name, const ChainOpts& copts,
                  const std::string& out_dir) {
  if (!fs::exists(draws_dir + "/draws.csv"))
    fail(1, "missing_file", "expected file not found: " + draws_dir + "/draws.csv");
  const std::string config_bytes = read_file(config_path);
  fs::create_directories(out_dir);

  const Draws draws = read_draws_bundle(draws_dir);
  const PreparedDesign design = load_design(config_path, false);
  RunManifest manifest = start_manifest("decompose", config_bytes, copts.seed);

  const auto nu_list = split_list(nu_csv);
  const auto eta_list = split_list(eta_csv);
  BiasDecompositionConfig cfg;
  cfg.nu.resize(static_cast<long>(nu_list.size()));
  cfg.eta.resize(static_cast<long>(eta_list.size()));
  for (std::size_t i = 0; i < nu_list.size(); ++i)
    cfg.nu(static_cast<long>(i)) = std::stod(nu_list[i]);
  for (std::size_t i = 0; i < eta_list.size(); ++i)
    cfg.eta(static_cast<long>(i)) = std::stod(eta_list[i]);

  const ScaledDraws scaled = scale_draws(draws, design, parse_scaling_method(scaling_name));
  const Draws decomp = bias_decomposition(draws, scaled, design, cfg, copts.build());

  // summary table of the decomposition parameters
  std::vector<std::vector<std::string>> rows;
  auto fmt = [](double v) {
    std::ostringstream os;
    os.precision(10);
    os << v;
    return os.str();
  };
  for (int j = 0; j < decomp.dim(); ++j) {
    const std::string& name = decomp.param_names[static_cast<std::size_t>(j)];
    if (name.rfind("q[", 0) == 0) continue;
    const ParamSummary s = summarize_param(decomp, j);
    rows.push_back({name, fmt(s.mean), fmt(s.sd), fmt(s.q2_5), fmt(s.q97_5)});
  }
  write_csv(out_dir + "/bias_decomposition.csv", {"param", "mean", "sd", "q2.5", "q97.5"}, rows);
  manifest.outputs = {"bias_decomposition.csv"};
  finish_manifest(std::move(manifest), out_dir);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Correlated network scale-up toolkit"};
  app.require_subcommand(1);
  bool quiet = false, json_logs = false;
  app.add_flag("--quiet", quiet, "Suppress log output");
  app.add_flag("--json-logs", json_logs, "Emit logs as JSON lines");

  // fit
  auto* fit = app.add_subcommand("fit", "Fit a model to a dataset");
  std::string fit_config, fit_model = "correlated", fit_out = "out";
  bool light_draws = false, identity_corr = false;
  std::string bias_convention = "mean-one", rho_prior = "hierarchical",
              slope_prior = "normal", tau_prior = "half-cauchy";
  double lkj_eta = 2.0;
  ChainOpts fit_chain;
  fit->add_option("--config", fit_config)->required();
  fit->add_option("--model", fit_model);
  fit->add_option("--out", fit_out);
  fit->add_flag("--light-draws", light_draws, "Skip eps/gamma/q families in draws.csv");
  fit->add_flag("--identity-correlation", identity_corr, "Fit the uncorrelated variant");
  fit->add_option("--bias-convention", bias_convention, "mean-one | paper-literal");
  fit->add_option("--rho-prior", rho_prior, "hierarchical | flat");
  fit->add_option("--slope-prior", slope_prior, "normal | cauchy");
  fit->add_option("--lkj-eta", lkj_eta);
  fit->add_option("--tau-prior", tau_prior, "half-cauchy | gamma");
  fit_chain.attach(fit);

  // simulate
  auto* sim = app.add_subcommand("simulate", "Generate a scenario dataset");
  std::string sim_scenario = "correlated", sim_out = "sim";
  int sim_n = 1000;
  std::uint64_t sim_seed = 1;
  bool sim_uncorr = false, paper_defaults = false;
  sim->add_option("--scenario", sim_scenario,
                  "correlated | missing-covariate | sbm | copula-gamma | copula-beta");
  sim->add_option("--n", sim_n);
  sim->add_option("--seed", sim_seed);
  sim->add_option("--out", sim_out);
  sim->add_flag("--uncorrelated", sim_uncorr, "Identity correlation variant");
  sim->add_flag("--paper-defaults", paper_defaults, "Reference parameterization (default)");

  // scale
  auto* scale = app.add_subcommand("scale", "Convert rho draws to size estimates");
  std::string scale_draws_dir, scale_config, scale_method = "all-standardized", scale_group,
      scale_g1, scale_g2, scale_b2, scale_out = "scaled";
  bool degree_shift = false;
  scale->add_option("--draws", scale_draws_dir, "Directory with draws.csv")->required();
  scale->add_option("--config", scale_config)->required();
  scale->add_option("--method", scale_method,
                    "single | paired | all-raw | all-standardized | correlated");
  scale->add_option("--group", scale_group, "Group id for single scaling");
  scale->add_option("--g1", scale_g1, "Comma list for paired scaling");
  scale->add_option("--g2", scale_g2);
  scale->add_option("--b2", scale_b2);
  scale->add_option("--out", scale_out);
  scale->add_flag("--degree-shift", degree_shift, "Also emit degree-shifted draws");

  // diagnose
  auto* diag = app.add_subcommand("diagnose", "Posterior predictive checks and residuals");
  std::string diag_draws_dir, diag_config, diag_mode = "in-sample", diag_values = "0,1",
      diag_out = "diagnostics";
  long diag_max_draws = 200;
  std::uint64_t diag_seed = 20240901;
  diag->add_option("--draws", diag_draws_dir)->required();
  diag->add_option("--config", diag_config)->required();
  diag->add_option("--mode", diag_mode, "in-sample | out-of-sample");
  diag->add_option("--values", diag_values, "PMF values to check");
  diag->add_option("--max-draws", diag_max_draws);
  diag->add_option("--seed", diag_seed);
  diag->add_option("--out", diag_out);

  // loo
  auto* loo = app.add_subcommand("loo", "Leave-one-out size validation");
  std::string loo_draws_dir, loo_config, loo_scalings = "all-standardized", loo_out = "loo";
  loo->add_option("--draws", loo_draws_dir)->required();
  loo->add_option("--config", loo_config)->required();
  loo->add_option("--scaling", loo_scalings, "Comma list of scaling methods");
  loo->add_option("--out", loo_out);

  // study
  auto* study = app.add_subcommand("study", "Repeated generate-fit-scale-score runs");
  std::string study_scenario = "correlated", study_models = "correlated",
      study_scalings = "all-standardized", study_out = "study";
  int study_n = 1000, study_reps = 10, maltiel_unknown = 1;
  bool study_uncorr = false;
  ChainOpts study_chain;
  study->add_option("--scenario", study_scenario);
  study->add_option("--n", study_n);
  study->add_option("--replicates", study_reps);
  study->add_option("--models", study_models);
  study->add_option("--scalings", study_scalings);
  study->add_option("--out", study_out);
  study->add_flag("--uncorrelated", study_uncorr);
  study->add_option("--maltiel-unknown-group", maltiel_unknown, "1-based group index");
  study_chain.attach(study);

  // decompose
  auto* dec = app.add_subcommand("decompose", "Bias decomposition regression");
  std::string dec_draws_dir, dec_config, dec_nu, dec_eta, dec_scaling = "all-standardized",
      dec_out = "decomposition";
  ChainOpts dec_chain;
  dec->add_option("--draws", dec_draws_dir)->required();
  dec->add_option("--config", dec_config)->required();
  dec->add_option("--nu", dec_nu, "Comma list, one per known group")->required();
  dec->add_option("--eta", dec_eta, "Comma list, one per known group")->required();
  dec->add_option("--scaling", dec_scaling);
  dec->add_option("--out", dec_out);
  dec_chain.attach(dec);

  CLI11_PARSE(app, argc, argv);
  if (quiet) set_log_mode(LogMode::quiet);
  else if (json_logs) set_log_mode(LogMode::json);

  try {
    if (*fit)
      return cmd_fit(fit_config, fit_model, fit_chain, fit_out, light_draws, bias_convention,
                     identity_corr, rho_prior, slope_prior, lkj_eta, tau_prior);
    if (*sim) {
      (void)paper_defaults;  // reference parameters are the default
      return cmd_simulate(sim_scenario, sim_n, sim_seed, sim_out, sim_uncorr);
    }
    if (*scale)
      return cmd_scale(scale_draws_dir, scale_config, scale_method, scale_group, scale_g1,
                       scale_g2, scale_b2, scale_out, degree_shift);
    if (*diag)
      return cmd_diagnose(diag_draws_dir, diag_config, diag_mode, diag_values, diag_max_draws,
                          diag_seed, diag_out);
    if (*loo) return cmd_loo(loo_draws_dir, loo_config, loo_scalings, loo_out);
    if (*study)
      return cmd_study(study_scenario, study_n, study_reps, study_models, study_scalings,
                       study_chain, study_out, study_uncorr, maltiel_unknown - 1);
    if (*dec)
      return cmd_decompose(dec_draws_dir, dec_config, dec_nu, dec_eta, dec_scaling, dec_chain,
                           dec_out);
  } catch (const CliError& e) {
    json err;
    err["error"] = e.kind;
    err["message"] = e.message;
    std::cout << err.dump() << std::endl;
    return e.code;
  } catch (const sampler_error& e) {
    json err;
    err["error"] = "sampler_failure";
    err["message"] = e.what();
    std::cout << err.dump() << std::endl;
    return 2;
  } catch (const std::exception& e) {
    json err;
    err["error"] = "invalid_input";
    err["message"] = e.what();
    std::cout << err.dump() << std::endl;
    return 1;
  }
  return 0;
}
