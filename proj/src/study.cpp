#include "nsum/study.hpp"

#include <json.hpp>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <fstream>
#include <map>
#include <mutex>
#include <set>
#include <sstream>
#include <stdexcept>
#include <thread>

#include "nsum/baselines.hpp"
#include "nsum/chain_stats.hpp"
#include "nsum/csv.hpp"
#include "nsum/log.hpp"

namespace nsum {

using nlohmann::json;

ScenarioKind parse_scenario_kind(const std::string& s) {
  if (s == "correlated") return ScenarioKind::correlated_model;
  if (s == "missing-covariate") return ScenarioKind::missing_covariate;
  if (s == "sbm") return ScenarioKind::sbm_transmission;
  if (s == "copula-gamma") return ScenarioKind::copula_gamma;
  if (s == "copula-beta") return ScenarioKind::copula_beta;
  throw std::invalid_argument("unknown scenario '" + s + "'");
}

std::string scenario_kind_name(ScenarioKind k) {
  switch (k) {
    case ScenarioKind::correlated_model: return "correlated";
    case ScenarioKind::missing_covariate: return "missing-covariate";
    case ScenarioKind::sbm_transmission: return "sbm";
    case ScenarioKind::copula_gamma: return "copula-gamma";
    case ScenarioKind::copula_beta: return "copula-beta";
  }
  return "?";
}

Scenario Scenario::correlated_defaults(int n, std::uint64_t seed) {
  Scenario s;
  s.kind = ScenarioKind::correlated_model;
  s.n = n;
  s.seed = seed;
  s.rho = Eigen::VectorXd::Constant(5, PaperDefaults::log_prevalence());
  s.tau = PaperDefaults::tau();
  s.omega = PaperDefaults::correlation_matrix();
  return s;
}

Scenario Scenario::missing_covariate_defaults(int n, std::uint64_t seed) {
  Scenario s;
  s.kind = ScenarioKind::missing_covariate;
  s.n = n;
  s.seed = seed;
  return s;
}

Scenario Scenario::sbm_defaults(int n, std::uint64_t seed) {
  Scenario s;
  s.kind = ScenarioKind::sbm_transmission;
  s.n = n;
  s.seed = seed;
  s.proportions = PaperDefaults::sbm_proportions();
  s.P = PaperDefaults::sbm_connectivity();
  s.T = PaperDefaults::sbm_report_probability();
  return s;
}

Scenario Scenario::copula(CopulaEffectKind kind, int n, bool correlated, std::uint64_t seed) {
  Scenario s;
  s.kind = kind == CopulaEffectKind::gamma ? ScenarioKind::copula_gamma
                                           : ScenarioKind::copula_beta;
  s.n = n;
  s.seed = seed;
  s.dispersion = kind == CopulaEffectKind::gamma ? PaperDefaults::gamma_dispersion()
                                                 : PaperDefaults::beta_dispersion();
  s.omega = correlated ? PaperDefaults::correlation_matrix()
                       : Eigen::MatrixXd::Identity(5, 5);
  s.copula_correlated = correlated;
  return s;
}

void Scenario::validate() const {
  if (n < 1) throw std::invalid_argument("Scenario: n must be positive");
  switch (kind) {
    case ScenarioKind::correlated_model:
      if (rho.size() == 0 || tau.size() != rho.size() || omega.rows() != rho.size())
        throw std::invalid_argument("Scenario: correlated block incomplete");
      cholesky(omega);  // must be PD
      break;
    case ScenarioKind::missing_covariate:
      break;
    case ScenarioKind::sbm_transmission: {
      if (proportions.size() == 0) throw std::invalid_argument("Scenario: sbm block incomplete");
      if (std::abs(proportions.sum() - 1.0) > 1e-9)
        throw std::invalid_argument("Scenario: proportions must sum to 1");
      for (long i = 0; i < P.rows(); ++i)
        for (long j = 0; j < P.cols(); ++j)
          if (P(i, j) < 0 || P(i, j) > 1 || T(i, j) < 0 || T(i, j) > 1)
            throw std::invalid_argument("Scenario: probabilities must lie in [0,1]");
      break;
    }
    case ScenarioKind::copula_gamma:
    case ScenarioKind::copula_beta:
      if (dispersion.size() == 0 || omega.rows() != dispersion.size())
        throw std::invalid_argument("Scenario: copula block incomplete");
      cholesky(omega);
      break;
  }
}

SimResult Scenario::generate(int replicate) const {
  RngStream rng = RngStream(seed, 0x5349u).substream(static_cast<std::uint64_t>(replicate));
  switch (kind) {
    case ScenarioKind::correlated_model:
      return sim_correlated(n, static_cast<int>(rho.size()), sigma_delta, rho, tau, omega,
                            std::nullopt, rng, total_population);
    case ScenarioKind::missing_covariate:
      return sim_missing_covariate(n, rng, total_population);
    case ScenarioKind::sbm_transmission:
      return sim_sbm_transmission(n, proportions, P, T, rng);
    case ScenarioKind::copula_gamma:
      return sim_copula_effects(CopulaEffectKind::gamma, dispersion, omega, n, rng,
                                total_population, mean_prevalence);
    case ScenarioKind::copula_beta:
      return sim_copula_effects(CopulaEffectKind::beta, dispersion, omega, n, rng,
                                total_population, mean_prevalence);
  }
  throw std::logic_error("Scenario::generate: unreachable");
}

StudyModel parse_study_model(const std::string& s) {
  if (s == "correlated") return StudyModel::correlated;
  if (s == "correlated-uncorr") return StudyModel::correlated_uncorr;
  if (s == "zheng-poisson") return StudyModel::zheng_poisson;
  if (s == "zheng-negbin") return StudyModel::zheng_negbin;
  if (s == "maltiel-integrated") return StudyModel::maltiel_integrated;
  if (s == "maltiel-sampled") return StudyModel::maltiel_sampled;
  if (s == "killworth") return StudyModel::killworth;
  throw std::invalid_argument("unknown model '" + s + "'");
}

std::string study_model_name(StudyModel m) {
  switch (m) {
    case StudyModel::correlated: return "correlated";
    case StudyModel::correlated_uncorr: return "correlated-uncorr";
    case StudyModel::zheng_poisson: return "zheng-poisson";
    case StudyModel::zheng_negbin: return "zheng-negbin";
    case StudyModel::maltiel_integrated: return "maltiel-integrated";
    case StudyModel::maltiel_sampled: return "maltiel-sampled";
    case StudyModel::killworth: return "killworth";
  }
  return "?";
}

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

std::string record_key(int replicate, const std::string& model, const std::string& scaling) {
  return std::to_string(replicate) + "|" + model + "|" + scaling;
}

json record_to_json(const StudyRecord& r) {
  json j;
  j["replicate"] = r.replicate;
  j["model"] = r.model;
  j["scaling"] = r.scaling;
  j["failed"] = r.failed;
  if (r.failed) {
    j["error"] = r.error;
  } else {
    j["post_mean"] = r.post_mean;
    j["q2.5"] = r.q2_5;
    j["q97.5"] = r.q97_5;
    j["truth"] = r.truth;
    j["rel_error"] = r.rel_error;
  }
  return j;
}

StudyRecord record_from_json(const json& j) {
  StudyRecord r;
  r.replicate = j.at("replicate").get<int>();
  r.model = j.at("model").get<std::string>();
  r.scaling = j.at("scaling").get<std::string>();
  r.failed = j.value("failed", false);
  if (r.failed) {
    r.error = j.value("error", "");
  } else {
    r.post_mean = j.at("post_mean").get<std::vector<double>>();
    r.q2_5 = j.at("q2.5").get<std::vector<double>>();
    r.q97_5 = j.at("q97.5").get<std::vector<double>>();
    r.truth = j.at("truth").get<std::vector<double>>();
    r.rel_error = j.at("rel_error").get<std::vector<double>>();
  }
  return r;
}

StudyRecord score_sizes(int replicate, const std::string& model, const std::string& scaling,
                        const Eigen::MatrixXd& size_draws, const Eigen::VectorXd& truth) {
  StudyRecord r;
  r.replicate = replicate;
  r.model = model;
  r.scaling = scaling;
  const int K = static_cast<int>(size_draws.cols());
  for (int k = 0; k < K; ++k) {
    const Eigen::VectorXd col = size_draws.col(k);
    const double mean = col.mean();
    r.post_mean.push_back(mean);
    r.q2_5.push_back(sample_quantile(col, 0.025));
    r.q97_5.push_back(sample_quantile(col, 0.975));
    r.truth.push_back(truth(k));
    r.rel_error.push_back(100.0 * (truth(k) - mean) / truth(k));
  }
  return r;
}

// one (replicate, model) unit of work; may emit several records (one per scaling)
std::vector<StudyRecord> run_unit(const Scenario& scenario, const StudyConfig& cfg,
                                  int replicate, StudyModel model) {
  const SimResult sim = scenario.generate(replicate);
  const std::string model_name = study_model_name(model);
  std::vector<StudyRecord> records;

  ChainConfig chain = cfg.chain;
  chain.seed = cfg.chain.seed + 7919u * static_cast<std::uint64_t>(replicate + 1) +
               static_cast<std::uint64_t>(model) + 1;

  if (model == StudyModel::killworth) {
    const PreparedDesign d = prepare_design(sim.data);
    const KillworthFit fit = killworth_fit(d);
    StudyRecord r;
    r.replicate = replicate;
    r.model = model_name;
    r.scaling = "model-direct";
    for (int k = 0; k < d.num_groups(); ++k) {
      const double est = fit.sizes.at(d.groups[static_cast<std::size_t>(k)].id);
      r.post_mean.push_back(est);
      r.q2_5.push_back(est);
      r.q97_5.push_back(est);
      r.truth.push_back(sim.truth.sizes(k));
      r.rel_error.push_back(100.0 * (sim.truth.sizes(k) - est) / sim.truth.sizes(k));
    }
    records.push_back(std::move(r));
    return records;
  }

  if (model == StudyModel::maltiel_integrated || model == StudyModel::maltiel_sampled) {
    // the unknown-group protocol: fix known sizes for all but one group
    ArdDataset data = sim.data;
    const int u = cfg.maltiel_unknown_group;
    if (u < 0 || u >= data.num_groups())
      throw std::invalid_argument("run_study: maltiel_unknown_group out of range");
    data.groups[static_cast<std::size_t>(u)].known_size.reset();
    const PreparedDesign d = prepare_design(data);
    const MaltielVariant variant = model == StudyModel::maltiel_integrated
                                       ? MaltielVariant::integrated
                                       : MaltielVariant::sampled;
    const Draws draws = fit_maltiel_barrier(d, variant, chain);
    const Eigen::VectorXd m_draws = draws.pooled("m[" + std::to_string(u + 1) + "]");
    Eigen::MatrixXd size_draws(m_draws.size(), data.num_groups());
    size_draws.setConstant(kNaN);
    size_draws.col(u) = m_draws * d.total_population;
    StudyRecord r = score_sizes(replicate, model_name, "model-direct",
                                size_draws, sim.truth.sizes);
    // only the unknown group is scored
    for (int k = 0; k < data.num_groups(); ++k) {
      if (k == u) continue;
      r.post_mean[static_cast<std::size_t>(k)] = kNaN;
      r.q2_5[static_cast<std::size_t>(k)] = kNaN;
      r.q97_5[static_cast<std::size_t>(k)] = kNaN;
      r.rel_error[static_cast<std::size_t>(k)] = kNaN;
    }
    records.push_back(std::move(r));
    return records;
  }

  // Bayesian rho-scale models: fit once, then apply each requested scaling
  const PreparedDesign d = prepare_design(sim.data);
  Draws draws;
  if (model == StudyModel::correlated || model == StudyModel::correlated_uncorr) {
    CorrelatedPriorConfig pc;
    pc.identity_correlation = model == StudyModel::correlated_uncorr;
    FitOptions opts;
    opts.store_eps = false;
    draws = fit_correlated(d, pc, chain, opts);
  } else {
    const ZhengVariant variant =
        model == StudyModel::zheng_poisson ? ZhengVariant::poisson : ZhengVariant::negbin;
    draws = fit_zheng(d, variant, chain);
  }

  for (const ScalingMethod method : cfg.scalings) {
    if (method == ScalingMethod::correlated &&
        (model != StudyModel::correlated))
      continue;  // correlation draws exist only for the correlated model
    try {
      const ScaledDraws scaled = scale_draws(draws, d, method);
      records.push_back(score_sizes(replicate, model_name, scaling_method_name(method),
                                    scaled.sizes, sim.truth.sizes));
    } catch (const std::exception& e) {
      StudyRecord r;
      r.replicate = replicate;
      r.model = model_name;
      r.scaling = scaling_method_name(method);
      r.failed = true;
      r.error = e.what();
      records.push_back(std::move(r));
    }
  }
  return records;
}

}  // namespace

std::vector<StudyGroupAggregate> aggregate_study_records(const std::vector<StudyRecord>& records) {
  std::map<std::pair<std::string, std::string>, std::vector<const StudyRecord*>> by_cell;
  for (const auto& r : records)
    if (!r.failed) by_cell[{r.model, r.scaling}].push_back(&r);

  std::vector<StudyGroupAggregate> out;
  for (const auto& [key, rs] : by_cell) {
    const int K = static_cast<int>(rs.front()->post_mean.size());
    for (int k = 0; k < K; ++k) {
      std::vector<double> means, rels;
      int covered = 0, with_interval = 0;
      for (const StudyRecord* r : rs) {
        const double m = r->post_mean[static_cast<std::size_t>(k)];
        if (std::isnan(m)) continue;
        means.push_back(m);
        rels.push_back(r->rel_error[static_cast<std::size_t>(k)]);
        const double truth = r->truth[static_cast<std::size_t>(k)];
        ++with_interval;
        if (truth >= r->q2_5[static_cast<std::size_t>(k)] &&
            truth <= r->q97_5[static_cast<std::size_t>(k)])
          ++covered;
      }
      if (means.empty()) continue;
      StudyGroupAggregate a;
      a.model = key.first;
      a.scaling = key.second;
      a.group = k + 1;
      a.replicates = static_cast<int>(means.size());
      std::sort(means.begin(), means.end());
      a.mean_of_means = 0.0;
      for (double m : means) a.mean_of_means += m;
      a.mean_of_means /= static_cast<double>(means.size());
      a.q2_5_of_means = quantile_of_sorted(means, 0.025);
      a.q97_5_of_means = quantile_of_sorted(means, 0.975);
      std::vector<double> abs_rels = rels;
      for (auto& v : abs_rels) v = std::abs(v);
      std::sort(rels.begin(), rels.end());
      std::sort(abs_rels.begin(), abs_rels.end());
      a.mean_rel_error = 0.0;
      for (double v : rels) a.mean_rel_error += v;
      a.mean_rel_error /= static_cast<double>(rels.size());
      a.median_rel_error = quantile_of_sorted(rels, 0.5);
      a.median_abs_rel_error = quantile_of_sorted(abs_rels, 0.5);
      a.coverage95 = with_interval > 0
                         ? static_cast<double>(covered) / static_cast<double>(with_interval)
                         : kNaN;
      out.push_back(std::move(a));
    }
  }
  return out;
}

StudyReport run_study(const Scenario& scenario, const StudyConfig& cfg) {
  scenario.validate();
  if (cfg.replicates < 1) throw std::invalid_argument("run_study: replicates must be >= 1");

  // resume: load completed records
  std::map<std::string, StudyRecord> done;
  if (!cfg.jsonl_path.empty()) {
    std::ifstream in(cfg.jsonl_path);
    std::string line;
    while (in && std::getline(in, line)) {
      if (line.empty()) continue;
      try {
        const StudyRecord r = record_from_json(json::parse(line));
        done[record_key(r.replicate, r.model, r.scaling)] = r;
      } catch (const std::exception& e) {
        log_warn("run_study: skipping malformed study record: " + std::string(e.what()));
      }
    }
  }

  struct Unit {
    int replicate;
    StudyModel model;
  };
  std::vector<Unit> units;
  for (int r = 0; r < cfg.replicates; ++r)
    for (StudyModel m : cfg.models) units.push_back({r, m});

  std::vector<std::vector<StudyRecord>> results(units.size());
  std::mutex io_mutex;
  std::ofstream append_out;
  if (!cfg.jsonl_path.empty()) append_out.open(cfg.jsonl_path, std::ios::app);

  auto unit_done = [&](const Unit& u) {
    // a unit is complete if every record it would emit is present
    const std::string model_name = study_model_name(u.model);
    if (u.model == StudyModel::killworth || u.model == StudyModel::maltiel_integrated ||
        u.model == StudyModel::maltiel_sampled)
      return done.count(record_key(u.replicate, model_name, "model-direct")) > 0;
    for (const ScalingMethod s : cfg.scalings) {
      if (s == ScalingMethod::correlated && u.model != StudyModel::correlated) continue;
      if (!done.count(record_key(u.replicate, model_name, scaling_method_name(s))))
        return false;
    }
    return true;
  };

  auto process = [&](std::size_t idx) {
    const Unit& u = units[idx];
    if (unit_done(u)) {
      const std::string model_name = study_model_name(u.model);
      std::vector<StudyRecord> cached;
      for (const auto& [key, rec] : done) {
        if (rec.replicate == u.replicate && rec.model == model_name) cached.push_back(rec);
      }
      results[idx] = std::move(cached);
      return;
    }
    std::vector<StudyRecord> recs;
    try {
      recs = run_unit(scenario, cfg, u.replicate, u.model);
    } catch (const std::exception& e) {
      StudyRecord r;
      r.replicate = u.replicate;
      r.model = study_model_name(u.model);
      r.scaling = "-";
      r.failed = true;
      r.error = e.what();
      recs.push_back(std::move(r));
      log_warn("run_study: replicate " + std::to_string(u.replicate) + " model " + r.model +
               " failed: " + r.error);
    }
    if (append_out.is_open()) {
      std::lock_guard<std::mutex> lock(io_mutex);
      for (const auto& r : recs) append_out << record_to_json(r).dump() << '\n';
      append_out.flush();
    }
    results[idx] = std::move(recs);
  };

  if (cfg.threads > 1) {
    std::atomic<std::size_t> next{0};
    auto worker = [&]() {
      for (;;) {
        const std::size_t idx = next.fetch_add(1);
        if (idx >= units.size()) return;
        process(idx);
      }
    };
    std::vector<std::thread> pool;
    for (int t = 0; t < cfg.threads; ++t) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  } else {
    for (std::size_t i = 0; i < units.size(); ++i) process(i);
  }

  StudyReport report;
  for (auto& recs : results)
    for (auto& r : recs) {
      if (r.failed) ++report.failed_records;
      report.records.push_back(std::move(r));
    }
  std::sort(report.records.begin(), report.records.end(),
            [](const StudyRecord& a, const StudyRecord& b) {
              return std::tie(a.replicate, a.model, a.scaling) <
                     std::tie(b.replicate, b.model, b.scaling);
            });
  report.aggregates = aggregate_study_records(report.records);

  // rewrite the ledger sorted so completed studies are byte-stable
  if (!cfg.jsonl_path.empty()) {
    append_out.close();
    std::ofstream out(cfg.jsonl_path, std::ios::trunc);
    for (const auto& r : report.records) out << record_to_json(r).dump() << '\n';
  }
  return report;
}

void write_study_summary_csv(const StudyReport& report, const std::string& path) {
  std::vector<std::vector<std::string>> rows;
  auto fmt = [](double v) {
    std::ostringstream os;
    os.precision(10);
    os << v;
    return os.str();
  };
  for (const auto& a : report.aggregates) {
    rows.push_back({a.model, a.scaling, std::to_string(a.group), fmt(a.mean_of_means),
                    fmt(a.q2_5_of_means), fmt(a.q97_5_of_means), fmt(a.mean_rel_error),
                    fmt(a.median_rel_error), fmt(a.median_abs_rel_error), fmt(a.coverage95),
                    std::to_string(a.replicates)});
  }
  write_csv(path,
            {"model", "scaling", "group", "mean_of_means", "q2.5_of_means", "q97.5_of_means",
             "mean_rel_error", "median_rel_error", "median_abs_rel_error", "coverage95",
             "replicates"},
            rows);
}

}  // namespace nsum
