#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <unistd.h>

#include "nsum/rng.hpp"
#include "nsum/simulation.hpp"
#include "nsum/stats.hpp"
#include "nsum/study.hpp"

using namespace nsum;

TEST_CASE("paper default parameter blocks") {
  const Eigen::MatrixXd om = PaperDefaults::correlation_matrix();
  CHECK(om(0, 1) == 0.9);
  CHECK(om(3, 4) == 0.85);
  CHECK(om(1, 4) == -0.1);
  cholesky(om);  // positive definite
  const Eigen::VectorXd tau = PaperDefaults::tau();
  CHECK(tau(0) == 2.0);
  CHECK(tau(2) == 0.7);
  CHECK(PaperDefaults::gamma_dispersion()(2) == 1.5);
  CHECK(PaperDefaults::beta_dispersion()(2) == 0.005);
  const Eigen::VectorXd props = PaperDefaults::sbm_proportions();
  CHECK(props.sum() == doctest::Approx(1.0));
  CHECK(props(0) == doctest::Approx(1.0 / 3.0));
  CHECK(props(2) == doctest::Approx(1.0 / 6.0));
  const Eigen::MatrixXd T = PaperDefaults::sbm_report_probability();
  CHECK(T(0, 0) == 1.0);
  CHECK(T(0, 2) == doctest::Approx(1.0 / (1.0 + std::exp(1.0))));
  CHECK(T(2, 2) == doctest::Approx(1.0 / (1.0 + std::exp(-2.0))));
}

TEST_CASE("sim_correlated determinism and column means at tau -> 0") {
  RngStream r1(11, 1), r2(11, 1);
  Eigen::VectorXd rho = Eigen::VectorXd::Constant(5, std::log(2.5));
  Eigen::VectorXd tau0 = Eigen::VectorXd::Constant(5, 1e-8);
  const Eigen::MatrixXd om = PaperDefaults::correlation_matrix();
  const SimResult a = sim_correlated(4000, 5, 0.7, rho, tau0, om, std::nullopt, r1);
  const SimResult b = sim_correlated(4000, 5, 0.7, rho, tau0, om, std::nullopt, r2);
  CHECK(a.data.y == b.data.y);

  // E[e^delta] e^rho = e^{0.245} 2.5
  const double expected = std::exp(0.7 * 0.7 / 2.0) * 2.5;
  for (int k = 0; k < 5; ++k)
    CHECK(a.data.y.col(k).mean() == doctest::Approx(expected).epsilon(0.05));
  // truth block carries the requested sizes and an enlarged population
  CHECK(a.truth.sizes(0) == doctest::Approx(2.5 * 1e6));
  CHECK(a.truth.total_population >= 4.0 * a.truth.sizes.maxCoeff());
  CHECK(a.data.groups[0].known_size.value() < a.data.total_population);
}

TEST_CASE("sim_correlated with identity correlation has uncorrelated bias columns") {
  RngStream rng(12, 2);
  Eigen::VectorXd rho = Eigen::VectorXd::Constant(3, std::log(5.0));
  Eigen::VectorXd tau = Eigen::VectorXd::Constant(3, 0.8);
  const SimResult sim = sim_correlated(10000, 3, 0.1, rho, tau,
                                       Eigen::MatrixXd::Identity(3, 3), std::nullopt, rng);
  // log(1+y) is a crude bias proxy; with omega = I cross-column correlation
  // stays near zero
  Eigen::MatrixXd ly = (sim.data.y.array() + 1.0).log();
  for (int a = 0; a < 3; ++a)
    for (int b = a + 1; b < 3; ++b) {
      Eigen::VectorXd ca = ly.col(a), cb = ly.col(b);
      CHECK(std::abs(pearson_correlation(ca, cb)) < 0.1);
    }
}

TEST_CASE("sim_correlated mean-one convention keeps column scale at any tau") {
  RngStream rng(13, 3);
  Eigen::VectorXd rho = Eigen::VectorXd::Constant(2, std::log(2.5));
  Eigen::VectorXd tau(2);
  tau << 2.0, 0.7;
  const SimResult sim = sim_correlated(60000, 2, 1e-9, rho, tau,
                                       Eigen::MatrixXd::Identity(2, 2), std::nullopt, rng);
  // with E e^b = 1 per group, both columns keep mean = e^rho
  for (int k = 0; k < 2; ++k)
    CHECK(sim.data.y.col(k).mean() == doctest::Approx(2.5).epsilon(0.05));
}

TEST_CASE("sim_missing_covariate deflates the negative-mean columns") {
  RngStream rng(14, 4);
  const SimResult sim = sim_missing_covariate(8000, rng);
  // groups 4 and 5 carry x with mean -2: their count means are depressed
  const double mean_high = (sim.data.y.col(0).mean() + sim.data.y.col(1).mean() +
                            sim.data.y.col(2).mean()) / 3.0;
  const double mean_low = 0.5 * (sim.data.y.col(3).mean() + sim.data.y.col(4).mean());
  CHECK(mean_low < 0.3 * mean_high);
  // withheld covariate is in the truth block, not the dataset
  CHECK(sim.data.num_covariates() == 0);
  CHECK(sim.truth.latent_x.rows() == 8000);

  // latent X column correlations match the generating matrix
  const Eigen::MatrixXd om = PaperDefaults::correlation_matrix();
  Eigen::VectorXd x0 = sim.truth.latent_x.col(0), x1 = sim.truth.latent_x.col(1);
  CHECK(pearson_correlation(x0, x1) == doctest::Approx(0.9).epsilon(0.04));
  Eigen::VectorXd x3 = sim.truth.latent_x.col(3), x4 = sim.truth.latent_x.col(4);
  CHECK(pearson_correlation(x3, x4) == doctest::Approx(0.85).epsilon(0.04));
  CHECK(std::abs(sim.truth.latent_x.col(2).mean()) < 0.05);
  CHECK(sim.truth.latent_x.col(4).mean() == doctest::Approx(-2.0).epsilon(0.03));
}

TEST_CASE("sim_missing_covariate with zero means reduces to the base model") {
  RngStream r1(15, 5);
  Eigen::VectorXd mu0 = Eigen::VectorXd::Zero(5);
  const SimResult shifted = sim_missing_covariate(20000, r1, 1e6, &mu0);
  // every column now has the same latent-x mean, so column means agree
  // with the correlated base at x-inflation e^{1/2}; the tau=2 column is
  // too heavy-tailed for a 20k-sample mean, so check the moderate ones
  const double expected = std::exp(0.7 * 0.7 / 2.0) * 2.5 * std::exp(0.5);
  for (int k : {1, 2, 3})
    CHECK(shifted.data.y.col(k).mean() == doctest::Approx(expected).epsilon(0.08));
}

TEST_CASE("sim_sbm_transmission graph properties and expectations") {
  RngStream rng(16, 6);
  const SimResult sim = sim_sbm_transmission(600, PaperDefaults::sbm_proportions(),
                                             PaperDefaults::sbm_connectivity(),
                                             PaperDefaults::sbm_report_probability(), rng);
  CHECK(sim.truth.sizes.sum() == 600.0);
  CHECK(sim.truth.sizes(0) == 200.0);
  CHECK(sim.truth.sizes(2) == 100.0);
  // degree sum is even (undirected simple graph)
  const double total_degree = sim.truth.degrees.sum();
  CHECK(std::fmod(total_degree, 2.0) == 0.0);

  // reports to the fully-transparent blocks equal true link counts in
  // expectation; verify the thinned block-3 column mean
  // E[y_{i,3}] for i in block 1: n3 * P(1,3) * invlogit(-1)
  double mean_b1_to_3 = 0;
  for (int i = 0; i < 200; ++i) mean_b1_to_3 += sim.data.y(i, 2);
  mean_b1_to_3 /= 200.0;
  const double expected = 100.0 * 0.05 * (1.0 / (1.0 + std::exp(1.0)));
  CHECK(mean_b1_to_3 == doctest::Approx(expected).epsilon(0.2));
}

TEST_CASE("sim_sbm with full reporting reproduces true link counts") {
  RngStream rng(17, 7);
  Eigen::MatrixXd T = Eigen::MatrixXd::Ones(4, 4);
  const SimResult sim = sim_sbm_transmission(400, PaperDefaults::sbm_proportions(),
                                             PaperDefaults::sbm_connectivity(), T, rng);
  // with T = 1 row sums equal true degrees exactly
  for (int i = 0; i < 400; ++i)
    CHECK(sim.data.y.row(i).sum() == doctest::Approx(sim.truth.degrees(i)));
}

TEST_CASE("sim_sbm respondent in block 3 reporting block 4") {
  RngStream rng(18, 8);
  const SimResult sim = sim_sbm_transmission(1200, PaperDefaults::sbm_proportions(),
                                             PaperDefaults::sbm_connectivity(),
                                             PaperDefaults::sbm_report_probability(), rng);
  // blocks: 400, 400, 200, 200.  E[y_{i,4}] for i in block 3:
  // n4 * 0.3 * invlogit(2)
  double m = 0;
  for (int i = 800; i < 1000; ++i) m += sim.data.y(i, 3);
  m /= 200.0;
  const double expected = 200.0 * 0.3 * (1.0 / (1.0 + std::exp(-2.0)));
  CHECK(m == doctest::Approx(expected).epsilon(0.05));
}

TEST_CASE("sim_sbm validates inputs") {
  RngStream rng(19, 9);
  Eigen::VectorXd bad_props(2);
  bad_props << 0.5, 0.6;
  CHECK_THROWS_AS(sim_sbm_transmission(100, bad_props, Eigen::MatrixXd::Constant(2, 2, 0.1),
                                       Eigen::MatrixXd::Constant(2, 2, 0.5), rng),
                  std::invalid_argument);
  Eigen::VectorXd props(2);
  props << 0.5, 0.5;
  Eigen::MatrixXd asym(2, 2);
  asym << 0.1, 0.2, 0.3, 0.1;
  CHECK_THROWS_AS(
      sim_sbm_transmission(100, props, asym, Eigen::MatrixXd::Constant(2, 2, 0.5), rng),
      std::invalid_argument);
}

TEST_CASE("sim_copula_effects gamma kind moments") {
  RngStream rng(20, 10);
  const int n = 60000;
  const SimResult sim =
      sim_copula_effects(CopulaEffectKind::gamma, PaperDefaults::gamma_dispersion(),
                         Eigen::MatrixXd::Identity(5, 5), n, rng);
  // Poisson-gamma overdispersion holds conditionally on the degree:
  // var/mean = 1 + mean/lambda_k within a narrow degree band
  const Eigen::VectorXd lambda = PaperDefaults::gamma_dispersion();
  std::vector<int> band;
  for (int i = 0; i < n; ++i) {
    const double z = std::log(sim.truth.degrees(i));
    if (std::abs(z - 5.0) < 0.02) band.push_back(i);
  }
  REQUIRE(band.size() > 500);
  for (int k = 0; k < 5; ++k) {
    double mean = 0;
    for (int i : band) mean += sim.data.y(i, k);
    mean /= static_cast<double>(band.size());
    double var = 0;
    for (int i : band) var += (sim.data.y(i, k) - mean) * (sim.data.y(i, k) - mean);
    var /= static_cast<double>(band.size() - 1);
    CHECK(var / mean == doctest::Approx(1.0 + mean / lambda(k)).epsilon(0.1));
  }
  // gamma(lambda, lambda) marginal keeps the cell means at degree * 0.015
  double ratio = 0;
  for (int i = 0; i < n; ++i) ratio += sim.data.y.row(i).sum() / (5.0 * sim.truth.degrees(i));
  CHECK(ratio / n == doctest::Approx(0.015).epsilon(0.02));
}

TEST_CASE("sim_copula_effects beta kind q mean") {
  RngStream rng(21, 11);
  const SimResult sim =
      sim_copula_effects(CopulaEffectKind::beta, PaperDefaults::beta_dispersion(),
                         PaperDefaults::correlation_matrix(), 20000, rng);
  // reported fraction y/d estimates the Beta mean 0.015
  double frac = 0;
  long used = 0;
  for (int i = 0; i < 20000; ++i) {
    if (sim.truth.degrees(i) <= 0) continue;
    for (int k = 0; k < 5; ++k) frac += sim.data.y(i, k) / sim.truth.degrees(i);
    used += 5;
  }
  CHECK(frac / used == doctest::Approx(0.015).epsilon(0.05));
  // degrees follow the log-scale reading: mean ~ e^{5 + 0.245}
  CHECK(sim.truth.degrees.mean() ==
        doctest::Approx(std::exp(5.0 + 0.7 * 0.7 / 2.0)).epsilon(0.1));
}

TEST_CASE("study smoke: two killworth replicates on a trivial scenario") {
  Scenario sc = Scenario::copula(CopulaEffectKind::gamma, 120, false, 99);
  StudyConfig cfg;
  cfg.replicates = 2;
  cfg.models = {StudyModel::killworth};
  cfg.scalings = {};
  const StudyReport report = run_study(sc, cfg);
  REQUIRE(report.records.size() == 2);
  CHECK(report.failed_records == 0);
  for (const auto& r : report.records) {
    CHECK(r.model == "killworth");
    CHECK(r.post_mean.size() == 5);
  }
  CHECK(report.aggregates.size() == 5);
}

TEST_CASE("relative error sign convention") {
  // estimate = truth -> 0; estimate = truth/2 -> +50
  Scenario sc = Scenario::copula(CopulaEffectKind::gamma, 50, false, 2);
  StudyConfig cfg;
  cfg.replicates = 1;
  cfg.models = {StudyModel::killworth};
  const StudyReport report = run_study(sc, cfg);
  const StudyRecord& r = report.records.front();
  for (std::size_t k = 0; k < r.post_mean.size(); ++k) {
    const double manual = 100.0 * (r.truth[k] - r.post_mean[k]) / r.truth[k];
    CHECK(r.rel_error[k] == doctest::Approx(manual));
  }
}

TEST_CASE("study resumes from its jsonl ledger") {
  namespace fs = std::filesystem;
  const fs::path dir = fs::temp_directory_path() / ("nsum_study_" + std::to_string(::getpid()));
  fs::create_directories(dir);
  const std::string jsonl = (dir / "study.jsonl").string();

  Scenario sc = Scenario::copula(CopulaEffectKind::gamma, 80, false, 5);
  StudyConfig cfg;
  cfg.replicates = 2;
  cfg.models = {StudyModel::killworth};
  cfg.jsonl_path = jsonl;
  const StudyReport first = run_study(sc, cfg);
  REQUIRE(first.records.size() == 2);

  // growing the study keeps the completed replicates byte-identical
  cfg.replicates = 3;
  const StudyReport second = run_study(sc, cfg);
  REQUIRE(second.records.size() == 3);
  for (int r = 0; r < 2; ++r) {
    CHECK(second.records[static_cast<std::size_t>(r)].post_mean ==
          first.records[static_cast<std::size_t>(r)].post_mean);
  }
  fs::remove_all(dir);
}
