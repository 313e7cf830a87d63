#include <doctest.h>

#include <cmath>

#include "nsum/chain_stats.hpp"
#include "nsum/hmc.hpp"
#include "nsum/metropolis.hpp"
#include "nsum/rng.hpp"

using namespace nsum;

namespace {

PosteriorTarget std_normal_target(int dim) {
  PosteriorTarget t;
  t.dim = dim;
  t.log_density = [](const Eigen::VectorXd& x) { return -0.5 * x.squaredNorm(); };
  t.gradient = [](const Eigen::VectorXd& x) { return (-x).eval(); };
  return t;
}

}  // namespace

TEST_CASE("chain config presets and validation") {
  const ChainConfig desk = ChainConfig::desk();
  CHECK(desk.chains == 4);
  CHECK(desk.iterations == 2000);
  CHECK(desk.warmup == 1000);
  CHECK(desk.thin == 1);
  const ChainConfig paper = ChainConfig::paper();
  CHECK(paper.chains == 3);
  CHECK(paper.iterations == 10000);
  CHECK(paper.warmup == 2000);
  CHECK(paper.thin == 5);
  CHECK(paper.kept_per_chain() == 1600);

  ChainConfig bad;
  bad.warmup = bad.iterations;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
}

TEST_CASE("hmc recovers a 10-dim standard normal") {
  ChainConfig cfg;
  cfg.chains = 4;
  cfg.iterations = 2000;
  cfg.warmup = 1000;
  cfg.seed = 1;
  const Draws d = run_hmc(std_normal_target(10), cfg);
  REQUIRE(d.total_draws() == 4000);
  for (int j = 0; j < 10; ++j) {
    const Eigen::VectorXd col = d.pooled(j);
    CHECK(std::abs(col.mean()) < 0.05);
    const double var = (col.array() - col.mean()).square().sum() / (col.size() - 1);
    CHECK(var > 0.9);
    CHECK(var < 1.1);
    CHECK(split_rhat_col(d, j) < 1.02);
  }
  long divergences = 0;
  for (const auto& m : d.chain_meta) divergences += m.divergences;
  CHECK(divergences == 0);
}

TEST_CASE("hmc handles a near-point-mass target without divergences") {
  PosteriorTarget t;
  t.dim = 1;
  const double s = 1e-3;
  t.log_density = [s](const Eigen::VectorXd& x) { return -0.5 * x(0) * x(0) / (s * s); };
  t.gradient = [s](const Eigen::VectorXd& x) {
    Eigen::VectorXd g(1);
    g(0) = -x(0) / (s * s);
    return g;
  };
  ChainConfig cfg;
  cfg.chains = 2;
  cfg.iterations = 1200;
  cfg.warmup = 600;
  cfg.seed = 5;
  const Draws d = run_hmc(t, cfg);
  const Eigen::VectorXd col = d.pooled(0);
  CHECK(std::abs(col.mean()) < 3.0 * s);
  const double sd = std::sqrt((col.array() - col.mean()).square().sum() / (col.size() - 1));
  CHECK(sd < 2.0 * s);
  long divergences = 0;
  for (const auto& m : d.chain_meta) divergences += m.divergences;
  CHECK(divergences == 0);
}

TEST_CASE("hmc mixes on a banana-shaped target and matches grid moments") {
  // logp = -x^2/2 - (y - x^2)^2 / (2 * 0.5^2)
  const double s2 = 0.25;
  PosteriorTarget t;
  t.dim = 2;
  t.log_density = [s2](const Eigen::VectorXd& v) {
    const double x = v(0), y = v(1);
    const double r = y - x * x;
    return -0.5 * x * x - 0.5 * r * r / s2;
  };
  t.gradient = [s2](const Eigen::VectorXd& v) {
    const double x = v(0), y = v(1);
    const double r = y - x * x;
    Eigen::VectorXd g(2);
    g(0) = -x + 2.0 * x * r / s2;
    g(1) = -r / s2;
    return g;
  };
  ChainConfig cfg;
  cfg.chains = 4;
  cfg.iterations = 4000;
  cfg.warmup = 2000;
  cfg.seed = 31;
  cfg.leapfrog_steps = 32;
  const Draws d = run_hmc(t, cfg);
  CHECK(split_rhat_col(d, 0) < 1.05);
  CHECK(split_rhat_col(d, 1) < 1.05);

  // brute-force grid moments
  double z = 0, my = 0, mx = 0;
  for (double x = -6; x <= 6; x += 0.01) {
    for (double y = -2; y <= 38; y += 0.02) {
      const double r = y - x * x;
      const double w = std::exp(-0.5 * x * x - 0.5 * r * r / s2);
      z += w;
      mx += w * x;
      my += w * y;
    }
  }
  mx /= z;
  my /= z;
  CHECK(std::abs(d.pooled(0).mean() - mx) < 0.06);
  CHECK(std::abs(d.pooled(1).mean() - my) < 0.12);
}

TEST_CASE("hmc is deterministic under a fixed seed") {
  ChainConfig cfg;
  cfg.chains = 2;
  cfg.iterations = 400;
  cfg.warmup = 200;
  cfg.seed = 7;
  const Draws a = run_hmc(std_normal_target(3), cfg);
  const Draws b = run_hmc(std_normal_target(3), cfg);
  for (int c = 0; c < 2; ++c) CHECK(a.values[c] == b.values[c]);
}

TEST_CASE("hmc requires gradient and finite init") {
  PosteriorTarget t = std_normal_target(2);
  t.gradient = nullptr;
  ChainConfig cfg;
  CHECK_THROWS_AS(run_hmc(t, cfg), std::invalid_argument);

  PosteriorTarget bad = std_normal_target(2);
  bad.log_density = [](const Eigen::VectorXd&) {
    return -std::numeric_limits<double>::infinity();
  };
  CHECK_THROWS_AS(run_hmc(bad, cfg), sampler_error);
}

TEST_CASE("random-walk metropolis recovers a 1-dim normal") {
  PosteriorTarget t = std_normal_target(1);
  t.gradient = nullptr;
  ChainConfig cfg;
  cfg.chains = 4;
  cfg.iterations = 5000;
  cfg.warmup = 1000;
  cfg.seed = 41;
  const Draws d = run_rw_metropolis(t, cfg);
  CHECK(std::abs(d.pooled(0).mean()) < 0.05);
  // adapted acceptance should sit in the single-site band
  for (const auto& m : d.chain_meta) {
    CHECK(m.mean_accept > 0.2);
    CHECK(m.mean_accept < 0.6);
  }
}

TEST_CASE("random-walk metropolis flags a non-mixing bimodal target") {
  PosteriorTarget t;
  t.dim = 1;
  const double s = 0.1;
  t.log_density = [s](const Eigen::VectorXd& x) {
    const double a = -0.5 * (x(0) - 10.0) * (x(0) - 10.0) / (s * s);
    const double b = -0.5 * (x(0) + 10.0) * (x(0) + 10.0) / (s * s);
    return std::max(a, b) + std::log1p(std::exp(-std::abs(a - b)));
  };
  t.init = Eigen::VectorXd::Zero(1);
  ChainConfig cfg;
  cfg.chains = 4;
  cfg.iterations = 2000;
  cfg.warmup = 500;
  cfg.seed = 17;
  cfg.init_jitter = 11.0;  // chains start near different modes
  const Draws d = run_rw_metropolis(t, cfg);
  CHECK(split_rhat_col(d, 0) > 1.05);
}

TEST_CASE("random-walk metropolis replays identically under a seed") {
  PosteriorTarget t = std_normal_target(2);
  t.gradient = nullptr;
  ChainConfig cfg;
  cfg.chains = 2;
  cfg.iterations = 300;
  cfg.warmup = 100;
  cfg.seed = 3;
  const Draws a = run_rw_metropolis(t, cfg);
  const Draws b = run_rw_metropolis(t, cfg);
  for (int c = 0; c < 2; ++c) CHECK(a.values[c] == b.values[c]);
}

TEST_CASE("componentwise updates use the component density when provided") {
  // two independent coordinates; component density exposes only the own term
  PosteriorTarget t;
  t.dim = 2;
  t.log_density = [](const Eigen::VectorXd& x) { return -0.5 * x.squaredNorm(); };
  t.component_log_density = [](const Eigen::VectorXd& x, int i) {
    return -0.5 * x(i) * x(i);
  };
  ChainConfig cfg;
  cfg.chains = 2;
  cfg.iterations = 4000;
  cfg.warmup = 1000;
  cfg.seed = 19;
  const Draws d = run_rw_metropolis(t, cfg);
  for (int j = 0; j < 2; ++j) {
    const Eigen::VectorXd col = d.pooled(j);
    CHECK(std::abs(col.mean()) < 0.06);
    const double var = (col.array() - col.mean()).square().sum() / (col.size() - 1);
    CHECK(var == doctest::Approx(1.0).epsilon(0.1));
  }
}

TEST_CASE("split rhat detects iid chains and disjoint chains") {
  RngStream rng(8, 1);
  Draws d;
  d.param_names = {"x"};
  for (int c = 0; c < 4; ++c) {
    Eigen::MatrixXd m(1000, 1);
    for (int i = 0; i < 1000; ++i) m(i, 0) = rng.normal();
    d.values.push_back(m);
  }
  const double r = split_rhat(d, "x");
  CHECK(r > 0.99);
  CHECK(r < 1.01);

  Draws far;
  far.param_names = {"x"};
  for (int c = 0; c < 2; ++c) {
    Eigen::MatrixXd m(500, 1);
    for (int i = 0; i < 500; ++i) m(i, 0) = rng.normal() + (c == 0 ? 0.0 : 100.0);
    far.values.push_back(m);
  }
  CHECK(split_rhat(far, "x") > 10.0);

  Draws flat;
  flat.param_names = {"x"};
  flat.values.push_back(Eigen::MatrixXd::Constant(100, 1, 3.0));
  flat.values.push_back(Eigen::MatrixXd::Constant(100, 1, 3.0));
  CHECK(std::isnan(split_rhat(flat, "x")));
}

TEST_CASE("ess matches iid and AR(1) references") {
  RngStream rng(21, 4);
  Draws d;
  d.param_names = {"x"};
  const int n = 4000;
  for (int c = 0; c < 2; ++c) {
    Eigen::MatrixXd m(n, 1);
    for (int i = 0; i < n; ++i) m(i, 0) = rng.normal();
    d.values.push_back(m);
  }
  const double e = ess(d, "x");
  CHECK(e > 0.8 * d.total_draws());
  CHECK(e <= 1.5 * d.total_draws());

  // AR(1) with coefficient 0.9: ESS/N = (1-rho)/(1+rho)
  Draws ar;
  ar.param_names = {"x"};
  for (int c = 0; c < 2; ++c) {
    Eigen::MatrixXd m(20000, 1);
    double x = 0.0;
    for (int i = 0; i < 20000; ++i) {
      x = 0.9 * x + std::sqrt(1 - 0.81) * rng.normal();
      m(i, 0) = x;
    }
    ar.values.push_back(m);
  }
  const double expected = ar.total_draws() * (1.0 - 0.9) / (1.0 + 0.9);
  CHECK(ess(ar, "x") == doctest::Approx(expected).epsilon(0.3));

  Draws flat;
  flat.param_names = {"x"};
  flat.values.push_back(Eigen::MatrixXd::Constant(100, 1, 1.0));
  CHECK(std::isnan(ess(flat, "x")));
}

TEST_CASE("gradient harness accepts a correct gradient and rejects a broken one") {
  PosteriorTarget good = std_normal_target(5);
  CHECK(max_gradient_rel_error(good, 11, 20) < 1e-6);
  PosteriorTarget bad = std_normal_target(5);
  bad.gradient = [](const Eigen::VectorXd& x) { return (-1.01 * x).eval(); };
  CHECK(max_gradient_rel_error(bad, 11, 5) > 1e-3);
}

TEST_CASE("normal-normal conjugate posterior matches closed form") {
  // y ~ N(theta, 1), theta ~ N(0, 1), observed y = 1.4
  // posterior: N(0.7, 0.5)
  PosteriorTarget t;
  t.dim = 1;
  const double y = 1.4;
  t.log_density = [y](const Eigen::VectorXd& x) {
    return -0.5 * (y - x(0)) * (y - x(0)) - 0.5 * x(0) * x(0);
  };
  t.gradient = [y](const Eigen::VectorXd& x) {
    Eigen::VectorXd g(1);
    g(0) = (y - x(0)) - x(0);
    return g;
  };
  ChainConfig cfg;
  cfg.chains = 4;
  cfg.iterations = 2000;
  cfg.warmup = 1000;
  cfg.seed = 2;
  const Draws d = run_hmc(t, cfg);
  const Eigen::VectorXd col = d.pooled(0);
  const double se = std::sqrt(0.5 / col.size()) * 3.0;
  CHECK(std::abs(col.mean() - 0.7) < se + 0.02);
  const double var = (col.array() - col.mean()).square().sum() / (col.size() - 1);
  CHECK(var == doctest::Approx(0.5).epsilon(0.1));
}
