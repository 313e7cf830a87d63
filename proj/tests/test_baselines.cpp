#include <doctest.h>

#include <cmath>

#include "nsum/baselines.hpp"
#include "nsum/chain_stats.hpp"
#include "nsum/rng.hpp"
#include "nsum/stats.hpp"

using namespace nsum;

namespace {

PreparedDesign design_from_counts(const Eigen::MatrixXd& y, double N,
                                  const std::vector<double>& known_sizes) {
  ArdDataset d;
  d.total_population = N;
  d.y = y;
  d.z.resize(y.rows(), 0);
  d.x = Eigen::MatrixXd::Zero(y.rows(), y.cols());
  for (int k = 0; k < y.cols(); ++k) {
    GroupMeta g;
    g.id = "g" + std::to_string(k + 1);
    g.name = g.id;
    if (known_sizes[static_cast<std::size_t>(k)] > 0)
      g.known_size = known_sizes[static_cast<std::size_t>(k)];
    d.groups.push_back(g);
  }
  return prepare_design(d);
}

// exact Stage-1 binomial log likelihood for an integer degree candidate
double stage1_loglik(long deg, const Eigen::VectorXd& y, const Eigen::VectorXd& sizes,
                     double N) {
  double ll = 0;
  for (long k = 0; k < y.size(); ++k) {
    const double p = sizes(k) / N;
    ll += density::binomial_lpmf(static_cast<long>(y(k)), deg, p);
  }
  return ll;
}

}  // namespace

TEST_CASE("killworth closed forms at hand values") {
  Eigen::VectorXd y(2), sizes(2);
  y << 2, 3;
  sizes << 100, 100;
  CHECK(killworth_degree(y, sizes, 1000.0) == doctest::Approx(25.0));
  y << 0, 0;
  CHECK(killworth_degree(y, sizes, 1000.0) == 0.0);

  Eigen::VectorXd yu(3), deg(3);
  yu << 1, 2, 3;
  deg << 10, 20, 30;
  CHECK(killworth_size(yu, deg, 1000.0) == doctest::Approx(100.0));
  yu.setZero();
  CHECK(killworth_size(yu, deg, 1000.0) == 0.0);
  deg.setZero();
  yu << 1, 2, 3;
  CHECK_THROWS_AS(killworth_size(yu, deg, 1000.0), std::invalid_argument);
  CHECK_THROWS_AS(killworth_degree(Eigen::VectorXd(), Eigen::VectorXd(), 1000.0),
                  std::invalid_argument);
}

TEST_CASE("killworth degree matches the brute-force stage-1 maximizer") {
  RngStream rng(61, 1);
  const double N = 10000.0;
  for (int rep = 0; rep < 50; ++rep) {
    // keep sum of prevalences below 0.3 so the closed form applies
    const int K = 2 + static_cast<int>(rng.below(4));
    Eigen::VectorXd sizes(K), y(K);
    for (int k = 0; k < K; ++k) sizes(k) = N * (0.01 + 0.025 * rng.uniform());
    const double true_degree = 10.0 + rng.uniform() * 30.0;
    for (int k = 0; k < K; ++k)
      y(k) = static_cast<double>(
          rng.binomial(static_cast<long>(true_degree), sizes(k) / N));
    const double closed = killworth_degree(y, sizes, N);

    long best = static_cast<long>(y.maxCoeff());
    double best_ll = stage1_loglik(best, y, sizes, N);
    for (long deg = best; deg <= 400; ++deg) {
      const double ll = stage1_loglik(deg, y, sizes, N);
      if (ll > best_ll) {
        best_ll = ll;
        best = deg;
      }
    }
    CHECK(std::abs(closed - static_cast<double>(best)) <= 1.0);
  }
}

TEST_CASE("killworth size matches the brute-force stage-2 maximizer within 1%") {
  RngStream rng(62, 2);
  const double N = 50000.0;
  for (int rep = 0; rep < 50; ++rep) {
    const int n = 40;
    Eigen::VectorXd deg(n), yu(n);
    const double true_size = 500.0 + rng.uniform() * 2000.0;
    for (int i = 0; i < n; ++i) {
      deg(i) = 30.0 + rng.uniform() * 170.0;
      yu(i) = static_cast<double>(
          rng.binomial(static_cast<long>(deg(i)), true_size / N));
    }
    const double closed = killworth_size(yu, deg, N);
    if (closed == 0.0) continue;

    // exact Stage-2 likelihood over a fine grid around the closed form
    auto stage2 = [&](double Nu) {
      double ll = 0;
      for (int i = 0; i < n; ++i)
        ll += density::binomial_lpmf(static_cast<long>(yu(i)),
                                     static_cast<long>(deg(i)), Nu / N);
      return ll;
    };
    double best = closed, best_ll = stage2(closed);
    for (double Nu = 0.5 * closed; Nu <= 1.5 * closed; Nu += closed * 0.001) {
      const double ll = stage2(Nu);
      if (ll > best_ll) {
        best_ll = ll;
        best = Nu;
      }
    }
    CHECK(std::abs(closed - best) / best <= 0.01);
  }
}

TEST_CASE("killworth_fit runs over a prepared design") {
  Eigen::MatrixXd y(3, 2);
  y << 2, 1, 0, 3, 4, 0;
  const PreparedDesign d = design_from_counts(y, 1000.0, {100.0, 0.0});
  const KillworthFit fit = killworth_fit(d);
  CHECK(fit.degrees.size() == 3);
  CHECK(fit.sizes.count("g2") == 1);
  // degrees from known group g1 only: d_i = 1000 * y_i1 / 100
  CHECK(fit.degrees(0) == doctest::Approx(20.0));
  CHECK(fit.degrees(2) == doctest::Approx(40.0));
}

TEST_CASE("zheng targets pass the gradient harness") {
  RngStream rng(63, 3);
  Eigen::MatrixXd y(12, 3);
  for (int i = 0; i < 12; ++i)
    for (int k = 0; k < 3; ++k) y(i, k) = static_cast<double>(rng.poisson(3.0));
  const PreparedDesign d = design_from_counts(y, 1e5, {100, 200, 300});
  CHECK(max_gradient_rel_error(zheng_target(d, ZhengVariant::poisson), 71, 10, 0.3) < 1e-5);
  CHECK(max_gradient_rel_error(zheng_target(d, ZhengVariant::negbin), 72, 10, 0.3) < 1e-5);
}

TEST_CASE("negbin likelihood equals the poisson-gamma mixture by quadrature") {
  // y ~ NB(shape xi/(omega-1), inverse-scale 1/(omega-1)) must equal the
  // integral over g of Poisson(y; xi g) Gamma(g; a, a) with a = xi/(omega-1)
  // (mean-one mixing, variance inflation factor omega)
  auto negbin_lpmf = [](long yv, double xi, double omega) {
    const double a = xi / (omega - 1.0);
    const double lo = std::log(omega);
    return std::lgamma(yv + a) - std::lgamma(a) - std::lgamma(yv + 1.0) - a * lo +
           yv * (std::log(omega - 1.0) - lo);
  };
  for (const auto& [yv, xi, omega] : {std::tuple<long, double, double>{0, 2.0, 1.7},
                                      {3, 2.0, 1.7},
                                      {7, 5.5, 3.0},
                                      {1, 0.4, 1.2}}) {
    const double shape = xi / (omega - 1.0);
    double mix = 0.0;
    const int steps = 20000;
    const double hi = 60.0 * std::max(1.0, omega - 1.0);
    const double h = hi / steps;
    for (int s = 0; s < steps; ++s) {
      const double g = (s + 0.5) * h;
      mix += std::exp(density::poisson_lpmf(yv, xi * g) +
                      density::gamma_lpdf(g, shape, shape)) * h;
    }
    CHECK(negbin_lpmf(yv, xi, omega) == doctest::Approx(std::log(mix)).epsilon(1e-6));
  }
}

TEST_CASE("beta-binomial pmf equals numeric integration of Binom x Beta") {
  const long n = 17;
  const double a = 1.8, b = 6.2;
  for (long yv : {0L, 4L, 17L}) {
    double integral = 0.0;
    const int steps = 10000;
    for (int s = 0; s < steps; ++s) {
      const double q = (s + 0.5) / steps;
      integral += std::exp(density::binomial_lpmf(yv, n, q) + density::beta_lpdf(q, a, b)) /
                  steps;
    }
    CHECK(std::exp(density::beta_binomial_lpmf(yv, n, a, b)) ==
          doctest::Approx(integral).epsilon(1e-6));
  }
}

TEST_CASE("maltiel component density is consistent with the full density") {
  RngStream rng(64, 4);
  Eigen::MatrixXd y(8, 2);
  for (int i = 0; i < 8; ++i)
    for (int k = 0; k < 2; ++k) y(i, k) = static_cast<double>(rng.poisson(2.0));
  // group 2 unknown
  const PreparedDesign d = design_from_counts(y, 1e5, {1500.0, 0.0});
  for (const MaltielVariant variant : {MaltielVariant::integrated, MaltielVariant::sampled}) {
    const PosteriorTarget t = maltiel_target(d, variant);
    REQUIRE(t.component_log_density);
    Eigen::VectorXd u = t.init;
    RngStream jit(65, 5);
    for (int j = 0; j < t.dim; ++j) u(j) += 0.05 * jit.normal();
    // full-density differences equal component differences for single moves
    for (int j = 0; j < t.dim; j += std::max(1, t.dim / 13)) {
      Eigen::VectorXd u2 = u;
      u2(j) += 0.11;
      const double full_diff = t.log_density(u2) - t.log_density(u);
      const double comp_diff = t.component_log_density(u2, j) - t.component_log_density(u, j);
      CHECK(full_diff == doctest::Approx(comp_diff).epsilon(1e-9));
    }
  }
}

TEST_CASE("maltiel degree floor rejects configurations below the report sum") {
  Eigen::MatrixXd y(2, 2);
  y << 5, 5, 0, 0;
  const PreparedDesign d = design_from_counts(y, 1e5, {1000.0, 0.0});
  const PosteriorTarget t = maltiel_target(d, MaltielVariant::integrated);
  Eigen::VectorXd u = t.init;
  u(0) = std::log(6.0);  // floor(d_1) = 6 < 10 = row sum
  CHECK(t.log_density(u) == -std::numeric_limits<double>::infinity());
  u(0) = std::log(12.0);
  CHECK(std::isfinite(t.log_density(u)));
}

TEST_CASE("maltiel fit produces sensible m draws on an easy dataset") {
  RngStream rng(66, 6);
  // strong signal: degrees ~ 150, prevalence 0.05
  const int n = 60;
  Eigen::MatrixXd y(n, 2);
  for (int i = 0; i < n; ++i) {
    const long deg = 120 + static_cast<long>(rng.below(60));
    y(i, 0) = static_cast<double>(rng.binomial(deg, 0.02));
    y(i, 1) = static_cast<double>(rng.binomial(deg, 0.05));
  }
  const PreparedDesign d = design_from_counts(y, 1e5, {0.02 * 1e5, 0.0});
  ChainConfig cc;
  cc.chains = 2;
  cc.iterations = 1500;
  cc.warmup = 700;
  cc.seed = 8;
  const Draws draws = fit_maltiel_barrier(d, MaltielVariant::integrated, cc);
  CHECK(draws.has_param("m[2]"));
  CHECK_FALSE(draws.has_param("m[1]"));  // known size is fixed, not sampled
  const double m2 = draws.pooled("m[2]").mean();
  CHECK(m2 > 0.02);
  CHECK(m2 < 0.12);
  CHECK(draws.info.at("model") == "maltiel-integrated");
}

TEST_CASE("residual correlation fixtures") {
  // synthetic negbin-kind draws: fitted = exp(delta_i + rho_k)
  const int n = 400, K = 3;
  RngStream rng(67, 7);
  Draws draws;
  for (int i = 0; i < n; ++i) draws.param_names.push_back("delta[" + std::to_string(i + 1) + "]");
  for (int k = 0; k < K; ++k) draws.param_names.push_back("rho[" + std::to_string(k + 1) + "]");
  Eigen::MatrixXd row(1, n + K);
  for (int i = 0; i < n; ++i) row(0, i) = 0.0;
  for (int k = 0; k < K; ++k) row(0, n + k) = std::log(4.0);
  draws.values.push_back(row);

  // independent residuals: y ~ Poisson(4) iid
  Eigen::MatrixXd y(n, K);
  for (int i = 0; i < n; ++i)
    for (int k = 0; k < K; ++k) y(i, k) = static_cast<double>(rng.poisson(4.0));
  const Eigen::MatrixXd corr = residual_correlation(draws, y, ResidualKind::zheng_negbin);
  for (int a = 0; a < K; ++a)
    for (int b = 0; b < K; ++b) {
      if (a == b) CHECK(corr(a, b) == 1.0);
      else CHECK(std::abs(corr(a, b)) < 0.1);
    }

  // perfect linear dependence between residual columns
  Eigen::MatrixXd y2(n, K);
  for (int i = 0; i < n; ++i) {
    const double v = static_cast<double>(rng.poisson(4.0));
    y2(i, 0) = v;
    y2(i, 1) = v;           // identical counts, identical fitted: residuals equal
    y2(i, 2) = static_cast<double>(rng.poisson(4.0));
  }
  const Eigen::MatrixXd corr2 = residual_correlation(draws, y2, ResidualKind::zheng_negbin);
  CHECK(corr2(0, 1) == doctest::Approx(1.0).epsilon(1e-12));
}
