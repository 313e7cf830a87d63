#include <doctest.h>

#include <cmath>

#include "nsum/rng.hpp"
#include "nsum/scaling.hpp"

using namespace nsum;

namespace {

PreparedDesign design_with_prevalences(const std::vector<double>& prevalence, double N = 1e6) {
  const int K = static_cast<int>(prevalence.size());
  ArdDataset d;
  d.total_population = N;
  d.y = Eigen::MatrixXd::Zero(2, K);
  d.z.resize(2, 0);
  d.x = Eigen::MatrixXd::Zero(2, K);
  for (int k = 0; k < K; ++k) {
    GroupMeta g;
    g.id = "g" + std::to_string(k + 1);
    g.name = g.id;
    if (prevalence[static_cast<std::size_t>(k)] > 0)
      g.known_size = prevalence[static_cast<std::size_t>(k)] * N;
    d.groups.push_back(g);
  }
  return prepare_design(d);
}

// draws with fixed rho values (and optional omega rows), one chain
Draws draws_with_rho(const std::vector<std::vector<double>>& rho_rows,
                     const std::vector<std::vector<double>>& omega_rows = {}) {
  Draws d;
  const int K = static_cast<int>(rho_rows.front().size());
  for (int k = 0; k < K; ++k) d.param_names.push_back("rho[" + std::to_string(k + 1) + "]");
  int n_omega = 0;
  if (!omega_rows.empty()) {
    n_omega = static_cast<int>(omega_rows.front().size());
    int pos = 0;
    for (int i = 1; i < K; ++i)
      for (int j = 0; j < i; ++j) {
        d.param_names.push_back("omega[" + std::to_string(i + 1) + "," +
                                std::to_string(j + 1) + "]");
        ++pos;
      }
    REQUIRE(pos == n_omega);
  }
  Eigen::MatrixXd m(static_cast<long>(rho_rows.size()), K + n_omega);
  for (std::size_t r = 0; r < rho_rows.size(); ++r) {
    for (int k = 0; k < K; ++k) m(static_cast<long>(r), k) = rho_rows[r][static_cast<std::size_t>(k)];
    for (int j = 0; j < n_omega; ++j)
      m(static_cast<long>(r), K + j) = omega_rows[r][static_cast<std::size_t>(j)];
  }
  d.values.push_back(std::move(m));
  return d;
}

}  // namespace

TEST_CASE("scale_single hand cases") {
  const PreparedDesign d = design_with_prevalences({0.1, 0.0});
  // exp(rho) already equals the prevalence: no-op
  Draws dr = draws_with_rho({{std::log(0.1), std::log(0.02)}});
  ScaledDraws s = scale_single(dr, d, "g1");
  CHECK(s.C(0, 0) == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(s.rho_scaled(0, 1) == doctest::Approx(std::log(0.02)));
  CHECK(s.sizes(0, 0) == doctest::Approx(0.1 * 1e6));

  // exp(rho) twice the prevalence: everything halves
  Draws dr2 = draws_with_rho({{std::log(0.2), std::log(0.02)}});
  ScaledDraws s2 = scale_single(dr2, d, "g1");
  CHECK(s2.C(0, 0) == doctest::Approx(std::log(2.0)));
  CHECK(s2.sizes(0, 1) == doctest::Approx(0.01 * 1e6));

  // scaling by an overestimated group underestimates the rest
  CHECK(s2.sizes(0, 1) < std::exp(std::log(0.02)) * 1e6);
  CHECK_THROWS_AS(scale_single(dr2, d, "g2"), std::invalid_argument);  // unknown size
}

TEST_CASE("scale_paired hand fixture") {
  // G1 ratio 2, B2 ratio 4, G2 ratio 1 -> C = log 2 + 0.5 log 4 = 2 log 2
  const PreparedDesign d = design_with_prevalences({0.1, 0.05, 0.2});
  Draws dr = draws_with_rho({{std::log(0.2), std::log(0.05), std::log(0.8)}});
  const ScaledDraws s = scale_paired(dr, d, {"g1"}, {"g2"}, {"g3"});
  CHECK(s.C(0, 0) == doctest::Approx(2.0 * std::log(2.0)).epsilon(1e-12));
  // deterministic per draw: same draw -> same constant
  Draws dr2 = draws_with_rho({{std::log(0.2), std::log(0.05), std::log(0.8)},
                              {std::log(0.2), std::log(0.05), std::log(0.8)}});
  const ScaledDraws s2 = scale_paired(dr2, d, {"g1"}, {"g2"}, {"g3"});
  CHECK(s2.C(0, 0) == s2.C(1, 0));
  CHECK_THROWS_AS(scale_paired(dr, d, {}, {"g2"}, {"g3"}), std::invalid_argument);

  // equal G2 and B2 ratios reduce to pooled-G1 scaling
  const ScaledDraws s3 = scale_paired(dr, d, {"g1"}, {"g2"}, {"g2"});
  CHECK(s3.C(0, 0) == doctest::Approx(std::log(2.0)));
}

TEST_CASE("scale_all_raw hand cases") {
  const PreparedDesign d = design_with_prevalences({0.1, 0.2});
  Draws dr = draws_with_rho({{std::log(0.2), std::log(0.4)}});
  const ScaledDraws s = scale_all_raw(dr, d);
  CHECK(s.C(0, 0) == doctest::Approx(std::log(2.0)).epsilon(1e-12));
  // single known group: identical to scale_single
  std::vector<int> only{0};
  const ScaledDraws s1 = scale_all_raw(dr, d, &only);
  const ScaledDraws s2 = scale_single(dr, d, "g1");
  CHECK(s1.C(0, 0) == doctest::Approx(s2.C(0, 0)).epsilon(1e-14));
  // exact draws: C = 0
  Draws exact = draws_with_rho({{std::log(0.1), std::log(0.2)}});
  CHECK(scale_all_raw(exact, d).C(0, 0) == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("scale_all_standardized hand cases and invariant") {
  const PreparedDesign d = design_with_prevalences({0.1, 0.2});
  Draws dr = draws_with_rho({{std::log(0.2), std::log(0.2)}});
  const ScaledDraws s = scale_all_standardized(dr, d);
  CHECK(s.C(0, 0) == doctest::Approx(std::log(1.5)).epsilon(1e-12));

  // all ratios equal r: C = log r
  Draws eq = draws_with_rho({{std::log(0.3), std::log(0.6)}});
  CHECK(scale_all_standardized(eq, d).C(0, 0) == doctest::Approx(std::log(3.0)).epsilon(1e-12));

  // post-scaling invariant: per-draw mean ratio over known groups is 1
  RngStream rng(5, 5);
  std::vector<std::vector<double>> rows;
  for (int r = 0; r < 50; ++r) rows.push_back({rng.normal(), rng.normal()});
  Draws random_draws = draws_with_rho(rows);
  const ScaledDraws sr = scale_all_standardized(random_draws, d);
  for (long m = 0; m < sr.rho_scaled.rows(); ++m) {
    const double ratio = 0.5 * (std::exp(sr.rho_scaled(m, 0)) / 0.1 +
                                std::exp(sr.rho_scaled(m, 1)) / 0.2);
    CHECK(ratio == doctest::Approx(1.0).epsilon(1e-10));
  }
}

TEST_CASE("scale_correlated follows the weighted procedure") {
  // hand trace: prevalences (0.1, 0.2), exp(rho) = (0.2, 0.4, 0.05),
  // target group 3 with correlations (0.8, -0.1) to the known groups
  const PreparedDesign d = design_with_prevalences({0.1, 0.2, 0.0});
  // omega lower triangle order: (2,1), (3,1), (3,2)
  Draws dr = draws_with_rho({{std::log(0.2), std::log(0.4), std::log(0.05)}},
                            {{0.5, 0.8, -0.1}});
  const ScaledDraws s = scale_correlated(dr, d);
  // weights for group 3: (0.8, 0) -> rescaled to (2, 0); C = log 2
  CHECK(s.C(0, 2) == doctest::Approx(std::log(2.0)).epsilon(1e-12));
  CHECK(s.sizes(0, 2) == doctest::Approx(0.025 * 1e6).epsilon(1e-10));

  // no omega draws: the procedure is not possible
  Draws plain = draws_with_rho({{0.0, 0.0, 0.0}});
  CHECK_THROWS_WITH_AS(scale_correlated(plain, d), "no_correlation_draws",
                       std::invalid_argument);
}

TEST_CASE("scale_correlated equals standardized scaling under uniform correlations") {
  // group 3 is unknown; its correlations to the known groups are all equal,
  // so the weights reduce to equal weights and the constant matches the
  // standardized one draw for draw
  const PreparedDesign d = design_with_prevalences({0.1, 0.2, 0.0});
  RngStream rng(6, 6);
  std::vector<std::vector<double>> rho_rows, omega_rows;
  for (int r = 0; r < 20; ++r) {
    rho_rows.push_back({rng.normal(), rng.normal(), rng.normal()});
    omega_rows.push_back({0.5, 0.5, 0.5});  // fully uniform correlation
  }
  Draws dr = draws_with_rho(rho_rows, omega_rows);
  const ScaledDraws corr = scale_correlated(dr, d);
  const ScaledDraws std = scale_all_standardized(dr, d);
  for (long m = 0; m < corr.rho_scaled.rows(); ++m)
    CHECK(corr.rho_scaled(m, 2) == doctest::Approx(std.rho_scaled(m, 2)).epsilon(1e-12));
  // for a known target its self-weight is zeroed, leaving equal weights over
  // the other known groups
  for (long m = 0; m < corr.rho_scaled.rows(); ++m) {
    const double expected =
        std::log(std::exp(rho_rows[static_cast<std::size_t>(m)][1]) / 0.2);
    CHECK(corr.C(m, 0) == doctest::Approx(expected).epsilon(1e-12));
  }
}

TEST_CASE("scale_correlated falls back to equal weights when every weight is zero") {
  const PreparedDesign d = design_with_prevalences({0.1, 0.2, 0.0});
  Draws dr = draws_with_rho({{std::log(0.2), std::log(0.8), std::log(0.05)}},
                            {{0.3, -0.5, -0.9}});
  const ScaledDraws s = scale_correlated(dr, d);
  const ScaledDraws std = scale_all_standardized(dr, d);
  CHECK(s.C(0, 2) == doctest::Approx(std.C(0, 0)).epsilon(1e-12));
}

TEST_CASE("scaling methods only shift: contrasts are invariant") {
  const PreparedDesign d = design_with_prevalences({0.1, 0.2, 0.05});
  RngStream rng(7, 7);
  std::vector<std::vector<double>> rho_rows, omega_rows;
  for (int r = 0; r < 40; ++r) {
    rho_rows.push_back({rng.normal(), rng.normal(), rng.normal()});
    omega_rows.push_back({0.4 * rng.normal(), 0.4 * rng.normal(), 0.4 * rng.normal()});
  }
  Draws dr = draws_with_rho(rho_rows, omega_rows);
  const ScaledDraws a = scale_all_standardized(dr, d);
  const ScaledDraws b = scale_all_raw(dr, d);
  for (long m = 0; m < a.rho_scaled.rows(); ++m) {
    const double ca = a.rho_scaled(m, 0) - a.rho_scaled(m, 1);
    const double cb = b.rho_scaled(m, 0) - b.rho_scaled(m, 1);
    CHECK(ca == doctest::Approx(cb).epsilon(1e-12));
  }
}

TEST_CASE("apply_degree_shift keeps the rate products invariant") {
  Draws dr;
  dr.param_names = {"delta[1]", "delta[2]", "rho[1]"};
  Eigen::MatrixXd m(2, 3);
  m << 0.5, -0.3, std::log(0.2), 0.1, 0.2, std::log(0.4);
  dr.values.push_back(m);

  Eigen::VectorXd c(2);
  c << std::log(2.0), std::log(3.0);
  const Draws shifted = apply_degree_shift(dr, c);
  for (long it = 0; it < 2; ++it) {
    for (int i = 0; i < 2; ++i) {
      const double before = std::exp(dr.values[0](it, i) + dr.values[0](it, 2));
      const double after = std::exp(shifted.values[0](it, i) + (dr.values[0](it, 2) - c(it)));
      CHECK(before == doctest::Approx(after).epsilon(1e-12));
    }
  }
  // zero constant: no-op
  const Draws same = apply_degree_shift(dr, Eigen::VectorXd::Zero(2));
  CHECK(same.values[0] == dr.values[0]);
}

TEST_CASE("size summaries round to the nearest hundred for display") {
  const PreparedDesign d = design_with_prevalences({0.1});
  Draws dr = draws_with_rho({{std::log(0.10007)}, {std::log(0.10009)}});
  const ScaledDraws s = scale_all_standardized(dr, d);
  const auto rows = summarize_sizes(s, d);
  REQUIRE(rows.size() == 1);
  CHECK(rows[0].mean_rounded == doctest::Approx(100000.0));
  CHECK(std::fmod(rows[0].mean_rounded, 100.0) == 0.0);
}
