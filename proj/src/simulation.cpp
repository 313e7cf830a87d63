#include "nsum/simulation.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

#include "nsum/stats.hpp"

namespace nsum {

Eigen::MatrixXd PaperDefaults::correlation_matrix() {
  Eigen::MatrixXd om(5, 5);
  om << 1, 0.9, 0.8, -0.05, 0,
      0.9, 1, 0.75, 0, -0.1,
      0.8, 0.75, 1, 0, 0,
      -0.05, 0, 0, 1, 0.85,
      0, -0.1, 0, 0.85, 1;
  return om;
}

Eigen::VectorXd PaperDefaults::tau() {
  Eigen::VectorXd t(5);
  t << 2, 1.05, 0.7, 1, 1.2;
  return t;
}

Eigen::VectorXd PaperDefaults::gamma_dispersion() {
  Eigen::VectorXd l(5);
  l << 0.5, 0.95, 1.5, 0.98, 0.82;
  return l;
}

Eigen::VectorXd PaperDefaults::beta_dispersion() {
  Eigen::VectorXd r(5);
  r << 0.02, 0.01, 0.005, 0.015, 0.018;
  return r;
}

Eigen::VectorXd PaperDefaults::sbm_proportions() {
  Eigen::VectorXd p(4);
  p << 0.5, 0.5, 0.25, 0.25;  // stated weights; normalized to a partition
  return p / p.sum();
}

Eigen::MatrixXd PaperDefaults::sbm_connectivity() {
  Eigen::MatrixXd p(4, 4);
  p << 0.2, 0.2, 0.05, 0.05,
      0.2, 0.2, 0.05, 0.05,
      0.05, 0.05, 0.5, 0.3,
      0.05, 0.05, 0.3, 0.5;
  return p;
}

Eigen::MatrixXd PaperDefaults::sbm_report_probability() {
  const double inf = std::numeric_limits<double>::infinity();
  Eigen::MatrixXd logits(4, 4);
  logits << inf, inf, -1, -1,
      inf, inf, -1, -1,
      inf, inf, 2, 2,
      inf, inf, 2, 2;
  Eigen::MatrixXd t(4, 4);
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 4; ++j)
      t(i, j) = std::isinf(logits(i, j)) ? 1.0 : 1.0 / (1.0 + std::exp(-logits(i, j)));
  return t;
}

namespace {

ArdDataset empty_dataset(int n, int K, double total_population) {
  ArdDataset d;
  d.total_population = total_population;
  d.y.resize(n, K);
  d.z.resize(n, 0);
  d.x = Eigen::MatrixXd::Zero(n, K);
  for (int k = 0; k < K; ++k) {
    GroupMeta g;
    g.id = "g" + std::to_string(k + 1);
    g.name = "group " + std::to_string(k + 1);
    d.groups.push_back(std::move(g));
  }
  d.respondent_ids.resize(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i)
    d.respondent_ids[static_cast<std::size_t>(i)] = "r" + std::to_string(i + 1);
  return d;
}

void attach_known_sizes(ArdDataset* d, const Eigen::VectorXd& prevalence) {
  for (int k = 0; k < d->num_groups(); ++k)
    d->groups[static_cast<std::size_t>(k)].known_size =
        prevalence(k) * d->total_population;
}

// The reference parameterizations can put exp(rho) above 1; sizes are kept
// as exp(rho) * N_requested and the dataset population is enlarged so that
// every known size stays below it.  Scaling is invariant to this choice.
void finalize_truth(SimResult* out, const Eigen::VectorXd& sizes, double requested_n) {
  double population = requested_n;
  const double max_size = sizes.maxCoeff();
  if (max_size >= 0.5 * population) population = 4.0 * max_size;
  out->truth.sizes = sizes;
  out->truth.total_population = population;
  out->truth.prevalence = sizes / population;
  out->data.total_population = population;
  attach_known_sizes(&out->data, out->truth.prevalence);
}

}  // namespace

SimResult sim_correlated(int n, int K, double sigma_delta, const Eigen::VectorXd& rho,
                         const Eigen::VectorXd& tau, const Eigen::MatrixXd& omega,
                         const std::optional<SimCovariates>& covariates, RngStream& rng,
                         double total_population) {
  if (rho.size() != K || tau.size() != K || omega.rows() != K || omega.cols() != K)
    throw std::invalid_argument("sim_correlated: dimension mismatch");
  if ((tau.array() < 0.0).any()) throw std::invalid_argument("sim_correlated: tau must be >= 0");
  const CholeskyFactor Lom = cholesky(omega);

  SimResult out;
  out.data = empty_dataset(n, K, total_population);
  const int p = covariates ? static_cast<int>(covariates->beta_group.cols()) : 0;
  if (covariates && covariates->beta_group.rows() != K)
    throw std::invalid_argument("sim_correlated: beta_group must have K rows");
  if (p > 0) {
    out.data.z.resize(n, p);
    for (int j = 0; j < p; ++j) out.data.z_names.push_back("z" + std::to_string(j + 1));
  }

  // mean-one bias: mu_k = -tau_k^2 / 2 so that E[e^{b_ik}] = 1 per group
  const Eigen::VectorXd mu_b = -0.5 * tau.array().square();
  out.truth.degrees.resize(n);
  for (int i = 0; i < n; ++i) {
    const double delta = sigma_delta * rng.normal();
    out.truth.degrees(i) = std::exp(delta);
    Eigen::VectorXd eps(K);
    for (int k = 0; k < K; ++k) eps(k) = rng.normal();
    const Eigen::VectorXd b = mu_b + tau.asDiagonal() * (Lom.lower * eps);
    double zterm = 0.0;
    Eigen::VectorXd zrow;
    if (p > 0) {
      zrow.resize(p);
      for (int j = 0; j < p; ++j) zrow(j) = rng.normal();
      out.data.z.row(i) = zrow.transpose();
    }
    for (int k = 0; k < K; ++k) {
      if (p > 0) zterm = covariates->beta_group.row(k).dot(zrow);
      const double lambda = std::exp(delta + rho(k) + zterm + b(k));
      out.data.y(i, k) = static_cast<double>(rng.poisson(lambda));
    }
  }
  finalize_truth(&out, rho.array().exp() * total_population, total_population);
  return out;
}

SimResult sim_missing_covariate(int n, RngStream& rng, double total_population,
                                const Eigen::VectorXd* mu_x_in,
                                const Eigen::MatrixXd* sigma_x_in) {
  const int K = 5;
  Eigen::VectorXd mu_x(K);
  mu_x << 0, 0, 0, -2, -2;
  if (mu_x_in) mu_x = *mu_x_in;
  const Eigen::MatrixXd sigma_x =
      sigma_x_in ? *sigma_x_in : PaperDefaults::correlation_matrix();
  const CholeskyFactor Lx = cholesky(sigma_x);

  const Eigen::VectorXd tau = PaperDefaults::tau();
  const Eigen::VectorXd mu_b = -0.5 * tau.array().square();
  const double rho = PaperDefaults::log_prevalence();
  const double sigma_delta = PaperDefaults::sigma_delta();

  SimResult out;
  out.data = empty_dataset(n, K, total_population);
  out.truth.latent_x.resize(n, K);
  out.truth.degrees.resize(n);
  for (int i = 0; i < n; ++i) {
    const double delta = sigma_delta * rng.normal();
    out.truth.degrees(i) = std::exp(delta);
    Eigen::VectorXd ex(K);
    for (int k = 0; k < K; ++k) ex(k) = rng.normal();
    const Eigen::VectorXd x = mu_x + Lx.lower * ex;  // withheld covariate row
    out.truth.latent_x.row(i) = x.transpose();
    for (int k = 0; k < K; ++k) {
      const double b = mu_b(k) + tau(k) * rng.normal();  // Omega = I
      const double lambda = std::exp(delta + rho + x(k) + b);  // alpha_k = 1
      out.data.y(i, k) = static_cast<double>(rng.poisson(lambda));
    }
  }
  finalize_truth(&out, Eigen::VectorXd::Constant(K, std::exp(rho) * total_population),
                 total_population);
  return out;
}

SimResult sim_sbm_transmission(int n, const Eigen::VectorXd& proportions,
                               const Eigen::MatrixXd& P, const Eigen::MatrixXd& T,
                               RngStream& rng) {
  const int B = static_cast<int>(proportions.size());
  if (P.rows() != B || P.cols() != B || T.rows() != B || T.cols() != B)
    throw std::invalid_argument("sim_sbm_transmission: dimension mismatch");
  if (std::abs(proportions.sum() - 1.0) > 1e-9)
    throw std::invalid_argument("sim_sbm_transmission: proportions must sum to 1");
  if ((proportions.array() <= 0.0).any())
    throw std::invalid_argument("sim_sbm_transmission: proportions must be positive");
  for (int a = 0; a < B; ++a)
    for (int b = 0; b < B; ++b) {
      if (P(a, b) < 0.0 || P(a, b) > 1.0 || T(a, b) < 0.0 || T(a, b) > 1.0)
        throw std::invalid_argument("sim_sbm_transmission: probabilities must lie in [0,1]");
      if (std::abs(P(a, b) - P(b, a)) > 1e-12)
        throw std::invalid_argument("sim_sbm_transmission: P must be symmetric");
    }

  // block assignment: largest-remainder counts, then contiguous blocks
  std::vector<int> block(static_cast<std::size_t>(n));
  {
    std::vector<int> counts(static_cast<std::size_t>(B));
    int assigned = 0;
    for (int b = 0; b < B; ++b) {
      counts[static_cast<std::size_t>(b)] =
          static_cast<int>(std::floor(proportions(b) * n));
      assigned += counts[static_cast<std::size_t>(b)];
    }
    int b = 0;
    while (assigned < n) {
      ++counts[static_cast<std::size_t>(b % B)];
      ++assigned;
      ++b;
    }
    int pos = 0;
    for (int blk = 0; blk < B; ++blk)
      for (int c = 0; c < counts[static_cast<std::size_t>(blk)]; ++c)
        block[static_cast<std::size_t>(pos++)] = blk;
  }

  SimResult out;
  out.data = empty_dataset(n, B, 0.0);
  out.data.total_population = static_cast<double>(n);
  out.data.y.setZero();
  out.truth.degrees = Eigen::VectorXd::Zero(n);

  // undirected simple graph; each link reported independently by both ends
  for (int u = 0; u < n; ++u) {
    for (int v = u + 1; v < n; ++v) {
      const int bu = block[static_cast<std::size_t>(u)];
      const int bv = block[static_cast<std::size_t>(v)];
      if (rng.uniform() >= P(bu, bv)) continue;
      out.truth.degrees(u) += 1.0;
      out.truth.degrees(v) += 1.0;
      if (rng.uniform() < T(bu, bv)) out.data.y(u, bv) += 1.0;
      if (rng.uniform() < T(bv, bu)) out.data.y(v, bu) += 1.0;
    }
  }

  Eigen::VectorXd sizes = Eigen::VectorXd::Zero(B);
  for (int i = 0; i < n; ++i) sizes(block[static_cast<std::size_t>(i)]) += 1.0;
  out.truth.sizes = sizes;
  out.truth.prevalence = sizes / static_cast<double>(n);
  out.truth.total_population = static_cast<double>(n);
  attach_known_sizes(&out.data, out.truth.prevalence);
  return out;
}

SimResult sim_copula_effects(CopulaEffectKind kind, const Eigen::VectorXd& dispersion,
                             const Eigen::MatrixXd& omega, int n, RngStream& rng,
                             double total_population, double mean_prevalence,
                             bool lognormal_degrees) {
  const int K = static_cast<int>(dispersion.size());
  if (omega.rows() != K || omega.cols() != K)
    throw std::invalid_argument("sim_copula_effects: dimension mismatch");

  std::vector<Marginal> marginals;
  for (int k = 0; k < K; ++k) {
    if (kind == CopulaEffectKind::gamma) {
      marginals.push_back(Marginal::gamma(dispersion(k), dispersion(k)));
    } else {
      double a, b;
      density::beta_shapes_from_mean_disp(mean_prevalence, dispersion(k), &a, &b);
      marginals.push_back(Marginal::beta(a, b));
    }
  }
  const Eigen::MatrixXd effects = copula_correlated_sample(omega, marginals, n, rng);

  SimResult out;
  out.data = empty_dataset(n, K, total_population);
  out.truth.degrees.resize(n);
  for (int i = 0; i < n; ++i) {
    const double z = 5.0 + 0.7 * rng.normal();
    if (kind == CopulaEffectKind::gamma) {
      const double degree = std::exp(z);
      out.truth.degrees(i) = degree;
      for (int k = 0; k < K; ++k) {
        const double lambda = degree * mean_prevalence * effects(i, k);
        out.data.y(i, k) = static_cast<double>(rng.poisson(lambda));
      }
    } else {
      const long degree =
          lognormal_degrees ? static_cast<long>(std::llround(std::exp(z)))
                            : std::max<long>(0, static_cast<long>(std::llround(z)));
      out.truth.degrees(i) = static_cast<double>(degree);
      for (int k = 0; k < K; ++k)
        out.data.y(i, k) = static_cast<double>(rng.binomial(degree, effects(i, k)));
    }
  }
  finalize_truth(&out, Eigen::VectorXd::Constant(K, mean_prevalence * total_population),
                 total_population);
  return out;
}

}  // namespace nsum
