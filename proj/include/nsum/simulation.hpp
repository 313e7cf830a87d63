#pragma once

#include <Eigen/Dense>
#include <optional>
#include <string>
#include <vector>

#include "nsum/ard.hpp"
#include "nsum/rng.hpp"

namespace nsum {

/// Ground truth emitted by every generator, for scoring.
struct SimTruth {
  Eigen::VectorXd prevalence;       // N_k / N per group
  Eigen::VectorXd sizes;            // N_k per group
  double total_population = 0.0;
  Eigen::VectorXd degrees;          // true degrees where meaningful (else empty)
  Eigen::MatrixXd latent_x;         // withheld covariate block (missing-covariate kind)
};

struct SimResult {
  ArdDataset data;
  SimTruth truth;
};

// Reference parameter blocks used across the simulation studies.
struct PaperDefaults {
  static Eigen::MatrixXd correlation_matrix();        // the 5x5 two-block matrix
  static Eigen::VectorXd tau();                       // (2, 1.05, 0.7, 1, 1.2)
  static double sigma_delta() { return 0.7; }
  static double log_prevalence() { return std::log(2.5); }
  static Eigen::VectorXd gamma_dispersion();          // (0.5, 0.95, 1.5, 0.98, 0.82)
  static Eigen::VectorXd beta_dispersion();           // (0.02, 0.01, 0.005, 0.015, 0.018)
  static Eigen::VectorXd sbm_proportions();           // (0.5,0.5,0.25,0.25) normalized
  static Eigen::MatrixXd sbm_connectivity();          // P
  static Eigen::MatrixXd sbm_report_probability();    // inv-logit applied to T logits
};

/// Optional covariate block for sim_correlated.
struct SimCovariates {
  Eigen::MatrixXd beta_group;  // K x p group-specific slopes
  // covariate values are drawn iid standard normal and returned in the dataset
};

// Counts from the correlated model: delta_i ~ N(0, sigma_delta^2),
// b_i ~ MVN(mu, diag(tau) Omega diag(tau)) with mu = -tau^2/2 so that
// E[e^b] = 1, y ~ Poisson(exp(delta + rho + beta z + b)).  Known sizes are
// attached to every group (prevalence e^{rho_k}), total population `N`.
SimResult sim_correlated(int n, int K, double sigma_delta, const Eigen::VectorXd& rho,
                         const Eigen::VectorXd& tau, const Eigen::MatrixXd& omega,
                         const std::optional<SimCovariates>& covariates, RngStream& rng,
                         double total_population = 1e6);

// Missing-covariate transmission scenario: base correlated data with
// Omega = I plus a withheld respondent-group covariate X with rows
// ~ MVN(mu_x, Sigma_x), alpha = 1 per column.  X is returned in the truth
// block, not the dataset.
SimResult sim_missing_covariate(int n, RngStream& rng, double total_population = 1e6,
                                const Eigen::VectorXd* mu_x = nullptr,
                                const Eigen::MatrixXd* sigma_x = nullptr);

// Stochastic block model with transmission error: undirected graph with
// block probabilities P, reports thinned by the reporter-block-by-target
// column of T.  Groups are the blocks; truth sizes are the block counts.
SimResult sim_sbm_transmission(int n, const Eigen::VectorXd& proportions,
                               const Eigen::MatrixXd& P, const Eigen::MatrixXd& T,
                               RngStream& rng);

enum class CopulaEffectKind { gamma, beta };

// Supplementary-study generators with copula-correlated random effects.
// gamma kind: y ~ Poisson(exp(delta_i + rho_k) gamma_ik), gamma_ik marginally
// Gamma(lambda_k, lambda_k); beta kind: y ~ Binom(d_i, q_ik) with q_ik
// marginally Beta(mean 0.015, dispersion rho_k) and d_i = round(exp(N(5,0.7^2)))
// (log-scale degree reading; set lognormal_degrees=false for the literal one).
SimResult sim_copula_effects(CopulaEffectKind kind, const Eigen::VectorXd& dispersion,
                             const Eigen::MatrixXd& omega, int n, RngStream& rng,
                             double total_population = 1e6, double mean_prevalence = 0.015,
                             bool lognormal_degrees = true);

}  // namespace nsum
