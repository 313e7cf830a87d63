#pragma once

#include <Eigen/Dense>
#include <memory>
#include <string>
#include <vector>

#include "nsum/ard.hpp"
#include "nsum/posterior.hpp"
#include "nsum/stats.hpp"

namespace nsum {

/**
 * Priors and structural switches for the correlated count model.  The bias
 * convention controls how (mu, tau) derive from tau_N: `mean_one` picks
 * tau = sqrt(log(1 + tau_N^2)) so that E[e^b] = 1; `paper_literal` uses
 * tau = sqrt(1 + tau_N^2).  Both share mu = -log(1 + tau_N^2) / 2.
 */
struct CorrelatedPriorConfig {
  enum class SlopePrior { normal, cauchy };
  enum class RhoPrior { hierarchical, flat };
  enum class TauPrior { half_cauchy, gamma };
  enum class BiasConvention { mean_one, paper_literal };

  SlopePrior slope_prior = SlopePrior::normal;
  double slope_normal_variance = 100.0;
  double slope_cauchy_scale = 2.5;
  RhoPrior rho_prior = RhoPrior::hierarchical;
  double mu_rho_prior_variance = 100.0;
  double lkj_eta = 2.0;
  TauPrior tau_prior = TauPrior::half_cauchy;
  double tau_half_cauchy_scale = 2.5;
  double tau_gamma_shape = 0.01;
  double tau_gamma_rate = 0.01;
  double sigma_half_cauchy_scale = 2.5;
  BiasConvention bias_convention = BiasConvention::mean_one;
  bool identity_correlation = false;  // uncorrelated variant: fix Omega = I
};

/// One point of the model's parameter space on the natural scale.
struct CorrelatedParams {
  Eigen::VectorXd delta;        // n log-degree effects
  Eigen::VectorXd rho;          // K log-prevalence effects
  Eigen::VectorXd beta_global;  // global slopes
  Eigen::MatrixXd beta_group;   // K x (group covariates)
  Eigen::VectorXd alpha;        // K respect slopes, 0 where absent
  Eigen::MatrixXd eps;          // n x K expanded residuals
  Eigen::VectorXd tau_N;        // K bias scales (natural)
  CholeskyFactor L;             // correlation factor Omega^{1/2}
  double sigma_delta = 1.0;
  double mu_rho = 0.0;
  double sigma_rho = 1.0;
};

// (mu_k, tau_k) implied by tau_N under the chosen convention.
void bias_location_scale(const Eigen::VectorXd& tau_N,
                         CorrelatedPriorConfig::BiasConvention conv,
                         Eigen::VectorXd* mu, Eigen::VectorXd* tau);

// b_{ik} = mu_k + tau_k (L eps_i)_k.
Eigen::MatrixXd reconstruct_bias(const CorrelatedParams& p,
                                 CorrelatedPriorConfig::BiasConvention conv);

// Poisson log likelihood of the model at a natural-scale point.
double correlated_loglik(const CorrelatedParams& p, const PreparedDesign& d,
                         CorrelatedPriorConfig::BiasConvention conv);

/**
 * Unconstrained-space posterior for Eq.-style correlated counts:
 * y_ik ~ Poisson(exp(delta_i + rho_k + beta z_i + alpha_k x_ik + b_ik)) with
 * the parameter-expanded bias b_i = mu + diag(tau) L eps_i.  Positive scales
 * ride on the log scale and L on canonical partial correlations; Jacobians
 * are included in log_posterior so the samplers see a proper density.
 */
class CorrelatedModel {
 public:
  CorrelatedModel(const PreparedDesign& d, const CorrelatedPriorConfig& cfg);

  int dim() const { return dim_; }
  const PreparedDesign& design() const { return *design_; }
  const CorrelatedPriorConfig& config() const { return cfg_; }

  double log_posterior(const Eigen::VectorXd& u) const;
  Eigen::VectorXd grad_log_posterior(const Eigen::VectorXd& u) const;
  CorrelatedParams unpack(const Eigen::VectorXd& u) const;
  Eigen::VectorXd init_point() const;
  PosteriorTarget target() const;

  std::vector<std::string> report_names(bool store_eps, bool store_bias) const;
  Eigen::VectorXd report_row(const Eigen::VectorXd& u, bool store_eps, bool store_bias) const;

 private:
  struct Layout {
    int n = 0, K = 0, pg = 0, pk = 0, n_alpha = 0, n_ly = 0;
    int delta = 0, rho = 0, beta_g = 0, beta_grp = 0, alpha = 0, eps = 0;
    int ltau = 0, ly = 0, lsd = 0, mu_rho = 0, lsr = 0;
    bool hierarchical_rho = true;
    bool identity_L = false;
  };

  // value, and gradient when grad != nullptr (one shared forward pass)
  double eval_impl(const Eigen::VectorXd& u, Eigen::VectorXd* grad) const;
  double slope_prior_lpdf(double b) const;
  double slope_prior_grad(double b) const;

  const PreparedDesign* design_;
  CorrelatedPriorConfig cfg_;
  Layout lay_;
  int dim_ = 0;
  Eigen::MatrixXd zg_, zk_;          // global / group covariate blocks
  std::vector<int> alpha_groups_;    // groups carrying a respect slope
  double loglik_const_ = 0.0;        // -sum lgamma(y+1)
};

struct FitOptions {
  bool store_eps = true;
  bool store_bias = false;
};

Draws fit_correlated(const PreparedDesign& d, const CorrelatedPriorConfig& pc,
                     const ChainConfig& cc, const FitOptions& opts = {});

enum class PredictMode { in_sample, out_of_sample };
PredictMode parse_predict_mode(const std::string& s);

/**
 * Per-draw rate reconstruction from a correlated-model Draws object.
 * in_sample reuses the stored eps draws (requires store_eps at fit time);
 * out_of_sample redraws eps from the supplied rng before rebuilding the bias.
 */
class RateReconstructor {
 public:
  RateReconstructor(const Draws& draws, const PreparedDesign& d);
  ~RateReconstructor();
  RateReconstructor(RateReconstructor&&) noexcept;

  Eigen::MatrixXd rate_matrix(long pooled_index, PredictMode mode, RngStream* rng) const;
  // bias matrix b = mu + diag(tau) L eps for one draw (needs stored eps)
  Eigen::MatrixXd bias_matrix(long pooled_index) const;
  bool has_eps() const;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

// One-shot convenience wrapper around RateReconstructor.
Eigen::MatrixXd rate_matrix_for_draw(const Draws& draws, const PreparedDesign& d,
                                     long pooled_index, PredictMode mode, RngStream* rng);

struct PredictiveDraws {
  std::vector<long> pooled_indices;
  std::vector<Eigen::MatrixXd> y_rep;
};

// Replicated count arrays, Poisson-drawn from per-draw rates; at most
// max_draws draws are used (0 = all), thinned evenly and deterministically.
PredictiveDraws posterior_predict(const Draws& draws, const PreparedDesign& d,
                                  PredictMode mode, RngStream& rng, long max_draws = 0);

// Posterior-mean correlation matrix from the omega[i,j] draws.
Eigen::MatrixXd posterior_mean_omega(const Draws& draws, int K);

// Largest split R-hat over reported parameters (skipping name prefixes).
double max_rhat(const Draws& d, const std::vector<std::string>& skip_prefixes = {});

}  // namespace nsum
