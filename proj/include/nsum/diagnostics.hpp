#pragma once

#include <Eigen/Dense>
#include <optional>
#include <string>
#include <vector>

#include "nsum/ard.hpp"
#include "nsum/correlated.hpp"
#include "nsum/posterior.hpp"
#include "nsum/scaling.hpp"

namespace nsum {

/**
 * Bayesian surrogate residuals: per cell and posterior draw, a jittered
 * uniform draw inside the Poisson CDF bracket at the observed count minus
 * the Monte Carlo estimate of E0[S|X] from replicate counts.  Under the true
 * model the pooled residuals approximate Uniform(-1/2, 1/2).
 */
struct SurrogateResiduals {
  int n = 0, K = 0;
  std::vector<long> draw_indices;  // pooled draw indices used
  Eigen::MatrixXd s_cond;          // jittered S at the observed counts
  Eigen::VectorXd e0;              // per-cell Monte Carlo E0[S|X]
  Eigen::MatrixXd R;               // s_cond - e0, (n*K) x draws, rows i*K + k

  std::vector<double> pooled() const;
};

SurrogateResiduals surrogate_residuals(const Draws& draws, const PreparedDesign& d,
                                       RngStream& rng, long max_draws = 200,
                                       PredictMode mode = PredictMode::in_sample);

// Pearson correlation between pooled residuals and a respondent covariate,
// one value per group.
Eigen::VectorXd surrogate_covariate_correlation(const SurrogateResiduals& sr,
                                                const Eigen::VectorXd& covariate);

void write_surrogate_csv(const SurrogateResiduals& sr, const std::string& path);

// ---------------------------------------------------------------------------
// Posterior predictive checks

struct PpcEntry {
  std::string stat;
  int group_a = 0, group_b = 0;  // 1-based; group_b set for pairwise stats
  double observed = 0;
  double rep_mean = 0, rep_q2_5 = 0, rep_q97_5 = 0;
  double p_value = 0;  // two-sided, ties counted half
  bool flagged = false;
};

struct PpcReport {
  std::string check;
  std::vector<PpcEntry> entries;
};

// Per group and value v: proportion of responses equal to v.
PpcReport ppc_pmf(const Eigen::MatrixXd& y, const PredictiveDraws& rep,
                  const std::vector<long>& values);

// Per group: mean/sd, or the conditionally-positive forms (population
// denominator n+); groups without a positive observation are flagged.
PpcReport ppc_moments(const Eigen::MatrixXd& y, const PredictiveDraws& rep, bool conditional);

// All pairwise Pearson correlations of the count columns.
PpcReport ppc_pairwise_corr(const Eigen::MatrixXd& y, const PredictiveDraws& rep);

void write_ppc_csv(const PpcReport& report, const std::string& path);

// ---------------------------------------------------------------------------
// Leave-one-out size validation

struct LooRow {
  std::string group;
  std::string method;
  double truth = 0, predicted = 0;
  double rel_error_pct = 0;  // 100 * (truth - predicted) / truth
};

// For each known group: rescale with the remaining known groups (no refit)
// and compare N e^{rho'} to the held-out known size.
std::vector<LooRow> loo_known_groups(const Draws& draws, const PreparedDesign& d,
                                     ScalingMethod method);

void write_loo_csv(const std::vector<LooRow>& rows, const std::string& path);

// ---------------------------------------------------------------------------
// Bias decomposition regression

struct BiasDecompositionConfig {
  Eigen::VectorXd nu, eta;  // Beta(mean nu_k, dispersion eta_k) prior on tau_k, per known group
  std::optional<double> fix_a, fix_b, fix_sigma;  // pin hyperparameters (tests, prior studies)
};

// Posterior-mean decomposition target: mean over draws of e^{rho'_k} e^{b_ik},
// known-group columns only.  Requires eps draws for the bias reconstruction.
Eigen::MatrixXd bias_decomposition_target(const Draws& fit, const ScaledDraws& scaled,
                                          const PreparedDesign& d, long max_draws = 0);

// Regression of the target on e^{r_k} tau_k q_ik with the Maltiel-style
// priors; sampled with the componentwise random-walk kernel.
Draws bias_decomposition_from_target(const Eigen::MatrixXd& bbar, const PreparedDesign& d,
                                     const BiasDecompositionConfig& cfg,
                                     const ChainConfig& chain);

Draws bias_decomposition(const Draws& fit, const ScaledDraws& scaled, const PreparedDesign& d,
                         const BiasDecompositionConfig& cfg, const ChainConfig& chain);

}  // namespace nsum
