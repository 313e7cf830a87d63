#pragma once

#include <Eigen/Dense>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "nsum/ard.hpp"
#include "nsum/posterior.hpp"

namespace nsum {

// ---------------------------------------------------------------------------
// Killworth two-stage MLE

struct KillworthFit {
  Eigen::VectorXd degrees;               // d-hat per respondent
  std::map<std::string, double> sizes;   // unknown group id -> N-hat
};

// Stage 1 closed form d_i = N * sum_k y_ik / sum_k N_k over the known groups.
double killworth_degree(const Eigen::VectorXd& y_known, const Eigen::VectorXd& known_sizes,
                        double total_population);

// Stage 2 closed form N_u = N * sum_i y_iu / sum_i d_i.
double killworth_size(const Eigen::VectorXd& y_u, const Eigen::VectorXd& degrees,
                      double total_population);

// Both stages over a prepared design; sizes estimated for every group.
KillworthFit killworth_fit(const PreparedDesign& d);

// ---------------------------------------------------------------------------
// Zheng et al. overdispersed models

enum class ZhengVariant { poisson, negbin };
ZhengVariant parse_zheng_variant(const std::string& s);

struct ZhengConfig {
  // flat prior on the gamma precision lambda_k, truncated for propriety
  double lambda_lo = 1e-4, lambda_hi = 1e4;
  double sigma_half_cauchy_scale = 2.5;
  double mu_rho_prior_variance = 100.0;
};

// Unconstrained HMC target (exposed for the gradient harness).
PosteriorTarget zheng_target(const PreparedDesign& d, ZhengVariant variant,
                             const ZhengConfig& cfg = {});

Draws fit_zheng(const PreparedDesign& d, ZhengVariant variant, const ChainConfig& cc,
                const ZhengConfig& cfg = {});

// ---------------------------------------------------------------------------
// Maltiel barrier-effects models

enum class MaltielVariant { integrated, sampled };
MaltielVariant parse_maltiel_variant(const std::string& s);

struct MaltielConfig {
  // groups with known size have q's Beta mean fixed at N_k/N; the others get
  // m_k sampled with prior proportional to 1/m_k
  double mu_lo = 3.0, mu_hi = 8.0;        // lognormal degree location, U(3,8)
  double sigma_lo = 0.25, sigma_hi = 2.0; // lognormal degree scale, U(1/4,2)
};

PosteriorTarget maltiel_target(const PreparedDesign& d, MaltielVariant variant,
                               const MaltielConfig& cfg = {});

Draws fit_maltiel_barrier(const PreparedDesign& d, MaltielVariant variant,
                          const ChainConfig& cc, const MaltielConfig& cfg = {});

// ---------------------------------------------------------------------------
// Residual correlation (sqrt(y) - sqrt(fitted), per model kind)

enum class ResidualKind { zheng_poisson, zheng_negbin, maltiel_integrated, maltiel_sampled };

// Mean over posterior draws of the sample correlation matrix of the residual
// matrices.  Constant residual columns yield NaN entries with a warning.
Eigen::MatrixXd residual_correlation(const Draws& draws, const Eigen::MatrixXd& y,
                                     ResidualKind kind, long max_draws = 200);

void write_residual_corr_csv(const Eigen::MatrixXd& corr, const std::string& path);

}  // namespace nsum
