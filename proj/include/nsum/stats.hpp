#pragma once

#include <Eigen/Dense>
#include <vector>

#include "nsum/rng.hpp"

namespace nsum {

/// Lower-triangular Cholesky factor of a symmetric positive-definite matrix.
struct CholeskyFactor {
  Eigen::MatrixXd lower;

  int dim() const { return static_cast<int>(lower.rows()); }
  static CholeskyFactor identity(int k) {
    return CholeskyFactor{Eigen::MatrixXd::Identity(k, k)};
  }
  // true when diag(L L^T) = 1 within tol, i.e. L factors a correlation matrix
  bool is_correlation_factor(double tol = 1e-10) const;
};

// Dense Cholesky factorization.  Throws std::invalid_argument when the input
// is asymmetric (tolerance 1e-10) and std::runtime_error naming the failing
// pivot (1-based) when a pivot drops to <= 1e-12.
CholeskyFactor cholesky(const Eigen::MatrixXd& m);

namespace density {

double normal_lpdf(double x, double mu, double sigma);
double lognormal_lpdf(double x, double mu, double sigma);
double poisson_lpmf(long y, double lambda);
double gamma_lpdf(double x, double shape, double rate);
double beta_lpdf(double x, double a, double b);
double beta_binomial_lpmf(long y, long n, double a, double b);
double half_cauchy_lpdf(double x, double scale);
double binomial_lpmf(long y, long n, double p);

// Shape parameters of Beta(mean m, dispersion rho): variance = m(1-m)rho.
void beta_shapes_from_mean_disp(double m, double rho, double* a, double* b);

}  // namespace density

// P(Y <= y) for Y ~ Poisson(lambda); y < 0 gives 0.  Throws for lambda < 0.
double poisson_cdf(long y, double lambda);

// Standard normal CDF and its inverse.
double normal_cdf(double z);
double normal_quantile(double p);

double gamma_quantile(double p, double shape, double rate);
double beta_quantile(double p, double a, double b);
double digamma(double x);

// Log density (up to the normalizing constant) of the LKJ distribution on
// Cholesky factors of correlation matrices: sum_{k>=2} (K-k+2eta-2) log L_kk.
double lkj_cholesky_logdensity(const CholeskyFactor& L, double eta);

// mu + L eps with eps iid standard normal drawn from rng.
Eigen::VectorXd sample_mvn(const Eigen::VectorXd& mu, const CholeskyFactor& L,
                           RngStream& rng);

/// Marginal distribution for the Gaussian copula sampler.
struct Marginal {
  enum class Kind { normal, lognormal, gamma, beta };
  Kind kind;
  double p1 = 0.0;  // mu / mu / shape / a
  double p2 = 1.0;  // sigma / sigma / rate / b

  static Marginal normal(double mu, double sigma) { return {Kind::normal, mu, sigma}; }
  static Marginal lognormal(double mu, double sigma) { return {Kind::lognormal, mu, sigma}; }
  static Marginal gamma(double shape, double rate) { return {Kind::gamma, shape, rate}; }
  static Marginal beta(double a, double b) { return {Kind::beta, a, b}; }

  double quantile(double u) const;
};

// n x K sample whose latent Gaussian correlation is omega and whose column j
// marginally follows marginals[j] (inverse-CDF transform of Phi(z)).
Eigen::MatrixXd copula_correlated_sample(const Eigen::MatrixXd& omega,
                                         const std::vector<Marginal>& marginals,
                                         int n, RngStream& rng);

// Leaf order from average-linkage agglomerative clustering on 1 - corr.
// Deterministic: ties broken by smallest index pair, merged cluster keeps the
// order (left block first, where "left" holds the smaller minimum index).
std::vector<int> hierarchical_cluster_order(const Eigen::MatrixXd& corr);

// Two-sided Kolmogorov-Smirnov distance between a sample and a reference CDF
// evaluated through `cdf`, plus the asymptotic p-value approximation.
double ks_statistic(std::vector<double> sample, double (*cdf)(double));
double ks_pvalue(double d, std::size_t n);

double pearson_correlation(const Eigen::VectorXd& a, const Eigen::VectorXd& b);

}  // namespace nsum
