// Independent naive evaluator of the correlated model's unconstrained log
// posterior.  Everything is recomputed from scratch with plain loops: the
// Cholesky-correlation transform Jacobian is obtained numerically (finite
// differences + LU determinant) rather than analytically, so this file
// shares no derivation with the library implementation it checks.
#pragma once

#include <Eigen/Dense>
#include <Eigen/LU>
#include <cmath>

#include "nsum/ard.hpp"
#include "nsum/correlated.hpp"

namespace naive {

struct Unpacked {
  Eigen::VectorXd delta, rho, beta_g;
  Eigen::MatrixXd beta_grp, eps;
  Eigen::VectorXd alpha_vals;  // per respect group, in group order
  Eigen::VectorXd ltau, ly;
  double lsd = 0, mu_rho = 0, lsr = 0;
};

// layout contract: delta, rho, beta_g, beta_grp (row-major), alpha (respect
// groups), eps (row-major), log tau_N, L coords (row-major lower), log
// sigma_delta, [mu_rho, log sigma_rho]
inline Unpacked unpack(const nsum::PreparedDesign& d, const nsum::CorrelatedPriorConfig& cfg,
                       const Eigen::VectorXd& u) {
  const int n = d.n(), K = d.num_groups();
  const int pg = static_cast<int>(d.global_cov_idx.size());
  const int pk = static_cast<int>(d.group_cov_idx.size());
  int n_alpha = 0;
  for (int k = 0; k < K; ++k)
    if (d.has_respect[static_cast<std::size_t>(k)]) ++n_alpha;
  const int n_ly = cfg.identity_correlation ? 0 : K * (K - 1) / 2;

  Unpacked p;
  int off = 0;
  p.delta = u.segment(off, n);
  off += n;
  p.rho = u.segment(off, K);
  off += K;
  p.beta_g = u.segment(off, pg);
  off += pg;
  p.beta_grp.resize(K, pk);
  for (int k = 0; k < K; ++k)
    for (int j = 0; j < pk; ++j) p.beta_grp(k, j) = u(off + k * pk + j);
  off += K * pk;
  p.alpha_vals = u.segment(off, n_alpha);
  off += n_alpha;
  p.eps.resize(n, K);
  for (int i = 0; i < n; ++i)
    for (int k = 0; k < K; ++k) p.eps(i, k) = u(off + i * K + k);
  off += n * K;
  p.ltau = u.segment(off, K);
  off += K;
  p.ly = u.segment(off, n_ly);
  off += n_ly;
  p.lsd = u(off++);
  if (cfg.rho_prior == nsum::CorrelatedPriorConfig::RhoPrior::hierarchical) {
    p.mu_rho = u(off++);
    p.lsr = u(off++);
  }
  return p;
}

// free lower-triangular entries of L as a function of the y coordinates
inline Eigen::VectorXd lower_entries_from_y(const Eigen::VectorXd& y, int K) {
  Eigen::MatrixXd L = Eigen::MatrixXd::Identity(K, K);
  int pos = 0;
  for (int i = 1; i < K; ++i) {
    double s = 0.0;
    for (int j = 0; j < i; ++j) {
      const double z = std::tanh(y(pos++));
      L(i, j) = z * std::sqrt(1.0 - s);
      s += L(i, j) * L(i, j);
    }
    L(i, i) = std::sqrt(1.0 - s);
  }
  Eigen::VectorXd out(K * (K - 1) / 2);
  pos = 0;
  for (int i = 1; i < K; ++i)
    for (int j = 0; j < i; ++j) out(pos++) = L(i, j);
  return out;
}

inline Eigen::MatrixXd build_L(const Eigen::VectorXd& y, int K) {
  Eigen::MatrixXd L = Eigen::MatrixXd::Identity(K, K);
  int pos = 0;
  for (int i = 1; i < K; ++i) {
    double s = 0.0;
    for (int j = 0; j < i; ++j) {
      const double z = std::tanh(y(pos++));
      L(i, j) = z * std::sqrt(1.0 - s);
      s += L(i, j) * L(i, j);
    }
    L(i, i) = std::sqrt(1.0 - s);
  }
  return L;
}

// numeric log |det dL/dy| via central differences
inline double numeric_L_logjac(const Eigen::VectorXd& y, int K) {
  const int m = static_cast<int>(y.size());
  if (m == 0) return 0.0;
  Eigen::MatrixXd J(m, m);
  const double h = 1e-5;
  for (int j = 0; j < m; ++j) {
    Eigen::VectorXd yp = y, ym = y;
    yp(j) += h;
    ym(j) -= h;
    J.col(j) = (lower_entries_from_y(yp, K) - lower_entries_from_y(ym, K)) / (2.0 * h);
  }
  return std::log(std::abs(J.fullPivLu().determinant()));
}

inline double log_normal_pdf(double x, double mu, double sd) {
  const double z = (x - mu) / sd;
  return -0.5 * z * z - std::log(sd) - 0.5 * std::log(2.0 * M_PI);
}

inline double naive_log_posterior(const nsum::PreparedDesign& d,
                                  const nsum::CorrelatedPriorConfig& cfg,
                                  const Eigen::VectorXd& u) {
  using BC = nsum::CorrelatedPriorConfig::BiasConvention;
  const int n = d.n(), K = d.num_groups();
  const Unpacked p = unpack(d, cfg, u);
  const double sigma_delta = std::exp(p.lsd);
  const double sigma_rho = std::exp(p.lsr);

  Eigen::MatrixXd L = cfg.identity_correlation ? Eigen::MatrixXd::Identity(K, K)
                                               : build_L(p.ly, K);

  // mu_k and tau_k from tau_N under the convention
  Eigen::VectorXd tau_N(K), mu_b(K), tau_b(K);
  for (int k = 0; k < K; ++k) {
    tau_N(k) = std::exp(p.ltau(k));
    const double u2 = std::log1p(tau_N(k) * tau_N(k));
    mu_b(k) = -0.5 * u2;
    tau_b(k) = cfg.bias_convention == BC::mean_one ? std::sqrt(u2)
                                                   : std::sqrt(1.0 + tau_N(k) * tau_N(k));
  }

  double lp = 0.0;
  // likelihood, cell by cell
  int alpha_pos = 0;
  Eigen::VectorXd alpha_full = Eigen::VectorXd::Zero(K);
  for (int k = 0; k < K; ++k)
    if (d.has_respect[static_cast<std::size_t>(k)]) alpha_full(k) = p.alpha_vals(alpha_pos++);
  for (int i = 0; i < n; ++i) {
    for (int k = 0; k < K; ++k) {
      double b = mu_b(k);
      for (int j = 0; j <= k; ++j) b += tau_b(k) * L(k, j) * p.eps(i, j);
      double eta = p.delta(i) + p.rho(k) + b;
      for (std::size_t j = 0; j < d.global_cov_idx.size(); ++j)
        eta += p.beta_g(static_cast<long>(j)) * d.z_centered(i, d.global_cov_idx[j]);
      for (std::size_t j = 0; j < d.group_cov_idx.size(); ++j)
        eta += p.beta_grp(k, static_cast<long>(j)) * d.z_centered(i, d.group_cov_idx[j]);
      if (d.has_respect[static_cast<std::size_t>(k)]) eta += alpha_full(k) * d.x_centered(i, k);
      lp += d.y(i, k) * eta - std::exp(eta) - std::lgamma(d.y(i, k) + 1.0);
    }
  }
  // eps prior
  for (int i = 0; i < n; ++i)
    for (int k = 0; k < K; ++k) lp += log_normal_pdf(p.eps(i, k), 0.0, 1.0);
  // delta prior
  for (int i = 0; i < n; ++i) lp += log_normal_pdf(p.delta(i), 0.0, sigma_delta);
  // rho prior
  if (cfg.rho_prior == nsum::CorrelatedPriorConfig::RhoPrior::hierarchical) {
    for (int k = 0; k < K; ++k) lp += log_normal_pdf(p.rho(k), p.mu_rho, sigma_rho);
    lp += log_normal_pdf(p.mu_rho, 0.0, std::sqrt(cfg.mu_rho_prior_variance));
    lp += std::log(2.0) - std::log(M_PI) - std::log(cfg.sigma_half_cauchy_scale) -
          std::log1p(std::pow(sigma_rho / cfg.sigma_half_cauchy_scale, 2)) + p.lsr;
  }
  // slopes
  auto slope_lp = [&cfg](double b) {
    if (cfg.slope_prior == nsum::CorrelatedPriorConfig::SlopePrior::normal)
      return log_normal_pdf(b, 0.0, std::sqrt(cfg.slope_normal_variance));
    const double s = cfg.slope_cauchy_scale;
    return -std::log(M_PI * s) - std::log1p((b / s) * (b / s));
  };
  for (long j = 0; j < p.beta_g.size(); ++j) lp += slope_lp(p.beta_g(j));
  for (int k = 0; k < K; ++k)
    for (long j = 0; j < p.beta_grp.cols(); ++j) lp += slope_lp(p.beta_grp(k, j));
  for (long j = 0; j < p.alpha_vals.size(); ++j) lp += slope_lp(p.alpha_vals(j));
  // sigma_delta prior + log transform
  lp += std::log(2.0) - std::log(M_PI) - std::log(cfg.sigma_half_cauchy_scale) -
        std::log1p(std::pow(sigma_delta / cfg.sigma_half_cauchy_scale, 2)) + p.lsd;
  // tau_N priors + log transform
  for (int k = 0; k < K; ++k) {
    if (cfg.tau_prior == nsum::CorrelatedPriorConfig::TauPrior::half_cauchy) {
      lp += std::log(2.0) - std::log(M_PI) - std::log(cfg.tau_half_cauchy_scale) -
            std::log1p(std::pow(tau_N(k) / cfg.tau_half_cauchy_scale, 2)) + p.ltau(k);
    } else {
      lp += cfg.tau_gamma_shape * std::log(cfg.tau_gamma_rate) -
            std::lgamma(cfg.tau_gamma_shape) +
            (cfg.tau_gamma_shape - 1.0) * std::log(tau_N(k)) -
            cfg.tau_gamma_rate * tau_N(k) + p.ltau(k);
    }
  }
  // LKJ kernel on the Cholesky factor + numeric transform Jacobian
  if (!cfg.identity_correlation) {
    for (int k = 1; k < K; ++k)
      lp += (static_cast<double>(K - (k + 1)) + 2.0 * cfg.lkj_eta - 2.0) * std::log(L(k, k));
    lp += numeric_L_logjac(p.ly, K);
  }
  return lp;
}

}  // namespace naive
