#include "nsum/correlated.hpp"

#include <cmath>
#include <limits>
#include <memory>
#include <sstream>
#include <stdexcept>
#include <unordered_map>

#include "nsum/chain_stats.hpp"
#include "nsum/hmc.hpp"
#include "nsum/log.hpp"

namespace nsum {

namespace {

constexpr double kLog2Pi = 1.8378770664093453;
constexpr double kNegInf = -std::numeric_limits<double>::infinity();

inline int tri_size(int k) { return k * (k - 1) / 2; }
inline int tri_index(int i, int j) { return i * (i - 1) / 2 + j; }  // i > j, 0-based

struct TauDerivs {
  Eigen::VectorXd mu, tau, dmu_dt, dtau_dt;
};

TauDerivs tau_chain(const Eigen::VectorXd& tau_N, CorrelatedPriorConfig::BiasConvention conv) {
  const int K = static_cast<int>(tau_N.size());
  TauDerivs td;
  td.mu.resize(K);
  td.tau.resize(K);
  td.dmu_dt.resize(K);
  td.dtau_dt.resize(K);
  for (int k = 0; k < K; ++k) {
    const double tn = tau_N(k);
    const double tn2 = tn * tn;
    const double u = std::log1p(tn2);
    const double dudt = 2.0 * tn2 / (1.0 + tn2);  // d u / d log(tau_N)
    td.mu(k) = -0.5 * u;
    td.dmu_dt(k) = -0.5 * dudt;
    if (conv == CorrelatedPriorConfig::BiasConvention::mean_one) {
      if (u > 0.0) {
        const double su = std::sqrt(u);
        td.tau(k) = su;
        td.dtau_dt(k) = 0.5 * dudt / su;
      } else {  // tau_N underflowed; sqrt(log1p(x^2)) ~ x
        td.tau(k) = tn;
        td.dtau_dt(k) = tn;
      }
    } else {
      const double t1 = std::sqrt(1.0 + tn2);
      td.tau(k) = t1;
      td.dtau_dt(k) = tn2 / t1;
    }
  }
  return td;
}

}  // namespace

void bias_location_scale(const Eigen::VectorXd& tau_N,
                         CorrelatedPriorConfig::BiasConvention conv, Eigen::VectorXd* mu,
                         Eigen::VectorXd* tau) {
  const TauDerivs td = tau_chain(tau_N, conv);
  *mu = td.mu;
  *tau = td.tau;
}

Eigen::MatrixXd reconstruct_bias(const CorrelatedParams& p,
                                 CorrelatedPriorConfig::BiasConvention conv) {
  Eigen::VectorXd mu, tau;
  bias_location_scale(p.tau_N, conv, &mu, &tau);
  Eigen::MatrixXd a = p.eps * p.L.lower.transpose();  // a_ik = (L eps_i)_k
  a = a * tau.asDiagonal();
  a.rowwise() += mu.transpose();
  return a;
}

double correlated_loglik(const CorrelatedParams& p, const PreparedDesign& d,
                         CorrelatedPriorConfig::BiasConvention conv) {
  const int n = d.n(), K = d.num_groups();
  Eigen::MatrixXd eta = reconstruct_bias(p, conv);
  eta.colwise() += p.delta;
  eta.rowwise() += p.rho.transpose();
  if (p.beta_global.size() > 0) {
    Eigen::MatrixXd zg(n, p.beta_global.size());
    for (std::size_t j = 0; j < d.global_cov_idx.size(); ++j)
      zg.col(static_cast<long>(j)) = d.z_centered.col(d.global_cov_idx[j]);
    eta.colwise() += (zg * p.beta_global).eval();
  }
  if (p.beta_group.cols() > 0) {
    Eigen::MatrixXd zk(n, p.beta_group.cols());
    for (std::size_t j = 0; j < d.group_cov_idx.size(); ++j)
      zk.col(static_cast<long>(j)) = d.z_centered.col(d.group_cov_idx[j]);
    eta += zk * p.beta_group.transpose();
  }
  for (int k = 0; k < K; ++k)
    if (d.has_respect[static_cast<std::size_t>(k)]) eta.col(k) += p.alpha(k) * d.x_centered.col(k);

  double ll = 0.0;
  for (int i = 0; i < n; ++i)
    for (int k = 0; k < K; ++k)
      ll += d.y(i, k) * eta(i, k) - std::exp(eta(i, k)) - std::lgamma(d.y(i, k) + 1.0);
  return ll;
}

// ---------------------------------------------------------------------------

CorrelatedModel::CorrelatedModel(const PreparedDesign& d, const CorrelatedPriorConfig& cfg)
    : design_(&d), cfg_(cfg) {
  if (d.y.hasNaN()) throw std::invalid_argument("CorrelatedModel: design has missing counts");
  Layout& l = lay_;
  l.n = d.n();
  l.K = d.num_groups();
  l.pg = static_cast<int>(d.global_cov_idx.size());
  l.pk = static_cast<int>(d.group_cov_idx.size());
  for (int k = 0; k < l.K; ++k)
    if (d.has_respect[static_cast<std::size_t>(k)]) alpha_groups_.push_back(k);
  l.n_alpha = static_cast<int>(alpha_groups_.size());
  l.identity_L = cfg.identity_correlation;
  l.n_ly = l.identity_L ? 0 : tri_size(l.K);
  l.hierarchical_rho = cfg.rho_prior == CorrelatedPriorConfig::RhoPrior::hierarchical;

  int off = 0;
  l.delta = off;
  off += l.n;
  l.rho = off;
  off += l.K;
  l.beta_g = off;
  off += l.pg;
  l.beta_grp = off;
  off += l.K * l.pk;
  l.alpha = off;
  off += l.n_alpha;
  l.eps = off;
  off += l.n * l.K;
  l.ltau = off;
  off += l.K;
  l.ly = off;
  off += l.n_ly;
  l.lsd = off;
  off += 1;
  if (l.hierarchical_rho) {
    l.mu_rho = off;
    off += 1;
    l.lsr = off;
    off += 1;
  }
  dim_ = off;

  zg_.resize(l.n, l.pg);
  for (std::size_t j = 0; j < d.global_cov_idx.size(); ++j)
    zg_.col(static_cast<long>(j)) = d.z_centered.col(d.global_cov_idx[j]);
  zk_.resize(l.n, l.pk);
  for (std::size_t j = 0; j < d.group_cov_idx.size(); ++j)
    zk_.col(static_cast<long>(j)) = d.z_centered.col(d.group_cov_idx[j]);

  loglik_const_ = 0.0;
  for (int i = 0; i < l.n; ++i)
    for (int k = 0; k < l.K; ++k) loglik_const_ -= std::lgamma(d.y(i, k) + 1.0);
}

double CorrelatedModel::slope_prior_lpdf(double b) const {
  if (cfg_.slope_prior == CorrelatedPriorConfig::SlopePrior::normal) {
    const double v = cfg_.slope_normal_variance;
    return -0.5 * b * b / v - 0.5 * std::log(2.0 * M_PI * v);
  }
  const double s = cfg_.slope_cauchy_scale;
  return -std::log(M_PI * s) - std::log1p((b / s) * (b / s));
}

double CorrelatedModel::slope_prior_grad(double b) const {
  if (cfg_.slope_prior == CorrelatedPriorConfig::SlopePrior::normal)
    return -b / cfg_.slope_normal_variance;
  const double s = cfg_.slope_cauchy_scale;
  return -2.0 * b / (s * s + b * b);
}

CorrelatedParams CorrelatedModel::unpack(const Eigen::VectorXd& u) const {
  const Layout& l = lay_;
  CorrelatedParams p;
  p.delta = u.segment(l.delta, l.n);
  p.rho = u.segment(l.rho, l.K);
  p.beta_global = u.segment(l.beta_g, l.pg);
  p.beta_group.resize(l.K, l.pk);
  for (int k = 0; k < l.K; ++k)
    for (int j = 0; j < l.pk; ++j) p.beta_group(k, j) = u(l.beta_grp + k * l.pk + j);
  p.alpha = Eigen::VectorXd::Zero(l.K);
  for (int a = 0; a < l.n_alpha; ++a)
    p.alpha(alpha_groups_[static_cast<std::size_t>(a)]) = u(l.alpha + a);
  p.eps.resize(l.n, l.K);
  for (int i = 0; i < l.n; ++i)
    for (int k = 0; k < l.K; ++k) p.eps(i, k) = u(l.eps + i * l.K + k);
  p.tau_N = u.segment(l.ltau, l.K).array().exp();

  Eigen::MatrixXd Lm = Eigen::MatrixXd::Identity(l.K, l.K);
  if (!l.identity_L) {
    for (int i = 1; i < l.K; ++i) {
      double s = 0.0;
      for (int j = 0; j < i; ++j) {
        const double z = std::tanh(u(l.ly + tri_index(i, j)));
        const double w = std::sqrt(std::max(0.0, 1.0 - s));
        Lm(i, j) = z * w;
        s += Lm(i, j) * Lm(i, j);
      }
      Lm(i, i) = std::sqrt(std::max(0.0, 1.0 - s));
    }
  }
  p.L = CholeskyFactor{std::move(Lm)};
  p.sigma_delta = std::exp(u(l.lsd));
  if (l.hierarchical_rho) {
    p.mu_rho = u(l.mu_rho);
    p.sigma_rho = std::exp(u(l.lsr));
  } else {
    p.mu_rho = 0.0;
    p.sigma_rho = 1.0;
  }
  return p;
}

double CorrelatedModel::eval_impl(const Eigen::VectorXd& u, Eigen::VectorXd* grad) const {
  const Layout& l = lay_;
  if (u.size() != dim_) throw std::invalid_argument("CorrelatedModel: dimension mismatch");
  const PreparedDesign& d = *design_;
  const int n = l.n, K = l.K;

  // --- unpack --------------------------------------------------------------
  const auto delta = u.segment(l.delta, n);
  const auto rho = u.segment(l.rho, K);
  const auto beta_g = u.segment(l.beta_g, l.pg);
  Eigen::MatrixXd beta_grp(K, l.pk);
  for (int k = 0; k < K; ++k)
    for (int j = 0; j < l.pk; ++j) beta_grp(k, j) = u(l.beta_grp + k * l.pk + j);
  Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>
      eps(u.data() + l.eps, n, K);
  const Eigen::VectorXd tau_N = u.segment(l.ltau, K).array().exp();
  const double lsd = u(l.lsd);
  const double sigma_delta = std::exp(lsd);
  double mu_rho = 0.0, sigma_rho = 1.0, lsr = 0.0;
  if (l.hierarchical_rho) {
    mu_rho = u(l.mu_rho);
    lsr = u(l.lsr);
    sigma_rho = std::exp(lsr);
  }

  // --- Cholesky correlation factor from canonical partial correlations -----
  Eigen::MatrixXd L = Eigen::MatrixXd::Identity(K, K);
  Eigen::MatrixXd zmat, wmat;
  double logjac_L = 0.0;
  if (!l.identity_L) {
    zmat = Eigen::MatrixXd::Zero(K, K);
    wmat = Eigen::MatrixXd::Zero(K, K);
    for (int i = 1; i < K; ++i) {
      double s = 0.0;
      for (int j = 0; j < i; ++j) {
        const double z = std::tanh(u(l.ly + tri_index(i, j)));
        const double one_minus_s = 1.0 - s;
        if (one_minus_s <= 0.0) return kNegInf;
        const double w = std::sqrt(one_minus_s);
        L(i, j) = z * w;
        zmat(i, j) = z;
        wmat(i, j) = w;
        const double one_minus_z2 = (1.0 - z) * (1.0 + z);
        if (one_minus_z2 <= 0.0) return kNegInf;
        logjac_L += std::log(one_minus_z2) + std::log(w);
        s += L(i, j) * L(i, j);
      }
      const double diag2 = 1.0 - s;
      if (diag2 <= 0.0) return kNegInf;
      L(i, i) = std::sqrt(diag2);
    }
  }

  const TauDerivs td = tau_chain(tau_N, cfg_.bias_convention);

  // --- linear predictor ----------------------------------------------------
  Eigen::MatrixXd a = eps * L.transpose();          // (L eps_i)_k
  Eigen::MatrixXd eta = a * td.tau.asDiagonal();    // bias minus its mean
  eta.rowwise() += (td.mu + rho).transpose();
  Eigen::VectorXd row_shift = delta;
  if (l.pg > 0) row_shift += zg_ * beta_g;
  eta.colwise() += row_shift;
  if (l.pk > 0) eta += zk_ * beta_grp.transpose();
  for (int ai = 0; ai < l.n_alpha; ++ai) {
    const int k = alpha_groups_[static_cast<std::size_t>(ai)];
    eta.col(k) += u(l.alpha + ai) * d.x_centered.col(k);
  }

  const Eigen::ArrayXXd lambda = eta.array().exp();
  double lp = (d.y.array() * eta.array() - lambda).sum() + loglik_const_;
  if (!std::isfinite(lp)) return kNegInf;

  // --- priors + transform Jacobians ----------------------------------------
  lp += -0.5 * eps.array().square().sum() -
        0.5 * static_cast<double>(n) * static_cast<double>(K) * kLog2Pi;
  lp += -0.5 * delta.squaredNorm() / (sigma_delta * sigma_delta) -
        static_cast<double>(n) * (std::log(sigma_delta) + 0.5 * kLog2Pi);
  if (l.hierarchical_rho) {
    lp += -0.5 * (rho.array() - mu_rho).square().sum() / (sigma_rho * sigma_rho) -
          static_cast<double>(K) * (std::log(sigma_rho) + 0.5 * kLog2Pi);
    const double vm = cfg_.mu_rho_prior_variance;
    lp += -0.5 * mu_rho * mu_rho / vm - 0.5 * std::log(2.0 * M_PI * vm);
    lp += density::half_cauchy_lpdf(sigma_rho, cfg_.sigma_half_cauchy_scale) + lsr;
  }
  lp += density::half_cauchy_lpdf(sigma_delta, cfg_.sigma_half_cauchy_scale) + lsd;
  for (int j = 0; j < l.pg; ++j) lp += slope_prior_lpdf(beta_g(j));
  for (int k = 0; k < K; ++k)
    for (int j = 0; j < l.pk; ++j) lp += slope_prior_lpdf(beta_grp(k, j));
  for (int ai = 0; ai < l.n_alpha; ++ai) lp += slope_prior_lpdf(u(l.alpha + ai));
  for (int k = 0; k < K; ++k) {
    const double t = u(l.ltau + k);
    if (cfg_.tau_prior == CorrelatedPriorConfig::TauPrior::half_cauchy)
      lp += density::half_cauchy_lpdf(tau_N(k), cfg_.tau_half_cauchy_scale) + t;
    else
      lp += density::gamma_lpdf(tau_N(k), cfg_.tau_gamma_shape, cfg_.tau_gamma_rate) + t;
  }
  if (!l.identity_L) {
    for (int i = 1; i < K; ++i)
      lp += (static_cast<double>(K - (i + 1)) + 2.0 * cfg_.lkj_eta - 2.0) * std::log(L(i, i));
    lp += logjac_L;
  }
  if (!std::isfinite(lp)) return kNegInf;
  if (!grad) return lp;

  // --- gradient -------------------------------------------------------------
  Eigen::VectorXd& g = *grad;
  g.setZero(dim_);
  const Eigen::MatrixXd G = d.y - lambda.matrix();  // d loglik / d eta

  const Eigen::VectorXd row_sum = G.rowwise().sum();
  const Eigen::VectorXd col_sum = G.colwise().sum().transpose();

  // delta
  g.segment(l.delta, n) = row_sum - delta / (sigma_delta * sigma_delta);
  // rho
  g.segment(l.rho, K) = col_sum;
  if (l.hierarchical_rho)
    g.segment(l.rho, K) -= ((rho.array() - mu_rho) / (sigma_rho * sigma_rho)).matrix();
  // global slopes
  if (l.pg > 0) {
    g.segment(l.beta_g, l.pg) = zg_.transpose() * row_sum;
    for (int j = 0; j < l.pg; ++j) g(l.beta_g + j) += slope_prior_grad(beta_g(j));
  }
  // group slopes
  if (l.pk > 0) {
    const Eigen::MatrixXd gb = G.transpose() * zk_;  // K x pk
    for (int k = 0; k < K; ++k)
      for (int j = 0; j < l.pk; ++j)
        g(l.beta_grp + k * l.pk + j) = gb(k, j) + slope_prior_grad(beta_grp(k, j));
  }
  // respect slopes
  for (int ai = 0; ai < l.n_alpha; ++ai) {
    const int k = alpha_groups_[static_cast<std::size_t>(ai)];
    g(l.alpha + ai) = G.col(k).dot(d.x_centered.col(k)) + slope_prior_grad(u(l.alpha + ai));
  }
  // eps
  const Eigen::MatrixXd g_tau = G * td.tau.asDiagonal();
  {
    Eigen::MatrixXd geps = g_tau * L;  // n x K
    geps -= eps;
    for (int i = 0; i < n; ++i)
      for (int k = 0; k < K; ++k) g(l.eps + i * K + k) = geps(i, k);
  }
  // log tau_N
  {
    const Eigen::VectorXd ga = (G.array() * a.array()).colwise().sum().matrix().transpose();
    for (int k = 0; k < K; ++k) {
      double gt = col_sum(k) * td.dmu_dt(k) + ga(k) * td.dtau_dt(k);
      const double tn = tau_N(k);
      if (cfg_.tau_prior == CorrelatedPriorConfig::TauPrior::half_cauchy) {
        const double s = cfg_.tau_half_cauchy_scale;
        gt += -2.0 * tn * tn / (s * s + tn * tn) + 1.0;
      } else {
        gt += cfg_.tau_gamma_shape - cfg_.tau_gamma_rate * tn;
      }
      g(l.ltau + k) = gt;
    }
  }
  // correlation factor
  if (!l.identity_L) {
    Eigen::MatrixXd GL = g_tau.transpose() * eps;  // d lp / d L_kj (lower part)
    for (int i = 1; i < K; ++i)
      GL(i, i) += (static_cast<double>(K - (i + 1)) + 2.0 * cfg_.lkj_eta - 2.0) / L(i, i);
    for (int i = 1; i < K; ++i) {
      double sbar = GL(i, i) * (-0.5 / L(i, i));
      for (int j = i - 1; j >= 0; --j) {
        const double z = zmat(i, j);
        const double w = wmat(i, j);
        const double Lbar = GL(i, j) + 2.0 * L(i, j) * sbar;
        const double wbar = Lbar * z + 1.0 / w;  // 1/w from the transform Jacobian
        const double one_minus_z2 = (1.0 - z) * (1.0 + z);
        const double zbar = Lbar * w - 2.0 * z / one_minus_z2;
        g(l.ly + tri_index(i, j)) = zbar * one_minus_z2;
        sbar += wbar * (-0.5 / w);
      }
    }
  }
  // log sigma_delta
  g(l.lsd) = (delta.array().square() / (sigma_delta * sigma_delta) - 1.0).sum();
  {
    const double s = cfg_.sigma_half_cauchy_scale;
    g(l.lsd) += -2.0 * sigma_delta * sigma_delta / (s * s + sigma_delta * sigma_delta) + 1.0;
  }
  if (l.hierarchical_rho) {
    const Eigen::ArrayXd rc = rho.array() - mu_rho;
    g(l.mu_rho) = rc.sum() / (sigma_rho * sigma_rho) - mu_rho / cfg_.mu_rho_prior_variance;
    const double s = cfg_.sigma_half_cauchy_scale;
    g(l.lsr) = (rc.square() / (sigma_rho * sigma_rho) - 1.0).sum() -
               2.0 * sigma_rho * sigma_rho / (s * s + sigma_rho * sigma_rho) + 1.0;
  }
  return lp;
}

double CorrelatedModel::log_posterior(const Eigen::VectorXd& u) const {
  return eval_impl(u, nullptr);
}

Eigen::VectorXd CorrelatedModel::grad_log_posterior(const Eigen::VectorXd& u) const {
  Eigen::VectorXd g(dim_);
  eval_impl(u, &g);
  return g;
}

Eigen::VectorXd CorrelatedModel::init_point() const {
  const Layout& l = lay_;
  const PreparedDesign& d = *design_;
  Eigen::VectorXd u = Eigen::VectorXd::Zero(dim_);
  Eigen::VectorXd row_mean = d.y.rowwise().mean();
  for (int i = 0; i < l.n; ++i) u(l.delta + i) = std::log1p(row_mean(i));
  double mean_degree = 0.0;
  for (int i = 0; i < l.n; ++i) mean_degree += 1.0 + row_mean(i);
  mean_degree /= static_cast<double>(l.n);
  for (int k = 0; k < l.K; ++k) {
    const double col_mean = d.y.col(k).mean();
    u(l.rho + k) = std::log((col_mean + 1e-3) / mean_degree);
  }
  return u;  // slopes, eps, log tau_N, L, log sigmas all start at 0
}

PosteriorTarget CorrelatedModel::target() const {
  PosteriorTarget t;
  t.dim = dim_;
  const CorrelatedModel* self = this;
  t.log_density = [self](const Eigen::VectorXd& u) { return self->eval_impl(u, nullptr); };
  t.gradient = [self](const Eigen::VectorXd& u) {
    Eigen::VectorXd g(self->dim());
    self->eval_impl(u, &g);
    return g;
  };
  t.init = init_point();
  return t;
}

// ---------------------------------------------------------------------------
// Reporting

std::vector<std::string> CorrelatedModel::report_names(bool store_eps, bool store_bias) const {
  const Layout& l = lay_;
  const PreparedDesign& d = *design_;
  std::vector<std::string> names;
  for (int i = 0; i < l.n; ++i) names.push_back("delta[" + std::to_string(i + 1) + "]");
  for (int k = 0; k < l.K; ++k) names.push_back("rho[" + std::to_string(k + 1) + "]");
  for (std::size_t j = 0; j < d.global_cov_idx.size(); ++j)
    names.push_back("beta_g[" + d.z_col_names[static_cast<std::size_t>(d.global_cov_idx[j])] + "]");
  for (int k = 0; k < l.K; ++k)
    for (std::size_t j = 0; j < d.group_cov_idx.size(); ++j)
      names.push_back("beta[" + std::to_string(k + 1) + "," +
                      d.z_col_names[static_cast<std::size_t>(d.group_cov_idx[j])] + "]");
  for (int k : alpha_groups_) names.push_back("alpha[" + std::to_string(k + 1) + "]");
  for (int k = 0; k < l.K; ++k) names.push_back("tau_N[" + std::to_string(k + 1) + "]");
  names.push_back("sigma_delta");
  if (l.hierarchical_rho) {
    names.push_back("mu_rho");
    names.push_back("sigma_rho");
  }
  if (!l.identity_L)
    for (int i = 1; i < l.K; ++i)
      for (int j = 0; j < i; ++j)
        names.push_back("omega[" + std::to_string(i + 1) + "," + std::to_string(j + 1) + "]");
  if (store_eps)
    for (int i = 0; i < l.n; ++i)
      for (int k = 0; k < l.K; ++k)
        names.push_back("eps[" + std::to_string(i + 1) + "," + std::to_string(k + 1) + "]");
  if (store_bias)
    for (int i = 0; i < l.n; ++i)
      for (int k = 0; k < l.K; ++k)
        names.push_back("b[" + std::to_string(i + 1) + "," + std::to_string(k + 1) + "]");
  return names;
}

Eigen::VectorXd CorrelatedModel::report_row(const Eigen::VectorXd& u, bool store_eps,
                                            bool store_bias) const {
  const Layout& l = lay_;
  const CorrelatedParams p = unpack(u);
  std::vector<double> out;
  out.reserve(static_cast<std::size_t>(dim_) + static_cast<std::size_t>(tri_size(l.K)));
  for (int i = 0; i < l.n; ++i) out.push_back(p.delta(i));
  for (int k = 0; k < l.K; ++k) out.push_back(p.rho(k));
  for (int j = 0; j < l.pg; ++j) out.push_back(p.beta_global(j));
  for (int k = 0; k < l.K; ++k)
    for (int j = 0; j < l.pk; ++j) out.push_back(p.beta_group(k, j));
  for (int k : alpha_groups_) out.push_back(p.alpha(k));
  for (int k = 0; k < l.K; ++k) out.push_back(p.tau_N(k));
  out.push_back(p.sigma_delta);
  if (l.hierarchical_rho) {
    out.push_back(p.mu_rho);
    out.push_back(p.sigma_rho);
  }
  if (!l.identity_L) {
    for (int i = 1; i < l.K; ++i)
      for (int j = 0; j < i; ++j)
        out.push_back(p.L.lower.row(i).head(i + 1).dot(
            p.L.lower.row(j).head(i + 1)));  // Omega_ij = L_i . L_j
  }
  if (store_eps)
    for (int i = 0; i < l.n; ++i)
      for (int k = 0; k < l.K; ++k) out.push_back(p.eps(i, k));
  if (store_bias) {
    const Eigen::MatrixXd b = reconstruct_bias(p, cfg_.bias_convention);
    for (int i = 0; i < l.n; ++i)
      for (int k = 0; k < l.K; ++k) out.push_back(b(i, k));
  }
  return Eigen::Map<Eigen::VectorXd>(out.data(), static_cast<long>(out.size()));
}

// ---------------------------------------------------------------------------

Draws fit_correlated(const PreparedDesign& d, const CorrelatedPriorConfig& pc,
                     const ChainConfig& cc, const FitOptions& opts) {
  CorrelatedModel model(d, pc);
  Draws raw = run_hmc(model.target(), cc);

  Draws out;
  out.seed = raw.seed;
  out.warmup = raw.warmup;
  out.thin = raw.thin;
  out.chain_meta = raw.chain_meta;
  out.divergence_warning = raw.divergence_warning;
  out.param_names = model.report_names(opts.store_eps, opts.store_bias);
  const int rdim = static_cast<int>(out.param_names.size());
  for (const auto& chain : raw.values) {
    Eigen::MatrixXd rep(chain.rows(), rdim);
    for (long it = 0; it < chain.rows(); ++it)
      rep.row(it) = model.report_row(chain.row(it).transpose(), opts.store_eps, opts.store_bias)
                        .transpose();
    out.values.push_back(std::move(rep));
  }

  out.info["model"] = pc.identity_correlation ? "correlated(identity)" : "correlated";
  out.info["n"] = std::to_string(d.n());
  out.info["K"] = std::to_string(d.num_groups());
  out.info["total_population"] = std::to_string(d.total_population);
  out.info["bias_convention"] =
      pc.bias_convention == CorrelatedPriorConfig::BiasConvention::mean_one ? "mean-one"
                                                                            : "paper-literal";
  {
    std::ostringstream ids, sizes;
    for (std::size_t k = 0; k < d.groups.size(); ++k) {
      if (k) {
        ids << ',';
        sizes << ',';
      }
      ids << d.groups[k].id;
      if (d.groups[k].known_size) sizes << *d.groups[k].known_size;
    }
    out.info["groups"] = ids.str();
    out.info["known_sizes"] = sizes.str();
  }
  return out;
}

// ---------------------------------------------------------------------------
// Rate reconstruction and posterior prediction

PredictMode parse_predict_mode(const std::string& s) {
  if (s == "in-sample") return PredictMode::in_sample;
  if (s == "out-of-sample") return PredictMode::out_of_sample;
  throw std::invalid_argument("unknown predict mode '" + s + "' (in-sample|out-of-sample)");
}

/// Cached column indices into a correlated-model Draws object.
struct RateReconstructor::Impl {
  const Draws* draws;
  const PreparedDesign* d;
  int n, K;
  std::vector<int> delta, rho, tau;
  std::vector<int> beta_g, alpha_groups, alpha_idx;
  std::vector<std::vector<int>> beta_grp;  // per group
  std::vector<int> omega;                  // lower triangle, row-major; empty if absent
  std::vector<int> eps;                    // row-major n*K; empty if absent

  Impl(const Draws& dr, const PreparedDesign& des) : draws(&dr), d(&des) {
    n = des.n();
    K = des.num_groups();
    std::unordered_map<std::string, int> idx;
    for (std::size_t i = 0; i < dr.param_names.size(); ++i)
      idx[dr.param_names[i]] = static_cast<int>(i);
    auto get = [&idx](const std::string& name) {
      auto it = idx.find(name);
      if (it == idx.end())
        throw std::invalid_argument("draws lack parameter '" + name + "'");
      return it->second;
    };
    auto maybe = [&idx](const std::string& name) {
      auto it = idx.find(name);
      return it == idx.end() ? -1 : it->second;
    };
    for (int i = 0; i < n; ++i) delta.push_back(get("delta[" + std::to_string(i + 1) + "]"));
    for (int k = 0; k < K; ++k) rho.push_back(get("rho[" + std::to_string(k + 1) + "]"));
    for (int k = 0; k < K; ++k) tau.push_back(get("tau_N[" + std::to_string(k + 1) + "]"));
    for (int j : des.global_cov_idx)
      beta_g.push_back(get("beta_g[" + des.z_col_names[static_cast<std::size_t>(j)] + "]"));
    beta_grp.resize(static_cast<std::size_t>(K));
    for (int k = 0; k < K; ++k)
      for (int j : des.group_cov_idx)
        beta_grp[static_cast<std::size_t>(k)].push_back(
            get("beta[" + std::to_string(k + 1) + "," +
                des.z_col_names[static_cast<std::size_t>(j)] + "]"));
    for (int k = 0; k < K; ++k) {
      if (!des.has_respect[static_cast<std::size_t>(k)]) continue;
      const int id = maybe("alpha[" + std::to_string(k + 1) + "]");
      if (id >= 0) {
        alpha_groups.push_back(k);
        alpha_idx.push_back(id);
      }
    }
    bool have_omega = true;
    for (int i = 1; i < K && have_omega; ++i)
      for (int j = 0; j < i && have_omega; ++j)
        if (maybe("omega[" + std::to_string(i + 1) + "," + std::to_string(j + 1) + "]") < 0)
          have_omega = false;
    if (have_omega && K > 1)
      for (int i = 1; i < K; ++i)
        for (int j = 0; j < i; ++j)
          omega.push_back(get("omega[" + std::to_string(i + 1) + "," + std::to_string(j + 1) + "]"));
    if (maybe("eps[1,1]") >= 0) {
      for (int i = 0; i < n; ++i)
        for (int k = 0; k < K; ++k)
          eps.push_back(get("eps[" + std::to_string(i + 1) + "," + std::to_string(k + 1) + "]"));
    }
  }

  Eigen::VectorXd row(long pooled_index) const {
    const int kept = draws->kept();
    const int chain = static_cast<int>(pooled_index / kept);
    const long it = pooled_index % kept;
    return draws->values[static_cast<std::size_t>(chain)].row(it).transpose();
  }
};

RateReconstructor::RateReconstructor(const Draws& draws, const PreparedDesign& d)
    : impl_(std::make_unique<Impl>(draws, d)) {}
RateReconstructor::~RateReconstructor() = default;
RateReconstructor::RateReconstructor(RateReconstructor&&) noexcept = default;

bool RateReconstructor::has_eps() const { return !impl_->eps.empty(); }

Eigen::MatrixXd RateReconstructor::bias_matrix(long pooled_index) const {
  const Impl& v = *impl_;
  if (v.eps.empty())
    throw std::invalid_argument("bias_matrix: draws lack eps (fit with store_eps)");
  const int n = v.n, K = v.K;
  const Eigen::VectorXd row = v.row(pooled_index);
  Eigen::VectorXd tau_N(K);
  for (int k = 0; k < K; ++k) tau_N(k) = row(v.tau[static_cast<std::size_t>(k)]);
  Eigen::VectorXd mu, tau;
  const auto conv = v.draws->info.count("bias_convention") &&
                            v.draws->info.at("bias_convention") == "paper-literal"
                        ? CorrelatedPriorConfig::BiasConvention::paper_literal
                        : CorrelatedPriorConfig::BiasConvention::mean_one;
  bias_location_scale(tau_N, conv, &mu, &tau);
  Eigen::MatrixXd L = Eigen::MatrixXd::Identity(K, K);
  if (!v.omega.empty()) {
    Eigen::MatrixXd om = Eigen::MatrixXd::Identity(K, K);
    int pos = 0;
    for (int i = 1; i < K; ++i)
      for (int j = 0; j < i; ++j) {
        om(i, j) = om(j, i) = row(v.omega[static_cast<std::size_t>(pos)]);
        ++pos;
      }
    L = cholesky(om).lower;
  }
  Eigen::MatrixXd eps(n, K);
  for (int i = 0; i < n; ++i)
    for (int k = 0; k < K; ++k) eps(i, k) = row(v.eps[static_cast<std::size_t>(i * K + k)]);
  Eigen::MatrixXd b = (eps * L.transpose()) * tau.asDiagonal();
  b.rowwise() += mu.transpose();
  return b;
}

Eigen::MatrixXd RateReconstructor::rate_matrix(long pooled_index, PredictMode mode,
                                               RngStream* rng) const {
  const Impl& v = *impl_;
  const PreparedDesign& d = *v.d;
  const Draws& draws = *v.draws;
  const int n = v.n, K = v.K;
  const Eigen::VectorXd row = v.row(pooled_index);

  Eigen::VectorXd tau_N(K);
  for (int k = 0; k < K; ++k) tau_N(k) = row(v.tau[static_cast<std::size_t>(k)]);
  Eigen::VectorXd mu, tau;
  const auto conv = draws.info.count("bias_convention") &&
                            draws.info.at("bias_convention") == "paper-literal"
                        ? CorrelatedPriorConfig::BiasConvention::paper_literal
                        : CorrelatedPriorConfig::BiasConvention::mean_one;
  bias_location_scale(tau_N, conv, &mu, &tau);

  Eigen::MatrixXd L = Eigen::MatrixXd::Identity(K, K);
  if (!v.omega.empty()) {
    Eigen::MatrixXd om = Eigen::MatrixXd::Identity(K, K);
    int pos = 0;
    for (int i = 1; i < K; ++i)
      for (int j = 0; j < i; ++j) {
        om(i, j) = om(j, i) = row(v.omega[static_cast<std::size_t>(pos)]);
        ++pos;
      }
    L = cholesky(om).lower;
  }

  Eigen::MatrixXd eps(n, K);
  if (mode == PredictMode::in_sample) {
    if (v.eps.empty())
      throw std::invalid_argument(
          "rate_matrix_for_draw: in-sample mode needs eps draws (fit with store_eps)");
    for (int i = 0; i < n; ++i)
      for (int k = 0; k < K; ++k)
        eps(i, k) = row(v.eps[static_cast<std::size_t>(i * K + k)]);
  } else {
    if (!rng) throw std::invalid_argument("rate_matrix_for_draw: out-of-sample mode needs rng");
    for (int i = 0; i < n; ++i)
      for (int k = 0; k < K; ++k) eps(i, k) = rng->normal();
  }

  Eigen::MatrixXd eta = (eps * L.transpose()) * tau.asDiagonal();
  eta.rowwise() += mu.transpose();
  for (int k = 0; k < K; ++k) eta.col(k).array() += row(v.rho[static_cast<std::size_t>(k)]);
  Eigen::VectorXd row_shift(n);
  for (int i = 0; i < n; ++i) row_shift(i) = row(v.delta[static_cast<std::size_t>(i)]);
  for (std::size_t j = 0; j < v.beta_g.size(); ++j)
    row_shift += row(v.beta_g[j]) * d.z_centered.col(d.global_cov_idx[j]);
  eta.colwise() += row_shift;
  for (int k = 0; k < K; ++k)
    for (std::size_t j = 0; j < v.beta_grp[static_cast<std::size_t>(k)].size(); ++j)
      eta.col(k) +=
          row(v.beta_grp[static_cast<std::size_t>(k)][j]) * d.z_centered.col(d.group_cov_idx[j]);
  for (std::size_t ai = 0; ai < v.alpha_groups.size(); ++ai) {
    const int k = v.alpha_groups[ai];
    eta.col(k) += row(v.alpha_idx[ai]) * d.x_centered.col(k);
  }
  return eta.array().exp();
}

Eigen::MatrixXd rate_matrix_for_draw(const Draws& draws, const PreparedDesign& d,
                                     long pooled_index, PredictMode mode, RngStream* rng) {
  return RateReconstructor(draws, d).rate_matrix(pooled_index, mode, rng);
}

PredictiveDraws posterior_predict(const Draws& draws, const PreparedDesign& d, PredictMode mode,
                                  RngStream& rng, long max_draws) {
  const long total = draws.total_draws();
  if (total == 0) throw std::invalid_argument("posterior_predict: empty draws");
  long use = (max_draws <= 0 || max_draws >= total) ? total : max_draws;
  PredictiveDraws out;
  out.pooled_indices.reserve(static_cast<std::size_t>(use));
  for (long j = 0; j < use; ++j)
    out.pooled_indices.push_back(j * total / use);
  const int n = d.n(), K = d.num_groups();
  RateReconstructor recon(draws, d);
  for (long idx : out.pooled_indices) {
    const Eigen::MatrixXd lambda = recon.rate_matrix(idx, mode, &rng);
    Eigen::MatrixXd y(n, K);
    for (int i = 0; i < n; ++i)
      for (int k = 0; k < K; ++k)
        y(i, k) = static_cast<double>(rng.poisson(lambda(i, k)));
    out.y_rep.push_back(std::move(y));
  }
  return out;
}

Eigen::MatrixXd posterior_mean_omega(const Draws& draws, int K) {
  Eigen::MatrixXd om = Eigen::MatrixXd::Identity(K, K);
  for (int i = 1; i < K; ++i)
    for (int j = 0; j < i; ++j) {
      const std::string name =
          "omega[" + std::to_string(i + 1) + "," + std::to_string(j + 1) + "]";
      if (!draws.has_param(name)) return Eigen::MatrixXd::Identity(K, K);
      om(i, j) = om(j, i) = draws.pooled(name).mean();
    }
  return om;
}

double max_rhat(const Draws& d, const std::vector<std::string>& skip_prefixes) {
  double worst = 0.0;
  for (int j = 0; j < d.dim(); ++j) {
    const std::string& name = d.param_names[static_cast<std::size_t>(j)];
    bool skip = false;
    for (const auto& p : skip_prefixes)
      if (name.rfind(p, 0) == 0) skip = true;
    if (skip) continue;
    const double r = split_rhat_col(d, j);
    if (std::isfinite(r)) worst = std::max(worst, r);
  }
  return worst;
}

}  // namespace nsum
