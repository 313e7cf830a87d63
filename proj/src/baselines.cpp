#include "nsum/baselines.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>
#include <stdexcept>
#include <unordered_map>

#include "nsum/csv.hpp"

#include "nsum/hmc.hpp"
#include "nsum/log.hpp"
#include "nsum/metropolis.hpp"
#include "nsum/stats.hpp"

namespace nsum {

namespace {
constexpr double kNegInf = -std::numeric_limits<double>::infinity();
constexpr double kLog2Pi = 1.8378770664093453;

inline double logistic(double x) { return 1.0 / (1.0 + std::exp(-x)); }
inline double logit(double p) { return std::log(p) - std::log1p(-p); }
}  // namespace

// ---------------------------------------------------------------------------
// Killworth

double killworth_degree(const Eigen::VectorXd& y_known, const Eigen::VectorXd& known_sizes,
                        double total_population) {
  if (y_known.size() == 0 || known_sizes.size() != y_known.size())
    throw std::invalid_argument("killworth_degree: need matching non-empty known groups");
  const double size_sum = known_sizes.sum();
  if (!(size_sum > 0.0)) throw std::invalid_argument("killworth_degree: known sizes sum to zero");
  return total_population * y_known.sum() / size_sum;
}

double killworth_size(const Eigen::VectorXd& y_u, const Eigen::VectorXd& degrees,
                      double total_population) {
  if (y_u.size() != degrees.size() || y_u.size() == 0)
    throw std::invalid_argument("killworth_size: dimension mismatch");
  const double deg_sum = degrees.sum();
  if (!(deg_sum > 0.0)) throw std::invalid_argument("killworth_size: all-zero degrees");
  return total_population * y_u.sum() / deg_sum;
}

KillworthFit killworth_fit(const PreparedDesign& d) {
  const std::vector<int>& known = d.known_idx;
  if (known.empty()) throw std::invalid_argument("killworth_fit: no known groups");
  const int n = d.n();
  Eigen::VectorXd sizes(static_cast<long>(known.size()));
  for (std::size_t j = 0; j < known.size(); ++j)
    sizes(static_cast<long>(j)) = d.prevalence_known(static_cast<long>(j)) * d.total_population;

  KillworthFit fit;
  fit.degrees.resize(n);
  Eigen::VectorXd yk(static_cast<long>(known.size()));
  for (int i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < known.size(); ++j)
      yk(static_cast<long>(j)) = d.y(i, known[j]);
    fit.degrees(i) = killworth_degree(yk, sizes, d.total_population);
  }
  for (int k = 0; k < d.num_groups(); ++k)
    fit.sizes[d.groups[static_cast<std::size_t>(k)].id] =
        killworth_size(d.y.col(k), fit.degrees, d.total_population);
  return fit;
}

// ---------------------------------------------------------------------------
// Zheng overdispersed models

ZhengVariant parse_zheng_variant(const std::string& s) {
  if (s == "poisson") return ZhengVariant::poisson;
  if (s == "negbin") return ZhengVariant::negbin;
  throw std::invalid_argument("unknown zheng variant '" + s + "'");
}

namespace {

struct ZhengLayout {
  int n = 0, K = 0;
  int delta = 0, rho = 0, g = -1, vlam = -1, w = -1, lsd = 0, mu_rho = 0, lsr = 0;
  int dim = 0;
  bool poisson = true;
};

ZhengLayout zheng_layout(const PreparedDesign& d, ZhengVariant variant) {
  ZhengLayout l;
  l.n = d.n();
  l.K = d.num_groups();
  l.poisson = variant == ZhengVariant::poisson;
  int off = 0;
  l.delta = off;
  off += l.n;
  l.rho = off;
  off += l.K;
  if (l.poisson) {
    l.g = off;
    off += l.n * l.K;  // log gamma_ik
    l.vlam = off;
    off += l.K;  // bounded-transform lambda_k
  } else {
    l.w = off;
    off += l.K;  // logit of 1/omega_k
  }
  l.lsd = off++;
  l.mu_rho = off++;
  l.lsr = off++;
  l.dim = off;
  return l;
}

double zheng_eval(const PreparedDesign& d, const ZhengLayout& l, const ZhengConfig& cfg,
                  const Eigen::VectorXd& u, Eigen::VectorXd* grad) {
  const int n = l.n, K = l.K;
  const auto delta = u.segment(l.delta, n);
  const auto rho = u.segment(l.rho, K);
  const double sigma_delta = std::exp(u(l.lsd));
  const double mu_rho = u(l.mu_rho);
  const double sigma_rho = std::exp(u(l.lsr));

  double lp = 0.0;
  if (grad) grad->setZero(l.dim);

  Eigen::VectorXd drho = Eigen::VectorXd::Zero(K);
  Eigen::VectorXd ddelta = Eigen::VectorXd::Zero(n);

  if (l.poisson) {
    Eigen::VectorXd lambda(K), dlam_sum(K);
    dlam_sum.setZero();
    for (int k = 0; k < K; ++k) {
      const double s = logistic(u(l.vlam + k));
      lambda(k) = cfg.lambda_lo + (cfg.lambda_hi - cfg.lambda_lo) * s;
      // flat prior on lambda; Jacobian of the bounded transform
      lp += std::log(cfg.lambda_hi - cfg.lambda_lo) + std::log(s) + std::log1p(-s);
    }
    Eigen::VectorXd lgl(K), dig(K);
    for (int k = 0; k < K; ++k) {
      lgl(k) = std::lgamma(lambda(k));
      dig(k) = digamma(lambda(k));
    }
    for (int i = 0; i < n; ++i) {
      for (int k = 0; k < K; ++k) {
        const double g = u(l.g + i * K + k);
        const double gamma = std::exp(g);
        const double eta = delta(i) + rho(k) + g;
        const double mean = std::exp(eta);
        const double y = d.y(i, k);
        lp += y * eta - mean - std::lgamma(y + 1.0);
        // gamma(lambda, lambda) prior on gamma_ik plus log-transform Jacobian
        const double lam = lambda(k);
        lp += lam * std::log(lam) - lgl(k) + (lam - 1.0) * g - lam * gamma + g;
        if (grad) {
          const double G = y - mean;
          ddelta(i) += G;
          drho(k) += G;
          (*grad)(l.g + i * K + k) = G + lam - lam * gamma;  // (lam-1) - lam*gamma + 1
          dlam_sum(k) += std::log(lam) + 1.0 - dig(k) + g - gamma;
        }
      }
    }
    if (grad) {
      for (int k = 0; k < K; ++k) {
        const double lam = lambda(k);
        const double dlam_dv = (lam - cfg.lambda_lo) * (cfg.lambda_hi - lam) /
                               (cfg.lambda_hi - cfg.lambda_lo);
        (*grad)(l.vlam + k) = dlam_dv * dlam_sum(k) +
                              (cfg.lambda_hi + cfg.lambda_lo - 2.0 * lam) /
                                  (cfg.lambda_hi - cfg.lambda_lo);
      }
    }
  } else {
    for (int k = 0; k < K; ++k) {
      const double inv = logistic(u(l.w + k));  // 1/omega in (0,1), uniform prior
      const double omega = 1.0 / inv;
      lp += std::log(inv) + std::log1p(-inv);  // transform Jacobian
      const double log_omega = std::log(omega);
      const double om1 = omega - 1.0;
      double dom_sum = 0.0;
      for (int i = 0; i < n; ++i) {
        const double xi = std::exp(delta(i) + rho(k));
        const double a = xi / om1;
        const double y = d.y(i, k);
        lp += std::lgamma(y + a) - std::lgamma(a) - std::lgamma(y + 1.0) - a * log_omega +
              y * (std::log(om1) - log_omega);
        if (grad) {
          const double psi_diff = digamma(y + a) - digamma(a);
          const double dA = psi_diff - log_omega;  // d/da of the a-terms
          ddelta(i) += a * dA;
          drho(k) += a * dA;
          const double da_dom = -a / om1;
          dom_sum += dA * da_dom - a / omega + y * (1.0 / om1 - 1.0 / omega);
        }
      }
      if (grad) {
        // d omega / d w = -(omega - 1); Jacobian derivative: 1 - 2*inv
        (*grad)(l.w + k) = dom_sum * (-(omega - 1.0)) + (1.0 - 2.0 * inv);
      }
    }
  }

  // priors on delta, rho and the hyperparameters
  lp += -0.5 * delta.squaredNorm() / (sigma_delta * sigma_delta) -
        n * (std::log(sigma_delta) + 0.5 * kLog2Pi);
  lp += -0.5 * (rho.array() - mu_rho).square().sum() / (sigma_rho * sigma_rho) -
        K * (std::log(sigma_rho) + 0.5 * kLog2Pi);
  lp += density::half_cauchy_lpdf(sigma_delta, cfg.sigma_half_cauchy_scale) + u(l.lsd);
  lp += density::half_cauchy_lpdf(sigma_rho, cfg.sigma_half_cauchy_scale) + u(l.lsr);
  lp += -0.5 * mu_rho * mu_rho / cfg.mu_rho_prior_variance -
        0.5 * std::log(2.0 * M_PI * cfg.mu_rho_prior_variance);
  if (!std::isfinite(lp)) return kNegInf;

  if (grad) {
    const double s2d = sigma_delta * sigma_delta;
    const double s2r = sigma_rho * sigma_rho;
    grad->segment(l.delta, n) = ddelta - delta / s2d;
    grad->segment(l.rho, K) = drho - ((rho.array() - mu_rho) / s2r).matrix();
    const double hs = cfg.sigma_half_cauchy_scale;
    (*grad)(l.lsd) = (delta.array().square() / s2d - 1.0).sum() -
                     2.0 * s2d / (hs * hs + s2d) + 1.0;
    (*grad)(l.mu_rho) =
        (rho.array() - mu_rho).sum() / s2r - mu_rho / cfg.mu_rho_prior_variance;
    (*grad)(l.lsr) = ((rho.array() - mu_rho).square() / s2r - 1.0).sum() -
                     2.0 * s2r / (hs * hs + s2r) + 1.0;
  }
  return lp;
}

Eigen::VectorXd zheng_init(const PreparedDesign& d, const ZhengLayout& l,
                           const ZhengConfig& cfg) {
  Eigen::VectorXd u = Eigen::VectorXd::Zero(l.dim);
  const Eigen::VectorXd row_mean = d.y.rowwise().mean();
  double mean_degree = 0.0;
  for (int i = 0; i < l.n; ++i) {
    u(l.delta + i) = std::log1p(row_mean(i));
    mean_degree += 1.0 + row_mean(i);
  }
  mean_degree /= static_cast<double>(l.n);
  for (int k = 0; k < l.K; ++k)
    u(l.rho + k) = std::log((d.y.col(k).mean() + 1e-3) / mean_degree);
  if (l.poisson) {
    // start lambda near 1
    const double s = (1.0 - cfg.lambda_lo) / (cfg.lambda_hi - cfg.lambda_lo);
    for (int k = 0; k < l.K; ++k) u(l.vlam + k) = logit(s);
  } else {
    for (int k = 0; k < l.K; ++k) u(l.w + k) = logit(0.5);  // omega = 2
  }
  return u;
}

std::vector<std::string> zheng_coord_names(const ZhengLayout& l) {
  std::vector<std::string> names(static_cast<std::size_t>(l.dim));
  for (int i = 0; i < l.n; ++i) names[static_cast<std::size_t>(l.delta + i)] = "delta[" + std::to_string(i + 1) + "]";
  for (int k = 0; k < l.K; ++k) names[static_cast<std::size_t>(l.rho + k)] = "rho[" + std::to_string(k + 1) + "]";
  if (l.poisson) {
    for (int i = 0; i < l.n; ++i)
      for (int k = 0; k < l.K; ++k)
        names[static_cast<std::size_t>(l.g + i * l.K + k)] =
            "log_gamma[" + std::to_string(i + 1) + "," + std::to_string(k + 1) + "]";
    for (int k = 0; k < l.K; ++k)
      names[static_cast<std::size_t>(l.vlam + k)] = "v_lambda[" + std::to_string(k + 1) + "]";
  } else {
    for (int k = 0; k < l.K; ++k)
      names[static_cast<std::size_t>(l.w + k)] = "w_omega[" + std::to_string(k + 1) + "]";
  }
  names[static_cast<std::size_t>(l.lsd)] = "log_sigma_delta";
  names[static_cast<std::size_t>(l.mu_rho)] = "mu_rho";
  names[static_cast<std::size_t>(l.lsr)] = "log_sigma_rho";
  return names;
}

}  // namespace

PosteriorTarget zheng_target(const PreparedDesign& d, ZhengVariant variant,
                             const ZhengConfig& cfg) {
  if (d.y.hasNaN()) throw std::invalid_argument("zheng_target: design has missing counts");
  const ZhengLayout l = zheng_layout(d, variant);
  PosteriorTarget t;
  t.dim = l.dim;
  const PreparedDesign* dp = &d;
  t.log_density = [dp, l, cfg](const Eigen::VectorXd& u) {
    return zheng_eval(*dp, l, cfg, u, nullptr);
  };
  t.gradient = [dp, l, cfg](const Eigen::VectorXd& u) {
    Eigen::VectorXd g(l.dim);
    zheng_eval(*dp, l, cfg, u, &g);
    return g;
  };
  t.init = zheng_init(d, l, cfg);
  t.coord_names = zheng_coord_names(l);
  return t;
}

Draws fit_zheng(const PreparedDesign& d, ZhengVariant variant, const ChainConfig& cc,
                const ZhengConfig& cfg) {
  const ZhengLayout l = zheng_layout(d, variant);
  Draws raw = run_hmc(zheng_target(d, variant, cfg), cc);

  // natural-scale report
  Draws out;
  out.seed = raw.seed;
  out.warmup = raw.warmup;
  out.thin = raw.thin;
  out.chain_meta = raw.chain_meta;
  out.divergence_warning = raw.divergence_warning;
  for (int i = 0; i < l.n; ++i) out.param_names.push_back("delta[" + std::to_string(i + 1) + "]");
  for (int k = 0; k < l.K; ++k) out.param_names.push_back("rho[" + std::to_string(k + 1) + "]");
  if (l.poisson) {
    for (int k = 0; k < l.K; ++k)
      out.param_names.push_back("lambda[" + std::to_string(k + 1) + "]");
    for (int i = 0; i < l.n; ++i)
      for (int k = 0; k < l.K; ++k)
        out.param_names.push_back("gamma[" + std::to_string(i + 1) + "," +
                                  std::to_string(k + 1) + "]");
  } else {
    for (int k = 0; k < l.K; ++k)
      out.param_names.push_back("omega_disp[" + std::to_string(k + 1) + "]");
  }
  out.param_names.push_back("sigma_delta");
  out.param_names.push_back("mu_rho");
  out.param_names.push_back("sigma_rho");

  const int rdim = static_cast<int>(out.param_names.size());
  for (const auto& chain : raw.values) {
    Eigen::MatrixXd rep(chain.rows(), rdim);
    for (long it = 0; it < chain.rows(); ++it) {
      const Eigen::VectorXd u = chain.row(it).transpose();
      int pos = 0;
      for (int i = 0; i < l.n; ++i) rep(it, pos++) = u(l.delta + i);
      for (int k = 0; k < l.K; ++k) rep(it, pos++) = u(l.rho + k);
      if (l.poisson) {
        for (int k = 0; k < l.K; ++k)
          rep(it, pos++) = cfg.lambda_lo +
                           (cfg.lambda_hi - cfg.lambda_lo) * logistic(u(l.vlam + k));
        for (int i = 0; i < l.n; ++i)
          for (int k = 0; k < l.K; ++k) rep(it, pos++) = std::exp(u(l.g + i * l.K + k));
      } else {
        for (int k = 0; k < l.K; ++k) rep(it, pos++) = 1.0 / logistic(u(l.w + k));
      }
      rep(it, pos++) = std::exp(u(l.lsd));
      rep(it, pos++) = u(l.mu_rho);
      rep(it, pos++) = std::exp(u(l.lsr));
    }
    out.values.push_back(std::move(rep));
  }
  out.info["model"] = l.poisson ? "zheng-poisson" : "zheng-negbin";
  out.info["n"] = std::to_string(l.n);
  out.info["K"] = std::to_string(l.K);
  out.info["total_population"] = std::to_string(d.total_population);
  {
    std::ostringstream ids;
    for (std::size_t k = 0; k < d.groups.size(); ++k) {
      if (k) ids << ',';
      ids << d.groups[k].id;
    }
    out.info["groups"] = ids.str();
  }
  return out;
}

// ---------------------------------------------------------------------------
// Maltiel barrier-effects models

MaltielVariant parse_maltiel_variant(const std::string& s) {
  if (s == "integrated") return MaltielVariant::integrated;
  if (s == "sampled") return MaltielVariant::sampled;
  throw std::invalid_argument("unknown maltiel variant '" + s + "'");
}

namespace {

struct MaltielLayout {
  int n = 0, K = 0;
  std::vector<int> unknown;          // groups whose m is sampled
  std::vector<double> fixed_m;       // per group: N_k/N where known, else NaN
  std::vector<int> m_param_of_group; // group -> index into vm, or -1
  int ld = 0, vm = 0, vr = 0, vq = -1, mu = 0, sigma = 0;
  int dim = 0;
  bool sampled = false;
  Eigen::VectorXd row_sums;
};

MaltielLayout maltiel_layout(const PreparedDesign& d, MaltielVariant variant) {
  MaltielLayout l;
  l.n = d.n();
  l.K = d.num_groups();
  l.sampled = variant == MaltielVariant::sampled;
  l.fixed_m.assign(static_cast<std::size_t>(l.K), std::nan(""));
  l.m_param_of_group.assign(static_cast<std::size_t>(l.K), -1);
  for (int k = 0; k < l.K; ++k) {
    const auto& g = d.groups[static_cast<std::size_t>(k)];
    if (g.known_size) {
      l.fixed_m[static_cast<std::size_t>(k)] = *g.known_size / d.total_population;
    } else {
      l.m_param_of_group[static_cast<std::size_t>(k)] = static_cast<int>(l.unknown.size());
      l.unknown.push_back(k);
    }
  }
  int off = 0;
  l.ld = off;
  off += l.n;
  l.vm = off;
  off += static_cast<int>(l.unknown.size());
  l.vr = off;
  off += l.K;
  if (l.sampled) {
    l.vq = off;
    off += l.n * l.K;
  }
  l.mu = off++;
  l.sigma = off++;
  l.dim = off;
  l.row_sums = d.y.rowwise().sum();
  return l;
}

struct MaltielState {
  double mu, sigma;
  Eigen::VectorXd m;    // per group
  Eigen::VectorXd rho;  // per group dispersion
};

MaltielState maltiel_state(const MaltielLayout& l, const MaltielConfig& cfg,
                           const Eigen::VectorXd& u) {
  MaltielState s;
  s.mu = cfg.mu_lo + (cfg.mu_hi - cfg.mu_lo) * logistic(u(l.mu));
  s.sigma = cfg.sigma_lo + (cfg.sigma_hi - cfg.sigma_lo) * logistic(u(l.sigma));
  s.m.resize(l.K);
  s.rho.resize(l.K);
  for (int k = 0; k < l.K; ++k) {
    const int mp = l.m_param_of_group[static_cast<std::size_t>(k)];
    s.m(k) = mp >= 0 ? logistic(u(l.vm + mp)) : l.fixed_m[static_cast<std::size_t>(k)];
    s.rho(k) = logistic(u(l.vr + k));
  }
  return s;
}

// terms of the log posterior tied to cell (i,k)
double maltiel_cell(const PreparedDesign& d, const MaltielLayout& l, const MaltielState& s,
                    const Eigen::VectorXd& u, int i, int k) {
  const long n_trials = static_cast<long>(std::floor(std::exp(u(l.ld + i))));
  const long y = static_cast<long>(d.y(i, k));
  double a, b;
  density::beta_shapes_from_mean_disp(s.m(k), s.rho(k), &a, &b);
  if (!l.sampled) return density::beta_binomial_lpmf(y, n_trials, a, b);
  const double q = logistic(u(l.vq + i * l.K + k));
  // binomial likelihood + beta prior on q + logit-transform Jacobian
  return density::binomial_lpmf(y, n_trials, q) + density::beta_lpdf(q, a, b) +
         std::log(q) + std::log1p(-q);
}

double maltiel_row_terms(const PreparedDesign& d, const MaltielLayout& l,
                         const MaltielState& s, const Eigen::VectorXd& u, int i) {
  const double ld = u(l.ld + i);
  const double dval = std::exp(ld);
  if (std::floor(dval) < l.row_sums(i)) return kNegInf;  // degree must cover reports
  double lp = density::normal_lpdf(ld, s.mu, s.sigma);   // lognormal prior, log-scale
  for (int k = 0; k < l.K; ++k) lp += maltiel_cell(d, l, s, u, i, k);
  return lp;
}

double maltiel_column_terms(const PreparedDesign& d, const MaltielLayout& l,
                            const MaltielState& s, const Eigen::VectorXd& u, int k) {
  double lp = 0.0;
  for (int i = 0; i < l.n; ++i) lp += maltiel_cell(d, l, s, u, i, k);
  return lp;
}

double maltiel_component(const PreparedDesign& d, const MaltielLayout& l,
                         const MaltielConfig& cfg, const Eigen::VectorXd& u, int idx) {
  const MaltielState s = maltiel_state(l, cfg, u);
  if (idx >= l.ld && idx < l.ld + l.n) return maltiel_row_terms(d, l, s, u, idx - l.ld);
  if (idx >= l.vm && idx < l.vm + static_cast<int>(l.unknown.size())) {
    const int k = l.unknown[static_cast<std::size_t>(idx - l.vm)];
    // prior on m proportional to 1/m plus logit Jacobian -> log(1-m)
    return std::log1p(-s.m(k)) + maltiel_column_terms(d, l, s, u, k);
  }
  if (idx >= l.vr && idx < l.vr + l.K) {
    const int k = idx - l.vr;
    const double r = s.rho(k);
    // uniform prior on rho plus logit Jacobian
    return std::log(r) + std::log1p(-r) + maltiel_column_terms(d, l, s, u, k);
  }
  if (l.sampled && idx >= l.vq && idx < l.vq + l.n * l.K) {
    const int cell = idx - l.vq;
    return maltiel_cell(d, l, s, u, cell / l.K, cell % l.K);
  }
  if (idx == l.mu || idx == l.sigma) {
    // uniform hyperpriors; Jacobians of the bounded transforms
    const double sm = logistic(u(l.mu)), ss = logistic(u(l.sigma));
    double lp = std::log(sm) + std::log1p(-sm) + std::log(ss) + std::log1p(-ss);
    for (int i = 0; i < l.n; ++i) lp += density::normal_lpdf(u(l.ld + i), s.mu, s.sigma);
    return lp;
  }
  throw std::invalid_argument("maltiel_component: coordinate out of range");
}

double maltiel_full(const PreparedDesign& d, const MaltielLayout& l, const MaltielConfig& cfg,
                    const Eigen::VectorXd& u) {
  const MaltielState s = maltiel_state(l, cfg, u);
  double lp = 0.0;
  for (int i = 0; i < l.n; ++i) {
    const double rt = maltiel_row_terms(d, l, s, u, i);
    if (!std::isfinite(rt)) return kNegInf;
    lp += rt;
  }
  for (int k = 0; k < l.K; ++k) {
    const int mp = l.m_param_of_group[static_cast<std::size_t>(k)];
    if (mp >= 0) lp += std::log1p(-s.m(k));
    lp += std::log(s.rho(k)) + std::log1p(-s.rho(k));
  }
  const double sm = logistic(u(l.mu)), ss = logistic(u(l.sigma));
  lp += std::log(sm) + std::log1p(-sm) + std::log(ss) + std::log1p(-ss);
  return lp;
}

Eigen::VectorXd maltiel_init(const PreparedDesign& d, const MaltielLayout& l,
                             const MaltielConfig& cfg) {
  Eigen::VectorXd u = Eigen::VectorXd::Zero(l.dim);
  double mean_degree = 0.0;
  for (int i = 0; i < l.n; ++i) {
    u(l.ld + i) = std::log1p(l.row_sums(i)) + 1.0;
    mean_degree += std::exp(u(l.ld + i));
  }
  mean_degree /= static_cast<double>(l.n);
  for (std::size_t j = 0; j < l.unknown.size(); ++j) {
    const int k = l.unknown[j];
    const double m0 =
        std::clamp(d.y.col(k).mean() / mean_degree, 1e-6, 0.9);
    u(l.vm + static_cast<int>(j)) = logit(m0);
  }
  for (int k = 0; k < l.K; ++k) u(l.vr + k) = logit(0.05);
  if (l.sampled) {
    for (int i = 0; i < l.n; ++i)
      for (int k = 0; k < l.K; ++k) {
        const double q0 = std::clamp((d.y(i, k) + 0.5) / (std::exp(u(l.ld + i)) + 1.0), 1e-6,
                                     1.0 - 1e-6);
        u(l.vq + i * l.K + k) = logit(q0);
      }
  }
  u(l.mu) = logit(std::clamp((5.0 - cfg.mu_lo) / (cfg.mu_hi - cfg.mu_lo), 0.01, 0.99));
  u(l.sigma) = logit(std::clamp((0.7 - cfg.sigma_lo) / (cfg.sigma_hi - cfg.sigma_lo), 0.01, 0.99));
  return u;
}

}  // namespace

PosteriorTarget maltiel_target(const PreparedDesign& d, MaltielVariant variant,
                               const MaltielConfig& cfg) {
  if (d.y.hasNaN()) throw std::invalid_argument("maltiel_target: design has missing counts");
  const MaltielLayout l = maltiel_layout(d, variant);
  PosteriorTarget t;
  t.dim = l.dim;
  const PreparedDesign* dp = &d;
  t.log_density = [dp, l, cfg](const Eigen::VectorXd& u) { return maltiel_full(*dp, l, cfg, u); };
  t.component_log_density = [dp, l, cfg](const Eigen::VectorXd& u, int idx) {
    return maltiel_component(*dp, l, cfg, u, idx);
  };
  t.init = maltiel_init(d, l, cfg);
  return t;
}

Draws fit_maltiel_barrier(const PreparedDesign& d, MaltielVariant variant,
                          const ChainConfig& cc, const MaltielConfig& cfg) {
  const MaltielLayout l = maltiel_layout(d, variant);
  Draws raw = run_rw_metropolis(maltiel_target(d, variant, cfg), cc);

  Draws out;
  out.seed = raw.seed;
  out.warmup = raw.warmup;
  out.thin = raw.thin;
  out.chain_meta = raw.chain_meta;
  for (int i = 0; i < l.n; ++i) out.param_names.push_back("d[" + std::to_string(i + 1) + "]");
  for (int k : l.unknown) out.param_names.push_back("m[" + std::to_string(k + 1) + "]");
  for (int k = 0; k < l.K; ++k)
    out.param_names.push_back("rho_disp[" + std::to_string(k + 1) + "]");
  if (l.sampled)
    for (int i = 0; i < l.n; ++i)
      for (int k = 0; k < l.K; ++k)
        out.param_names.push_back("q[" + std::to_string(i + 1) + "," + std::to_string(k + 1) +
                                  "]");
  out.param_names.push_back("mu");
  out.param_names.push_back("sigma");

  const int rdim = static_cast<int>(out.param_names.size());
  for (const auto& chain : raw.values) {
    Eigen::MatrixXd rep(chain.rows(), rdim);
    for (long it = 0; it < chain.rows(); ++it) {
      const Eigen::VectorXd u = chain.row(it).transpose();
      int pos = 0;
      for (int i = 0; i < l.n; ++i) rep(it, pos++) = std::exp(u(l.ld + i));
      for (std::size_t j = 0; j < l.unknown.size(); ++j)
        rep(it, pos++) = logistic(u(l.vm + static_cast<int>(j)));
      for (int k = 0; k < l.K; ++k) rep(it, pos++) = logistic(u(l.vr + k));
      if (l.sampled)
        for (int i = 0; i < l.n; ++i)
          for (int k = 0; k < l.K; ++k) rep(it, pos++) = logistic(u(l.vq + i * l.K + k));
      rep(it, pos++) = cfg.mu_lo + (cfg.mu_hi - cfg.mu_lo) * logistic(u(l.mu));
      rep(it, pos++) = cfg.sigma_lo + (cfg.sigma_hi - cfg.sigma_lo) * logistic(u(l.sigma));
    }
    out.values.push_back(std::move(rep));
  }
  out.info["model"] =
      variant == MaltielVariant::integrated ? "maltiel-integrated" : "maltiel-sampled";
  out.info["n"] = std::to_string(l.n);
  out.info["K"] = std::to_string(l.K);
  out.info["total_population"] = std::to_string(d.total_population);
  {
    std::ostringstream fixed;
    for (int k = 0; k < l.K; ++k) {
      if (k) fixed << ',';
      if (!std::isnan(l.fixed_m[static_cast<std::size_t>(k)]))
        fixed << l.fixed_m[static_cast<std::size_t>(k)];
    }
    out.info["m_fixed"] = fixed.str();
  }
  return out;
}

// ---------------------------------------------------------------------------
// Residual correlation

namespace {

std::vector<double> parse_fixed_m(const std::string& csv, int K) {
  std::vector<double> out(static_cast<std::size_t>(K), std::nan(""));
  std::stringstream ss(csv);
  std::string item;
  int k = 0;
  while (std::getline(ss, item, ',') && k < K) {
    if (!item.empty()) out[static_cast<std::size_t>(k)] = std::stod(item);
    ++k;
  }
  return out;
}

}  // namespace

Eigen::MatrixXd residual_correlation(const Draws& draws, const Eigen::MatrixXd& y,
                                     ResidualKind kind, long max_draws) {
  const int n = static_cast<int>(y.rows());
  const int K = static_cast<int>(y.cols());
  std::unordered_map<std::string, int> idx;
  for (std::size_t i = 0; i < draws.param_names.size(); ++i)
    idx[draws.param_names[i]] = static_cast<int>(i);
  auto get = [&idx](const std::string& name) {
    auto it = idx.find(name);
    if (it == idx.end()) throw std::invalid_argument("residual_correlation: draws lack '" + name + "'");
    return it->second;
  };

  std::vector<double> fixed_m;
  if (kind == ResidualKind::maltiel_integrated)
    fixed_m = parse_fixed_m(draws.info.count("m_fixed") ? draws.info.at("m_fixed") : "", K);

  // resolve parameter columns once
  const bool zheng =
      kind == ResidualKind::zheng_poisson || kind == ResidualKind::zheng_negbin;
  std::vector<int> row_idx(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i)
    row_idx[static_cast<std::size_t>(i)] =
        get((zheng ? "delta[" : "d[") + std::to_string(i + 1) + "]");
  std::vector<int> col_idx(static_cast<std::size_t>(K), -1);
  for (int k = 0; k < K; ++k) {
    if (zheng) col_idx[static_cast<std::size_t>(k)] = get("rho[" + std::to_string(k + 1) + "]");
    else if (kind == ResidualKind::maltiel_integrated &&
             std::isnan(fixed_m[static_cast<std::size_t>(k)]))
      col_idx[static_cast<std::size_t>(k)] = get("m[" + std::to_string(k + 1) + "]");
  }
  std::vector<int> cell_idx;
  if (kind == ResidualKind::zheng_poisson || kind == ResidualKind::maltiel_sampled) {
    const std::string family = kind == ResidualKind::zheng_poisson ? "gamma[" : "q[";
    for (int i = 0; i < n; ++i)
      for (int k = 0; k < K; ++k)
        cell_idx.push_back(
            get(family + std::to_string(i + 1) + "," + std::to_string(k + 1) + "]"));
  }

  const long total = draws.total_draws();
  const long use = (max_draws <= 0 || max_draws >= total) ? total : max_draws;
  Eigen::MatrixXd acc = Eigen::MatrixXd::Zero(K, K);
  long used = 0;
  bool warned = false;

  Eigen::MatrixXd resid(n, K);
  for (long j = 0; j < use; ++j) {
    const long pooled = j * total / use;
    const int chain = static_cast<int>(pooled / draws.kept());
    const long it = pooled % draws.kept();
    const auto& mat = draws.values[static_cast<std::size_t>(chain)];

    for (int i = 0; i < n; ++i) {
      const double rv = mat(it, row_idx[static_cast<std::size_t>(i)]);
      for (int k = 0; k < K; ++k) {
        double fitted = 0.0;
        switch (kind) {
          case ResidualKind::zheng_poisson:
            fitted = std::exp(rv + mat(it, col_idx[static_cast<std::size_t>(k)])) *
                     mat(it, cell_idx[static_cast<std::size_t>(i * K + k)]);
            break;
          case ResidualKind::zheng_negbin:
            fitted = std::exp(rv + mat(it, col_idx[static_cast<std::size_t>(k)]));
            break;
          case ResidualKind::maltiel_integrated: {
            const double m = std::isnan(fixed_m[static_cast<std::size_t>(k)])
                                 ? mat(it, col_idx[static_cast<std::size_t>(k)])
                                 : fixed_m[static_cast<std::size_t>(k)];
            fitted = rv * m;
            break;
          }
          case ResidualKind::maltiel_sampled:
            fitted = rv * mat(it, cell_idx[static_cast<std::size_t>(i * K + k)]);
            break;
        }
        resid(i, k) = std::sqrt(y(i, k)) - std::sqrt(fitted);
      }
    }
    // sample correlation of this draw's residual matrix
    Eigen::MatrixXd corr(K, K);
    for (int a = 0; a < K; ++a) corr(a, a) = 1.0;
    for (int a = 0; a < K; ++a)
      for (int b = a + 1; b < K; ++b) {
        const double c = pearson_correlation(resid.col(a), resid.col(b));
        if (std::isnan(c) && !warned) {
          log_warn("residual_correlation: constant residual column produced NaN");
          warned = true;
        }
        corr(a, b) = corr(b, a) = c;
      }
    acc += corr;
    ++used;
  }
  return acc / static_cast<double>(used);
}

void write_residual_corr_csv(const Eigen::MatrixXd& corr, const std::string& path) {
  std::vector<std::string> header;
  header.push_back("group");
  for (long k = 0; k < corr.cols(); ++k) header.push_back("g" + std::to_string(k + 1));
  std::vector<std::vector<std::string>> rows;
  for (long i = 0; i < corr.rows(); ++i) {
    std::vector<std::string> row{"g" + std::to_string(i + 1)};
    for (long j = 0; j < corr.cols(); ++j) {
      std::ostringstream os;
      os.precision(10);
      os << corr(i, j);
      row.push_back(os.str());
    }
    rows.push_back(std::move(row));
  }
  write_csv(path, header, rows);
}

}  // namespace nsum
