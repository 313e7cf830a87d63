#include "nsum/hmc.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <thread>
#include <vector>

#include "nsum/log.hpp"
#include "nsum/rng.hpp"

namespace nsum {

namespace {

// Hoffman & Gelman dual averaging for the log step size.
class DualAverage {
 public:
  DualAverage(double eps0, double delta)
      : mu_(std::log(10.0 * eps0)), log_eps_(std::log(eps0)), delta_(delta) {}

  void update(double accept) {
    ++m_;
    const double w = 1.0 / (m_ + t0_);
    hbar_ = (1.0 - w) * hbar_ + w * (delta_ - accept);
    log_eps_ = mu_ - std::sqrt(m_) / gamma_ * hbar_;
    const double w2 = std::pow(m_, -kappa_);
    log_eps_bar_ = w2 * log_eps_ + (1.0 - w2) * log_eps_bar_;
  }

  double eps() const { return std::exp(log_eps_); }
  double eps_final() const { return std::exp(log_eps_bar_); }
  void restart(double eps0) {
    mu_ = std::log(10.0 * eps0);
    log_eps_ = std::log(eps0);
    log_eps_bar_ = 0.0;
    hbar_ = 0.0;
    m_ = 0.0;
  }

 private:
  double mu_;
  double log_eps_;
  double log_eps_bar_ = 0.0;
  double hbar_ = 0.0;
  double m_ = 0.0;
  const double delta_;
  const double gamma_ = 0.05, t0_ = 10.0, kappa_ = 0.75;
};

// Welford accumulator for the diagonal mass matrix.
class VarianceWindow {
 public:
  explicit VarianceWindow(int dim) : mean_(Eigen::VectorXd::Zero(dim)), m2_(Eigen::VectorXd::Zero(dim)) {}

  void add(const Eigen::VectorXd& x) {
    ++n_;
    const Eigen::VectorXd delta = x - mean_;
    mean_ += delta / static_cast<double>(n_);
    m2_ += delta.cwiseProduct(x - mean_);
  }

  long count() const { return n_; }

  // regularized variance (Stan-style shrinkage toward unity)
  Eigen::VectorXd regularized() const {
    const double n = static_cast<double>(n_);
    Eigen::VectorXd v = m2_ / std::max(1.0, n - 1.0);
    v = (n / (n + 5.0)) * v.array() + 1e-3 * (5.0 / (n + 5.0));
    return v;
  }

  void reset() {
    n_ = 0;
    mean_.setZero();
    m2_.setZero();
  }

 private:
  long n_ = 0;
  Eigen::VectorXd mean_, m2_;
};

struct ChainResult {
  Eigen::MatrixXd kept;
  ChainMeta meta;
};

struct LeapfrogOutcome {
  Eigen::VectorXd q;
  double accept_prob = 0.0;
  bool divergent = false;
  bool accepted = false;
};

constexpr double kMaxEnergyError = 1000.0;

LeapfrogOutcome hmc_transition(const PosteriorTarget& target, const Eigen::VectorXd& q0,
                               double lp0, const Eigen::VectorXd& grad0,
                               const Eigen::VectorXd& inv_mass, double eps, int steps,
                               RngStream& rng, double* lp_out, Eigen::VectorXd* grad_out) {
  const int dim = target.dim;
  Eigen::VectorXd p(dim);
  for (int i = 0; i < dim; ++i) p(i) = rng.normal() / std::sqrt(inv_mass(i));

  const double h0 = -lp0 + 0.5 * p.dot(inv_mass.cwiseProduct(p));

  Eigen::VectorXd q = q0;
  Eigen::VectorXd grad = grad0;
  double lp = lp0;
  bool divergent = false;

  p += 0.5 * eps * grad;
  for (int s = 0; s < steps; ++s) {
    q += eps * inv_mass.cwiseProduct(p);
    lp = target.log_density(q);
    if (!std::isfinite(lp)) {
      divergent = true;
      break;
    }
    grad = target.gradient(q);
    if (s + 1 < steps) p += eps * grad;
  }
  if (!divergent) p += 0.5 * eps * grad;

  LeapfrogOutcome out;
  double accept = 0.0;
  if (!divergent) {
    const double h1 = -lp + 0.5 * p.dot(inv_mass.cwiseProduct(p));
    const double de = h1 - h0;
    if (!std::isfinite(de) || de > kMaxEnergyError) {
      divergent = true;
    } else {
      accept = std::min(1.0, std::exp(-de));
    }
  }
  out.divergent = divergent;
  out.accept_prob = accept;
  if (!divergent && rng.uniform() < accept) {
    out.q = q;
    out.accepted = true;
    *lp_out = lp;
    *grad_out = grad;
  } else {
    out.q = q0;
    *lp_out = lp0;
    *grad_out = grad0;
  }
  return out;
}

double find_initial_step(const PosteriorTarget& target, const Eigen::VectorXd& q,
                         const Eigen::VectorXd& inv_mass, RngStream& rng) {
  // double/halve until the one-step acceptance crosses 0.5
  double eps = 0.1;
  const double lp0 = target.log_density(q);
  const Eigen::VectorXd grad0 = target.gradient(q);
  auto energy_change = [&](double e) {
    Eigen::VectorXd p(target.dim);
    for (int i = 0; i < target.dim; ++i) p(i) = rng.normal() / std::sqrt(inv_mass(i));
    const double h0 = -lp0 + 0.5 * p.dot(inv_mass.cwiseProduct(p));
    Eigen::VectorXd q1 = q, g = grad0;
    p += 0.5 * e * g;
    q1 += e * inv_mass.cwiseProduct(p);
    const double lp1 = target.log_density(q1);
    if (!std::isfinite(lp1)) return kMaxEnergyError + 1.0;
    p += 0.5 * e * target.gradient(q1);
    return -lp1 + 0.5 * p.dot(inv_mass.cwiseProduct(p)) - h0;
  };
  constexpr double kLog2 = 0.6931471805599453;
  double de = energy_change(eps);
  const bool increase = std::isfinite(de) && de < kLog2;  // one-step accept > 0.5
  const double factor = increase ? 2.0 : 0.5;
  for (int it = 0; it < 50; ++it) {
    eps *= factor;
    de = energy_change(eps);
    if (increase && !(std::isfinite(de) && de < kLog2)) {
      eps *= 0.5;  // step back from the overshoot
      break;
    }
    if (!increase && std::isfinite(de) && de < kLog2) break;
    if (eps < 1e-8 || eps > 10.0) break;
  }
  return std::clamp(eps, 1e-8, 10.0);
}

ChainResult run_chain(const PosteriorTarget& target, const ChainConfig& cfg, int chain_id) {
  const int dim = target.dim;
  RngStream rng(cfg.seed, static_cast<std::uint64_t>(chain_id) + 1);

  // jittered initialization; retry until the log density is finite
  Eigen::VectorXd base = target.init.size() == dim ? target.init : Eigen::VectorXd::Zero(dim);
  Eigen::VectorXd q;
  double lp = -std::numeric_limits<double>::infinity();
  for (int attempt = 0; attempt < 100; ++attempt) {
    q = base;
    for (int i = 0; i < dim; ++i) q(i) += cfg.init_jitter * (2.0 * rng.uniform() - 1.0);
    lp = target.log_density(q);
    if (std::isfinite(lp)) break;
  }
  if (!std::isfinite(lp))
    throw sampler_error("run_hmc: non-finite log density at initialization after 100 jittered retries");
  Eigen::VectorXd grad = target.gradient(q);

  Eigen::VectorXd inv_mass = Eigen::VectorXd::Ones(dim);
  double eps = find_initial_step(target, q, inv_mass, rng);
  DualAverage da(eps, cfg.target_accept);

  // warmup schedule: fast start, doubling variance windows, fast tail
  const int warmup = cfg.warmup;
  int init_buf = std::min(75, warmup / 4);
  int term_buf = std::min(50, warmup / 8);
  int window_start = init_buf;
  int window_size = 25;
  int window_end = std::min(window_start + window_size, warmup - term_buf);
  VarianceWindow var(dim);

  const int kept_n = cfg.kept_per_chain();
  ChainResult res;
  res.kept.resize(kept_n, dim);

  long accepted = 0, post_iters = 0;
  double accept_sum = 0.0;
  int kept_row = 0;

  for (int it = 0; it < cfg.iterations; ++it) {
    const bool in_warmup = it < warmup;
    // jittered trajectory length
    const int lo = std::max(1, static_cast<int>(std::floor(0.9 * cfg.leapfrog_steps)));
    const int hi = std::max(lo, static_cast<int>(std::ceil(1.1 * cfg.leapfrog_steps)));
    const int steps = lo + static_cast<int>(rng.below(static_cast<std::uint64_t>(hi - lo + 1)));

    LeapfrogOutcome out = hmc_transition(target, q, lp, grad, inv_mass, eps, steps, rng, &lp, &grad);
    q = out.q;

    if (in_warmup) {
      da.update(out.accept_prob);
      eps = da.eps();
      if (it >= window_start && it < window_end) var.add(q);
      if (it + 1 == window_end && window_end < warmup - term_buf) {
        if (var.count() >= 10) inv_mass = var.regularized();
        var.reset();
        window_size *= 2;
        window_start = window_end;
        window_end = std::min(window_start + window_size, warmup - term_buf);
        // if the next window cannot double again, extend it to the buffer edge
        if (warmup - term_buf - window_end < 2 * window_size)
          window_end = warmup - term_buf;
        eps = find_initial_step(target, q, inv_mass, rng);
        da.restart(eps);
      }
      if (it + 1 == warmup) eps = da.eps_final();
    } else {
      accept_sum += out.accept_prob;
      ++post_iters;
      if (out.accepted) ++accepted;
      if (out.divergent) ++res.meta.divergences;
      const int offset = it - warmup;
      if (offset % cfg.thin == 0 && kept_row < kept_n) {
        res.kept.row(kept_row) = q.transpose();
        ++kept_row;
      }
    }
  }
  (void)accepted;
  res.meta.mean_accept = post_iters > 0 ? accept_sum / static_cast<double>(post_iters) : 0.0;
  res.meta.step_size = eps;
  return res;
}

}  // namespace

Draws run_hmc(const PosteriorTarget& target, const ChainConfig& cfg) {
  cfg.validate();
  if (!target.gradient) throw std::invalid_argument("run_hmc: target.gradient is required");
  if (!target.log_density) throw std::invalid_argument("run_hmc: target.log_density is required");

  std::vector<ChainResult> results(static_cast<std::size_t>(cfg.chains));
  if (cfg.threads > 1 && cfg.chains > 1) {
    std::vector<std::thread> pool;
    std::atomic<int> next{0};
    auto worker = [&]() {
      for (;;) {
        const int c = next.fetch_add(1);
        if (c >= cfg.chains) return;
        results[static_cast<std::size_t>(c)] = run_chain(target, cfg, c);
      }
    };
    const int nthreads = std::min(cfg.threads, cfg.chains);
    pool.reserve(static_cast<std::size_t>(nthreads));
    for (int t = 0; t < nthreads; ++t) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  } else {
    for (int c = 0; c < cfg.chains; ++c)
      results[static_cast<std::size_t>(c)] = run_chain(target, cfg, c);
  }

  Draws d;
  d.seed = cfg.seed;
  d.warmup = cfg.warmup;
  d.thin = cfg.thin;
  d.param_names = target.coord_names;
  if (d.param_names.empty()) {
    for (int i = 0; i < target.dim; ++i) d.param_names.push_back("x[" + std::to_string(i + 1) + "]");
  }
  long total_divergent = 0, total_post = 0;
  for (auto& r : results) {
    d.values.push_back(std::move(r.kept));
    d.chain_meta.push_back(r.meta);
    total_divergent += r.meta.divergences;
    total_post += cfg.iterations - cfg.warmup;
  }
  if (total_post > 0 && static_cast<double>(total_divergent) > 0.1 * static_cast<double>(total_post)) {
    d.divergence_warning = true;
    log_warn("run_hmc: more than 10% divergent transitions after warmup");
  }
  return d;
}

}  // namespace nsum
