#include "nsum/metropolis.hpp"

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

struct ChainResult {
  Eigen::MatrixXd kept;
  ChainMeta meta;
};

ChainResult run_chain(const PosteriorTarget& target, const ChainConfig& cfg, int chain_id) {
  const int dim = target.dim;
  RngStream rng(cfg.seed, static_cast<std::uint64_t>(chain_id) + 1);

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
    throw sampler_error(
        "run_rw_metropolis: non-finite log density at initialization after 100 jittered retries");

  const bool componentwise = static_cast<bool>(target.component_log_density);
  Eigen::VectorXd scale = Eigen::VectorXd::Constant(dim, 1.0);
  Eigen::VectorXd accept_count = Eigen::VectorXd::Zero(dim);
  const int adapt_batch = 50;
  int batch_iters = 0;

  const int kept_n = cfg.kept_per_chain();
  ChainResult res;
  res.kept.resize(kept_n, dim);

  double accept_sum = 0.0;
  long post_updates = 0;
  int kept_row = 0;

  for (int it = 0; it < cfg.iterations; ++it) {
    const bool in_warmup = it < cfg.warmup;
    for (int i = 0; i < dim; ++i) {
      const double old = q(i);
      const double prop = old + scale(i) * rng.normal();
      double log_ratio;
      double lp_new = 0.0;
      if (componentwise) {
        const double lp_old_i = target.component_log_density(q, i);
        q(i) = prop;
        const double lp_new_i = target.component_log_density(q, i);
        log_ratio = lp_new_i - lp_old_i;
        q(i) = old;
      } else {
        q(i) = prop;
        lp_new = target.log_density(q);
        log_ratio = lp_new - lp;
        q(i) = old;
      }
      bool accept = false;
      if (std::isfinite(log_ratio) && (log_ratio >= 0.0 || std::log(rng.uniform()) < log_ratio))
        accept = true;
      if (accept) {
        q(i) = prop;
        if (!componentwise) lp = lp_new;
        accept_count(i) += 1.0;
        if (!in_warmup) accept_sum += 1.0;
      }
      if (!in_warmup) ++post_updates;
    }

    if (in_warmup) {
      ++batch_iters;
      if (batch_iters == adapt_batch) {
        for (int i = 0; i < dim; ++i) {
          const double rate = accept_count(i) / static_cast<double>(adapt_batch);
          if (rate > 0.44) scale(i) *= 1.3;
          else if (rate < 0.23) scale(i) /= 1.3;
          else if (rate < 0.35) scale(i) /= 1.05;
        }
        accept_count.setZero();
        batch_iters = 0;
      }
    } else {
      const int offset = it - cfg.warmup;
      if (offset % cfg.thin == 0 && kept_row < kept_n) {
        res.kept.row(kept_row) = q.transpose();
        ++kept_row;
      }
    }
  }
  res.meta.mean_accept = post_updates > 0 ? accept_sum / static_cast<double>(post_updates) : 0.0;
  res.meta.step_size = scale.mean();
  return res;
}

}  // namespace

Draws run_rw_metropolis(const PosteriorTarget& target, const ChainConfig& cfg) {
  cfg.validate();
  if (!target.log_density) throw std::invalid_argument("run_rw_metropolis: target.log_density is required");

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
  if (d.param_names.empty())
    for (int i = 0; i < target.dim; ++i) d.param_names.push_back("x[" + std::to_string(i + 1) + "]");
  for (auto& r : results) {
    d.values.push_back(std::move(r.kept));
    d.chain_meta.push_back(r.meta);
  }
  return d;
}

}  // namespace nsum
