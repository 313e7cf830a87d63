#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <functional>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

namespace nsum {

/// Numeric sampler failure (exit code 2 at the CLI), as opposed to bad input.
struct sampler_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/**
 * An unconstrained-space posterior handed to the samplers.  log_density must
 * be reentrant (pure given the parameter vector).  gradient is required by
 * HMC only.  component_log_density(x, i), when provided, returns just the
 * terms of log_density involving coordinate i; the random-walk sampler uses
 * it to make single-site updates cheap.
 */
struct PosteriorTarget {
  int dim = 0;
  std::function<double(const Eigen::VectorXd&)> log_density;
  std::function<Eigen::VectorXd(const Eigen::VectorXd&)> gradient;           // optional
  std::function<double(const Eigen::VectorXd&, int)> component_log_density;  // optional
  Eigen::VectorXd init;                  // empty -> zeros
  std::vector<std::string> coord_names;  // unconstrained coordinates, optional
};

struct ChainConfig {
  int chains = 4;
  int iterations = 2000;  // total per chain, warmup included
  int warmup = 1000;
  int thin = 1;
  std::uint64_t seed = 20240901;
  double target_accept = 0.8;   // HMC dual-averaging target
  int leapfrog_steps = 24;      // mean trajectory length, jittered +-10%
  double init_jitter = 0.1;
  int threads = 1;

  int kept_per_chain() const { return (iterations - warmup) / thin; }
  void validate() const;

  static ChainConfig desk();   // 4 x 2000, warmup 1000, thin 1
  static ChainConfig paper();  // 3 x 10000, warmup 2000, thin 5
};

struct ChainMeta {
  double mean_accept = 0.0;
  double step_size = 0.0;
  int divergences = 0;  // post-warmup
};

/// Posterior draws across chains, on whatever scale the producer chose.
struct Draws {
  std::vector<std::string> param_names;
  // one matrix per chain: kept-iterations x dim
  std::vector<Eigen::MatrixXd> values;
  std::uint64_t seed = 0;
  int warmup = 0;
  int thin = 1;
  std::vector<ChainMeta> chain_meta;
  bool divergence_warning = false;  // >10% divergent transitions post-warmup
  std::map<std::string, std::string> info;

  int num_chains() const { return static_cast<int>(values.size()); }
  int kept() const { return values.empty() ? 0 : static_cast<int>(values[0].rows()); }
  int dim() const { return static_cast<int>(param_names.size()); }
  long total_draws() const { return static_cast<long>(num_chains()) * kept(); }

  int param_index(const std::string& name) const;  // throws if unknown
  bool has_param(const std::string& name) const;
  // pooled column across chains, chain-major
  Eigen::VectorXd pooled(const std::string& name) const;
  Eigen::VectorXd pooled(int index) const;
};

// Relative-error check of an analytic gradient against central finite
// differences at `points` jittered positions.  Returns the worst relative
// error over coordinates where |gradient| > grad_floor.
double max_gradient_rel_error(const PosteriorTarget& target, std::uint64_t seed,
                              int points = 20, double jitter = 0.5,
                              double grad_floor = 1e-3);

}  // namespace nsum
