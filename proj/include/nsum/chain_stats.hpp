#pragma once

#include <string>

#include "nsum/posterior.hpp"

namespace nsum {

// Split-chain potential scale reduction factor.  NaN (with a logged warning)
// when the parameter is constant across all draws.
double split_rhat(const Draws& d, const std::string& param);
double split_rhat_col(const Draws& d, int index);

// Autocorrelation-based effective sample size across chains, capped at
// 1.5 x total draws.  NaN for constant parameters.
double ess(const Draws& d, const std::string& param);
double ess_col(const Draws& d, int index);

struct ParamSummary {
  std::string name;
  double mean = 0.0, sd = 0.0;
  double q2_5 = 0.0, q25 = 0.0, q50 = 0.0, q75 = 0.0, q97_5 = 0.0;
  double rhat = 0.0;
  double ess = 0.0;
};

ParamSummary summarize_param(const Draws& d, int index);

double quantile_of_sorted(const std::vector<double>& sorted, double p);
double sample_quantile(Eigen::VectorXd values, double p);

}  // namespace nsum
