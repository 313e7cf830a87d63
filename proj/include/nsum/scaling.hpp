#pragma once

#include <Eigen/Dense>
#include <string>
#include <vector>

#include "nsum/ard.hpp"
#include "nsum/posterior.hpp"

namespace nsum {

enum class ScalingMethod { single, paired, all_raw, all_standardized, correlated };
ScalingMethod parse_scaling_method(const std::string& s);
std::string scaling_method_name(ScalingMethod m);

/**
 * Per-draw scaled prevalence effects.  All methods are draw-wise shifts of
 * rho: rho'^m = rho^m - C^m, with C uniform across groups except for the
 * correlated method, which computes a per-group constant from the draw's
 * correlation rows.  All draws are pooled chain-major.
 */
struct ScaledDraws {
  std::string method;
  std::vector<int> groups_used;  // known groups that fed the constant
  Eigen::MatrixXd rho_scaled;    // draws x K
  Eigen::MatrixXd C;             // draws x 1, or draws x K for correlated
  Eigen::MatrixXd sizes;         // draws x K, N * exp(rho')
};

// Scale by one named group with known size.
ScaledDraws scale_single(const Draws& draws, const PreparedDesign& d,
                         const std::string& group_id);

// Supplementary paired variant: C = C1 + C2/2 with pooled ratios over G1 and
// the secondary sets B2 (numerator) and G2 (denominator).
ScaledDraws scale_paired(const Draws& draws, const PreparedDesign& d,
                         const std::vector<std::string>& g1,
                         const std::vector<std::string>& g2,
                         const std::vector<std::string>& b2);

// Pooled-ratio shift over the known groups: C = log(sum e^rho / sum p).
ScaledDraws scale_all_raw(const Draws& draws, const PreparedDesign& d,
                          const std::vector<int>* known_override = nullptr);

// Size-standardized shift: C = log(mean_k e^{rho_k} / p_k); afterwards the
// per-draw mean ratio over the known groups is exactly one.
ScaledDraws scale_all_standardized(const Draws& draws, const PreparedDesign& d,
                                   const std::vector<int>* known_override = nullptr);

// Correlation-weighted scaling: per draw and target group, known groups are
// weighted by their (negative-clamped, self-zeroed, sum-normalized)
// correlation with the target.  All-zero weights fall back to equal weights
// with a logged warning.  Throws std::invalid_argument("no_correlation_draws")
// when the draws carry no omega entries.
ScaledDraws scale_correlated(const Draws& draws, const PreparedDesign& d,
                             const std::vector<int>* known_override = nullptr);

ScaledDraws scale_draws(const Draws& draws, const PreparedDesign& d, ScalingMethod method,
                        const std::vector<int>* known_override = nullptr,
                        const std::string& single_group = "");

// delta'^m_i = delta^m_i + C^m (the weight-free standardized constant);
// leaves exp(delta + rho) invariant when the same constant scaled rho.
Draws apply_degree_shift(const Draws& draws, const Eigen::VectorXd& c_per_draw);

struct SizeSummaryRow {
  std::string group;
  std::string method;
  double mean = 0, sd = 0, q2_5 = 0, q97_5 = 0;
  double mean_rounded = 0;  // nearest 100, display convention
};

std::vector<SizeSummaryRow> summarize_sizes(const ScaledDraws& s, const PreparedDesign& d);
void write_sizes_csv(const std::vector<SizeSummaryRow>& rows, const std::string& path);

}  // namespace nsum
