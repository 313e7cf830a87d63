#pragma once

#include "nsum/posterior.hpp"

namespace nsum {

/**
 * Random-walk Metropolis with single-site scans and per-coordinate adaptive
 * proposal scales.  Scales adapt during warmup toward acceptance in the
 * 23-44% band (0.44 target, the single-coordinate optimum) and freeze after.
 * When target.component_log_density is present each site update evaluates
 * only the terms involving that coordinate; otherwise the full log density
 * is used.  Deterministic given cfg.seed.
 */
Draws run_rw_metropolis(const PosteriorTarget& target, const ChainConfig& cfg);

}  // namespace nsum
