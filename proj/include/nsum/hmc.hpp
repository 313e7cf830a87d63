#pragma once

#include "nsum/posterior.hpp"

namespace nsum {

/**
 * Hamiltonian sampler with fixed-length trajectories (step count jittered
 * uniformly over [0.9L, 1.1L]), dual-averaging step-size adaptation, and a
 * diagonal mass matrix estimated over expanding warmup windows.  Both are
 * frozen after warmup.  Deterministic given cfg.seed.
 */
Draws run_hmc(const PosteriorTarget& target, const ChainConfig& cfg);

}  // namespace nsum
