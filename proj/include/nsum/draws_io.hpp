#pragma once

#include <string>
#include <vector>

#include "nsum/posterior.hpp"

namespace nsum {

// Long-format CSV: chain,iter,param,value.  `skip_prefixes` drops parameter
// families (e.g. "eps[") from the file without touching the Draws object.
void write_draws_csv(const Draws& d, const std::string& path,
                     const std::vector<std::string>& skip_prefixes = {});
Draws read_draws_csv(const std::string& path);

// Per-parameter JSON summary: mean, sd, 2.5/25/50/75/97.5 percentiles,
// split R-hat, ESS, plus sampler metadata.
void write_summary_json(const Draws& d, const std::string& path);

// draws.csv + draws_info.json (model metadata needed by downstream commands).
void write_draws_bundle(const Draws& d, const std::string& dir,
                        const std::vector<std::string>& skip_prefixes = {});
Draws read_draws_bundle(const std::string& dir);

}  // namespace nsum
