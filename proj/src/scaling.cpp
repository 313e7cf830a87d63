#include "nsum/scaling.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <sstream>
#include <stdexcept>
#include <unordered_map>

#include "nsum/chain_stats.hpp"
#include "nsum/csv.hpp"
#include "nsum/log.hpp"

namespace nsum {

ScalingMethod parse_scaling_method(const std::string& s) {
  if (s == "single") return ScalingMethod::single;
  if (s == "paired") return ScalingMethod::paired;
  if (s == "all-raw") return ScalingMethod::all_raw;
  if (s == "all-standardized") return ScalingMethod::all_standardized;
  if (s == "correlated") return ScalingMethod::correlated;
  throw std::invalid_argument("unknown scaling method '" + s + "'");
}

std::string scaling_method_name(ScalingMethod m) {
  switch (m) {
    case ScalingMethod::single: return "single";
    case ScalingMethod::paired: return "paired";
    case ScalingMethod::all_raw: return "all-raw";
    case ScalingMethod::all_standardized: return "all-standardized";
    case ScalingMethod::correlated: return "correlated";
  }
  return "?";
}

namespace {

// draws x K matrix of rho coordinates, pooled chain-major
Eigen::MatrixXd pooled_rho(const Draws& draws, int K) {
  Eigen::MatrixXd rho(draws.total_draws(), K);
  for (int k = 0; k < K; ++k)
    rho.col(k) = draws.pooled("rho[" + std::to_string(k + 1) + "]");
  return rho;
}

std::vector<int> known_set(const PreparedDesign& d, const std::vector<int>* override_set) {
  std::vector<int> known = override_set ? *override_set : d.known_idx;
  if (known.empty()) throw std::invalid_argument("scaling: no known groups");
  return known;
}

double prevalence_of(const PreparedDesign& d, int k) {
  const auto& g = d.groups[static_cast<std::size_t>(k)];
  if (!g.known_size)
    throw std::invalid_argument("scaling: group '" + g.id + "' has no known size");
  return *g.known_size / d.total_population;
}

ScaledDraws finish(const Draws& draws, const PreparedDesign& d, std::string method,
                   std::vector<int> used, Eigen::MatrixXd rho, Eigen::MatrixXd C) {
  ScaledDraws out;
  out.method = std::move(method);
  out.groups_used = std::move(used);
  const long m = rho.rows();
  const long K = rho.cols();
  out.rho_scaled.resize(m, K);
  if (C.cols() == 1) {
    out.rho_scaled = rho.colwise() - C.col(0);
  } else {
    out.rho_scaled = rho - C;
  }
  out.C = std::move(C);
  out.sizes = (out.rho_scaled.array().exp() * d.total_population).matrix();
  (void)draws;
  return out;
}

// log(sum_k exp(rho_k) / sum_k p_k) per draw over a pooled set
Eigen::VectorXd pooled_ratio_constant(const Eigen::MatrixXd& rho, const PreparedDesign& d,
                                      const std::vector<int>& groups) {
  double psum = 0.0;
  for (int k : groups) psum += prevalence_of(d, k);
  Eigen::VectorXd c(rho.rows());
  for (long m = 0; m < rho.rows(); ++m) {
    double es = 0.0;
    for (int k : groups) es += std::exp(rho(m, k));
    c(m) = std::log(es / psum);
  }
  return c;
}

}  // namespace

ScaledDraws scale_single(const Draws& draws, const PreparedDesign& d,
                         const std::string& group_id) {
  int g = -1;
  for (std::size_t k = 0; k < d.groups.size(); ++k)
    if (d.groups[k].id == group_id) g = static_cast<int>(k);
  if (g < 0) throw std::invalid_argument("scale_single: unknown group '" + group_id + "'");
  const double p = prevalence_of(d, g);
  const int K = d.num_groups();
  Eigen::MatrixXd rho = pooled_rho(draws, K);
  Eigen::MatrixXd C(rho.rows(), 1);
  C.col(0) = rho.col(g).array() - std::log(p);
  return finish(draws, d, "single", {g}, std::move(rho), std::move(C));
}

ScaledDraws scale_paired(const Draws& draws, const PreparedDesign& d,
                         const std::vector<std::string>& g1,
                         const std::vector<std::string>& g2,
                         const std::vector<std::string>& b2) {
  if (g1.empty() || g2.empty() || b2.empty())
    throw std::invalid_argument("scale_paired: all three group sets must be nonempty");
  auto resolve = [&d](const std::vector<std::string>& ids) {
    std::vector<int> out;
    for (const auto& id : ids) {
      bool found = false;
      for (std::size_t k = 0; k < d.groups.size(); ++k)
        if (d.groups[k].id == id) {
          out.push_back(static_cast<int>(k));
          found = true;
        }
      if (!found) throw std::invalid_argument("scale_paired: unknown group '" + id + "'");
    }
    return out;
  };
  const std::vector<int> s1 = resolve(g1), s2 = resolve(g2), sb = resolve(b2);
  const int K = d.num_groups();
  Eigen::MatrixXd rho = pooled_rho(draws, K);
  const Eigen::VectorXd c1 = pooled_ratio_constant(rho, d, s1);
  const Eigen::VectorXd c2 =
      pooled_ratio_constant(rho, d, sb) - pooled_ratio_constant(rho, d, s2);
  Eigen::MatrixXd C(rho.rows(), 1);
  C.col(0) = c1 + 0.5 * c2;
  std::vector<int> used = s1;
  used.insert(used.end(), s2.begin(), s2.end());
  used.insert(used.end(), sb.begin(), sb.end());
  return finish(draws, d, "paired", std::move(used), std::move(rho), std::move(C));
}

ScaledDraws scale_all_raw(const Draws& draws, const PreparedDesign& d,
                          const std::vector<int>* known_override) {
  const std::vector<int> known = known_set(d, known_override);
  Eigen::MatrixXd rho = pooled_rho(draws, d.num_groups());
  Eigen::MatrixXd C(rho.rows(), 1);
  C.col(0) = pooled_ratio_constant(rho, d, known);
  return finish(draws, d, "all-raw", known, std::move(rho), std::move(C));
}

ScaledDraws scale_all_standardized(const Draws& draws, const PreparedDesign& d,
                                   const std::vector<int>* known_override) {
  const std::vector<int> known = known_set(d, known_override);
  Eigen::MatrixXd rho = pooled_rho(draws, d.num_groups());
  Eigen::MatrixXd C(rho.rows(), 1);
  const double nk = static_cast<double>(known.size());
  std::vector<double> prev;
  for (int k : known) prev.push_back(prevalence_of(d, k));
  for (long m = 0; m < rho.rows(); ++m) {
    double s = 0.0;
    for (std::size_t j = 0; j < known.size(); ++j)
      s += std::exp(rho(m, known[j])) / prev[j];
    C(m, 0) = std::log(s / nk);
  }
  return finish(draws, d, "all-standardized", known, std::move(rho), std::move(C));
}

ScaledDraws scale_correlated(const Draws& draws, const PreparedDesign& d,
                             const std::vector<int>* known_override) {
  const std::vector<int> known = known_set(d, known_override);
  const int K = d.num_groups();
  // per-draw correlation entries are required
  std::unordered_map<std::string, int> idx;
  for (std::size_t i = 0; i < draws.param_names.size(); ++i)
    idx[draws.param_names[i]] = static_cast<int>(i);
  auto omega_col = [&idx, K](int a, int b) {
    if (a == b) return -2;  // diagonal is 1
    const int i = std::max(a, b), j = std::min(a, b);
    const auto it =
        idx.find("omega[" + std::to_string(i + 1) + "," + std::to_string(j + 1) + "]");
    return it == idx.end() ? -1 : it->second;
  };
  for (int k = 0; k < K; ++k)
    for (int j : known)
      if (k != j && omega_col(k, j) < 0)
        throw std::invalid_argument("no_correlation_draws");

  Eigen::MatrixXd rho = pooled_rho(draws, K);
  const long M = rho.rows();
  // pooled omega rows: for each (k, known j) the pooled column
  std::vector<std::vector<Eigen::VectorXd>> om(static_cast<std::size_t>(K));
  for (int k = 0; k < K; ++k)
    for (int j : known) {
      if (k == j)
        om[static_cast<std::size_t>(k)].push_back(Eigen::VectorXd::Ones(M));
      else
        om[static_cast<std::size_t>(k)].push_back(draws.pooled(omega_col(k, j)));
    }

  std::vector<double> prev;
  for (int k : known) prev.push_back(prevalence_of(d, k));
  const double nk = static_cast<double>(known.size());

  Eigen::MatrixXd C(M, K);
  bool warned = false;
  std::vector<double> w(known.size());
  for (long m = 0; m < M; ++m) {
    for (int k = 0; k < K; ++k) {
      double wsum = 0.0;
      for (std::size_t j = 0; j < known.size(); ++j) {
        double v = om[static_cast<std::size_t>(k)][j](m);
        if (v < 0.0) v = 0.0;      // negative correlations carry no weight
        if (known[j] == k) v = 0.0;  // self-weight is zeroed
        w[j] = v;
        wsum += v;
      }
      if (wsum <= 0.0) {
        if (!warned) {
          log_warn("scale_correlated: all weights zero for a draw; falling back to equal weights");
          warned = true;
        }
        std::fill(w.begin(), w.end(), 1.0);
        wsum = nk;
      }
      const double rescale = nk / wsum;
      double s = 0.0;
      for (std::size_t j = 0; j < known.size(); ++j)
        s += std::exp(rho(m, known[j])) * (w[j] * rescale) / prev[j];
      C(m, k) = std::log(s / nk);
    }
  }
  return finish(draws, d, "correlated", known, std::move(rho), std::move(C));
}

ScaledDraws scale_draws(const Draws& draws, const PreparedDesign& d, ScalingMethod method,
                        const std::vector<int>* known_override,
                        const std::string& single_group) {
  switch (method) {
    case ScalingMethod::single:
      return scale_single(draws, d, single_group);
    case ScalingMethod::paired:
      throw std::invalid_argument("scale_draws: paired scaling needs explicit group sets");
    case ScalingMethod::all_raw:
      return scale_all_raw(draws, d, known_override);
    case ScalingMethod::all_standardized:
      return scale_all_standardized(draws, d, known_override);
    case ScalingMethod::correlated:
      return scale_correlated(draws, d, known_override);
  }
  throw std::logic_error("scale_draws: unreachable");
}

Draws apply_degree_shift(const Draws& draws, const Eigen::VectorXd& c_per_draw) {
  if (c_per_draw.size() != draws.total_draws())
    throw std::invalid_argument("apply_degree_shift: constant per draw required");
  Draws out = draws;
  std::vector<long> delta_cols;
  for (std::size_t j = 0; j < out.param_names.size(); ++j)
    if (out.param_names[j].rfind("delta[", 0) == 0) delta_cols.push_back(static_cast<long>(j));
  long pooled = 0;
  for (auto& chain : out.values) {
    for (long it = 0; it < chain.rows(); ++it, ++pooled) {
      const double c = c_per_draw(pooled);
      for (long j : delta_cols) chain(it, j) += c;
    }
  }
  return out;
}

std::vector<SizeSummaryRow> summarize_sizes(const ScaledDraws& s, const PreparedDesign& d) {
  std::vector<SizeSummaryRow> rows;
  for (int k = 0; k < d.num_groups(); ++k) {
    SizeSummaryRow r;
    r.group = d.groups[static_cast<std::size_t>(k)].id;
    r.method = s.method;
    const Eigen::VectorXd col = s.sizes.col(k);
    r.mean = col.mean();
    r.sd = std::sqrt((col.array() - r.mean).square().sum() /
                     std::max<double>(1.0, static_cast<double>(col.size() - 1)));
    r.q2_5 = sample_quantile(col, 0.025);
    r.q97_5 = sample_quantile(col, 0.975);
    r.mean_rounded = std::round(r.mean / 100.0) * 100.0;
    rows.push_back(std::move(r));
  }
  return rows;
}

void write_sizes_csv(const std::vector<SizeSummaryRow>& rows, const std::string& path) {
  std::vector<std::vector<std::string>> out;
  auto fmt = [](double v) {
    std::ostringstream os;
    os.precision(10);
    os << v;
    return os.str();
  };
  for (const auto& r : rows)
    out.push_back({r.group, r.method, fmt(r.mean), fmt(r.sd), fmt(r.q2_5), fmt(r.q97_5),
                   fmt(r.mean_rounded)});
  write_csv(path, {"group", "method", "mean", "sd", "q2.5", "q97.5", "mean_rounded"}, out);
}

}  // namespace nsum
