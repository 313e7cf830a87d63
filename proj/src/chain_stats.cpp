#include "nsum/chain_stats.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "nsum/log.hpp"
#include "nsum/rng.hpp"

namespace nsum {

namespace {
constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();
}

void ChainConfig::validate() const {
  if (chains < 1) throw std::invalid_argument("ChainConfig: chains must be >= 1");
  if (thin < 1) throw std::invalid_argument("ChainConfig: thin must be >= 1");
  if (warmup < 0 || warmup >= iterations)
    throw std::invalid_argument("ChainConfig: warmup must lie in [0, iterations)");
}

ChainConfig ChainConfig::desk() { return ChainConfig{}; }

ChainConfig ChainConfig::paper() {
  ChainConfig c;
  c.chains = 3;
  c.iterations = 10000;
  c.warmup = 2000;
  c.thin = 5;
  return c;
}

int Draws::param_index(const std::string& name) const {
  for (std::size_t i = 0; i < param_names.size(); ++i)
    if (param_names[i] == name) return static_cast<int>(i);
  throw std::invalid_argument("Draws: unknown parameter '" + name + "'");
}

bool Draws::has_param(const std::string& name) const {
  for (const auto& p : param_names)
    if (p == name) return true;
  return false;
}

Eigen::VectorXd Draws::pooled(int index) const {
  Eigen::VectorXd out(total_draws());
  long pos = 0;
  for (const auto& chain : values) {
    out.segment(pos, chain.rows()) = chain.col(index);
    pos += chain.rows();
  }
  return out;
}

Eigen::VectorXd Draws::pooled(const std::string& name) const {
  return pooled(param_index(name));
}

namespace {

// split every chain in half; returns per-half (mean, variance, length)
struct HalfChains {
  std::vector<Eigen::VectorXd> halves;
  bool ok = false;
};

HalfChains split_halves(const Draws& d, int index) {
  HalfChains h;
  for (const auto& chain : d.values) {
    const long n = chain.rows();
    const long half = n / 2;
    if (half < 10) return h;  // need >= 10 draws per half
    h.halves.push_back(chain.col(index).head(half));
    h.halves.push_back(chain.col(index).segment(n - half, half));
  }
  h.ok = h.halves.size() >= 2;
  return h;
}

double variance(const Eigen::VectorXd& v) {
  const double m = v.mean();
  return (v.array() - m).square().sum() / static_cast<double>(v.size() - 1);
}

}  // namespace

double split_rhat_col(const Draws& d, int index) {
  HalfChains h = split_halves(d, index);
  if (!h.ok) throw std::invalid_argument("split_rhat: need >= 2 half-chains with >= 10 draws");
  const std::size_t m = h.halves.size();
  const double n = static_cast<double>(h.halves[0].size());

  bool constant = true;
  const double first = h.halves[0](0);
  for (const auto& half : h.halves)
    if ((half.array() != first).any()) constant = false;
  if (constant) {
    log_warn("split_rhat: parameter '" + d.param_names[static_cast<std::size_t>(index)] +
             "' is constant across draws");
    return kNaN;
  }

  double grand = 0.0;
  for (const auto& half : h.halves) grand += half.mean();
  grand /= static_cast<double>(m);

  double b = 0.0, w = 0.0;
  for (const auto& half : h.halves) {
    const double mu = half.mean();
    b += (mu - grand) * (mu - grand);
    w += variance(half);
  }
  b *= n / static_cast<double>(m - 1);
  w /= static_cast<double>(m);
  if (w <= 0.0) return kNaN;
  const double var_plus = (n - 1.0) / n * w + b / n;
  return std::sqrt(var_plus / w);
}

double split_rhat(const Draws& d, const std::string& param) {
  return split_rhat_col(d, d.param_index(param));
}

double ess_col(const Draws& d, int index) {
  const int m = d.num_chains();
  const long n = d.kept();
  if (m < 1 || n < 4) throw std::invalid_argument("ess: need chains with >= 4 draws");

  std::vector<Eigen::VectorXd> chains;
  chains.reserve(static_cast<std::size_t>(m));
  for (const auto& c : d.values) chains.push_back(c.col(index));

  bool constant = true;
  const double first = chains[0](0);
  for (const auto& c : chains)
    if ((c.array() != first).any()) constant = false;
  if (constant) {
    log_warn("ess: parameter '" + d.param_names[static_cast<std::size_t>(index)] +
             "' is constant across draws");
    return kNaN;
  }

  std::vector<double> means, vars;
  for (const auto& c : chains) {
    means.push_back(c.mean());
    vars.push_back(variance(c));
  }
  double w = 0.0;
  for (double v : vars) w += v;
  w /= static_cast<double>(m);
  double b = 0.0;
  if (m > 1) {
    double grand = 0.0;
    for (double mu : means) grand += mu;
    grand /= static_cast<double>(m);
    for (double mu : means) b += (mu - grand) * (mu - grand);
    b *= static_cast<double>(n) / static_cast<double>(m - 1);
  }
  const double var_plus = (static_cast<double>(n) - 1.0) / static_cast<double>(n) * w +
                          (m > 1 ? b / static_cast<double>(n) : 0.0);
  if (var_plus <= 0.0) return kNaN;

  // within-chain autocovariance at lag t, averaged over chains
  auto acov = [&](long t) {
    double s = 0.0;
    for (int c = 0; c < m; ++c) {
      const Eigen::VectorXd& v = chains[static_cast<std::size_t>(c)];
      const double mu = means[static_cast<std::size_t>(c)];
      double a = 0.0;
      for (long i = 0; i + t < n; ++i) a += (v(i) - mu) * (v(i + t) - mu);
      s += a / static_cast<double>(n);
    }
    return s / static_cast<double>(m);
  };

  // Geyer initial monotone positive sequence over lag pairs
  double tau = 1.0;
  double prev_pair = std::numeric_limits<double>::infinity();
  for (long t = 1; t + 1 < n; t += 2) {
    const double rho_a = 1.0 - (w - acov(t)) / var_plus;
    const double rho_b = 1.0 - (w - acov(t + 1)) / var_plus;
    double pair = rho_a + rho_b;
    if (pair < 0.0) break;
    pair = std::min(pair, prev_pair);  // enforce monotone decrease
    prev_pair = pair;
    tau += 2.0 * pair;
  }

  const double total = static_cast<double>(m) * static_cast<double>(n);
  return std::min(total / tau, 1.5 * total);
}

double ess(const Draws& d, const std::string& param) { return ess_col(d, d.param_index(param)); }

double quantile_of_sorted(const std::vector<double>& sorted, double p) {
  if (sorted.empty()) throw std::invalid_argument("quantile: empty sample");
  const double h = p * (static_cast<double>(sorted.size()) - 1.0);
  const std::size_t lo = static_cast<std::size_t>(std::floor(h));
  const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
  const double frac = h - static_cast<double>(lo);
  return sorted[lo] * (1.0 - frac) + sorted[hi] * frac;
}

double sample_quantile(Eigen::VectorXd values, double p) {
  std::vector<double> v(values.data(), values.data() + values.size());
  std::sort(v.begin(), v.end());
  return quantile_of_sorted(v, p);
}

ParamSummary summarize_param(const Draws& d, int index) {
  ParamSummary s;
  s.name = d.param_names[static_cast<std::size_t>(index)];
  Eigen::VectorXd v = d.pooled(index);
  s.mean = v.mean();
  s.sd = std::sqrt((v.array() - s.mean).square().sum() /
                   std::max<double>(1.0, static_cast<double>(v.size() - 1)));
  std::vector<double> sorted(v.data(), v.data() + v.size());
  std::sort(sorted.begin(), sorted.end());
  s.q2_5 = quantile_of_sorted(sorted, 0.025);
  s.q25 = quantile_of_sorted(sorted, 0.25);
  s.q50 = quantile_of_sorted(sorted, 0.5);
  s.q75 = quantile_of_sorted(sorted, 0.75);
  s.q97_5 = quantile_of_sorted(sorted, 0.975);
  try {
    s.rhat = split_rhat_col(d, index);
  } catch (const std::exception&) {
    s.rhat = kNaN;
  }
  try {
    s.ess = ess_col(d, index);
  } catch (const std::exception&) {
    s.ess = kNaN;
  }
  return s;
}

double max_gradient_rel_error(const PosteriorTarget& target, std::uint64_t seed, int points,
                              double jitter, double grad_floor) {
  if (!target.gradient) throw std::invalid_argument("max_gradient_rel_error: target has no gradient");
  RngStream rng(seed, 0xfd17);
  Eigen::VectorXd base = target.init.size() == target.dim
                             ? target.init
                             : Eigen::VectorXd::Zero(target.dim);
  double worst = 0.0;
  for (int p = 0; p < points; ++p) {
    Eigen::VectorXd x = base;
    for (int i = 0; i < target.dim; ++i) x(i) += jitter * rng.normal();
    const Eigen::VectorXd g = target.gradient(x);
    for (int i = 0; i < target.dim; ++i) {
      const double h = 6e-6 * std::max(1.0, std::abs(x(i)));
      Eigen::VectorXd xp = x, xm = x;
      xp(i) += h;
      xm(i) -= h;
      const double fd = (target.log_density(xp) - target.log_density(xm)) / (2.0 * h);
      if (std::abs(g(i)) <= grad_floor && std::abs(fd) <= grad_floor) continue;
      const double rel = std::abs(fd - g(i)) / std::max(std::abs(g(i)), std::abs(fd));
      worst = std::max(worst, rel);
    }
  }
  return worst;
}

}  // namespace nsum
