#include "nsum/stats.hpp"

#include <gsl/gsl_cdf.h>
#include <gsl/gsl_errno.h>
#include <gsl/gsl_sf_gamma.h>
#include <gsl/gsl_sf_psi.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace nsum {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

// GSL aborts by default; disable the handler once, library-wide.
const gsl_error_handler_t* const kGslHandler = gsl_set_error_handler_off();

}  // namespace

bool CholeskyFactor::is_correlation_factor(double tol) const {
  for (int i = 0; i < dim(); ++i) {
    const double norm2 = lower.row(i).head(i + 1).squaredNorm();
    if (std::abs(norm2 - 1.0) > tol) return false;
  }
  return true;
}

CholeskyFactor cholesky(const Eigen::MatrixXd& m) {
  const int k = static_cast<int>(m.rows());
  if (m.cols() != k) throw std::invalid_argument("cholesky: matrix must be square");
  const double scale = std::max(1.0, m.cwiseAbs().maxCoeff());
  for (int i = 0; i < k; ++i)
    for (int j = i + 1; j < k; ++j)
      if (std::abs(m(i, j) - m(j, i)) > 1e-10 * scale)
        throw std::invalid_argument("cholesky: matrix is not symmetric");

  Eigen::MatrixXd L = Eigen::MatrixXd::Zero(k, k);
  for (int j = 0; j < k; ++j) {
    double pivot = m(j, j) - L.row(j).head(j).squaredNorm();
    if (pivot <= 1e-12) {
      std::ostringstream msg;
      msg << "cholesky: matrix not positive definite at pivot " << (j + 1);
      throw std::runtime_error(msg.str());
    }
    L(j, j) = std::sqrt(pivot);
    for (int i = j + 1; i < k; ++i)
      L(i, j) = (m(i, j) - L.row(i).head(j).dot(L.row(j).head(j))) / L(j, j);
  }
  return CholeskyFactor{std::move(L)};
}

namespace density {

double normal_lpdf(double x, double mu, double sigma) {
  if (!(sigma > 0.0)) throw std::invalid_argument("normal_lpdf: sigma must be positive");
  const double z = (x - mu) / sigma;
  return -0.5 * z * z - std::log(sigma) - 0.5 * std::log(2.0 * M_PI);
}

double lognormal_lpdf(double x, double mu, double sigma) {
  if (!(sigma > 0.0)) throw std::invalid_argument("lognormal_lpdf: sigma must be positive");
  if (!(x > 0.0)) return kNegInf;
  const double lx = std::log(x);
  return normal_lpdf(lx, mu, sigma) - lx;
}

double poisson_lpmf(long y, double lambda) {
  if (lambda < 0.0) throw std::invalid_argument("poisson_lpmf: lambda must be >= 0");
  if (y < 0) return kNegInf;
  if (lambda == 0.0) return y == 0 ? 0.0 : kNegInf;
  return static_cast<double>(y) * std::log(lambda) - lambda -
         std::lgamma(static_cast<double>(y) + 1.0);
}

double gamma_lpdf(double x, double shape, double rate) {
  if (!(shape > 0.0) || !(rate > 0.0))
    throw std::invalid_argument("gamma_lpdf: shape and rate must be positive");
  if (!(x > 0.0)) return kNegInf;
  return shape * std::log(rate) - std::lgamma(shape) + (shape - 1.0) * std::log(x) -
         rate * x;
}

double beta_lpdf(double x, double a, double b) {
  if (!(a > 0.0) || !(b > 0.0))
    throw std::invalid_argument("beta_lpdf: shapes must be positive");
  if (!(x > 0.0) || !(x < 1.0)) return kNegInf;
  return (a - 1.0) * std::log(x) + (b - 1.0) * std::log1p(-x) + std::lgamma(a + b) -
         std::lgamma(a) - std::lgamma(b);
}

double beta_binomial_lpmf(long y, long n, double a, double b) {
  if (!(a > 0.0) || !(b > 0.0))
    throw std::invalid_argument("beta_binomial_lpmf: shapes must be positive");
  if (n < 0) throw std::invalid_argument("beta_binomial_lpmf: n must be >= 0");
  if (y < 0 || y > n) return kNegInf;
  const double yd = static_cast<double>(y), nd = static_cast<double>(n);
  return std::lgamma(nd + 1.0) - std::lgamma(yd + 1.0) - std::lgamma(nd - yd + 1.0) +
         std::lgamma(yd + a) + std::lgamma(nd - yd + b) - std::lgamma(nd + a + b) +
         std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b);
}

double half_cauchy_lpdf(double x, double scale) {
  if (!(scale > 0.0)) throw std::invalid_argument("half_cauchy_lpdf: scale must be positive");
  if (x < 0.0) return kNegInf;
  const double z = x / scale;
  return std::log(2.0) - std::log(M_PI) - std::log(scale) - std::log1p(z * z);
}

double binomial_lpmf(long y, long n, double p) {
  if (n < 0 || p < 0.0 || p > 1.0)
    throw std::invalid_argument("binomial_lpmf: invalid parameters");
  if (y < 0 || y > n) return kNegInf;
  const double yd = static_cast<double>(y), nd = static_cast<double>(n);
  double lp = std::lgamma(nd + 1.0) - std::lgamma(yd + 1.0) - std::lgamma(nd - yd + 1.0);
  if (p == 0.0) return y == 0 ? 0.0 : kNegInf;
  if (p == 1.0) return y == n ? 0.0 : kNegInf;
  return lp + yd * std::log(p) + (nd - yd) * std::log1p(-p);
}

void beta_shapes_from_mean_disp(double m, double rho, double* a, double* b) {
  if (!(m > 0.0) || !(m < 1.0) || !(rho > 0.0) || !(rho < 1.0))
    throw std::invalid_argument("beta_shapes_from_mean_disp: mean and dispersion must lie in (0,1)");
  const double c = (1.0 - rho) / rho;
  *a = m * c;
  *b = (1.0 - m) * c;
}

}  // namespace density

double poisson_cdf(long y, double lambda) {
  if (lambda < 0.0) throw std::invalid_argument("poisson_cdf: lambda must be >= 0");
  if (y < 0) return 0.0;
  if (lambda == 0.0) return 1.0;
  // P(Y <= y) = Q(y+1, lambda), the regularized upper incomplete gamma
  return gsl_sf_gamma_inc_Q(static_cast<double>(y) + 1.0, lambda);
}

double normal_cdf(double z) { return 0.5 * std::erfc(-z / std::sqrt(2.0)); }

double normal_quantile(double p) {
  if (!(p > 0.0) || !(p < 1.0))
    throw std::invalid_argument("normal_quantile: p must lie in (0,1)");
  return gsl_cdf_ugaussian_Pinv(p);
}

double gamma_quantile(double p, double shape, double rate) {
  if (!(shape > 0.0) || !(rate > 0.0))
    throw std::invalid_argument("gamma_quantile: shape and rate must be positive");
  if (!(p > 0.0) || !(p < 1.0))
    throw std::invalid_argument("gamma_quantile: p must lie in (0,1)");
  return gsl_cdf_gamma_Pinv(p, shape, 1.0 / rate);
}

double beta_quantile(double p, double a, double b) {
  if (!(a > 0.0) || !(b > 0.0))
    throw std::invalid_argument("beta_quantile: shapes must be positive");
  if (!(p > 0.0) || !(p < 1.0))
    throw std::invalid_argument("beta_quantile: p must lie in (0,1)");
  return gsl_cdf_beta_Pinv(p, a, b);
}

double digamma(double x) { return gsl_sf_psi(x); }

double lkj_cholesky_logdensity(const CholeskyFactor& L, double eta) {
  if (!(eta > 0.0)) throw std::invalid_argument("lkj_cholesky_logdensity: eta must be positive");
  if (!L.is_correlation_factor())
    throw std::invalid_argument("lkj_cholesky_logdensity: L is not a correlation factor");
  const int k = L.dim();
  double lp = 0.0;
  for (int i = 1; i < k; ++i)
    lp += (static_cast<double>(k - (i + 1)) + 2.0 * eta - 2.0) * std::log(L.lower(i, i));
  return lp;
}

Eigen::VectorXd sample_mvn(const Eigen::VectorXd& mu, const CholeskyFactor& L,
                           RngStream& rng) {
  const int k = L.dim();
  if (mu.size() != k) throw std::invalid_argument("sample_mvn: dimension mismatch");
  Eigen::VectorXd eps(k);
  for (int i = 0; i < k; ++i) eps(i) = rng.normal();
  return mu + L.lower * eps;
}

double Marginal::quantile(double u) const {
  switch (kind) {
    case Kind::normal:
      return p1 + p2 * normal_quantile(u);
    case Kind::lognormal:
      return std::exp(p1 + p2 * normal_quantile(u));
    case Kind::gamma:
      return gamma_quantile(u, p1, p2);
    case Kind::beta:
      return beta_quantile(u, p1, p2);
  }
  throw std::logic_error("Marginal::quantile: unknown kind");
}

Eigen::MatrixXd copula_correlated_sample(const Eigen::MatrixXd& omega,
                                         const std::vector<Marginal>& marginals,
                                         int n, RngStream& rng) {
  const int k = static_cast<int>(omega.rows());
  if (static_cast<int>(marginals.size()) != k)
    throw std::invalid_argument("copula_correlated_sample: marginals/omega mismatch");
  const CholeskyFactor L = cholesky(omega);
  Eigen::MatrixXd out(n, k);
  Eigen::VectorXd eps(k);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < k; ++j) eps(j) = rng.normal();
    const Eigen::VectorXd z = L.lower * eps;
    for (int j = 0; j < k; ++j) out(i, j) = marginals[j].quantile(normal_cdf(z(j)));
  }
  return out;
}

std::vector<int> hierarchical_cluster_order(const Eigen::MatrixXd& corr) {
  const int k = static_cast<int>(corr.rows());
  if (corr.cols() != k)
    throw std::invalid_argument("hierarchical_cluster_order: matrix must be square");
  // active clusters as ordered member lists; average linkage on 1 - corr
  std::vector<std::vector<int>> clusters(k);
  for (int i = 0; i < k; ++i) clusters[i] = {i};
  Eigen::MatrixXd dist = (1.0 - corr.array()).matrix();

  auto linkage = [&](const std::vector<int>& a, const std::vector<int>& b) {
    double s = 0.0;
    for (int i : a)
      for (int j : b) s += dist(i, j);
    return s / (static_cast<double>(a.size()) * static_cast<double>(b.size()));
  };

  while (clusters.size() > 1) {
    std::size_t best_a = 0, best_b = 1;
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t a = 0; a + 1 < clusters.size(); ++a) {
      for (std::size_t b = a + 1; b < clusters.size(); ++b) {
        const double d = linkage(clusters[a], clusters[b]);
        if (d < best - 1e-15) {
          best = d;
          best_a = a;
          best_b = b;
        }
      }
    }
    // left block = cluster with the smaller minimum index (stable display order)
    std::vector<int>& left = clusters[best_a];
    std::vector<int>& right = clusters[best_b];
    if (*std::min_element(right.begin(), right.end()) <
        *std::min_element(left.begin(), left.end()))
      std::swap(left, right);
    left.insert(left.end(), right.begin(), right.end());
    clusters.erase(clusters.begin() + static_cast<std::ptrdiff_t>(best_b));
  }
  return clusters[0];
}

double ks_statistic(std::vector<double> sample, double (*cdf)(double)) {
  if (sample.empty()) throw std::invalid_argument("ks_statistic: empty sample");
  std::sort(sample.begin(), sample.end());
  const double n = static_cast<double>(sample.size());
  double d = 0.0;
  for (std::size_t i = 0; i < sample.size(); ++i) {
    const double f = cdf(sample[i]);
    d = std::max(d, std::abs(f - static_cast<double>(i) / n));
    d = std::max(d, std::abs(static_cast<double>(i + 1) / n - f));
  }
  return d;
}

double ks_pvalue(double d, std::size_t n) {
  const double sn = std::sqrt(static_cast<double>(n));
  const double x = (sn + 0.12 + 0.11 / sn) * d;
  double p = 0.0;
  for (int j = 1; j <= 100; ++j) {
    const double term = 2.0 * std::pow(-1.0, j - 1) * std::exp(-2.0 * j * j * x * x);
    p += term;
    if (std::abs(term) < 1e-12) break;
  }
  return std::clamp(p, 0.0, 1.0);
}

double pearson_correlation(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  if (a.size() != b.size() || a.size() < 2)
    throw std::invalid_argument("pearson_correlation: need two equal-length vectors");
  const double ma = a.mean(), mb = b.mean();
  const Eigen::ArrayXd da = a.array() - ma, db = b.array() - mb;
  const double denom = std::sqrt(da.square().sum() * db.square().sum());
  if (denom == 0.0) return std::numeric_limits<double>::quiet_NaN();
  return (da * db).sum() / denom;
}

}  // namespace nsum
