#pragma once

// Nataf (Gaussian copula) transformation between correlated physical inputs
// and independent standard normal variables.

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include <Eigen/Cholesky>
#include <Eigen/Dense>
#include <Eigen/Eigenvalues>

#include "patc/distributions.hpp"
#include "patc/error.hpp"
#include "patc/polybasis.hpp"

namespace patc {

/// Probabilities are kept inside [clamp, 1 - clamp] so quantiles stay finite.
inline constexpr double kProbabilityClamp = 1e-12;

inline double clamp_probability(double p)
{
  return std::clamp(p, kProbabilityClamp, 1.0 - kProbabilityClamp);
}

struct NatafOptions
{
  int quadrature_nodes = 64;
  double tolerance = 1e-12; ///< on the correlation mismatch
  double pd_floor = 1e-10;  ///< eigenvalue floor of the repair
};

struct NatafMap
{
  std::vector<Marginal> marginals;
  Eigen::MatrixXd target_correlation;
  Eigen::MatrixXd adjusted_gaussian_correlation;
  Eigen::MatrixXd cholesky_factor; ///< lower triangular, L L^T = adjusted correlation
  std::vector<std::string> warnings;

  std::size_t dimension() const { return marginals.size(); }
};

namespace detail {

/// Linear correlation of (F_i^{-1}(Phi(Z_i)), F_j^{-1}(Phi(Z_j))) when the
/// standard normals Z_i, Z_j have correlation rho_z, by tensorized
/// Gauss-Hermite quadrature.
class NatafPair
{
 public:
  NatafPair(const Marginal& mi, const Marginal& mj, const GaussRule& rule)
      : mj_(mj)
      , rule_(rule)
  {
    const auto n = rule.nodes.size();
    gi_.resize(n);
    mean_i_ = mean_j_ = 0.0;
    double sq_i = 0.0;
    double sq_j = 0.0;
    for (Eigen::Index a = 0; a < n; ++a) {
      gi_[a] = marginal_quantile(mi, clamp_probability(normal_cdf(rule.nodes[a])));
      const double gj = g_j(rule.nodes[a]);
      mean_i_ += rule.weights[a] * gi_[a];
      mean_j_ += rule.weights[a] * gj;
      sq_i += rule.weights[a] * gi_[a] * gi_[a];
      sq_j += rule.weights[a] * gj * gj;
    }
    sd_i_ = std::sqrt(std::max(sq_i - mean_i_ * mean_i_, 0.0));
    sd_j_ = std::sqrt(std::max(sq_j - mean_j_ * mean_j_, 0.0));
  }

  double operator()(double rho_z) const
  {
    const auto n = rule_.nodes.size();
    const double s = std::sqrt(std::max(0.0, 1.0 - rho_z * rho_z));
    double acc = 0.0;
    for (Eigen::Index a = 0; a < n; ++a) {
      double inner = 0.0;
      for (Eigen::Index b = 0; b < n; ++b)
        inner += rule_.weights[b] * g_j(rho_z * rule_.nodes[a] + s * rule_.nodes[b]);
      acc += rule_.weights[a] * gi_[a] * inner;
    }
    return (acc - mean_i_ * mean_j_) / (sd_i_ * sd_j_);
  }

 private:
  double g_j(double z) const { return marginal_quantile(mj_, clamp_probability(normal_cdf(z))); }

  const Marginal& mj_;
  const GaussRule& rule_;
  Eigen::VectorXd gi_;
  double mean_i_ = 0.0;
  double mean_j_ = 0.0;
  double sd_i_ = 1.0;
  double sd_j_ = 1.0;
};

/// Root of h(rho_z) = target on (-1, 1); h is increasing. Illinois-modified
/// regula falsi inside a bisection bracket.
template <class F>
double solve_increasing(F&& h, double target, double tol)
{
  constexpr double edge = 1.0 - 1e-12;
  double lo = -edge;
  double hi = edge;
  double f_lo = h(lo) - target;
  double f_hi = h(hi) - target;
  if (f_lo > 0.0 || f_hi < 0.0)
    throw ValidationError("correlation " + std::to_string(target) +
                          " is not attainable for this pair of marginals");
  int side = 0;
  for (int it = 0; it < 200; ++it) {
    double x = (lo * f_hi - hi * f_lo) / (f_hi - f_lo);
    if (!(x > lo && x < hi))
      x = 0.5 * (lo + hi);
    const double fx = h(x) - target;
    if (std::abs(fx) < tol || hi - lo < 1e-15)
      return x;
    if (fx < 0.0) {
      lo = x;
      f_lo = fx;
      if (side == -1)
        f_hi *= 0.5;
      side = -1;
    } else {
      hi = x;
      f_hi = fx;
      if (side == 1)
        f_lo *= 0.5;
      side = 1;
    }
  }
  return 0.5 * (lo + hi);
}

} // namespace detail

/// Gaussian-space correlation that reproduces one target pair correlation.
inline double nataf_pair_correlation(const Marginal& mi, const Marginal& mj, double rho,
                                     const GaussRule& rule, double tol = 1e-12)
{
  if (rho == 0.0 || is_degenerate(mi) || is_degenerate(mj))
    return 0.0;
  if (std::holds_alternative<Normal>(mi) && std::holds_alternative<Normal>(mj))
    return rho;
  const detail::NatafPair pair(mi, mj, rule);
  return detail::solve_increasing(pair, rho, tol);
}

/// Eigenvalue clipping followed by unit-diagonal rescaling.
inline Eigen::MatrixXd nearest_correlation(const Eigen::MatrixXd& c, double floor)
{
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(c);
  Eigen::VectorXd lam = eig.eigenvalues().cwiseMax(floor);
  Eigen::MatrixXd out = eig.eigenvectors() * lam.asDiagonal() * eig.eigenvectors().transpose();
  const Eigen::VectorXd d = out.diagonal().cwiseSqrt().cwiseInverse();
  out = d.asDiagonal() * out * d.asDiagonal();
  out.diagonal().setOnes();
  return out;
}

inline NatafMap fit_nataf(const std::vector<Marginal>& marginals, const Eigen::MatrixXd& rho,
                          const NatafOptions& opts = {})
{
  const auto n = static_cast<Eigen::Index>(marginals.size());
  if (rho.rows() != n || rho.cols() != n)
    throw ValidationError("correlation matrix size does not match the input count");
  for (const auto& m : marginals)
    validate(m);
  for (Eigen::Index i = 0; i < n; ++i) {
    if (rho(i, i) != 1.0)
      throw ValidationError("correlation matrix needs a unit diagonal");
    for (Eigen::Index j = 0; j < i; ++j) {
      if (rho(i, j) != rho(j, i))
        throw ValidationError("correlation matrix is not symmetric");
      if (std::abs(rho(i, j)) > 1.0)
        throw ValidationError("correlation entries must lie in [-1, 1]");
    }
  }

  NatafMap map;
  map.marginals = marginals;
  map.target_correlation = rho;
  map.adjusted_gaussian_correlation = Eigen::MatrixXd::Identity(n, n);
  const auto rule = gauss_rule(PolyFamily::hermite(), opts.quadrature_nodes);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < i; ++j) {
      const double r = nataf_pair_correlation(marginals[static_cast<std::size_t>(i)],
                                              marginals[static_cast<std::size_t>(j)], rho(i, j),
                                              rule, opts.tolerance);
      map.adjusted_gaussian_correlation(i, j) = r;
      map.adjusted_gaussian_correlation(j, i) = r;
    }

  Eigen::LLT<Eigen::MatrixXd> llt(map.adjusted_gaussian_correlation);
  if (llt.info() != Eigen::Success) {
    map.warnings.push_back("adjusted correlation is not positive definite; repaired by "
                           "eigenvalue clipping");
    map.adjusted_gaussian_correlation =
      nearest_correlation(map.adjusted_gaussian_correlation, opts.pd_floor);
    llt.compute(map.adjusted_gaussian_correlation);
    if (llt.info() != Eigen::Success)
      throw ValidationError("correlation repair failed");
  }
  map.cholesky_factor = llt.matrixL();
  return map;
}

/// Standard space to physical space: u_i = F_i^{-1}(Phi((L xi)_i)).
inline Eigen::VectorXd to_physical(const NatafMap& map, const Eigen::VectorXd& xi)
{
  const Eigen::VectorXd z = map.cholesky_factor.triangularView<Eigen::Lower>() * xi;
  Eigen::VectorXd u(z.size());
  for (Eigen::Index i = 0; i < z.size(); ++i)
    u[i] = marginal_quantile(map.marginals[static_cast<std::size_t>(i)],
                             clamp_probability(normal_cdf(z[i])));
  return u;
}

/// Physical space to standard space, the inverse of `to_physical`.
inline Eigen::VectorXd to_standard(const NatafMap& map, const Eigen::VectorXd& u)
{
  Eigen::VectorXd z(u.size());
  for (Eigen::Index i = 0; i < u.size(); ++i) {
    const auto& m = map.marginals[static_cast<std::size_t>(i)];
    z[i] = is_degenerate(m) ? 0.0 : normal_quantile(clamp_probability(marginal_cdf(m, u[i])));
  }
  return map.cholesky_factor.triangularView<Eigen::Lower>().solve(z);
}

} // namespace patc
