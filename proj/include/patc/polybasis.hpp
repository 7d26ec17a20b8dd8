#pragma once

// Orthonormal Wiener-Askey polynomial families evaluated through their
// three-term recurrences, plus the matching Gauss rules (Golub-Welsch).

#include <cmath>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "patc/error.hpp"

namespace patc {

/// Weights are probability densities: Hermite on N(0,1), Legendre on U(-1,1),
/// Jacobi(alpha, beta) on (1-x)^alpha (1+x)^beta over [-1,1], Laguerre on
/// e^{-x}, generalized Laguerre on x^alpha e^{-x} / Gamma(alpha+1).
struct PolyFamily
{
  enum class Kind { Hermite, Legendre, Jacobi, Laguerre, GeneralizedLaguerre };

  Kind kind = Kind::Hermite;
  double alpha = 0.0;
  double beta = 0.0;

  static PolyFamily hermite() { return {Kind::Hermite, 0.0, 0.0}; }
  static PolyFamily legendre() { return {Kind::Legendre, 0.0, 0.0}; }
  static PolyFamily jacobi(double a, double b) { return {Kind::Jacobi, a, b}; }
  static PolyFamily laguerre() { return {Kind::Laguerre, 0.0, 0.0}; }
  static PolyFamily generalized_laguerre(double a) { return {Kind::GeneralizedLaguerre, a, 0.0}; }

  bool operator==(const PolyFamily&) const = default;

  std::string name() const
  {
    switch (kind) {
    case Kind::Hermite: return "hermite";
    case Kind::Legendre: return "legendre";
    case Kind::Jacobi: return "jacobi";
    case Kind::Laguerre: return "laguerre";
    case Kind::GeneralizedLaguerre: return "generalized_laguerre";
    }
    return "?";
  }

  static PolyFamily from_name(std::string_view name, double a = 0.0, double b = 0.0)
  {
    if (name == "hermite")
      return hermite();
    if (name == "legendre")
      return legendre();
    if (name == "jacobi")
      return jacobi(a, b);
    if (name == "laguerre")
      return laguerre();
    if (name == "generalized_laguerre")
      return generalized_laguerre(a);
    throw ValidationError("unknown polynomial family '" + std::string(name) + "'");
  }
};

/// Monic recurrence p_{k+1} = (x - a_k) p_k - b_k p_{k-1}; b_0 is the total
/// mass (1 for every family here).
inline std::pair<double, double> recurrence(const PolyFamily& fam, int k)
{
  const double kk = k;
  switch (fam.kind) {
  case PolyFamily::Kind::Hermite:
    return {0.0, k == 0 ? 1.0 : kk};
  case PolyFamily::Kind::Legendre:
    return {0.0, k == 0 ? 1.0 : kk * kk / (4.0 * kk * kk - 1.0)};
  case PolyFamily::Kind::Laguerre:
    return {2.0 * kk + 1.0, k == 0 ? 1.0 : kk * kk};
  case PolyFamily::Kind::GeneralizedLaguerre:
    return {2.0 * kk + fam.alpha + 1.0, k == 0 ? 1.0 : kk * (kk + fam.alpha)};
  case PolyFamily::Kind::Jacobi: {
    const double a = fam.alpha;
    const double b = fam.beta;
    const double s = 2.0 * kk + a + b;
    double ak;
    if (k == 0)
      ak = (b - a) / (a + b + 2.0);
    else
      ak = (b * b - a * a) / (s * (s + 2.0));
    double bk;
    if (k == 0)
      bk = 1.0;
    else if (k == 1)
      bk = 4.0 * (1.0 + a) * (1.0 + b) / ((2.0 + a + b) * (2.0 + a + b) * (3.0 + a + b));
    else
      bk = 4.0 * kk * (kk + a) * (kk + b) * (kk + a + b) / (s * s * (s + 1.0) * (s - 1.0));
    return {ak, bk};
  }
  }
  return {0.0, 1.0};
}

/// [psi_0(x), ..., psi_p(x)] of the orthonormal family; psi_0 = 1.
inline Eigen::VectorXd eval_basis(const PolyFamily& fam, int max_degree, double x)
{
  Eigen::VectorXd psi(max_degree + 1);
  psi[0] = 1.0;
  if (max_degree == 0)
    return psi;
  double prev = 0.0;
  double cur = 1.0;
  for (int k = 0; k < max_degree; ++k) {
    const auto [ak, bk] = recurrence(fam, k);
    const double bk1 = recurrence(fam, k + 1).second;
    const double next = ((x - ak) * cur - (k == 0 ? 0.0 : std::sqrt(bk)) * prev) / std::sqrt(bk1);
    prev = cur;
    cur = next;
    psi[k + 1] = cur;
  }
  return psi;
}

/// Writes the basis values into a preallocated row (length >= p + 1).
template <class Row>
void eval_basis_into(const PolyFamily& fam, int max_degree, double x, Row&& out)
{
  out[0] = 1.0;
  double prev = 0.0;
  double cur = 1.0;
  for (int k = 0; k < max_degree; ++k) {
    const auto [ak, bk] = recurrence(fam, k);
    const double bk1 = recurrence(fam, k + 1).second;
    const double next = ((x - ak) * cur - (k == 0 ? 0.0 : std::sqrt(bk)) * prev) / std::sqrt(bk1);
    prev = cur;
    cur = next;
    out[k + 1] = cur;
  }
}

struct GaussRule
{
  Eigen::VectorXd nodes;
  Eigen::VectorXd weights; ///< sum to 1
};

/// n-point Gauss rule of the family's weight via the Jacobi matrix eigenproblem.
inline GaussRule gauss_rule(const PolyFamily& fam, int n)
{
  if (n < 1)
    throw ValidationError("quadrature order must be at least 1");
  Eigen::MatrixXd jac = Eigen::MatrixXd::Zero(n, n);
  for (int k = 0; k < n; ++k) {
    jac(k, k) = recurrence(fam, k).first;
    if (k + 1 < n) {
      const double off = std::sqrt(recurrence(fam, k + 1).second);
      jac(k, k + 1) = off;
      jac(k + 1, k) = off;
    }
  }
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(jac);
  GaussRule rule;
  rule.nodes = eig.eigenvalues();
  rule.weights = eig.eigenvectors().row(0).array().square().transpose();
  return rule;
}

/// Max |<psi_j, psi_k> - delta_jk| over degrees <= p using an `order`-point
/// Gauss rule of the family.
inline double gram_check(const PolyFamily& fam, int max_degree, int order)
{
  if (order < max_degree + 1)
    throw ValidationError("quadrature order must be at least p + 1");
  const auto rule = gauss_rule(fam, order);
  Eigen::MatrixXd gram = Eigen::MatrixXd::Zero(max_degree + 1, max_degree + 1);
  for (int q = 0; q < order; ++q) {
    const auto psi = eval_basis(fam, max_degree, rule.nodes[q]);
    gram.noalias() += rule.weights[q] * psi * psi.transpose();
  }
  return (gram - Eigen::MatrixXd::Identity(max_degree + 1, max_degree + 1)).cwiseAbs().maxCoeff();
}

} // namespace patc
