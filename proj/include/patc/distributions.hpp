#pragma once

// Marginal distributions of the random inputs (Weibull wind speed, Beta solar
// radiation, Normal load) and the plant conversion curves.

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <span>
#include <string>
#include <type_traits>
#include <variant>
#include <vector>

#include "patc/error.hpp"

namespace patc {

// ---------------------------------------------------------------------------
// Standard normal

inline double normal_cdf(double x)
{
  return 0.5 * std::erfc(-x / std::numbers::sqrt2);
}

inline double normal_pdf(double x)
{
  return std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi);
}

/// Inverse standard normal CDF: Acklam's rational approximation followed by
/// one Halley step against erfc.
inline double normal_quantile(double p)
{
  if (!(p > 0.0 && p < 1.0))
    throw DomainError("normal quantile needs 0 < p < 1, got " + std::to_string(p));
  static constexpr double a[] = {-3.969683028665376e+01, 2.209460984245205e+02,
                                 -2.759285104469687e+02, 1.383577518672690e+02,
                                 -3.066479806614716e+01, 2.506628277459239e+00};
  static constexpr double b[] = {-5.447609879822406e+01, 1.615858368580409e+02,
                                 -1.556989798598866e+02, 6.680131188771972e+01,
                                 -1.328068155288572e+01};
  static constexpr double c[] = {-7.784894002430293e-03, -3.223964580411365e-01,
                                 -2.400758277161838e+00, -2.549732539343734e+00,
                                 4.374664141464968e+00,  2.938163982698783e+00};
  static constexpr double d[] = {7.784695709041462e-03, 3.224671290700398e-01,
                                 2.445134137142996e+00, 3.754408661907416e+00};
  constexpr double p_low = 0.02425;
  double x;
  if (p < p_low) {
    const double q = std::sqrt(-2.0 * std::log(p));
    x = (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
        ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
  } else if (p <= 1.0 - p_low) {
    const double q = p - 0.5;
    const double r = q * q;
    x = (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q /
        (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1.0);
  } else {
    const double q = std::sqrt(-2.0 * std::log1p(-p));
    x = -(((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
        ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
  }
  // Halley refinement; the tail is evaluated on the side with more precision.
  const double e = x < 0.0 ? normal_cdf(x) - p : (1.0 - p) - 0.5 * std::erfc(x / std::numbers::sqrt2);
  const double u = e * std::sqrt(2.0 * std::numbers::pi) * std::exp(0.5 * x * x);
  return x - u / (1.0 + 0.5 * x * u);
}

// ---------------------------------------------------------------------------
// Regularized incomplete beta

namespace detail {

// Modified Lentz evaluation of the continued fraction for I_x(a, b).
inline double beta_continued_fraction(double a, double b, double x)
{
  constexpr double tiny = 1e-300;
  constexpr double eps = 1e-16;
  const double qab = a + b;
  const double qap = a + 1.0;
  const double qam = a - 1.0;
  double c = 1.0;
  double d = 1.0 - qab * x / qap;
  if (std::abs(d) < tiny)
    d = tiny;
  d = 1.0 / d;
  double h = d;
  for (int m = 1; m <= 1000; ++m) {
    const double m2 = 2.0 * m;
    double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
    d = 1.0 + aa * d;
    if (std::abs(d) < tiny)
      d = tiny;
    c = 1.0 + aa / c;
    if (std::abs(c) < tiny)
      c = tiny;
    d = 1.0 / d;
    h *= d * c;
    aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
    d = 1.0 + aa * d;
    if (std::abs(d) < tiny)
      d = tiny;
    c = 1.0 + aa / c;
    if (std::abs(c) < tiny)
      c = tiny;
    d = 1.0 / d;
    const double del = d * c;
    h *= del;
    if (std::abs(del - 1.0) < eps)
      return h;
  }
  return h;
}

} // namespace detail

/// I_x(a, b) for x in [0, 1].
inline double regularized_incomplete_beta(double a, double b, double x)
{
  if (x <= 0.0)
    return 0.0;
  if (x >= 1.0)
    return 1.0;
  const double log_front = std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) +
                           a * std::log(x) + b * std::log1p(-x);
  const double front = std::exp(log_front);
  if (x < (a + 1.0) / (a + b + 2.0))
    return front * detail::beta_continued_fraction(a, b, x) / a;
  return 1.0 - front * detail::beta_continued_fraction(b, a, 1.0 - x) / b;
}

// ---------------------------------------------------------------------------
// Marginals

struct Weibull
{
  double k = 2.0; ///< shape
  double c = 1.0; ///< scale (m/s)
};

/// Beta(alpha, beta) stretched onto [lower, upper].
struct Beta
{
  double alpha = 1.0;
  double beta = 1.0;
  double lower = 0.0;
  double upper = 1.0;
};

struct Normal
{
  double mean = 0.0;
  double sigma = 1.0;
};

/// Zero-variance input (a point mass).
struct Degenerate
{
  double value = 0.0;
};

using Marginal = std::variant<Weibull, Beta, Normal, Degenerate>;

inline void validate(const Marginal& m)
{
  std::visit(
    [](const auto& d) {
      using T = std::decay_t<decltype(d)>;
      if constexpr (std::is_same_v<T, Weibull>) {
        if (!(d.k > 0.0 && d.c > 0.0))
          throw ValidationError("Weibull parameters must be positive");
      } else if constexpr (std::is_same_v<T, Beta>) {
        if (!(d.alpha > 0.0 && d.beta > 0.0))
          throw ValidationError("Beta shape parameters must be positive");
        if (!(d.lower < d.upper))
          throw ValidationError("Beta support must satisfy lower < upper");
      } else if constexpr (std::is_same_v<T, Normal>) {
        if (!(d.sigma > 0.0))
          throw ValidationError("Normal sigma must be positive");
      }
    },
    m);
}

inline bool is_degenerate(const Marginal& m)
{
  return std::holds_alternative<Degenerate>(m);
}

inline double marginal_pdf(const Marginal& m, double x)
{
  return std::visit(
    [x](const auto& d) -> double {
      using T = std::decay_t<decltype(d)>;
      if constexpr (std::is_same_v<T, Weibull>) {
        if (x < 0.0)
          return 0.0;
        const double z = x / d.c;
        return d.k / d.c * std::pow(z, d.k - 1.0) * std::exp(-std::pow(z, d.k));
      } else if constexpr (std::is_same_v<T, Beta>) {
        if (x <= d.lower || x >= d.upper)
          return 0.0;
        const double w = d.upper - d.lower;
        const double t = (x - d.lower) / w;
        const double log_b = std::lgamma(d.alpha) + std::lgamma(d.beta) - std::lgamma(d.alpha + d.beta);
        return std::exp((d.alpha - 1.0) * std::log(t) + (d.beta - 1.0) * std::log1p(-t) - log_b) / w;
      } else if constexpr (std::is_same_v<T, Normal>) {
        return normal_pdf((x - d.mean) / d.sigma) / d.sigma;
      } else {
        return x == d.value ? std::numeric_limits<double>::infinity() : 0.0;
      }
    },
    m);
}

inline double marginal_cdf(const Marginal& m, double x)
{
  return std::visit(
    [x](const auto& d) -> double {
      using T = std::decay_t<decltype(d)>;
      if constexpr (std::is_same_v<T, Weibull>) {
        if (x < 0.0)
          throw DomainError("Weibull value must be non-negative");
        return -std::expm1(-std::pow(x / d.c, d.k));
      } else if constexpr (std::is_same_v<T, Beta>) {
        if (x < d.lower || x > d.upper)
          throw DomainError("Beta value outside [" + std::to_string(d.lower) + ", " +
                            std::to_string(d.upper) + "]");
        return regularized_incomplete_beta(d.alpha, d.beta, (x - d.lower) / (d.upper - d.lower));
      } else if constexpr (std::is_same_v<T, Normal>) {
        return normal_cdf((x - d.mean) / d.sigma);
      } else {
        return x < d.value ? 0.0 : 1.0;
      }
    },
    m);
}

namespace detail {

// Standardized Beta quantile: Newton on I_x(a, b) - p inside a bisection
// bracket that shrinks every iteration.
inline double beta_quantile_unit(double a, double b, double p)
{
  double lo = 0.0;
  double hi = 1.0;
  double x = 0.5;
  const double log_b = std::lgamma(a) + std::lgamma(b) - std::lgamma(a + b);
  for (int it = 0; it < 400; ++it) {
    const double f = regularized_incomplete_beta(a, b, x) - p;
    if (f == 0.0)
      return x;
    if (f < 0.0)
      lo = x;
    else
      hi = x;
    const double dens = std::exp((a - 1.0) * std::log(x) + (b - 1.0) * std::log1p(-x) - log_b);
    double next = x - f / dens;
    if (!(next > lo && next < hi) || !std::isfinite(next))
      next = 0.5 * (lo + hi);
    if (std::abs(next - x) <= 4.0 * std::numeric_limits<double>::epsilon() * std::max(x, 1e-300) ||
        next == lo || next == hi)
      return next;
    x = next;
  }
  return x;
}

} // namespace detail

inline double marginal_quantile(const Marginal& m, double p)
{
  if (!(p > 0.0 && p < 1.0))
    throw DomainError("probability must lie in (0, 1), got " + std::to_string(p));
  return std::visit(
    [p](const auto& d) -> double {
      using T = std::decay_t<decltype(d)>;
      if constexpr (std::is_same_v<T, Weibull>) {
        return d.c * std::pow(-std::log1p(-p), 1.0 / d.k);
      } else if constexpr (std::is_same_v<T, Beta>) {
        return d.lower + (d.upper - d.lower) * detail::beta_quantile_unit(d.alpha, d.beta, p);
      } else if constexpr (std::is_same_v<T, Normal>) {
        return d.mean + d.sigma * normal_quantile(p);
      } else {
        return d.value;
      }
    },
    m);
}

inline double marginal_mean(const Marginal& m)
{
  return std::visit(
    [](const auto& d) -> double {
      using T = std::decay_t<decltype(d)>;
      if constexpr (std::is_same_v<T, Weibull>)
        return d.c * std::tgamma(1.0 + 1.0 / d.k);
      else if constexpr (std::is_same_v<T, Beta>)
        return d.lower + (d.upper - d.lower) * d.alpha / (d.alpha + d.beta);
      else if constexpr (std::is_same_v<T, Normal>)
        return d.mean;
      else
        return d.value;
    },
    m);
}

inline double marginal_stddev(const Marginal& m)
{
  return std::visit(
    [](const auto& d) -> double {
      using T = std::decay_t<decltype(d)>;
      if constexpr (std::is_same_v<T, Weibull>) {
        const double g1 = std::tgamma(1.0 + 1.0 / d.k);
        const double g2 = std::tgamma(1.0 + 2.0 / d.k);
        return d.c * std::sqrt(g2 - g1 * g1);
      } else if constexpr (std::is_same_v<T, Beta>) {
        const double s = d.alpha + d.beta;
        return (d.upper - d.lower) * std::sqrt(d.alpha * d.beta / (s * s * (s + 1.0)));
      } else if constexpr (std::is_same_v<T, Normal>) {
        return d.sigma;
      } else {
        return 0.0;
      }
    },
    m);
}

// ---------------------------------------------------------------------------
// Plant curves

struct WindCurve
{
  double v_in = 3.5;
  double v_rated = 13.5;
  double v_out = 25.0;
  double p_rated = 1.0;
};

struct SolarCurve
{
  double r_c = 150.0;
  double r_std = 1000.0;
  double p_rated = 1.0;
};

inline void validate(const WindCurve& c)
{
  if (!(c.v_in < c.v_rated && c.v_rated < c.v_out))
    throw ValidationError("wind curve needs v_in < v_rated < v_out");
  if (!(c.p_rated >= 0.0))
    throw ValidationError("wind rated power must be non-negative");
}

inline void validate(const SolarCurve& c)
{
  if (!(c.r_c > 0.0 && c.r_c < c.r_std))
    throw ValidationError("solar curve needs 0 < r_c < r_std");
  if (!(c.p_rated >= 0.0))
    throw ValidationError("solar rated power must be non-negative");
}

/// Piecewise wind speed to power: zero up to cut-in and above cut-out, linear
/// ramp to rated speed, flat at rated power in between.
inline double wind_power(double v, const WindCurve& c)
{
  if (v < 0.0)
    throw DomainError("wind speed must be non-negative");
  if (v <= c.v_in || v > c.v_out)
    return 0.0;
  if (v <= c.v_rated)
    return (v - c.v_in) / (c.v_rated - c.v_in) * c.p_rated;
  return c.p_rated;
}

/// Piecewise radiation to power: quadratic below r_c, linear up to r_std,
/// flat above.
inline double solar_power(double r, const SolarCurve& c)
{
  if (r < 0.0)
    throw DomainError("solar radiation must be non-negative");
  if (r < c.r_c)
    return r * r / (c.r_c * c.r_std) * c.p_rated;
  if (r <= c.r_std)
    return r / c.r_std * c.p_rated;
  return c.p_rated;
}

/// E[h(X)] for X ~ m, integrated over the standard normal image of X.
/// `breaks` lists physical values where h has a kink or a jump.
template <class F>
double expected_value(const Marginal& m, F&& h, std::span<const double> breaks = {})
{
  if (is_degenerate(m))
    return h(std::get<Degenerate>(m).value);
  static constexpr double nodes[] = {-0.9061798459386640, -0.5384693101056831, 0.0,
                                     0.5384693101056831, 0.9061798459386640};
  static constexpr double weights[] = {0.2369268850561891, 0.4786286704993665,
                                       0.5688888888888889, 0.4786286704993665,
                                       0.2369268850561891};
  constexpr double z_max = 8.0;
  constexpr double max_width = 0.05;
  std::vector<double> cuts = {-z_max, z_max};
  for (double x : breaks) {
    const double p = marginal_cdf(m, x);
    if (p > 0.0 && p < 1.0) {
      const double z = normal_quantile(p);
      if (std::abs(z) < z_max)
        cuts.push_back(z);
    }
  }
  std::sort(cuts.begin(), cuts.end());
  const double p_hi = std::nextafter(1.0, 0.0);
  double sum = 0.0;
  for (std::size_t s = 0; s + 1 < cuts.size(); ++s) {
    const double len = cuts[s + 1] - cuts[s];
    if (len <= 0.0)
      continue;
    const int panels = static_cast<int>(std::ceil(len / max_width));
    const double w = len / panels;
    for (int k = 0; k < panels; ++k) {
      const double mid = cuts[s] + (k + 0.5) * w;
      for (int q = 0; q < 5; ++q) {
        const double z = mid + 0.5 * w * nodes[q];
        const double p = std::min(normal_cdf(z), p_hi);
        sum += 0.5 * w * weights[q] * normal_pdf(z) * h(marginal_quantile(m, p));
      }
    }
  }
  return sum;
}

} // namespace patc
