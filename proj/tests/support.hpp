// Test-side helpers: fixtures, random networks and oracles that do not go
// through the library code they check.
#pragma once

#include <cmath>
#include <complex>
#include <fstream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "patc/patc.hpp"

namespace patc::test {

inline std::string data_path(const std::string& name)
{
  return std::string(PATC_DATA_DIR) + "/" + name;
}

inline std::string slurp(const std::string& path)
{
  std::ifstream f(path, std::ios::binary);
  if (!f)
    throw std::runtime_error("cannot open " + path);
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

inline Network load_case(const std::string& name, const ParseOptions& opts = {})
{
  return parse_case(slurp(data_path(name)), opts);
}

struct LoadedScenario
{
  Scenario scenario;
  Problem problem;
};

inline LoadedScenario load_scenario(const std::string& case_name, const std::string& scenario_name)
{
  LoadedScenario l;
  l.scenario = parse_scenario(slurp(data_path(scenario_name)));
  l.problem = build_problem(load_case(case_name, parse_options(l.scenario)), l.scenario);
  return l;
}

/// Slack bus 1 at 1.0 p.u. feeding a PQ bus 2 through a lossless line.
inline Network two_bus(double x, double p_load, double q_load = 0.0)
{
  Network net;
  Bus b1;
  b1.id = 1;
  b1.declared_kind = BusKind::Slack;
  Bus b2;
  b2.id = 2;
  b2.p_load = p_load;
  b2.q_load = q_load;
  for (Bus* b : {&b1, &b2}) {
    b->v_min_normal = 0.0;
    b->v_max_normal = 2.0;
    b->v_min_emergency = 0.0;
    b->v_max_emergency = 2.0;
  }
  net.buses = {b1, b2};
  Branch br;
  br.from = 1;
  br.to = 2;
  br.x = x;
  net.branches = {br};
  Generator g;
  g.bus = 1;
  g.p_max = 1e3;
  g.q_min = -1e3;
  g.q_max = 1e3;
  net.generators = {g};
  finalize_network(net);
  return net;
}

/// Connected 5-bus network with random impedances, charging, taps, phase
/// shifters and shunts. Bus 1 is the slack, buses 2 and 3 are PV.
inline Network random_five_bus(std::mt19937_64& rng)
{
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Network net;
  for (int i = 1; i <= 5; ++i) {
    Bus b;
    b.id = i;
    b.declared_kind = i == 1 ? BusKind::Slack : (i <= 3 ? BusKind::PV : BusKind::PQ);
    b.p_load = 0.2 + 0.6 * u(rng);
    b.q_load = 0.05 + 0.2 * u(rng);
    b.shunt_g = 0.02 * u(rng);
    b.shunt_b = 0.1 * (u(rng) - 0.5);
    net.buses.push_back(b);
  }
  auto add = [&](int f, int t) {
    Branch br;
    br.from = f;
    br.to = t;
    br.r = 0.005 + 0.05 * u(rng);
    br.x = 0.05 + 0.25 * u(rng);
    br.b_charging = 0.05 * u(rng);
    if (u(rng) < 0.3) {
      br.tap_ratio = 0.9 + 0.2 * u(rng);
      br.phase_shift = 0.1 * (u(rng) - 0.5);
    }
    net.branches.push_back(br);
  };
  for (int i = 1; i < 5; ++i)
    add(i, i + 1);
  add(5, 1);
  add(2, 4);
  if (u(rng) < 0.5)
    add(1, 3);
  for (int i = 1; i <= 3; ++i) {
    Generator g;
    g.bus = i;
    g.p_gen = i == 1 ? 0.0 : 0.5 + 0.5 * u(rng);
    g.p_max = 10.0;
    g.q_min = -10.0;
    g.q_max = 10.0;
    g.v_setpoint = 0.98 + 0.06 * u(rng);
    net.generators.push_back(g);
  }
  finalize_network(net);
  return net;
}

/// Bus injections from per-branch pi-model currents plus shunts, with no use
/// of the bus admittance matrix.
inline std::vector<std::complex<double>> injections_by_branch(const Network& net,
                                                             const Eigen::VectorXd& vm,
                                                             const Eigen::VectorXd& va)
{
  using C = std::complex<double>;
  const std::size_t n = net.buses.size();
  std::vector<C> v(n);
  for (std::size_t i = 0; i < n; ++i)
    v[i] = std::polar(vm[static_cast<Eigen::Index>(i)], va[static_cast<Eigen::Index>(i)]);
  std::vector<C> current(n, C(0.0, 0.0));
  for (std::size_t i = 0; i < n; ++i)
    current[i] += C(net.buses[i].shunt_g, net.buses[i].shunt_b) * v[i]; // p.u. after parsing
  for (const auto& br : net.branches) {
    if (!br.in_service())
      continue;
    const auto f = net.bus_index(br.from);
    const auto t = net.bus_index(br.to);
    const C ys = C(1.0, 0.0) / C(br.r, br.x);
    const C yc(0.0, br.b_charging / 2.0);
    const C a = std::polar(br.tap_ratio, br.phase_shift);
    // Ideal transformer at the from end: the series element sees v_f / a.
    const C vf_internal = v[f] / a;
    const C i_series = ys * (vf_internal - v[t]);
    const C i_from_internal = i_series + yc * vf_internal;
    current[f] += i_from_internal / std::conj(a);
    current[t] += -i_series + yc * v[t];
  }
  std::vector<C> s(n);
  for (std::size_t i = 0; i < n; ++i)
    s[i] = v[i] * std::conj(current[i]);
  return s;
}

/// Newton residual ordered like the library's unknowns, built from the
/// branch-wise injections.
inline Eigen::VectorXd oracle_mismatch(const Network& net, const BusTypes& t,
                                       const std::vector<std::complex<double>>& s_spec,
                                       const Eigen::VectorXd& vm, const Eigen::VectorXd& va)
{
  const auto s = injections_by_branch(net, vm, va);
  Eigen::VectorXd f(t.unknowns());
  Eigen::Index k = 0;
  for (int i : t.pvpq)
    f[k++] = s[static_cast<std::size_t>(i)].real() - s_spec[static_cast<std::size_t>(i)].real();
  for (int i : t.pq)
    f[k++] = s[static_cast<std::size_t>(i)].imag() - s_spec[static_cast<std::size_t>(i)].imag();
  return f;
}

/// Gauss-Hermite rule for the standard normal, nodes by Newton iteration on
/// the probabilists' Hermite recurrence.
struct NormalRule
{
  std::vector<double> x;
  std::vector<double> w;
};

inline NormalRule normal_rule(int n)
{
  NormalRule r;
  auto he = [n](double x, double& d) {
    double p0 = 1.0;
    double p1 = x;
    for (int k = 1; k < n; ++k) {
      const double p2 = x * p1 - k * p0;
      p0 = p1;
      p1 = p2;
    }
    d = n * p0; // He_n' = n He_{n-1}
    return p1;
  };
  // Roots of He_n lie inside +-2 sqrt(n); bracket sign changes on a fine grid
  // and polish with Newton.
  const double lim = 2.0 * std::sqrt(static_cast<double>(n)) + 1.0;
  const int grid = 200 * n;
  double d = 0.0;
  double prev_x = -lim;
  double prev = he(prev_x, d);
  for (int g = 1; g <= grid; ++g) {
    const double x = -lim + 2.0 * lim * g / grid;
    const double val = he(x, d);
    if ((prev < 0.0) != (val < 0.0)) {
      double a = prev_x;
      double b = x;
      double fa = prev;
      for (int it = 0; it < 200 && b - a > 1e-15 * std::max(1.0, std::abs(a)); ++it) {
        const double m = 0.5 * (a + b);
        const double fm = he(m, d);
        if ((fa < 0.0) == (fm < 0.0)) {
          a = m;
          fa = fm;
        } else {
          b = m;
        }
      }
      double root = 0.5 * (a + b);
      for (int it = 0; it < 3; ++it) {
        const double f = he(root, d);
        root -= f / d;
      }
      r.x.push_back(root);
    }
    prev_x = x;
    prev = val;
  }
  // w_k = n! / (n He_{n-1}(x_k))^2, normalised to unit mass.
  double total = 0.0;
  for (double x : r.x) {
    he(x, d); // d = n He_{n-1}(x)
    r.w.push_back(1.0 / (d * d));
    total += r.w.back();
  }
  for (double& w : r.w)
    w /= total;
  return r;
}

/// Rank-one Hermite model whose factors are (1, a, b, ...) with entries
/// beyond the constant drawn from U(-spread, spread).
inline LraModel rank_one_target(std::size_t n, int degree, double spread, std::mt19937_64& rng)
{
  std::uniform_real_distribution<double> u(-spread, spread);
  LraModel m;
  m.families.assign(n, PolyFamily::hermite());
  m.degrees.assign(n, degree);
  m.weights = Eigen::VectorXd::Constant(1, 1.0 + u(rng));
  m.z.resize(1);
  for (std::size_t i = 0; i < n; ++i) {
    Eigen::VectorXd z(degree + 1);
    z[0] = 1.0;
    for (int k = 1; k <= degree; ++k)
      z[k] = u(rng);
    m.z[0].push_back(z);
  }
  return m;
}

// Weibull quantile of Phi(z), through the upper tail so that large z stays finite.
inline double weibull_of_z(double k, double c, double z)
{
  return c * std::pow(-std::log(0.5 * std::erfc(z / std::sqrt(2.0))), 1.0 / k);
}

/// Correlation of two Weibull variables under a Gaussian copula with
/// correlation r, by tensorised quadrature on the oracle rule.
inline double weibull_pair_correlation(const NormalRule& rule, double k1, double c1, double k2,
                                double c2, double r)
{
  const std::size_t n = rule.x.size();
  double m1 = 0.0, m2 = 0.0, s11 = 0.0, s22 = 0.0, s12 = 0.0;
  for (std::size_t a = 0; a < n; ++a) {
    const double za = rule.x[a];
    const double ua = weibull_of_z(k1, c1, za);
    m1 += rule.w[a] * ua;
    s11 += rule.w[a] * ua * ua;
    const double ub = weibull_of_z(k2, c2, za);
    m2 += rule.w[a] * ub;
    s22 += rule.w[a] * ub * ub;
    for (std::size_t b = 0; b < n; ++b) {
      const double z2 = r * za + std::sqrt(1.0 - r * r) * rule.x[b];
      s12 += rule.w[a] * rule.w[b] * ua * weibull_of_z(k2, c2, z2);
    }
  }
  return (s12 - m1 * m2) / std::sqrt((s11 - m1 * m1) * (s22 - m2 * m2));
}

inline double bisect_gaussian_correlation(const NormalRule& rule, double k1, double c1, double k2,
                                   double c2, double target)
{
  double lo = 0.0;
  double hi = 0.999999;
  for (int it = 0; it < 60; ++it) {
    const double mid = 0.5 * (lo + hi);
    (weibull_pair_correlation(rule, k1, c1, k2, c2, mid) < target ? lo : hi) = mid;
  }
  return 0.5 * (lo + hi);
}

} // namespace patc::test
