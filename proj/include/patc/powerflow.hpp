#pragma once

// Newton-Raphson AC power flow in polar coordinates with PV->PQ switching on
// generator reactive limits.

#include <cmath>
#include <vector>

#include <Eigen/Dense>

#include "patc/error.hpp"
#include "patc/netmodel.hpp"

namespace patc {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;
using ComplexVector = Eigen::VectorXcd;

/// Per-bus injections in p.u. `p_gen`/`q_gen` belong to the conventional
/// units; `p_extra`/`q_extra` is the output of non-dispatchable plants, which
/// does not count against unit limits.
struct Injections
{
  Vector p_gen;
  Vector q_gen;
  Vector p_extra;
  Vector q_extra;
  Vector p_load;
  Vector q_load;

  static Injections zeros(std::size_t n)
  {
    const auto m = static_cast<Eigen::Index>(n);
    return {Vector::Zero(m), Vector::Zero(m), Vector::Zero(m),
            Vector::Zero(m), Vector::Zero(m), Vector::Zero(m)};
  }
};

/// Loads from the bus table and the output of every in-service unit.
inline Injections base_injections(const Network& net)
{
  auto inj = Injections::zeros(net.bus_count());
  for (std::size_t i = 0; i < net.buses.size(); ++i) {
    inj.p_load[static_cast<Eigen::Index>(i)] = net.buses[i].p_load;
    inj.q_load[static_cast<Eigen::Index>(i)] = net.buses[i].q_load;
  }
  for (const auto& g : net.generators) {
    if (!g.in_service())
      continue;
    const auto i = static_cast<Eigen::Index>(net.bus_index(g.bus));
    inj.p_gen[i] += g.p_gen;
    inj.q_gen[i] += g.q_gen;
  }
  return inj;
}

struct PfOptions
{
  double tolerance = 1e-8; ///< max |mismatch| in p.u.
  int max_iterations = 30;
  bool enforce_q_limits = true;
  bool flat_start = true;
  int max_switch_rounds = 10;
};

/// A PV bus pinned to one of its reactive limits.
struct QSwitch
{
  std::size_t bus = 0; ///< bus index
  bool at_max = true;
  double q_limit = 0.0; ///< conventional Q output held at the violated limit
};

struct PfState
{
  Vector vm;
  Vector va;
  std::vector<QSwitch> pv_to_pq_switches;
  int iterations = 0;
  double mismatch = 0.0;
};

/// Bus index sets of a Newton problem. The unknowns are the angles of `pvpq`
/// followed by the magnitudes of `pq`.
struct BusTypes
{
  std::size_t slack = 0;
  std::vector<int> pv;
  std::vector<int> pq;
  std::vector<int> pvpq;

  Eigen::Index unknowns() const { return static_cast<Eigen::Index>(pvpq.size() + pq.size()); }
};

inline bool is_switched(const std::vector<QSwitch>& sw, std::size_t bus)
{
  for (const auto& s : sw)
    if (s.bus == bus)
      return true;
  return false;
}

inline BusTypes bus_types(const Network& net, const std::vector<QSwitch>& switches)
{
  BusTypes t;
  t.slack = net.slack_index();
  for (std::size_t i = 0; i < net.buses.size(); ++i) {
    const auto kind = net.buses[i].kind;
    if (kind == BusKind::Slack)
      continue;
    if (kind == BusKind::PV && !is_switched(switches, i))
      t.pv.push_back(static_cast<int>(i));
    else
      t.pq.push_back(static_cast<int>(i));
  }
  t.pvpq = t.pv;
  t.pvpq.insert(t.pvpq.end(), t.pq.begin(), t.pq.end());
  return t;
}

/// Complex power the injections specify at every bus; switched PV buses take
/// the fixed limit value as conventional Q.
inline ComplexVector specified_power(const Injections& inj, const std::vector<QSwitch>& switches)
{
  ComplexVector s(inj.p_gen.size());
  for (Eigen::Index i = 0; i < s.size(); ++i)
    s[i] = Complex(inj.p_gen[i] + inj.p_extra[i] - inj.p_load[i],
                   inj.q_gen[i] + inj.q_extra[i] - inj.q_load[i]);
  for (const auto& sw : switches) {
    const auto i = static_cast<Eigen::Index>(sw.bus);
    s[i] = Complex(s[i].real(), sw.q_limit + inj.q_extra[i] - inj.q_load[i]);
  }
  return s;
}

inline ComplexVector bus_voltages(const Vector& vm, const Vector& va)
{
  ComplexVector v(vm.size());
  for (Eigen::Index i = 0; i < vm.size(); ++i)
    v[i] = std::polar(vm[i], va[i]);
  return v;
}

/// S_i = V_i conj(sum_j Y_ij V_j).
inline ComplexVector calc_power(const ComplexMatrix& y, const ComplexVector& v)
{
  return v.cwiseProduct((y * v).conjugate());
}

/// Newton residual [P mismatch over pvpq; Q mismatch over pq], calc - spec.
inline Vector mismatch_vector(const BusTypes& t, const ComplexVector& s_calc,
                              const ComplexVector& s_spec)
{
  const Eigen::Index npvpq = static_cast<Eigen::Index>(t.pvpq.size());
  Vector f(t.unknowns());
  for (Eigen::Index k = 0; k < npvpq; ++k) {
    const auto i = t.pvpq[static_cast<std::size_t>(k)];
    f[k] = s_calc[i].real() - s_spec[i].real();
  }
  for (std::size_t k = 0; k < t.pq.size(); ++k) {
    const auto i = t.pq[k];
    f[npvpq + static_cast<Eigen::Index>(k)] = s_calc[i].imag() - s_spec[i].imag();
  }
  return f;
}

/// Analytic Jacobian of `mismatch_vector` with respect to [va(pvpq); vm(pq)].
inline Matrix pf_jacobian(const ComplexMatrix& y, const ComplexVector& v, const BusTypes& t)
{
  const Eigen::Index n = v.size();
  const ComplexVector ibus = y * v;
  ComplexVector vnorm(n);
  for (Eigen::Index i = 0; i < n; ++i)
    vnorm[i] = v[i] / std::abs(v[i]);

  const Eigen::Index npvpq = static_cast<Eigen::Index>(t.pvpq.size());
  const Eigen::Index npq = static_cast<Eigen::Index>(t.pq.size());
  Matrix jac(npvpq + npq, npvpq + npq);

  // dS_i/dVa_j = j V_i conj(delta_ij I_i - Y_ij V_j)
  // dS_i/dVm_j = V_i conj(Y_ij vnorm_j) + delta_ij conj(I_i) vnorm_i
  auto ds_dva = [&](int i, int j) {
    Complex inner = -y(i, j) * v[j];
    if (i == j)
      inner += ibus[i];
    return Complex(0.0, 1.0) * v[i] * std::conj(inner);
  };
  auto ds_dvm = [&](int i, int j) {
    Complex out = v[i] * std::conj(y(i, j) * vnorm[j]);
    if (i == j)
      out += std::conj(ibus[i]) * vnorm[i];
    return out;
  };

  for (Eigen::Index r = 0; r < npvpq; ++r) {
    const int i = t.pvpq[static_cast<std::size_t>(r)];
    for (Eigen::Index c = 0; c < npvpq; ++c)
      jac(r, c) = ds_dva(i, t.pvpq[static_cast<std::size_t>(c)]).real();
    for (Eigen::Index c = 0; c < npq; ++c)
      jac(r, npvpq + c) = ds_dvm(i, t.pq[static_cast<std::size_t>(c)]).real();
  }
  for (Eigen::Index r = 0; r < npq; ++r) {
    const int i = t.pq[static_cast<std::size_t>(r)];
    for (Eigen::Index c = 0; c < npvpq; ++c)
      jac(npvpq + r, c) = ds_dva(i, t.pvpq[static_cast<std::size_t>(c)]).imag();
    for (Eigen::Index c = 0; c < npq; ++c)
      jac(npvpq + r, npvpq + c) = ds_dvm(i, t.pq[static_cast<std::size_t>(c)]).imag();
  }
  return jac;
}

inline Vector pack_unknowns(const BusTypes& t, const Vector& vm, const Vector& va)
{
  Vector x(t.unknowns());
  const auto npvpq = static_cast<Eigen::Index>(t.pvpq.size());
  for (Eigen::Index k = 0; k < npvpq; ++k)
    x[k] = va[t.pvpq[static_cast<std::size_t>(k)]];
  for (std::size_t k = 0; k < t.pq.size(); ++k)
    x[npvpq + static_cast<Eigen::Index>(k)] = vm[t.pq[k]];
  return x;
}

inline void unpack_unknowns(const BusTypes& t, const Vector& x, Vector& vm, Vector& va)
{
  const auto npvpq = static_cast<Eigen::Index>(t.pvpq.size());
  for (Eigen::Index k = 0; k < npvpq; ++k)
    va[t.pvpq[static_cast<std::size_t>(k)]] = x[k];
  for (std::size_t k = 0; k < t.pq.size(); ++k)
    vm[t.pq[k]] = x[npvpq + static_cast<Eigen::Index>(k)];
}

enum class NewtonStatus { Converged, MaxIterations, Diverged, Singular };

/// Plain Newton iteration at fixed specified power. Regulated magnitudes are
/// taken from the network setpoints; `vm`/`va` hold the start and the result.
inline NewtonStatus newton_iterate(const Network& net, const BusTypes& t,
                                   const ComplexVector& s_spec, Vector& vm, Vector& va,
                                   double tolerance, int max_iterations, int& iterations,
                                   double& final_norm)
{
  vm[static_cast<Eigen::Index>(t.slack)] = net.buses[t.slack].v_setpoint;
  for (int i : t.pv)
    vm[i] = net.buses[static_cast<std::size_t>(i)].v_setpoint;

  iterations = 0;
  for (;;) {
    const ComplexVector v = bus_voltages(vm, va);
    const Vector f = mismatch_vector(t, calc_power(net.admittance, v), s_spec);
    final_norm = f.size() ? f.lpNorm<Eigen::Infinity>() : 0.0;
    if (!std::isfinite(final_norm) || final_norm > 1e10)
      return NewtonStatus::Diverged;
    if (final_norm < tolerance)
      return NewtonStatus::Converged;
    if (iterations >= max_iterations)
      return NewtonStatus::MaxIterations;
    const Matrix jac = pf_jacobian(net.admittance, v, t);
    Eigen::PartialPivLU<Matrix> lu(jac);
    if (!(lu.rcond() > 1e-14))
      return NewtonStatus::Singular;
    const Vector dx = lu.solve(f);
    Vector x = pack_unknowns(t, vm, va) - dx;
    unpack_unknowns(t, x, vm, va);
    ++iterations;
  }
}

/// Aggregate reactive limits of the in-service units at every bus.
inline void bus_q_limits(const Network& net, Vector& q_min, Vector& q_max)
{
  const auto n = static_cast<Eigen::Index>(net.bus_count());
  q_min = Vector::Zero(n);
  q_max = Vector::Zero(n);
  for (const auto& g : net.generators) {
    if (!g.in_service())
      continue;
    const auto i = static_cast<Eigen::Index>(net.bus_index(g.bus));
    q_min[i] += g.q_min;
    q_max[i] += g.q_max;
  }
}

/// Conventional reactive output at every bus implied by a solved state.
inline Vector conventional_q(const Network& net, const Injections& inj, const PfState& st)
{
  const ComplexVector s = calc_power(net.admittance, bus_voltages(st.vm, st.va));
  return s.imag() + inj.q_load - inj.q_extra;
}

/// PV buses (not yet switched) whose conventional Q falls outside the unit
/// limits, with the limit each one should be pinned at.
inline std::vector<QSwitch> q_limit_violations(const Network& net, const Injections& inj,
                                               const PfState& st, double tol = 1e-9)
{
  Vector q_min, q_max;
  bus_q_limits(net, q_min, q_max);
  const Vector qg = conventional_q(net, inj, st);
  std::vector<QSwitch> out;
  for (std::size_t i = 0; i < net.buses.size(); ++i) {
    if (net.buses[i].kind != BusKind::PV || is_switched(st.pv_to_pq_switches, i))
      continue;
    const auto k = static_cast<Eigen::Index>(i);
    if (qg[k] > q_max[k] + tol)
      out.push_back({i, true, q_max[k]});
    else if (qg[k] < q_min[k] - tol)
      out.push_back({i, false, q_min[k]});
  }
  return out;
}

inline PfState flat_state(const Network& net)
{
  PfState st;
  const auto n = static_cast<Eigen::Index>(net.bus_count());
  st.vm = Vector::Ones(n);
  st.va = Vector::Zero(n);
  const auto s = net.slack_index();
  st.va[static_cast<Eigen::Index>(s)] = net.buses[s].voltage_angle;
  return st;
}

/// Solves the power flow. `warm` (if given) supplies the starting point and
/// any PV->PQ switches already in effect; otherwise a flat start (or the case
/// voltages when `flat_start` is off) is used. Switching is monotone: buses
/// in `warm` stay switched.
inline PfState solve_power_flow(const Network& net, const Injections& inj,
                                const PfOptions& opts = {}, const PfState* warm = nullptr)
{
  if (!(opts.tolerance > 0.0) || opts.max_iterations < 1)
    throw ValidationError("invalid power-flow options");
  PfState st;
  if (warm) {
    st = *warm;
  } else if (opts.flat_start) {
    st = flat_state(net);
  } else {
    st = flat_state(net);
    for (std::size_t i = 0; i < net.buses.size(); ++i) {
      st.vm[static_cast<Eigen::Index>(i)] = net.buses[i].voltage_magnitude;
      st.va[static_cast<Eigen::Index>(i)] = net.buses[i].voltage_angle;
    }
  }
  int total = 0;
  for (int round = 0;; ++round) {
    const BusTypes t = bus_types(net, st.pv_to_pq_switches);
    const ComplexVector s_spec = specified_power(inj, st.pv_to_pq_switches);
    int its = 0;
    double norm = 0.0;
    const auto status =
      newton_iterate(net, t, s_spec, st.vm, st.va, opts.tolerance, opts.max_iterations, its, norm);
    total += its;
    st.iterations = total;
    st.mismatch = norm;
    if (status == NewtonStatus::Singular)
      throw SingularMatrixError("power-flow Jacobian is singular");
    if (status != NewtonStatus::Converged)
      throw ConvergenceError("power flow did not converge (mismatch " + std::to_string(norm) +
                             " after " + std::to_string(its) + " iterations)");
    if (!opts.enforce_q_limits)
      return st;
    const auto viol = q_limit_violations(net, inj, st);
    if (viol.empty())
      return st;
    if (round >= opts.max_switch_rounds)
      throw ConvergenceError("reactive-limit switching did not settle");
    st.pv_to_pq_switches.insert(st.pv_to_pq_switches.end(), viol.begin(), viol.end());
  }
}

struct BranchFlow
{
  Complex s_from{0.0, 0.0}; ///< power entering the branch at the from end
  Complex s_to{0.0, 0.0};   ///< power entering the branch at the to end
  double s_max_end = 0.0;   ///< larger of |s_from| and |s_to|
};

/// Apparent power at both ends of every branch; outaged branches carry zero.
inline std::vector<BranchFlow> branch_flows(const Network& net, const PfState& st)
{
  std::vector<BranchFlow> out(net.branches.size());
  const ComplexVector v = bus_voltages(st.vm, st.va);
  for (std::size_t k = 0; k < net.branches.size(); ++k) {
    const auto& br = net.branches[k];
    if (!br.in_service())
      continue;
    const auto f = static_cast<Eigen::Index>(net.bus_index(br.from));
    const auto t = static_cast<Eigen::Index>(net.bus_index(br.to));
    const Complex ys = 1.0 / Complex(br.r, br.x);
    const Complex half_b(0.0, br.b_charging / 2.0);
    const Complex tap = std::polar(br.tap_ratio, br.phase_shift);
    const Complex i_f = (ys + half_b) / std::norm(tap) * v[f] - ys / std::conj(tap) * v[t];
    const Complex i_t = -ys / tap * v[f] + (ys + half_b) * v[t];
    out[k].s_from = v[f] * std::conj(i_f);
    out[k].s_to = v[t] * std::conj(i_t);
    out[k].s_max_end = std::max(std::abs(out[k].s_from), std::abs(out[k].s_to));
  }
  return out;
}

/// Active output the conventional units at the slack bus must produce.
inline double slack_generation(const Network& net, const Injections& inj, const PfState& st)
{
  const auto s = static_cast<Eigen::Index>(net.slack_index());
  const ComplexVector v = bus_voltages(st.vm, st.va);
  const Complex si = v[s] * std::conj((net.admittance.row(s) * v)(0));
  return si.real() + inj.p_load[s] - inj.p_extra[s];
}

} // namespace patc
