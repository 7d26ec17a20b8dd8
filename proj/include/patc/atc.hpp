#pragma once

// Transfer capability along a load-generation variation vector: arc-length
// continuation power flow with bisection against voltage, thermal and
// generator limits, and the min-composition over contingency cases.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <limits>
#include <optional>
#include <string>
#include <thread>
#include <tuple>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "patc/error.hpp"
#include "patc/netmodel.hpp"
#include "patc/powerflow.hpp"

namespace patc {

enum class LimitClass { None, Voltage, Thermal, Collapse, Generator };

inline const char* to_string(LimitClass c)
{
  switch (c) {
  case LimitClass::None: return "none";
  case LimitClass::Voltage: return "voltage";
  case LimitClass::Thermal: return "thermal";
  case LimitClass::Collapse: return "collapse";
  case LimitClass::Generator: return "generator";
  }
  return "?";
}

/// Load-generation variation vector. Entries are p.u. per unit of lambda.
struct Transaction
{
  enum class Normalization { UnitSourceSum, RawMW };

  struct Source
  {
    int bus = 0;
    double dp_gen = 0.0;
  };
  struct Sink
  {
    int bus = 0;
    double dp_load = 0.0;
    double dq_load = 0.0;
  };

  std::vector<Source> sources;
  std::vector<Sink> sinks;
  Normalization normalization = Normalization::UnitSourceSum;

  double source_sum() const
  {
    double s = 0.0;
    for (const auto& x : sources)
      s += x.dp_gen;
    return s;
  }
  double sink_sum() const
  {
    double s = 0.0;
    for (const auto& x : sinks)
      s += x.dp_load;
    return s;
  }
  bool is_zero() const
  {
    for (const auto& x : sources)
      if (x.dp_gen != 0.0)
        return false;
    for (const auto& x : sinks)
      if (x.dp_load != 0.0 || x.dq_load != 0.0)
        return false;
    return true;
  }
};

inline void validate(const Transaction& txn, const Network& net)
{
  for (const auto& s : txn.sources)
    if (!net.has_bus(s.bus))
      throw ValidationError("transaction source bus " + std::to_string(s.bus) + " does not exist");
  for (const auto& s : txn.sinks)
    if (!net.has_bus(s.bus))
      throw ValidationError("transaction sink bus " + std::to_string(s.bus) + " does not exist");
  if (std::abs(txn.source_sum() - txn.sink_sum()) > 1e-9)
    throw ValidationError("transaction is not balanced: sources " +
                          std::to_string(txn.source_sum()) + " p.u., sinks " +
                          std::to_string(txn.sink_sum()) + " p.u.");
  if (txn.normalization == Transaction::Normalization::UnitSourceSum && !txn.is_zero() &&
      std::abs(txn.source_sum() - 1.0) > 1e-9)
    throw ValidationError("unit-normalized transaction needs source injections summing to 1 p.u.");
}

/// Transfer from `source_buses` (equal shares) to `sink_buses`. Sink shares
/// follow the base active load (equal shares if the sinks carry none) and the
/// reactive withdrawal keeps each sink's power factor. With `RawMW` the vector
/// carries `nominal_mw` per unit of lambda.
inline Transaction make_transaction(const Network& net, const std::vector<int>& source_buses,
                                    const std::vector<int>& sink_buses,
                                    Transaction::Normalization norm =
                                      Transaction::Normalization::UnitSourceSum,
                                    double nominal_mw = 0.0)
{
  if (source_buses.empty() || sink_buses.empty())
    throw ValidationError("a transaction needs at least one source and one sink bus");
  double total = 1.0;
  if (norm == Transaction::Normalization::RawMW) {
    if (!(nominal_mw > 0.0))
      throw ValidationError("raw-MW transaction needs a positive nominal transfer");
    total = nominal_mw / net.mva_base;
  }
  Transaction txn;
  txn.normalization = norm;
  for (int b : source_buses) {
    net.bus_index(b);
    txn.sources.push_back({b, total / static_cast<double>(source_buses.size())});
  }
  double load = 0.0;
  for (int b : sink_buses)
    load += net.buses[net.bus_index(b)].p_load;
  for (int b : sink_buses) {
    const auto& bus = net.buses[net.bus_index(b)];
    const double share =
      load > 0.0 ? bus.p_load / load : 1.0 / static_cast<double>(sink_buses.size());
    const double dp = total * share;
    const double dq = bus.p_load != 0.0 ? dp * bus.q_load / bus.p_load : 0.0;
    txn.sinks.push_back({b, dp, dq});
  }
  return txn;
}

struct TransferDirection
{
  Vector dp_gen;
  Vector dp_load;
  Vector dq_load;
  double mw_per_unit = 100.0; ///< MW transferred per unit of lambda
};

inline TransferDirection transfer_direction(const Network& net, const Transaction& txn)
{
  const auto n = static_cast<Eigen::Index>(net.bus_count());
  TransferDirection d{Vector::Zero(n), Vector::Zero(n), Vector::Zero(n), net.mva_base};
  for (const auto& s : txn.sources)
    d.dp_gen[static_cast<Eigen::Index>(net.bus_index(s.bus))] += s.dp_gen;
  for (const auto& s : txn.sinks) {
    const auto i = static_cast<Eigen::Index>(net.bus_index(s.bus));
    d.dp_load[i] += s.dp_load;
    d.dq_load[i] += s.dq_load;
  }
  const double sum = txn.source_sum();
  if (sum != 0.0)
    d.mw_per_unit = sum * net.mva_base;
  return d;
}

struct TraceOptions
{
  double step = 0.1;        ///< initial lambda step (p.u.)
  double resolution = 1e-4; ///< bracketing accuracy of every reported lambda (p.u.)
  double lambda_cap = 100.0;
  double limit_tolerance = 1e-8;
  int corrector_max_iterations = 12;
  PfOptions pf;
  bool stop_at_first_violation = false;
};

struct AtcCaseResult
{
  static constexpr double kNotEvaluated = std::numeric_limits<double>::infinity();

  std::size_t case_index = 0;
  std::string case_label = "base";
  double lambda_voltage = kNotEvaluated; ///< MW
  double lambda_thermal = kNotEvaluated;
  double lambda_collapse = kNotEvaluated;
  double lambda_generator = kNotEvaluated;
  double overall = 0.0;    ///< MW
  double overall_pu = 0.0; ///< lambda at `overall`
  LimitClass binding_class = LimitClass::None;
  std::string binding_facility = "none";
  std::string voltage_facility;
  std::string thermal_facility;
  std::string generator_facility;
  bool truncated = false; ///< stopped early against a lower bound from another case
  std::vector<std::string> base_violations;
  int power_flow_solves = 0;
};

/// Id of branch k in `Facility` notation, counting parallel circuits.
inline std::string branch_facility_id(const Network& net, std::size_t k)
{
  const auto& br = net.branches[k];
  int ordinal = 0;
  for (std::size_t j = 0; j <= k; ++j) {
    const auto& o = net.branches[j];
    if ((o.from == br.from && o.to == br.to) || (o.from == br.to && o.to == br.from))
      ++ordinal;
  }
  return Facility{Facility::Kind::Branch, br.from, br.to, ordinal}.to_string();
}

/// Largest lambda at which every non-slack source bus stays within the sum
/// of its in-service unit P limits; infinite if no source bus is bounded.
inline double generator_headroom(const Network& net, const Injections& inj,
                                 const TransferDirection& dir, std::string* facility = nullptr)
{
  const auto n = static_cast<Eigen::Index>(net.bus_count());
  Vector p_min = Vector::Zero(n);
  Vector p_max = Vector::Zero(n);
  for (const auto& g : net.generators) {
    if (!g.in_service())
      continue;
    const auto i = static_cast<Eigen::Index>(net.bus_index(g.bus));
    p_min[i] += g.p_min;
    p_max[i] += g.p_max;
  }
  double best = std::numeric_limits<double>::infinity();
  const auto slack = static_cast<Eigen::Index>(net.slack_index());
  for (Eigen::Index i = 0; i < n; ++i) {
    const double d = dir.dp_gen[i];
    if (d == 0.0 || i == slack)
      continue;
    const double room = d > 0.0 ? (p_max[i] - inj.p_gen[i]) / d : (inj.p_gen[i] - p_min[i]) / -d;
    const double lam = std::max(room, 0.0);
    if (lam < best) {
      best = lam;
      if (facility)
        *facility = "G" + std::to_string(net.buses[static_cast<std::size_t>(i)].id);
    }
  }
  return best;
}

namespace detail {

/// Tangent of the solution curve in bus coordinates, so tangents taken under
/// different PV/PQ structures stay comparable.
struct CurveTangent
{
  Vector packed; ///< [dx; dlambda] in the unknown ordering of the point, unit norm
  Vector dva;
  Vector dvm;
  double dlambda = 0.0;

  double dot(const CurveTangent& o) const
  {
    return dva.dot(o.dva) + dvm.dot(o.dvm) + dlambda * o.dlambda;
  }
};

struct CurvePoint
{
  PfState st;
  double lambda = 0.0;
};

class Tracer
{
 public:
  Tracer(const Network& net, const Injections& inj, const TransferDirection& dir,
         const TraceOptions& opts)
      : net_(net)
      , inj_(inj)
      , dir_(dir)
      , opts_(opts)
  {
  }

  int solves = 0;

  Injections at(double lambda) const
  {
    Injections out = inj_;
    out.p_gen += lambda * dir_.dp_gen;
    out.p_load += lambda * dir_.dp_load;
    out.q_load += lambda * dir_.dq_load;
    return out;
  }

  /// Fixed-lambda power flow with monotone reactive-limit switching.
  std::optional<PfState> solve_at(double lambda, const PfState& warm)
  {
    ++solves;
    PfState st = warm;
    const Injections inj = at(lambda);
    for (int round = 0; round <= opts_.pf.max_switch_rounds; ++round) {
      const BusTypes t = bus_types(net_, st.pv_to_pq_switches);
      int its = 0;
      double norm = 0.0;
      const auto status =
        newton_iterate(net_, t, specified_power(inj, st.pv_to_pq_switches), st.vm, st.va,
                       opts_.pf.tolerance, opts_.pf.max_iterations, its, norm);
      if (status != NewtonStatus::Converged || !healthy(st))
        return std::nullopt;
      st.iterations = its;
      st.mismatch = norm;
      if (!opts_.pf.enforce_q_limits)
        return st;
      const auto viol = q_limit_violations(net_, inj, st);
      if (viol.empty())
        return st;
      st.pv_to_pq_switches.insert(st.pv_to_pq_switches.end(), viol.begin(), viol.end());
    }
    return std::nullopt;
  }

  std::optional<CurveTangent> tangent(const CurvePoint& p) const
  {
    const BusTypes t = bus_types(net_, p.st.pv_to_pq_switches);
    const ComplexVector v = bus_voltages(p.st.vm, p.st.va);
    const Matrix jac = pf_jacobian(net_.admittance, v, t);
    Eigen::PartialPivLU<Matrix> lu(jac);
    if (!(lu.rcond() > 1e-14))
      return std::nullopt;
    const Vector g_lambda = lambda_column(t);
    Vector dx = lu.solve(-g_lambda);
    CurveTangent out;
    out.packed.resize(dx.size() + 1);
    out.packed.head(dx.size()) = dx;
    out.packed[dx.size()] = 1.0;
    const double norm = out.packed.norm();
    if (!std::isfinite(norm))
      return std::nullopt;
    out.packed /= norm;
    const auto n = static_cast<Eigen::Index>(net_.bus_count());
    out.dva = Vector::Zero(n);
    out.dvm = Vector::Zero(n);
    unpack_unknowns(t, out.packed.head(dx.size()), out.dvm, out.dva);
    out.dlambda = out.packed[dx.size()];
    return out;
  }

  /// Predictor along the tangent by arc length `sigma`, corrector on the
  /// augmented system [mismatch; tangent . (z - z_pred)] = 0.
  std::optional<CurvePoint> arc_step(const CurvePoint& prev, const CurveTangent& tan, double sigma)
  {
    ++solves;
    const BusTypes t = bus_types(net_, prev.st.pv_to_pq_switches);
    const Eigen::Index nx = t.unknowns();
    Vector z0(nx + 1);
    z0.head(nx) = pack_unknowns(t, prev.st.vm, prev.st.va);
    z0[nx] = prev.lambda;
    const Vector zp = z0 + sigma * tan.packed;
    Vector z = zp;
    CurvePoint out{prev.st, prev.lambda};
    const Vector g_lambda = lambda_column(t);
    for (int it = 0;; ++it) {
      unpack_unknowns(t, z.head(nx), out.st.vm, out.st.va);
      out.lambda = z[nx];
      const ComplexVector v = bus_voltages(out.st.vm, out.st.va);
      const Injections inj = at(out.lambda);
      const Vector f =
        mismatch_vector(t, calc_power(net_.admittance, v),
                        specified_power(inj, out.st.pv_to_pq_switches));
      const double arc = tan.packed.dot(z - zp);
      const double norm = std::max(f.size() ? f.lpNorm<Eigen::Infinity>() : 0.0, std::abs(arc));
      if (!std::isfinite(norm) || norm > 1e10)
        return std::nullopt;
      if (norm < opts_.pf.tolerance) {
        if (!healthy(out.st) || (z - z0).norm() > 3.0 * std::abs(sigma) + 1e-12)
          return std::nullopt;
        out.st.iterations = it;
        out.st.mismatch = norm;
        return out;
      }
      if (it >= opts_.corrector_max_iterations)
        return std::nullopt;
      Matrix aug(nx + 1, nx + 1);
      aug.topLeftCorner(nx, nx) = pf_jacobian(net_.admittance, v, t);
      aug.topRightCorner(nx, 1) = g_lambda;
      aug.bottomRows(1) = tan.packed.transpose();
      Eigen::PartialPivLU<Matrix> lu(aug);
      if (!(lu.rcond() > 1e-14))
        return std::nullopt;
      Vector rhs(nx + 1);
      rhs.head(nx) = f;
      rhs[nx] = arc;
      z -= lu.solve(rhs);
    }
  }

  std::optional<std::string> voltage_violation(const PfState& st) const
  {
    const double tol = opts_.limit_tolerance;
    for (std::size_t i = 0; i < net_.bus_count(); ++i) {
      const double vm = st.vm[static_cast<Eigen::Index>(i)];
      if (vm < net_.v_min(i) - tol || vm > net_.v_max(i) + tol)
        return "bus " + std::to_string(net_.buses[i].id);
    }
    return std::nullopt;
  }

  std::optional<std::string> thermal_violation(const PfState& st) const
  {
    const double tol = opts_.limit_tolerance;
    const auto flows = branch_flows(net_, st);
    for (std::size_t k = 0; k < flows.size(); ++k) {
      if (!net_.branches[k].in_service())
        continue;
      if (flows[k].s_max_end > net_.s_max(k) + tol)
        return branch_facility_id(net_, k);
    }
    return std::nullopt;
  }

  std::optional<std::string> violation(LimitClass c, const PfState& st) const
  {
    return c == LimitClass::Voltage ? voltage_violation(st) : thermal_violation(st);
  }

  /// Last feasible lambda of class `c` inside (lo.lambda, hi_lambda], where
  /// `lo` is feasible and the state at `hi_lambda` violates `c`.
  std::pair<double, std::string> bisect(LimitClass c, CurvePoint lo, double hi_lambda,
                                        std::string facility)
  {
    double hi = hi_lambda;
    while (hi - lo.lambda > opts_.resolution) {
      const double mid = 0.5 * (lo.lambda + hi);
      const auto st = solve_at(mid, lo.st);
      std::optional<std::string> v;
      if (st)
        v = violation(c, *st);
      if (!st || v) {
        hi = mid;
        if (v)
          facility = *v;
      } else {
        lo = {*st, mid};
      }
    }
    return {lo.lambda, facility};
  }

 private:
  static bool healthy(const PfState& st)
  {
    return st.vm.allFinite() && st.va.allFinite() && st.vm.minCoeff() > 0.0;
  }

  /// d(mismatch)/d(lambda) over the rows of the Newton system.
  Vector lambda_column(const BusTypes& t) const
  {
    const auto n = static_cast<Eigen::Index>(net_.bus_count());
    ComplexVector ds(n);
    for (Eigen::Index i = 0; i < n; ++i)
      ds[i] = Complex(dir_.dp_gen[i] - dir_.dp_load[i], -dir_.dq_load[i]);
    return mismatch_vector(t, ComplexVector::Zero(n), ds);
  }

  const Network& net_;
  const Injections& inj_;
  const TransferDirection& dir_;
  const TraceOptions& opts_;
};

} // namespace detail

/// Largest transfer before the first voltage, thermal or generator limit
/// violation or the nose of the PV curve. `base` must solve the power flow of
/// `inj` at lambda = 0. With `bound`, the trace stops once lambda reaches the
/// bound (the result is then `truncated` and only a lower estimate).
inline AtcCaseResult continuation_trace(const Network& net, const Injections& inj,
                                        const PfState& base, const Transaction& txn,
                                        const TraceOptions& opts,
                                        const std::atomic<double>* bound = nullptr)
{
  if (!(opts.step > 0.0) || !(opts.resolution > 0.0) || !(opts.lambda_cap > 0.0))
    throw ValidationError("invalid continuation options");
  validate(txn, net);
  const auto dir = transfer_direction(net, txn);
  detail::Tracer tr(net, inj, dir, opts);

  constexpr double inf = std::numeric_limits<double>::infinity();
  double lam_v = inf;
  double lam_t = inf;
  double lam_c = inf;
  double lam_g = inf;
  bool res_v = false;
  bool res_t = false;
  bool res_g = false;
  bool open_g = false;
  AtcCaseResult out;

  auto finish = [&](bool ended_on_curve, double end_lambda) {
    if (ended_on_curve) {
      lam_c = end_lambda;
      if (!res_v)
        lam_v = end_lambda;
      if (!res_t)
        lam_t = end_lambda;
      if (open_g && lam_g <= end_lambda)
        res_g = true;
      if (!res_g)
        lam_g = end_lambda;
    }
    double best = lam_c;
    out.binding_class = txn.is_zero() ? LimitClass::None : LimitClass::Collapse;
    out.binding_facility = txn.is_zero() ? "none" : "nose";
    const std::pair<LimitClass, double> resolved[] = {
      {LimitClass::Voltage, res_v ? lam_v : inf},
      {LimitClass::Thermal, res_t ? lam_t : inf},
      {LimitClass::Generator, res_g ? lam_g : inf}};
    for (const auto& [cls, lam] : resolved) {
      if (lam <= best) {
        best = lam;
        out.binding_class = cls;
        out.binding_facility = cls == LimitClass::Voltage   ? out.voltage_facility
                               : cls == LimitClass::Thermal ? out.thermal_facility
                                                            : out.generator_facility;
      }
    }
    out.overall_pu = best;
    out.lambda_voltage = lam_v * dir.mw_per_unit;
    out.lambda_thermal = lam_t * dir.mw_per_unit;
    out.lambda_collapse = lam_c * dir.mw_per_unit;
    out.lambda_generator = lam_g * dir.mw_per_unit;
    out.overall = best * dir.mw_per_unit;
    out.power_flow_solves = tr.solves;
    return out;
  };

  // Limits already violated at the base point.
  if (auto v = tr.voltage_violation(base)) {
    out.base_violations.push_back("voltage at " + *v);
    out.voltage_facility = *v;
    lam_v = 0.0;
    res_v = true;
  }
  if (auto t = tr.thermal_violation(base)) {
    out.base_violations.push_back("thermal at " + *t);
    out.thermal_facility = *t;
    lam_t = 0.0;
    res_t = true;
  }
  if (!txn.is_zero()) {
    lam_g = generator_headroom(net, inj, dir, &out.generator_facility);
    open_g = std::isfinite(lam_g);
    res_g = open_g && lam_g <= 0.0;
    if (res_g)
      out.base_violations.push_back("generator output at " + out.generator_facility);
  }
  if (!out.base_violations.empty()) {
    lam_c = inf;
    return finish(false, 0.0);
  }
  if (txn.is_zero())
    return finish(true, opts.lambda_cap);

  detail::CurvePoint prev{base, 0.0};
  auto tan = tr.tangent(prev);
  if (!tan)
    return finish(true, 0.0);
  double h = opts.step;
  double best_seen = 0.0;

  for (;;) {
    if (prev.lambda >= opts.lambda_cap)
      return finish(true, opts.lambda_cap);
    if (opts.stop_at_first_violation && (res_v || res_t || res_g))
      return finish(false, prev.lambda);
    if (bound && prev.lambda >= bound->load()) {
      out.truncated = true;
      lam_c = prev.lambda;
      finish(false, prev.lambda);
      out.lambda_collapse = AtcCaseResult::kNotEvaluated;
      out.binding_class = LimitClass::None;
      out.binding_facility = "not evaluated";
      return out;
    }

    const double hh = std::min(h, opts.lambda_cap - prev.lambda);
    const double sigma = std::min(hh / tan->dlambda, 4.0 * hh);
    auto cand = tr.arc_step(prev, *tan, sigma);
    if (cand && cand->lambda > opts.lambda_cap) {
      // Land exactly on the cap rather than beyond it.
      cand = std::nullopt;
      if (auto st = tr.solve_at(opts.lambda_cap, prev.st))
        cand = detail::CurvePoint{*st, opts.lambda_cap};
    }
    if (!cand) {
      h *= 0.5;
      if (h >= opts.resolution)
        continue;
      // Repeated power flow at the finest step.
      const double lam = std::min(prev.lambda + opts.resolution, opts.lambda_cap);
      if (auto st = tr.solve_at(lam, prev.st))
        cand = detail::CurvePoint{*st, lam};
      else
        return finish(true, std::max(prev.lambda, best_seen));
      h = opts.resolution;
    }

    if (opts.pf.enforce_q_limits) {
      auto viol = q_limit_violations(net, tr.at(cand->lambda), cand->st);
      if (!viol.empty()) {
        PfState warm = cand->st;
        warm.pv_to_pq_switches.insert(warm.pv_to_pq_switches.end(), viol.begin(), viol.end());
        auto st = tr.solve_at(cand->lambda, warm);
        if (!st) {
          h *= 0.5;
          if (h < opts.resolution)
            return finish(true, std::max(prev.lambda, best_seen));
          continue;
        }
        cand->st = *st;
      }
    }

    auto next_tan = tr.tangent(*cand);
    const bool past_nose =
      !next_tan || next_tan->dot(*tan) < 0.0 || cand->lambda <= prev.lambda;
    if (past_nose) {
      best_seen = std::max(best_seen, cand->lambda);
      h *= 0.5;
      if (h < opts.resolution)
        return finish(true, std::max(prev.lambda, best_seen));
      continue;
    }

    if (!res_v) {
      if (auto v = tr.voltage_violation(cand->st)) {
        std::tie(lam_v, out.voltage_facility) = tr.bisect(LimitClass::Voltage, prev, cand->lambda, *v);
        res_v = true;
      }
    }
    if (!res_t) {
      if (auto t = tr.thermal_violation(cand->st)) {
        std::tie(lam_t, out.thermal_facility) = tr.bisect(LimitClass::Thermal, prev, cand->lambda, *t);
        res_t = true;
      }
    }
    if (open_g && !res_g && cand->lambda > lam_g)
      res_g = true;

    prev = std::move(*cand);
    tan = std::move(next_tan);
    best_seen = std::max(best_seen, prev.lambda);
    if (prev.st.iterations <= 4)
      h = std::min(2.0 * h, opts.step);
  }
}

inline AtcCaseResult continuation_trace(const Network& net, const PfState& base,
                                        const Transaction& txn, const TraceOptions& opts = {})
{
  return continuation_trace(net, base_injections(net), base, txn, opts);
}

/// The base network followed by one post-contingency copy per facility.
struct AtcStudy
{
  std::vector<Network> cases;
  std::vector<std::string> labels;
};

inline AtcStudy build_study(const Network& base, const std::vector<std::string>& contingencies)
{
  AtcStudy s;
  s.cases.push_back(base);
  s.labels.push_back("base");
  for (const auto& c : contingencies) {
    s.cases.push_back(apply_contingency(base, c));
    s.labels.push_back(Facility::parse(c).to_string());
  }
  return s;
}

enum class EvalMode { Full, EarlyStop };

struct OverallAtc
{
  std::vector<AtcCaseResult> cases;
  double overall = 0.0; ///< MW
  double overall_pu = 0.0;
  std::size_t binding_case = 0;
};

namespace detail {

inline void lower_bound_to(std::atomic<double>& bound, double value)
{
  double cur = bound.load();
  while (value < cur && !bound.compare_exchange_weak(cur, value)) {
  }
}

} // namespace detail

/// Min over all cases of the traced transfer. `injections_for(case_network)`
/// supplies the injections of each case. In `EarlyStop` mode each trace stops
/// at its first violation and once it passes the best completed case, which
/// leaves the minimum unchanged.
template <class InjectionFn>
OverallAtc overall_atc(const AtcStudy& study, const Transaction& txn, InjectionFn&& injections_for,
                       const TraceOptions& opts = {}, EvalMode mode = EvalMode::EarlyStop,
                       unsigned threads = 1)
{
  if (study.cases.empty())
    throw ValidationError("study has no cases");
  const std::size_t n = study.cases.size();
  OverallAtc out;
  out.cases.resize(n);
  TraceOptions o = opts;
  o.stop_at_first_violation = mode == EvalMode::EarlyStop;
  std::atomic<double> bound{std::numeric_limits<double>::infinity()};

  auto run = [&](std::size_t v) {
    const Network& net = study.cases[v];
    const Injections inj = injections_for(net);
    const PfState base = solve_power_flow(net, inj, o.pf);
    auto r = continuation_trace(net, inj, base, txn, o,
                                mode == EvalMode::EarlyStop ? &bound : nullptr);
    r.case_index = v;
    r.case_label = study.labels[v];
    if (!r.truncated)
      detail::lower_bound_to(bound, r.overall_pu);
    out.cases[v] = std::move(r);
  };

  if (threads <= 1 || n == 1) {
    for (std::size_t v = 0; v < n; ++v)
      run(v);
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::exception_ptr> errors(n);
    std::vector<std::thread> pool;
    for (unsigned w = 0; w < std::min<std::size_t>(threads, n); ++w)
      pool.emplace_back([&] {
        for (std::size_t v; (v = next.fetch_add(1)) < n;) {
          try {
            run(v);
          } catch (...) {
            errors[v] = std::current_exception();
          }
        }
      });
    for (auto& t : pool)
      t.join();
    for (auto& e : errors)
      if (e)
        std::rethrow_exception(e);
  }

  out.overall_pu = std::numeric_limits<double>::infinity();
  for (std::size_t v = 0; v < n; ++v)
    if (out.cases[v].overall_pu < out.overall_pu) {
      out.overall_pu = out.cases[v].overall_pu;
      out.binding_case = v;
    }
  out.overall = out.cases[out.binding_case].overall;
  return out;
}

inline OverallAtc overall_atc(const AtcStudy& study, const Transaction& txn,
                              const TraceOptions& opts = {}, EvalMode mode = EvalMode::EarlyStop)
{
  return overall_atc(study, txn, [](const Network& net) { return base_injections(net); }, opts,
                     mode);
}

} // namespace patc
