#include <random>

#include <gtest/gtest.h>

#include "support.hpp"

using namespace patc;

namespace {

const test::LoadedScenario& rts()
{
  static const auto l = test::load_scenario("case24_ieee_rts.m", "rts24_scenario.json");
  return l;
}

Injections at_lambda(const Network& net, const Injections& inj, const Transaction& txn, double lam)
{
  const auto dir = transfer_direction(net, txn);
  Injections out = inj;
  out.p_gen += lam * dir.dp_gen;
  out.p_load += lam * dir.dp_load;
  out.q_load += lam * dir.dq_load;
  return out;
}

bool any_overload(const Network& net, const PfState& st)
{
  const auto f = branch_flows(net, st);
  for (std::size_t k = 0; k < f.size(); ++k)
    if (net.branches[k].in_service() && f[k].s_max_end > net.s_max(k) + 1e-8)
      return true;
  return false;
}

bool any_voltage_violation(const Network& net, const PfState& st)
{
  for (std::size_t i = 0; i < net.bus_count(); ++i) {
    const double v = st.vm[static_cast<Eigen::Index>(i)];
    if (v < net.v_min(i) - 1e-8 || v > net.v_max(i) + 1e-8)
      return true;
  }
  return false;
}

} // namespace

TEST(Atc, TwoBusNoseMatchesClosedFormMaximumTransfer)
{
  std::mt19937_64 rng(42);
  std::uniform_real_distribution<double> ux(0.05, 0.4);
  std::uniform_real_distribution<double> up(0.0, 0.6);
  for (int draw = 0; draw < 20; ++draw) {
    const double x = ux(rng);
    const double p0 = up(rng) / (2.0 * x);
    const auto net = test::two_bus(x, p0);
    const auto txn = make_transaction(net, {1}, {2});
    const auto base = solve_power_flow(net, base_injections(net));
    const auto r = continuation_trace(net, base, txn);
    // Lossless line, unity power factor: P_max = V1^2 / (2x).
    const double oracle = (1.0 / (2.0 * x) - p0) * net.mva_base;
    EXPECT_EQ(r.binding_class, LimitClass::Collapse);
    EXPECT_NEAR(r.lambda_collapse, oracle, 0.01 * oracle) << "x=" << x << " p0=" << p0;
    EXPECT_LE(r.lambda_collapse, oracle * (1.0 + 1e-9));
  }
}

TEST(Atc, ZeroTransactionRunsToTheCap)
{
  const auto net = test::two_bus(0.2, 0.5);
  Transaction txn;
  txn.sources = {{1, 0.0}};
  txn.sinks = {{2, 0.0, 0.0}};
  TraceOptions o;
  o.lambda_cap = 7.0;
  const auto r = continuation_trace(net, solve_power_flow(net, base_injections(net)), txn, o);
  EXPECT_EQ(r.binding_class, LimitClass::None);
  EXPECT_DOUBLE_EQ(r.overall_pu, 7.0);
}

TEST(Atc, UnbalancedTransactionIsRejected)
{
  const auto net = test::two_bus(0.2, 0.5);
  Transaction txn;
  txn.sources = {{1, 1.0}};
  txn.sinks = {{2, 0.5, 0.0}};
  EXPECT_THROW(continuation_trace(net, solve_power_flow(net, base_injections(net)), txn),
               ValidationError);
  EXPECT_THROW(make_transaction(net, {}, {2}), ValidationError);
  EXPECT_THROW(make_transaction(net, {1}, {3}), ValidationError);
}

TEST(Atc, TransactionSharesFollowSinkLoads)
{
  const auto& pb = rts().problem;
  const auto& txn = pb.txn;
  EXPECT_NEAR(txn.source_sum(), 1.0, 1e-15);
  EXPECT_NEAR(txn.sink_sum(), 1.0, 1e-12);
  double load = 0.0;
  for (const auto& s : txn.sinks)
    load += pb.base.buses[pb.base.bus_index(s.bus)].p_load;
  for (const auto& s : txn.sinks) {
    const auto& bus = pb.base.buses[pb.base.bus_index(s.bus)];
    EXPECT_NEAR(s.dp_load, bus.p_load / load, 1e-15);
    EXPECT_NEAR(s.dq_load / s.dp_load, bus.q_load / bus.p_load, 1e-12);
  }
}

TEST(Atc, GeneratorHeadroomIsClosedForm)
{
  const auto net = test::load_case("case24_ieee_rts.m");
  const auto inj = base_injections(net);
  const auto txn = make_transaction(net, {7}, {3});
  std::string fac;
  const double lam = generator_headroom(net, inj, transfer_direction(net, txn), &fac);
  double pmax = 0.0;
  double pgen = 0.0;
  for (const auto& g : net.generators)
    if (g.bus == 7) {
      pmax += g.p_max;
      pgen += g.p_gen;
    }
  EXPECT_NEAR(lam, pmax - pgen, 1e-12);
  EXPECT_EQ(fac, "G7");
  // The slack bus is never bounded.
  const auto from_slack = make_transaction(net, {13}, {3});
  EXPECT_TRUE(std::isinf(generator_headroom(net, inj, transfer_direction(net, from_slack))));
}

TEST(Atc, ReportedLimitsBracketTheViolation)
{
  // Switching is monotone along the traced path, so a flat-start power flow
  // can land on a different switch set; compare without reactive limits.
  const auto& pb = rts().problem;
  TraceOptions o = pb.solver;
  o.pf.enforce_q_limits = false;
  const auto r = overall_atc(
    pb.study, pb.txn, [&](const Network& net) { return expected_injections(net, pb.inputs); }, o,
    EvalMode::Full);
  const double res = o.resolution;
  int checked = 0;
  for (const auto& c : r.cases) {
    const Network& net = pb.study.cases[c.case_index];
    const auto inj = expected_injections(net, pb.inputs);
    const double mw = transfer_direction(net, pb.txn).mw_per_unit;
    auto solve = [&](double lam) { return solve_power_flow(net, at_lambda(net, inj, pb.txn, lam), o.pf); };
    if (c.thermal_facility.size() && c.lambda_thermal < c.lambda_collapse) {
      const double lam = c.lambda_thermal / mw;
      EXPECT_FALSE(any_overload(net, solve(lam))) << c.case_label;
      EXPECT_TRUE(any_overload(net, solve(lam + 2.0 * res))) << c.case_label;
      ++checked;
    }
    if (c.voltage_facility.size() && c.lambda_voltage < c.lambda_collapse) {
      const double lam = c.lambda_voltage / mw;
      EXPECT_FALSE(any_voltage_violation(net, solve(lam))) << c.case_label;
      EXPECT_TRUE(any_voltage_violation(net, solve(lam + 2.0 * res))) << c.case_label;
      ++checked;
    }
  }
  EXPECT_GE(checked, 5);
}

TEST(Atc, EveryTransferBelowTheAtcIsFeasible)
{
  const auto& pb = rts().problem;
  const auto r = deterministic_atc(pb);
  for (const auto& c : r.cases) {
    const Network& net = pb.study.cases[c.case_index];
    const auto inj = expected_injections(net, pb.inputs);
    for (double frac : {0.1, 0.35, 0.6, 0.85, 0.99}) {
      const double lam = frac * c.overall_pu;
      const auto st = solve_power_flow(net, at_lambda(net, inj, pb.txn, lam), pb.solver.pf);
      EXPECT_FALSE(any_overload(net, st)) << c.case_label << " at " << frac;
      EXPECT_FALSE(any_voltage_violation(net, st)) << c.case_label << " at " << frac;
    }
  }
}

TEST(Atc, ClassLimitsAreOrderedConsistently)
{
  const auto r = deterministic_atc(rts().problem);
  for (const auto& c : r.cases) {
    EXPECT_FALSE(c.truncated);
    EXPECT_LE(c.lambda_voltage, c.lambda_collapse + 1e-9);
    EXPECT_LE(c.lambda_thermal, c.lambda_collapse + 1e-9);
    const double m = std::min({c.lambda_voltage, c.lambda_thermal, c.lambda_collapse,
                               c.lambda_generator});
    EXPECT_DOUBLE_EQ(c.overall, m) << c.case_label;
  }
}

TEST(Atc, EarlyStopLeavesTheMinimumBitIdentical)
{
  const auto& pb = rts().problem;
  auto expected = [&](const Network& net) { return expected_injections(net, pb.inputs); };
  const auto full = overall_atc(pb.study, pb.txn, expected, pb.solver, EvalMode::Full);
  const auto early = overall_atc(pb.study, pb.txn, expected, pb.solver, EvalMode::EarlyStop);
  EXPECT_EQ(full.overall, early.overall);
  EXPECT_EQ(full.binding_case, early.binding_case);
  double m = std::numeric_limits<double>::infinity();
  for (const auto& c : full.cases)
    m = std::min(m, c.overall);
  EXPECT_EQ(full.overall, m);
  for (const auto& c : early.cases)
    if (c.truncated) {
      EXPECT_EQ(c.binding_class, LimitClass::None);
      EXPECT_EQ(c.binding_facility, "not evaluated");
    }

  const auto xi = lhs_design(pb.dimension(), 4, 99);
  for (Eigen::Index k = 0; k < xi.rows(); ++k) {
    const auto u = to_physical(pb.nataf, xi.row(k).transpose());
    auto inj = [&](const Network& net) { return pb.injections(net, u); };
    const auto a = overall_atc(pb.study, pb.txn, inj, pb.solver, EvalMode::Full);
    const auto b = overall_atc(pb.study, pb.txn, inj, pb.solver, EvalMode::EarlyStop);
    EXPECT_EQ(a.overall, b.overall) << "sample " << k;
  }
}

TEST(Atc, ThreadedStudyMatchesSerial)
{
  const auto& pb = rts().problem;
  auto expected = [&](const Network& net) { return expected_injections(net, pb.inputs); };
  const auto one = overall_atc(pb.study, pb.txn, expected, pb.solver, EvalMode::Full, 1);
  const auto many = overall_atc(pb.study, pb.txn, expected, pb.solver, EvalMode::Full, 3);
  ASSERT_EQ(one.cases.size(), many.cases.size());
  for (std::size_t v = 0; v < one.cases.size(); ++v)
    EXPECT_EQ(one.cases[v].overall, many.cases[v].overall);
}

TEST(Atc, BaseCaseViolationGivesZeroTransfer)
{
  auto net = test::two_bus(0.2, 1.0);
  net.branches[0].s_max_normal = 0.5;
  net.branches[0].s_max_emergency = 0.6;
  const auto txn = make_transaction(net, {1}, {2});
  const auto r = continuation_trace(net, solve_power_flow(net, base_injections(net)), txn);
  EXPECT_EQ(r.overall, 0.0);
  EXPECT_EQ(r.binding_class, LimitClass::Thermal);
  EXPECT_FALSE(r.base_violations.empty());
}

TEST(Atc, ThermalLimitOnTwoBusLineMatchesFlowOracle)
{
  // Lossless line at unity power factor: |S_from| = P + j Q_line. Solve the
  // loading whose sending-end apparent power equals the rating by bisection
  // on an independent two-bus power flow.
  const double x = 0.2;
  const double p0 = 0.5;
  const double rating = 1.5;
  auto net = test::two_bus(x, p0);
  net.branches[0].s_max_normal = rating;
  net.branches[0].s_max_emergency = rating;
  const auto txn = make_transaction(net, {1}, {2});
  const auto r = continuation_trace(net, solve_power_flow(net, base_injections(net)), txn);

  auto sending = [&](double p) {
    // V2 from the lossless two-bus relation V2^4 - V2^2 + (x p)^2 = 0 (upper root).
    const double v2sq = 0.5 + std::sqrt(0.25 - x * x * p * p);
    const double v2 = std::sqrt(v2sq);
    const double delta = std::asin(p * x / v2);
    const double q = (1.0 - v2 * std::cos(delta)) / x;
    return std::hypot(p, q);
  };
  double lo = p0;
  double hi = 1.0 / (2.0 * x);
  for (int it = 0; it < 200; ++it) {
    const double mid = 0.5 * (lo + hi);
    (sending(mid) > rating ? hi : lo) = mid;
  }
  EXPECT_EQ(r.binding_class, LimitClass::Thermal);
  EXPECT_NEAR(r.lambda_thermal / net.mva_base, lo - p0, 2e-4);
  EXPECT_LE(r.lambda_thermal / net.mva_base, lo - p0 + 1e-9);
}
