#include <random>

#include <gtest/gtest.h>

#include "support.hpp"

using namespace patc;

namespace {

std::vector<std::complex<double>> to_std(const ComplexVector& v)
{
  return {v.data(), v.data() + v.size()};
}

double oracle_residual(const Network& net, const Injections& inj, const PfState& st)
{
  const auto t = bus_types(net, st.pv_to_pq_switches);
  const auto spec = to_std(specified_power(inj, st.pv_to_pq_switches));
  return test::oracle_mismatch(net, t, spec, st.vm, st.va).cwiseAbs().maxCoeff();
}

Eigen::VectorXd random_unknowns(const BusTypes& t, std::mt19937_64& rng, Eigen::VectorXd& vm,
                                Eigen::VectorXd& va)
{
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (Eigen::Index i = 0; i < vm.size(); ++i) {
    vm[i] = 1.0 + 0.08 * u(rng);
    va[i] = 0.2 * u(rng);
  }
  return pack_unknowns(t, vm, va);
}

} // namespace

TEST(PowerFlow, JacobianMatchesFiniteDifferencesOnRandomNetworks)
{
  std::mt19937_64 rng(7);
  for (int draw = 0; draw < 50; ++draw) {
    const auto net = test::random_five_bus(rng);
    const auto inj = base_injections(net);
    const auto t = bus_types(net, {});
    const auto spec = to_std(specified_power(inj, {}));
    Eigen::VectorXd vm(5);
    Eigen::VectorXd va(5);
    const Eigen::VectorXd x0 = random_unknowns(t, rng, vm, va);
    const Matrix jac = pf_jacobian(net.admittance, bus_voltages(vm, va), t);

    const double h = 1e-6;
    Matrix fd(jac.rows(), jac.cols());
    for (Eigen::Index c = 0; c < x0.size(); ++c) {
      Eigen::VectorXd xp = x0;
      Eigen::VectorXd xm = x0;
      xp[c] += h;
      xm[c] -= h;
      Eigen::VectorXd vmp = vm, vap = va, vmm = vm, vam = va;
      unpack_unknowns(t, xp, vmp, vap);
      unpack_unknowns(t, xm, vmm, vam);
      fd.col(c) = (test::oracle_mismatch(net, t, spec, vmp, vap) -
                   test::oracle_mismatch(net, t, spec, vmm, vam)) /
                  (2.0 * h);
    }
    const double scale = std::max(1.0, jac.cwiseAbs().maxCoeff());
    EXPECT_LT((jac - fd).cwiseAbs().maxCoeff() / scale, 1e-6) << "draw " << draw;
  }
}

TEST(PowerFlow, LibraryMismatchAgreesWithBranchwiseOracle)
{
  std::mt19937_64 rng(11);
  for (int draw = 0; draw < 20; ++draw) {
    const auto net = test::random_five_bus(rng);
    const auto inj = base_injections(net);
    const auto t = bus_types(net, {});
    Eigen::VectorXd vm(5);
    Eigen::VectorXd va(5);
    random_unknowns(t, rng, vm, va);
    const auto s_spec = specified_power(inj, {});
    const Eigen::VectorXd lib = mismatch_vector(t, calc_power(net.admittance, bus_voltages(vm, va)), s_spec);
    const Eigen::VectorXd ref = test::oracle_mismatch(net, t, to_std(s_spec), vm, va);
    EXPECT_LT((lib - ref).cwiseAbs().maxCoeff(), 1e-12);
  }
}

TEST(PowerFlow, RandomNetworksConvergeToOracleMismatch)
{
  std::mt19937_64 rng(3);
  for (int draw = 0; draw < 50; ++draw) {
    const auto net = test::random_five_bus(rng);
    const auto inj = base_injections(net);
    PfOptions o;
    o.enforce_q_limits = false;
    const auto st = solve_power_flow(net, inj, o);
    EXPECT_LT(oracle_residual(net, inj, st), 1e-8) << "draw " << draw;
    for (int i = 1; i <= 3; ++i)
      EXPECT_DOUBLE_EQ(st.vm[net.bus_index(i)], net.buses[net.bus_index(i)].v_setpoint);
  }
}

TEST(PowerFlow, StandardCasesConverge)
{
  for (const char* name : {"case24_ieee_rts.m", "case118.m"}) {
    const auto net = test::load_case(name);
    const auto inj = base_injections(net);
    const auto st = solve_power_flow(net, inj);
    EXPECT_LT(st.mismatch, 1e-8) << name;
    EXPECT_LT(oracle_residual(net, inj, st), 1e-8) << name;
  }
}

TEST(PowerFlow, ReactiveLimitsHoldAfterSwitching)
{
  auto net = test::load_case("case24_ieee_rts.m");
  // Tighten every unit so some of them must give up voltage control.
  for (auto& g : net.generators) {
    g.q_max = std::min(g.q_max, 0.3 * g.q_max + 0.05);
    g.q_min = std::max(g.q_min, -0.05);
  }
  finalize_network(net);
  const auto inj = base_injections(net);
  const auto st = solve_power_flow(net, inj);
  EXPECT_FALSE(st.pv_to_pq_switches.empty());
  EXPECT_LT(oracle_residual(net, inj, st), 1e-8);
  EXPECT_TRUE(q_limit_violations(net, inj, st).empty());
  Vector qmin;
  Vector qmax;
  bus_q_limits(net, qmin, qmax);
  for (const auto& sw : st.pv_to_pq_switches) {
    const auto i = static_cast<Eigen::Index>(sw.bus);
    EXPECT_DOUBLE_EQ(sw.q_limit, sw.at_max ? qmax[i] : qmin[i]);
  }
}

TEST(PowerFlow, BranchFlowsBalanceBusInjections)
{
  const auto net = test::load_case("case24_ieee_rts.m");
  const auto inj = base_injections(net);
  const auto st = solve_power_flow(net, inj);
  const auto flows = branch_flows(net, st);
  const auto s = calc_power(net.admittance, bus_voltages(st.vm, st.va));
  std::vector<Complex> sum(net.bus_count(), Complex(0.0, 0.0));
  for (std::size_t i = 0; i < net.bus_count(); ++i)
    sum[i] = std::norm(Complex(st.vm[static_cast<Eigen::Index>(i)], 0.0)) *
             std::conj(Complex(net.buses[i].shunt_g, net.buses[i].shunt_b));
  for (std::size_t k = 0; k < net.branches.size(); ++k) {
    sum[net.bus_index(net.branches[k].from)] += flows[k].s_from;
    sum[net.bus_index(net.branches[k].to)] += flows[k].s_to;
  }
  for (std::size_t i = 0; i < net.bus_count(); ++i)
    EXPECT_LT(std::abs(sum[i] - s[static_cast<Eigen::Index>(i)]), 1e-10);
}

TEST(PowerFlow, SlackGenerationClosesTheBalance)
{
  const auto net = test::load_case("case24_ieee_rts.m");
  const auto inj = base_injections(net);
  const auto st = solve_power_flow(net, inj);
  const auto s = calc_power(net.admittance, bus_voltages(st.vm, st.va));
  double losses = 0.0;
  for (Eigen::Index i = 0; i < s.size(); ++i)
    losses += s[i].real();
  const double others = inj.p_gen.sum() - inj.p_gen[static_cast<Eigen::Index>(net.slack_index())];
  EXPECT_NEAR(slack_generation(net, inj, st) + others - inj.p_load.sum(), losses, 1e-9);
}

TEST(PowerFlow, WarmStartKeepsSwitchesAndConvergesQuickly)
{
  const auto net = test::load_case("case24_ieee_rts.m");
  const auto inj = base_injections(net);
  const auto cold = solve_power_flow(net, inj);
  const auto warm = solve_power_flow(net, inj, {}, &cold);
  EXPECT_LE(warm.iterations, 1);
  EXPECT_EQ(warm.pv_to_pq_switches.size(), cold.pv_to_pq_switches.size());
  EXPECT_LT((warm.vm - cold.vm).cwiseAbs().maxCoeff(), 1e-8);
}

TEST(PowerFlow, InfeasibleLoadingFailsToConverge)
{
  auto net = test::two_bus(0.5, 5.0);
  EXPECT_THROW(solve_power_flow(net, base_injections(net)), Error);
  PfOptions bad;
  bad.tolerance = 0.0;
  EXPECT_THROW(solve_power_flow(net, base_injections(net), bad), ValidationError);
}
