#pragma once

// Study definition: random plant and load inputs, their correlation, the
// transaction and contingencies, solver and surrogate settings. Scenarios are
// JSON documents; `build_problem` turns one plus a case into solver inputs.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "patc/atc.hpp"
#include "patc/distributions.hpp"
#include "patc/error.hpp"
#include "patc/nataf.hpp"
#include "patc/netmodel.hpp"
#include "patc/powerflow.hpp"

namespace patc {

struct RandomInput
{
  enum class Kind { Wind, Solar, Load };

  Kind kind = Kind::Load;
  int bus = 0;
  Marginal marginal = Normal{};
  WindCurve wind;  ///< used when kind == Wind, p_rated in MW
  SolarCurve solar; ///< used when kind == Solar, p_rated in MW
  double power_factor = 1.0; ///< wind plants only; lagging, Q = P tan(acos pf)
  std::string label;
};

inline const char* to_string(RandomInput::Kind k)
{
  switch (k) {
  case RandomInput::Kind::Wind: return "wind";
  case RandomInput::Kind::Solar: return "solar";
  case RandomInput::Kind::Load: return "load";
  }
  return "?";
}

/// Active output (MW) of a plant input at physical value `u`.
inline double plant_output_mw(const RandomInput& in, double u)
{
  switch (in.kind) {
  case RandomInput::Kind::Wind: return wind_power(u, in.wind);
  case RandomInput::Kind::Solar: return solar_power(u, in.solar);
  case RandomInput::Kind::Load: break;
  }
  throw ValidationError("load input has no plant output");
}

inline double expected_output_mw(const RandomInput& in)
{
  std::vector<double> knees;
  if (in.kind == RandomInput::Kind::Wind)
    knees = {in.wind.v_in, in.wind.v_rated, in.wind.v_out};
  else if (in.kind == RandomInput::Kind::Solar)
    knees = {in.solar.r_c, in.solar.r_std};
  return expected_value(in.marginal, [&](double u) { return plant_output_mw(in, u); }, knees);
}

namespace detail {

inline double reactive_ratio(double pf)
{
  if (!(pf > 0.0 && pf <= 1.0))
    throw ValidationError("power factor must lie in (0, 1]");
  return std::tan(std::acos(pf));
}

inline void add_input(const Network& net, const RandomInput& in, double value, bool expected,
                      Injections& inj)
{
  const auto i = static_cast<Eigen::Index>(net.bus_index(in.bus));
  if (in.kind == RandomInput::Kind::Load) {
    const auto& bus = net.buses[static_cast<std::size_t>(i)];
    const double p = value / net.mva_base;
    inj.p_load[i] = p;
    inj.q_load[i] = bus.p_load != 0.0 ? bus.q_load * p / bus.p_load : 0.0;
    return;
  }
  const double mw = expected ? expected_output_mw(in) : plant_output_mw(in, value);
  inj.p_extra[i] += mw / net.mva_base;
  if (in.kind == RandomInput::Kind::Wind)
    inj.q_extra[i] += mw * reactive_ratio(in.power_factor) / net.mva_base;
}

} // namespace detail

/// Injections of `net` with the inputs realized at `u` (physical units: m/s,
/// W/m^2, MW). Plants add to the bus injection; a load input replaces the
/// bus load and keeps its power factor.
inline Injections inject_random_inputs(const Network& net, const std::vector<RandomInput>& inputs,
                                       const Eigen::VectorXd& u)
{
  if (static_cast<std::size_t>(u.size()) != inputs.size())
    throw ValidationError("realization has " + std::to_string(u.size()) + " entries, expected " +
                          std::to_string(inputs.size()));
  Injections inj = base_injections(net);
  for (std::size_t k = 0; k < inputs.size(); ++k)
    detail::add_input(net, inputs[k], u[static_cast<Eigen::Index>(k)], false, inj);
  return inj;
}

/// Injections with every load at its mean and every plant at its expected
/// output.
inline Injections expected_injections(const Network& net, const std::vector<RandomInput>& inputs)
{
  Injections inj = base_injections(net);
  for (const auto& in : inputs)
    detail::add_input(net, in, marginal_mean(in.marginal), true, inj);
  return inj;
}

// ---------------------------------------------------------------------------
// Scenario document

enum class Dispatch { Slack, Proportional, Local };
enum class SigmaRule { StdFraction, VarianceFraction };

struct NetworkSettings
{
  double load_scale = 1.0;
  double generation_scale = 1.0;
  EmergencyRating emergency_rating = EmergencyRating::Kappa;
  double kappa = 1.2;
  double v_min_emergency = 0.90;
  double v_max_emergency = 1.10;
  /// Who gives way to the expected renewable output: the slack bus, all
  /// conventional units pro rata, or the units at each plant's bus.
  Dispatch dispatch = Dispatch::Slack;
  /// Thermal ratings (MVA) replacing the case values of single branches.
  struct Rating
  {
    std::string branch; ///< facility id, e.g. L91-92
    double normal_mva = 0.0;
    double emergency_mva = 0.0; ///< 0: kappa * normal
  };
  std::vector<Rating> ratings;
};

struct LoadSettings
{
  bool all_buses = true;
  std::vector<int> buses;
  double sigma_fraction = 0.05;
  SigmaRule sigma_rule = SigmaRule::StdFraction;
};

struct CorrelationSettings
{
  double wind = 0.0;
  double solar = 0.0;
  double load = 0.0;
  double cross = 0.0;
  std::optional<Eigen::MatrixXd> matrix; ///< overrides the block values
};

struct LraSettings
{
  std::vector<int> ranks{1, 2, 3, 4, 5};
  std::vector<int> degrees{2, 3, 4, 5};
  std::size_t ed_size = 125;
  double validation_target = 1e-2;
  int max_enrichments = 4;
};

struct Seeds
{
  std::uint64_t design = 1;
  std::uint64_t surrogate = 2;
  std::uint64_t mcs = 3;
};

struct Scenario
{
  std::string name = "scenario";
  NetworkSettings network;
  std::vector<RandomInput> plants; ///< wind then solar, file order
  LoadSettings loads;
  CorrelationSettings correlation;
  std::vector<int> sources;
  std::vector<int> sinks;
  Transaction::Normalization normalization = Transaction::Normalization::UnitSourceSum;
  double nominal_mw = 0.0;
  std::vector<std::string> contingencies;
  TraceOptions solver;
  LraSettings lra;
  Seeds seeds;
  std::size_t surrogate_samples = 2000;
  std::size_t mcs_samples = 10000;
  std::vector<double> confidence_levels{0.99, 0.98, 0.95, 0.90, 0.80};
  unsigned threads = 1;
  std::string hash; ///< FNV-1a of the scenario text
};

inline std::string fnv1a_hex(std::string_view text)
{
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  static constexpr char digits[] = "0123456789abcdef";
  std::string out(16, '0');
  for (int k = 15; k >= 0; --k) {
    out[static_cast<std::size_t>(k)] = digits[h & 0xf];
    h >>= 4;
  }
  return out;
}

namespace detail {

using nlohmann::json;

template <class T>
T get_or(const json& j, const char* key, T fallback)
{
  if (!j.contains(key))
    return fallback;
  try {
    return j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ValidationError(std::string("scenario field '") + key + "': " + e.what());
  }
}

inline const json& require(const json& j, const char* key)
{
  if (!j.contains(key))
    throw ValidationError(std::string("scenario is missing '") + key + "'");
  return j.at(key);
}

inline std::vector<int> int_list(const json& j, const char* key)
{
  const json& v = require(j, key);
  if (v.is_number_integer())
    return {v.get<int>()};
  return get_or<std::vector<int>>(j, key, {});
}

inline RandomInput parse_wind(const json& w)
{
  RandomInput in;
  in.kind = RandomInput::Kind::Wind;
  in.bus = require(w, "bus").get<int>();
  const json& wb = require(w, "weibull");
  in.marginal = Weibull{require(wb, "k").get<double>(), require(wb, "c").get<double>()};
  in.wind.v_in = get_or(w, "v_in", 3.5);
  in.wind.v_rated = get_or(w, "v_rated", 13.5);
  in.wind.v_out = get_or(w, "v_out", 25.0);
  in.wind.p_rated = require(w, "rated_mw").get<double>();
  in.power_factor = get_or(w, "power_factor", 1.0);
  in.label = get_or<std::string>(w, "name", "wind@" + std::to_string(in.bus));
  validate(in.marginal);
  validate(in.wind);
  reactive_ratio(in.power_factor);
  return in;
}

inline RandomInput parse_solar(const json& s)
{
  RandomInput in;
  in.kind = RandomInput::Kind::Solar;
  in.bus = require(s, "bus").get<int>();
  const json& b = require(s, "beta");
  in.marginal = Beta{require(b, "alpha").get<double>(), require(b, "beta").get<double>(),
                     get_or(s, "r_min", 0.0), get_or(s, "r_max", 1000.0)};
  in.solar.r_c = get_or(s, "r_c", 150.0);
  in.solar.r_std = get_or(s, "r_std", 1000.0);
  in.solar.p_rated = require(s, "rated_mw").get<double>();
  in.label = get_or<std::string>(s, "name", "solar@" + std::to_string(in.bus));
  validate(in.marginal);
  validate(in.solar);
  return in;
}

template <class E>
E enum_field(const json& j, const char* key, E fallback,
             std::initializer_list<std::pair<const char*, E>> names)
{
  if (!j.contains(key))
    return fallback;
  const auto s = get_or<std::string>(j, key, "");
  for (const auto& [n, e] : names)
    if (s == n)
      return e;
  throw ValidationError(std::string("scenario field '") + key + "' has unknown value '" + s + "'");
}

} // namespace detail

inline Scenario parse_scenario(std::string_view text)
{
  using detail::get_or;
  using detail::json;
  json doc;
  try {
    doc = json::parse(text.begin(), text.end());
  } catch (const json::parse_error& e) {
    throw ParseError(0, std::string("scenario is not valid JSON: ") + e.what());
  }
  if (!doc.is_object())
    throw ParseError(0, "scenario must be a JSON object");

  Scenario sc;
  sc.hash = fnv1a_hex(text);
  try {
    sc.name = get_or<std::string>(doc, "name", sc.name);

    if (doc.contains("network")) {
      const json& n = doc.at("network");
      auto& ns = sc.network;
      ns.load_scale = get_or(n, "load_scale", ns.load_scale);
      ns.generation_scale = get_or(n, "generation_scale", ns.generation_scale);
      ns.emergency_rating = detail::enum_field(n, "emergency_rating", ns.emergency_rating,
                                               {{"kappa", EmergencyRating::Kappa},
                                                {"rateB", EmergencyRating::RateB},
                                                {"rateC", EmergencyRating::RateC}});
      ns.kappa = get_or(n, "kappa", ns.kappa);
      if (n.contains("emergency_voltage")) {
        const auto band = n.at("emergency_voltage").get<std::vector<double>>();
        if (band.size() != 2 || !(band[0] < band[1]))
          throw ValidationError("emergency_voltage needs [v_min, v_max]");
        ns.v_min_emergency = band[0];
        ns.v_max_emergency = band[1];
      }
      ns.dispatch = detail::enum_field(n, "dispatch", ns.dispatch,
                                       {{"slack", Dispatch::Slack},
                                        {"proportional", Dispatch::Proportional},
                                        {"local", Dispatch::Local}});
      if (!(ns.load_scale > 0.0) || !(ns.generation_scale > 0.0) || !(ns.kappa > 0.0))
        throw ValidationError("network scales and kappa must be positive");
      if (n.contains("ratings"))
        for (const auto& r : n.at("ratings")) {
          NetworkSettings::Rating rt;
          rt.branch = r.at("branch").get<std::string>();
          rt.normal_mva = r.at("normal_mva").get<double>();
          rt.emergency_mva = get_or(r, "emergency_mva", 0.0);
          if (Facility::parse(rt.branch).kind != Facility::Kind::Branch)
            throw ValidationError("rating override " + rt.branch + " is not a branch");
          if (!(rt.normal_mva > 0.0) || rt.emergency_mva < 0.0 ||
              (rt.emergency_mva > 0.0 && rt.emergency_mva < rt.normal_mva))
            throw ValidationError("rating override " + rt.branch + " is out of range");
          ns.ratings.push_back(rt);
        }
    }

    if (doc.contains("wind"))
      for (const auto& w : doc.at("wind"))
        sc.plants.push_back(detail::parse_wind(w));
    if (doc.contains("solar"))
      for (const auto& s : doc.at("solar"))
        sc.plants.push_back(detail::parse_solar(s));

    if (doc.contains("loads")) {
      const json& l = doc.at("loads");
      auto& ls = sc.loads;
      if (l.contains("buses")) {
        if (l.at("buses").is_string()) {
          if (l.at("buses").get<std::string>() != "all")
            throw ValidationError("loads.buses must be \"all\" or a list of bus ids");
          ls.all_buses = true;
        } else {
          ls.all_buses = false;
          ls.buses = l.at("buses").get<std::vector<int>>();
        }
      }
      ls.sigma_fraction = get_or(l, "sigma_fraction", ls.sigma_fraction);
      ls.sigma_rule = detail::enum_field(l, "sigma_rule", ls.sigma_rule,
                                         {{"std", SigmaRule::StdFraction},
                                          {"variance", SigmaRule::VarianceFraction}});
      if (ls.sigma_fraction < 0.0)
        throw ValidationError("loads.sigma_fraction must be non-negative");
    }

    if (doc.contains("correlation")) {
      const json& c = doc.at("correlation");
      auto& cs = sc.correlation;
      cs.wind = get_or(c, "wind", cs.wind);
      cs.solar = get_or(c, "solar", cs.solar);
      cs.load = get_or(c, "load", cs.load);
      cs.cross = get_or(c, "cross", cs.cross);
      if (c.contains("matrix")) {
        const auto rows = c.at("matrix").get<std::vector<std::vector<double>>>();
        Eigen::MatrixXd m(static_cast<Eigen::Index>(rows.size()),
                          static_cast<Eigen::Index>(rows.size()));
        for (std::size_t i = 0; i < rows.size(); ++i) {
          if (rows[i].size() != rows.size())
            throw ValidationError("correlation.matrix must be square");
          for (std::size_t j = 0; j < rows.size(); ++j)
            m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = rows[i][j];
        }
        cs.matrix = m;
      }
    }

    const json& t = detail::require(doc, "transaction");
    sc.sources = detail::int_list(t, "sources");
    sc.sinks = detail::int_list(t, "sinks");
    sc.normalization = detail::enum_field(t, "normalization", sc.normalization,
                                          {{"unit", Transaction::Normalization::UnitSourceSum},
                                           {"raw", Transaction::Normalization::RawMW}});
    sc.nominal_mw = get_or(t, "nominal_mw", sc.nominal_mw);

    sc.contingencies = get_or<std::vector<std::string>>(doc, "contingencies", {});
    for (const auto& c : sc.contingencies)
      Facility::parse(c);

    if (doc.contains("solver")) {
      const json& s = doc.at("solver");
      auto& so = sc.solver;
      so.step = get_or(s, "step", so.step);
      so.resolution = get_or(s, "resolution", so.resolution);
      so.lambda_cap = get_or(s, "lambda_cap", so.lambda_cap);
      so.pf.tolerance = get_or(s, "pf_tolerance", so.pf.tolerance);
      so.pf.max_iterations = get_or(s, "max_iterations", so.pf.max_iterations);
      so.pf.enforce_q_limits = get_or(s, "enforce_q_limits", so.pf.enforce_q_limits);
    }

    if (doc.contains("lra")) {
      const json& l = doc.at("lra");
      auto& ls = sc.lra;
      ls.ranks = get_or(l, "ranks", ls.ranks);
      ls.degrees = get_or(l, "degrees", ls.degrees);
      ls.ed_size = get_or(l, "ed_size", ls.ed_size);
      ls.validation_target = get_or(l, "validation_target", ls.validation_target);
      ls.max_enrichments = get_or(l, "max_enrichments", ls.max_enrichments);
    }

    if (doc.contains("seeds")) {
      const json& s = doc.at("seeds");
      sc.seeds.design = get_or(s, "design", sc.seeds.design);
      sc.seeds.surrogate = get_or(s, "surrogate", sc.seeds.surrogate);
      sc.seeds.mcs = get_or(s, "mcs", sc.seeds.mcs);
    }
    sc.surrogate_samples = get_or(doc, "surrogate_samples", sc.surrogate_samples);
    sc.mcs_samples = get_or(doc, "mcs_samples", sc.mcs_samples);
    sc.confidence_levels = get_or(doc, "confidence_levels", sc.confidence_levels);
    for (double p : sc.confidence_levels)
      if (!(p > 0.0 && p < 1.0))
        throw ValidationError("confidence levels must lie in (0, 1)");
    sc.threads = get_or(doc, "threads", sc.threads);
  } catch (const json::exception& e) {
    throw ValidationError(std::string("scenario: ") + e.what());
  }
  return sc;
}

inline ParseOptions parse_options(const Scenario& sc)
{
  ParseOptions po;
  po.emergency_rating = sc.network.emergency_rating;
  po.kappa = sc.network.kappa;
  po.v_min_emergency = sc.network.v_min_emergency;
  po.v_max_emergency = sc.network.v_max_emergency;
  return po;
}

// ---------------------------------------------------------------------------
// Problem assembly

/// Everything a PATC run needs, derived from a case and a scenario.
struct Problem
{
  Network base;                   ///< scaled and redispatched base network
  std::vector<RandomInput> inputs; ///< wind, solar, then loads by bus order
  Eigen::MatrixXd correlation;
  NatafMap nataf;
  Transaction txn;
  AtcStudy study;
  TraceOptions solver;
  std::string scenario_hash;
  std::vector<std::string> warnings;

  std::size_t dimension() const { return inputs.size(); }

  Injections injections(const Network& net, const Eigen::VectorXd& u) const
  {
    return inject_random_inputs(net, inputs, u);
  }
};

namespace detail {

inline double class_correlation(const CorrelationSettings& cs, RandomInput::Kind a,
                                RandomInput::Kind b)
{
  if (a != b)
    return cs.cross;
  switch (a) {
  case RandomInput::Kind::Wind: return cs.wind;
  case RandomInput::Kind::Solar: return cs.solar;
  case RandomInput::Kind::Load: return cs.load;
  }
  return 0.0;
}

/// Moves `mw` of conventional output off the given units, pro rata to their
/// output and never below zero. Returns the part that could not be placed.
inline double reduce_units(Network& net, const std::vector<std::size_t>& units, double mw)
{
  double total = 0.0;
  for (auto g : units)
    total += std::max(net.generators[g].p_gen, 0.0);
  if (total <= 0.0)
    return mw;
  const double take = std::min(mw / net.mva_base, total);
  for (auto g : units) {
    auto& gen = net.generators[g];
    gen.p_gen -= take * std::max(gen.p_gen, 0.0) / total;
  }
  return mw - take * net.mva_base;
}

} // namespace detail

inline Problem build_problem(const Network& raw, const Scenario& sc, const NatafOptions& nopts = {})
{
  Problem pb;
  pb.scenario_hash = sc.hash;
  pb.solver = sc.solver;
  Network net = raw;
  for (auto& b : net.buses) {
    b.p_load *= sc.network.load_scale;
    b.q_load *= sc.network.load_scale;
  }
  for (auto& g : net.generators)
    g.p_gen *= sc.network.generation_scale;
  for (const auto& rt : sc.network.ratings) {
    auto& br = net.branches[locate_facility(net, Facility::parse(rt.branch))];
    br.rate_a = rt.normal_mva / net.mva_base;
    br.s_max_normal = br.rate_a;
    br.s_max_emergency = rt.emergency_mva > 0.0 ? rt.emergency_mva / net.mva_base
                                                : sc.network.kappa * br.s_max_normal;
  }

  pb.inputs = sc.plants;
  for (const auto& in : pb.inputs)
    net.bus_index(in.bus);

  std::vector<int> load_buses;
  if (sc.loads.all_buses) {
    for (const auto& b : net.buses)
      if (b.p_load > 0.0)
        load_buses.push_back(b.id);
  } else {
    load_buses = sc.loads.buses;
    std::sort(load_buses.begin(), load_buses.end(), [&](int a, int b) {
      return net.bus_index(a) < net.bus_index(b);
    });
  }
  for (int id : load_buses) {
    const auto& bus = net.buses[net.bus_index(id)];
    const double mu = bus.p_load * net.mva_base;
    if (!(mu > 0.0))
      throw ValidationError("stochastic load at bus " + std::to_string(id) +
                            " needs a positive base load");
    const double sigma = sc.loads.sigma_rule == SigmaRule::StdFraction
                           ? sc.loads.sigma_fraction * mu
                           : std::sqrt(sc.loads.sigma_fraction * mu);
    RandomInput in;
    in.kind = RandomInput::Kind::Load;
    in.bus = id;
    in.marginal = sigma > 0.0 ? Marginal{Normal{mu, sigma}} : Marginal{Degenerate{mu}};
    in.label = "load@" + std::to_string(id);
    pb.inputs.push_back(in);
  }

  // Expected renewable output displaces conventional generation.
  if (sc.network.dispatch != Dispatch::Slack) {
    std::vector<std::size_t> all_units;
    const auto slack = net.slack_index();
    for (std::size_t g = 0; g < net.generators.size(); ++g)
      if (net.generators[g].in_service() && net.bus_index(net.generators[g].bus) != slack)
        all_units.push_back(g);
    double leftover = 0.0;
    for (const auto& in : pb.inputs) {
      if (in.kind == RandomInput::Kind::Load)
        continue;
      const double mw = expected_output_mw(in);
      if (sc.network.dispatch == Dispatch::Proportional) {
        leftover += detail::reduce_units(net, all_units, mw);
        continue;
      }
      std::vector<std::size_t> local;
      for (std::size_t g = 0; g < net.generators.size(); ++g)
        if (net.generators[g].in_service() && net.generators[g].bus == in.bus)
          local.push_back(g);
      leftover += detail::reduce_units(net, local, mw);
    }
    if (leftover > 1e-9)
      pb.warnings.push_back("expected renewable output of " + std::to_string(leftover) +
                            " MW left to the slack bus");
  }
  finalize_network(net);
  pb.base = net;

  const auto n = static_cast<Eigen::Index>(pb.inputs.size());
  if (sc.correlation.matrix) {
    if (sc.correlation.matrix->rows() != n)
      throw ValidationError("correlation.matrix is " + std::to_string(sc.correlation.matrix->rows()) +
                            " wide, the scenario has " + std::to_string(n) + " inputs");
    pb.correlation = *sc.correlation.matrix;
  } else {
    pb.correlation = Eigen::MatrixXd::Identity(n, n);
    for (Eigen::Index i = 0; i < n; ++i)
      for (Eigen::Index j = 0; j < i; ++j) {
        const double r = detail::class_correlation(sc.correlation,
                                                   pb.inputs[static_cast<std::size_t>(i)].kind,
                                                   pb.inputs[static_cast<std::size_t>(j)].kind);
        pb.correlation(i, j) = pb.correlation(j, i) = r;
      }
  }
  std::vector<Marginal> marginals;
  for (const auto& in : pb.inputs)
    marginals.push_back(in.marginal);
  pb.nataf = fit_nataf(marginals, pb.correlation, nopts);
  for (const auto& w : pb.nataf.warnings)
    pb.warnings.push_back(w);

  pb.txn = make_transaction(pb.base, sc.sources, sc.sinks, sc.normalization, sc.nominal_mw);
  pb.study = build_study(pb.base, sc.contingencies);
  return pb;
}

} // namespace patc
