#pragma once

// Grid model: buses, branches and generators in per-unit on the system MVA
// base, MATPOWER-subset case parsing and bus admittance assembly.

#include <algorithm>
#include <charconv>
#include <cmath>
#include <complex>
#include <cstdio>
#include <limits>
#include <numbers>
#include <optional>
#include <queue>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <Eigen/Dense>

#include "patc/error.hpp"

namespace patc {

using Complex = std::complex<double>;
using ComplexMatrix = Eigen::MatrixXcd;

enum class BusKind { Slack, PV, PQ };
enum class Status { InService, Outaged };

/// Which limit set downstream checks apply: normal for the intact network,
/// emergency after a contingency.
enum class LimitMode { Normal, Emergency };

/// Source of branch emergency ratings when parsing a case.
enum class EmergencyRating { Kappa, RateB, RateC };

struct Bus
{
  int id = 0;
  BusKind kind = BusKind::PQ;          ///< effective type after unit outages
  BusKind declared_kind = BusKind::PQ; ///< type as written in the case
  double voltage_magnitude = 1.0; ///< initial / reported magnitude (p.u.)
  double voltage_angle = 0.0;     ///< radians
  double p_load = 0.0;
  double q_load = 0.0;
  double v_min_normal = 0.95;
  double v_max_normal = 1.05;
  double v_min_emergency = 0.90;
  double v_max_emergency = 1.10;
  double shunt_g = 0.0;
  double shunt_b = 0.0;
  double v_setpoint = 1.0; ///< regulated magnitude for Slack/PV buses
  int area = 1;
  double base_kv = 0.0;
  int zone = 1;
};

struct Branch
{
  int from = 0;
  int to = 0;
  double r = 0.0;
  double x = 0.0;
  double b_charging = 0.0;
  double tap_ratio = 1.0;   ///< 1 for lines (MATPOWER writes 0)
  double phase_shift = 0.0; ///< radians
  double s_max_normal = std::numeric_limits<double>::infinity();
  double s_max_emergency = std::numeric_limits<double>::infinity();
  Status status = Status::InService;
  // Raw MATPOWER ratings in p.u. (0 = unspecified), kept for serialization.
  double rate_a = 0.0;
  double rate_b = 0.0;
  double rate_c = 0.0;
  double angle_min = -360.0;
  double angle_max = 360.0;

  bool in_service() const noexcept { return status == Status::InService; }
};

struct Generator
{
  int bus = 0;
  double p_gen = 0.0;
  double q_gen = 0.0;
  double p_min = 0.0;
  double p_max = 0.0;
  double q_min = 0.0;
  double q_max = 0.0;
  double v_setpoint = 1.0;
  double m_base = 100.0;
  Status status = Status::InService;

  bool in_service() const noexcept { return status == Status::InService; }
};

struct ParseOptions
{
  EmergencyRating emergency_rating = EmergencyRating::Kappa;
  double kappa = 1.2; ///< emergency = kappa * normal when no rating is given
  double v_min_emergency = 0.90;
  double v_max_emergency = 1.10;
};

/// N-bus grid. Treated as immutable once `finalize_network` has run; the
/// contingency helpers return modified copies.
struct Network
{
  double mva_base = 100.0;
  std::vector<Bus> buses;
  std::vector<Branch> branches;
  std::vector<Generator> generators;
  LimitMode limit_mode = LimitMode::Normal;
  ComplexMatrix admittance;
  std::unordered_map<int, std::size_t> bus_lookup;
  std::vector<std::string> warnings;

  std::size_t bus_count() const noexcept { return buses.size(); }

  std::size_t bus_index(int id) const
  {
    auto it = bus_lookup.find(id);
    if (it == bus_lookup.end())
      throw ValidationError("unknown bus " + std::to_string(id));
    return it->second;
  }

  bool has_bus(int id) const { return bus_lookup.count(id) != 0; }

  std::size_t slack_index() const
  {
    for (std::size_t i = 0; i < buses.size(); ++i)
      if (buses[i].kind == BusKind::Slack)
        return i;
    throw ValidationError("network has no slack bus");
  }

  double v_min(std::size_t i) const
  {
    return limit_mode == LimitMode::Normal ? buses[i].v_min_normal : buses[i].v_min_emergency;
  }
  double v_max(std::size_t i) const
  {
    return limit_mode == LimitMode::Normal ? buses[i].v_max_normal : buses[i].v_max_emergency;
  }
  double s_max(std::size_t k) const
  {
    return limit_mode == LimitMode::Normal ? branches[k].s_max_normal
                                           : branches[k].s_max_emergency;
  }
};

// ---------------------------------------------------------------------------
// Admittance

/// Dense bus admittance matrix from the standard pi-model of every in-service
/// branch plus the bus shunts. Off-diagonal entries are -y_series/conj(tap)
/// (from row) and -y_series/tap (to row).
inline ComplexMatrix build_admittance(const Network& net)
{
  const auto n = static_cast<Eigen::Index>(net.buses.size());
  ComplexMatrix y = ComplexMatrix::Zero(n, n);
  for (const auto& br : net.branches) {
    if (!br.in_service())
      continue;
    if (br.x == 0.0 && br.r == 0.0)
      throw ValidationError("branch " + std::to_string(br.from) + "-" + std::to_string(br.to) +
                            " has zero impedance");
    const auto f = static_cast<Eigen::Index>(net.bus_index(br.from));
    const auto t = static_cast<Eigen::Index>(net.bus_index(br.to));
    const Complex ys = 1.0 / Complex(br.r, br.x);
    const Complex half_b(0.0, br.b_charging / 2.0);
    const Complex tap = std::polar(br.tap_ratio, br.phase_shift);
    y(f, f) += (ys + half_b) / std::norm(tap);
    y(t, t) += ys + half_b;
    y(f, t) -= ys / std::conj(tap);
    y(t, f) -= ys / tap;
  }
  for (Eigen::Index i = 0; i < n; ++i)
    y(i, i) += Complex(net.buses[static_cast<std::size_t>(i)].shunt_g,
                       net.buses[static_cast<std::size_t>(i)].shunt_b);
  return y;
}

/// True when every bus is reachable from the slack through in-service branches.
/// On failure `first_unreached` receives the id of an isolated bus.
inline bool is_connected(const Network& net, int* first_unreached = nullptr)
{
  const std::size_t n = net.buses.size();
  if (n == 0)
    return true;
  std::vector<std::vector<std::size_t>> adj(n);
  for (const auto& br : net.branches) {
    if (!br.in_service())
      continue;
    const auto f = net.bus_index(br.from);
    const auto t = net.bus_index(br.to);
    adj[f].push_back(t);
    adj[t].push_back(f);
  }
  std::vector<char> seen(n, 0);
  std::queue<std::size_t> todo;
  const auto root = net.slack_index();
  seen[root] = 1;
  todo.push(root);
  while (!todo.empty()) {
    const auto i = todo.front();
    todo.pop();
    for (auto j : adj[i])
      if (!seen[j]) {
        seen[j] = 1;
        todo.push(j);
      }
  }
  for (std::size_t i = 0; i < n; ++i)
    if (!seen[i]) {
      if (first_unreached)
        *first_unreached = net.buses[i].id;
      return false;
    }
  return true;
}

/// Rebuilds the lookup table, the effective bus kinds and the admittance
/// matrix, then checks the semantic invariants.
inline void finalize_network(Network& net)
{
  net.bus_lookup.clear();
  for (std::size_t i = 0; i < net.buses.size(); ++i) {
    const auto& b = net.buses[i];
    if (!net.bus_lookup.emplace(b.id, i).second)
      throw ValidationError("duplicate bus id " + std::to_string(b.id));
    if (b.v_min_normal > b.v_max_normal)
      throw ValidationError("bus " + std::to_string(b.id) + ": v_min exceeds v_max");
  }
  std::size_t slack_count = 0;
  for (const auto& b : net.buses)
    slack_count += b.declared_kind == BusKind::Slack;
  if (slack_count == 0)
    throw ValidationError("network has no slack bus");
  if (slack_count > 1)
    throw ValidationError("network has more than one slack bus");

  for (std::size_t k = 0; k < net.branches.size(); ++k) {
    const auto& br = net.branches[k];
    const std::string name = "branch " + std::to_string(k + 1) + " (" + std::to_string(br.from) +
                             "-" + std::to_string(br.to) + ")";
    if (!net.has_bus(br.from) || !net.has_bus(br.to))
      throw ValidationError(name + " references an unknown bus");
    if (br.from == br.to)
      throw ValidationError(name + " connects a bus to itself");
    if (br.x == 0.0)
      throw ValidationError(name + " has zero reactance");
    if (br.s_max_emergency < br.s_max_normal)
      throw ValidationError(name + ": emergency rating below normal rating");
  }
  for (std::size_t g = 0; g < net.generators.size(); ++g) {
    const auto& gen = net.generators[g];
    if (!net.has_bus(gen.bus))
      throw ValidationError("generator " + std::to_string(g + 1) + " at unknown bus " +
                            std::to_string(gen.bus));
    if (gen.p_min > gen.p_max || gen.q_min > gen.q_max)
      throw ValidationError("generator " + std::to_string(g + 1) + " has inverted limits");
  }

  // Regulated buses take their setpoint from the first in-service unit; a PV
  // bus without any unit in service regulates nothing and becomes PQ.
  std::vector<char> has_unit(net.buses.size(), 0);
  std::vector<double> setpoint(net.buses.size(), 0.0);
  for (const auto& gen : net.generators) {
    if (!gen.in_service())
      continue;
    const auto i = net.bus_index(gen.bus);
    if (!has_unit[i])
      setpoint[i] = gen.v_setpoint;
    has_unit[i] = 1;
  }
  for (std::size_t i = 0; i < net.buses.size(); ++i) {
    auto& b = net.buses[i];
    b.kind = b.declared_kind;
    if (b.kind == BusKind::PQ)
      continue;
    if (has_unit[i]) {
      b.v_setpoint = setpoint[i];
    } else if (b.kind == BusKind::PV) {
      b.kind = BusKind::PQ;
    } else {
      b.v_setpoint = b.voltage_magnitude;
    }
  }
  net.admittance = build_admittance(net);
}

// ---------------------------------------------------------------------------
// MATPOWER-subset parsing

namespace detail {

inline std::string_view trim(std::string_view s)
{
  const auto ws = " \t\r\n";
  const auto b = s.find_first_not_of(ws);
  if (b == std::string_view::npos)
    return {};
  const auto e = s.find_last_not_of(ws);
  return s.substr(b, e - b + 1);
}

inline double parse_number(std::string_view tok, std::size_t line)
{
  double v = 0.0;
  if (tok == "Inf" || tok == "inf")
    return std::numeric_limits<double>::infinity();
  if (tok == "-Inf" || tok == "-inf")
    return -std::numeric_limits<double>::infinity();
  std::string_view t = tok;
  if (!t.empty() && t.front() == '+')
    t.remove_prefix(1);
  const auto* first = t.data();
  const auto* last = t.data() + t.size();
  auto [ptr, ec] = std::from_chars(first, last, v);
  if (ec != std::errc() || ptr != last)
    throw ParseError(line, "invalid number '" + std::string(tok) + "'");
  return v;
}

struct Table
{
  std::vector<std::vector<double>> rows;
  std::vector<std::size_t> lines;
};

inline void split_row(std::string_view row, std::size_t line, Table& out)
{
  std::vector<double> values;
  std::size_t i = 0;
  while (i < row.size()) {
    while (i < row.size() && (row[i] == ' ' || row[i] == '\t' || row[i] == ',' || row[i] == '\r'))
      ++i;
    if (i >= row.size())
      break;
    auto j = i;
    while (j < row.size() && row[j] != ' ' && row[j] != '\t' && row[j] != ',' && row[j] != '\r')
      ++j;
    values.push_back(parse_number(row.substr(i, j - i), line));
    i = j;
  }
  if (!values.empty()) {
    out.rows.push_back(std::move(values));
    out.lines.push_back(line);
  }
}

inline std::string fmt_g17(double v)
{
  if (std::isinf(v))
    return v > 0 ? "Inf" : "-Inf";
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

} // namespace detail

/// Parses the `mpc.baseMVA`, `mpc.bus`, `mpc.gen` and `mpc.branch` sections
/// of a MATPOWER case. Other `mpc.*` matrices are skipped with a warning.
inline Network parse_case(std::string_view text, const ParseOptions& opts = {})
{
  using detail::trim;
  std::optional<double> base;
  std::unordered_map<std::string, detail::Table> tables;
  std::unordered_map<std::string, std::size_t> opened_at;
  std::vector<std::string> warnings;

  std::string current; // matrix being read, empty when outside
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    auto eol = text.find('\n', pos);
    if (eol == std::string_view::npos)
      eol = text.size();
    std::string_view line = text.substr(pos, eol - pos);
    pos = eol + 1;
    ++line_no;
    if (auto pct = line.find('%'); pct != std::string_view::npos)
      line = line.substr(0, pct);
    line = trim(line);
    if (line.empty())
      continue;

    if (current.empty()) {
      if (line.rfind("function", 0) == 0)
        continue;
      if (line.rfind("mpc.", 0) != 0)
        throw ParseError(line_no, "unexpected text '" + std::string(line) + "'");
      const auto eq = line.find('=');
      if (eq == std::string_view::npos)
        throw ParseError(line_no, "expected '=' in assignment");
      const std::string name(trim(line.substr(4, eq - 4)));
      std::string_view rhs = trim(line.substr(eq + 1));
      if (!rhs.empty() && rhs.front() == '[') {
        if (tables.count(name))
          throw ParseError(line_no, "section mpc." + name + " defined twice");
        tables[name];
        opened_at[name] = line_no;
        current = name;
        line = trim(rhs.substr(1));
        if (line.empty())
          continue;
      } else {
        if (name == "baseMVA") {
          if (!rhs.empty() && rhs.back() == ';')
            rhs.remove_suffix(1);
          base = detail::parse_number(trim(rhs), line_no);
        } else if (name != "version") {
          warnings.push_back("skipped scalar mpc." + name);
        }
        continue;
      }
    }

    // Inside a matrix: rows end at ';' or end of line; ']' closes.
    bool closed = false;
    if (auto rb = line.find(']'); rb != std::string_view::npos) {
      auto tail = trim(line.substr(rb + 1));
      if (!tail.empty() && tail != ";")
        throw ParseError(line_no, "unexpected text after ']'");
      line = line.substr(0, rb);
      closed = true;
    }
    auto& table = tables[current];
    std::size_t start = 0;
    while (start <= line.size()) {
      auto semi = line.find(';', start);
      if (semi == std::string_view::npos)
        semi = line.size();
      detail::split_row(line.substr(start, semi - start), line_no, table);
      start = semi + 1;
    }
    if (closed)
      current.clear();
  }
  if (!current.empty())
    throw ParseError(opened_at[current], "section mpc." + current + " is never closed");
  if (!base)
    throw ParseError(0, "missing mpc.baseMVA");
  if (!(*base > 0.0))
    throw ParseError(0, "mpc.baseMVA must be positive");
  for (const char* required : {"bus", "gen", "branch"})
    if (!tables.count(required))
      throw ParseError(0, std::string("missing mpc.") + required + " table");
  for (const auto& [name, table] : tables)
    if (name != "bus" && name != "gen" && name != "branch")
      warnings.push_back("skipped section mpc." + name);

  Network net;
  net.mva_base = *base;
  const double mva = *base;
  const double deg = std::numbers::pi / 180.0;

  auto need = [](const detail::Table& t, std::size_t cols, const char* what) {
    for (std::size_t r = 0; r < t.rows.size(); ++r)
      if (t.rows[r].size() < cols)
        throw ParseError(t.lines[r], std::string(what) + " row needs at least " +
                                         std::to_string(cols) + " columns");
  };

  const auto& bus_t = tables["bus"];
  need(bus_t, 13, "bus");
  for (std::size_t r = 0; r < bus_t.rows.size(); ++r) {
    const auto& c = bus_t.rows[r];
    Bus b;
    b.id = static_cast<int>(c[0]);
    switch (static_cast<int>(c[1])) {
    case 1: b.kind = BusKind::PQ; break;
    case 2: b.kind = BusKind::PV; break;
    case 3: b.kind = BusKind::Slack; break;
    default:
      throw ParseError(bus_t.lines[r], "unsupported bus type " + std::to_string(int(c[1])));
    }
    b.declared_kind = b.kind;
    b.p_load = c[2] / mva;
    b.q_load = c[3] / mva;
    b.shunt_g = c[4] / mva;
    b.shunt_b = c[5] / mva;
    b.area = static_cast<int>(c[6]);
    b.voltage_magnitude = c[7];
    b.voltage_angle = c[8] * deg;
    b.base_kv = c[9];
    b.zone = static_cast<int>(c[10]);
    b.v_max_normal = c[11];
    b.v_min_normal = c[12];
    b.v_min_emergency = std::min(opts.v_min_emergency, b.v_min_normal);
    b.v_max_emergency = std::max(opts.v_max_emergency, b.v_max_normal);
    net.buses.push_back(b);
  }

  const auto& gen_t = tables["gen"];
  need(gen_t, 10, "gen");
  for (const auto& c : gen_t.rows) {
    Generator g;
    g.bus = static_cast<int>(c[0]);
    g.p_gen = c[1] / mva;
    g.q_gen = c[2] / mva;
    g.q_max = c[3] / mva;
    g.q_min = c[4] / mva;
    g.v_setpoint = c[5];
    g.m_base = c[6];
    g.status = c[7] > 0 ? Status::InService : Status::Outaged;
    g.p_max = c[8] / mva;
    g.p_min = c[9] / mva;
    net.generators.push_back(g);
  }

  const auto& br_t = tables["branch"];
  need(br_t, 11, "branch");
  for (const auto& c : br_t.rows) {
    Branch br;
    br.from = static_cast<int>(c[0]);
    br.to = static_cast<int>(c[1]);
    br.r = c[2];
    br.x = c[3];
    br.b_charging = c[4];
    br.rate_a = c[5] / mva;
    br.rate_b = c[6] / mva;
    br.rate_c = c[7] / mva;
    br.tap_ratio = c[8] == 0.0 ? 1.0 : c[8];
    br.phase_shift = c[9] * deg;
    br.status = c[10] > 0 ? Status::InService : Status::Outaged;
    if (c.size() >= 13) {
      br.angle_min = c[11];
      br.angle_max = c[12];
    }
    // MATPOWER uses 0 for "no limit".
    const double inf = std::numeric_limits<double>::infinity();
    br.s_max_normal = br.rate_a > 0.0 ? br.rate_a : inf;
    double emergency = 0.0;
    switch (opts.emergency_rating) {
    case EmergencyRating::RateB: emergency = br.rate_b; break;
    case EmergencyRating::RateC: emergency = br.rate_c; break;
    case EmergencyRating::Kappa: break;
    }
    if (emergency <= 0.0)
      emergency = opts.kappa * br.s_max_normal;
    br.s_max_emergency = std::max(emergency, br.s_max_normal);
    net.branches.push_back(br);
  }

  net.warnings = std::move(warnings);
  finalize_network(net);
  return net;
}

/// Writes the network back in MATPOWER form (MW/MVAr/degrees, 17 significant
/// digits). Parsing the result with the same options reproduces the model.
inline std::string serialize_case(const Network& net, std::string_view name = "patc_case")
{
  using detail::fmt_g17;
  const double mva = net.mva_base;
  const double rad = 180.0 / std::numbers::pi;
  std::ostringstream os;
  os << "function mpc = " << name << "\n\nmpc.version = '2';\n\n";
  os << "mpc.baseMVA = " << fmt_g17(mva) << ";\n\n";
  os << "%% bus data\nmpc.bus = [\n";
  for (const auto& b : net.buses) {
    const int type = b.declared_kind == BusKind::Slack ? 3 : b.declared_kind == BusKind::PV ? 2 : 1;
    os << '\t' << b.id << '\t' << type << '\t' << fmt_g17(b.p_load * mva) << '\t'
       << fmt_g17(b.q_load * mva) << '\t' << fmt_g17(b.shunt_g * mva) << '\t'
       << fmt_g17(b.shunt_b * mva) << '\t' << b.area << '\t' << fmt_g17(b.voltage_magnitude)
       << '\t' << fmt_g17(b.voltage_angle * rad) << '\t' << fmt_g17(b.base_kv) << '\t' << b.zone
       << '\t' << fmt_g17(b.v_max_normal) << '\t' << fmt_g17(b.v_min_normal) << ";\n";
  }
  os << "];\n\n%% generator data\nmpc.gen = [\n";
  for (const auto& g : net.generators) {
    os << '\t' << g.bus << '\t' << fmt_g17(g.p_gen * mva) << '\t' << fmt_g17(g.q_gen * mva) << '\t'
       << fmt_g17(g.q_max * mva) << '\t' << fmt_g17(g.q_min * mva) << '\t'
       << fmt_g17(g.v_setpoint) << '\t' << fmt_g17(g.m_base) << '\t' << (g.in_service() ? 1 : 0)
       << '\t' << fmt_g17(g.p_max * mva) << '\t' << fmt_g17(g.p_min * mva) << ";\n";
  }
  os << "];\n\n%% branch data\nmpc.branch = [\n";
  for (const auto& br : net.branches) {
    os << '\t' << br.from << '\t' << br.to << '\t' << fmt_g17(br.r) << '\t' << fmt_g17(br.x)
       << '\t' << fmt_g17(br.b_charging) << '\t' << fmt_g17(br.rate_a * mva) << '\t'
       << fmt_g17(br.rate_b * mva) << '\t' << fmt_g17(br.rate_c * mva) << '\t'
       << fmt_g17(br.tap_ratio) << '\t' << fmt_g17(br.phase_shift * rad) << '\t'
       << (br.in_service() ? 1 : 0) << '\t' << fmt_g17(br.angle_min) << '\t'
       << fmt_g17(br.angle_max) << ";\n";
  }
  os << "];\n";
  return os.str();
}

/// Re-expresses every per-unit quantity on a new MVA base. Solved voltages are
/// unchanged by construction: powers scale by old/new, impedances by new/old.
inline Network with_mva_base(const Network& net, double new_base)
{
  if (!(new_base > 0.0))
    throw ValidationError("MVA base must be positive");
  Network out = net;
  const double s = net.mva_base / new_base;
  out.mva_base = new_base;
  for (auto& b : out.buses) {
    b.p_load *= s;
    b.q_load *= s;
    b.shunt_g *= s;
    b.shunt_b *= s;
  }
  for (auto& g : out.generators) {
    g.p_gen *= s;
    g.q_gen *= s;
    g.p_min *= s;
    g.p_max *= s;
    g.q_min *= s;
    g.q_max *= s;
  }
  for (auto& br : out.branches) {
    br.r /= s;
    br.x /= s;
    br.b_charging *= s;
    br.s_max_normal *= s;
    br.s_max_emergency *= s;
    br.rate_a *= s;
    br.rate_b *= s;
    br.rate_c *= s;
  }
  finalize_network(out);
  return out;
}

// ---------------------------------------------------------------------------
// Contingencies

/// Outage target: `G<bus>#<k>` is the k-th unit listed at a bus, `L<a>-<b>`
/// (optionally `#<k>`) the k-th branch joining two buses in either direction.
struct Facility
{
  enum class Kind { Branch, Generator } kind = Kind::Branch;
  int bus_a = 0;
  int bus_b = 0;
  int ordinal = 1;

  std::string to_string() const
  {
    if (kind == Kind::Generator)
      return "G" + std::to_string(bus_a) + "#" + std::to_string(ordinal);
    std::string s = "L" + std::to_string(bus_a) + "-" + std::to_string(bus_b);
    if (ordinal != 1)
      s += "#" + std::to_string(ordinal);
    return s;
  }

  static Facility parse(std::string_view text)
  {
    auto bad = [&] { return ValidationError("malformed facility id '" + std::string(text) + "'"); };
    auto read_int = [&](std::string_view s) {
      int v = 0;
      auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
      if (ec != std::errc() || p != s.data() + s.size() || s.empty())
        throw bad();
      return v;
    };
    if (text.size() < 2)
      throw bad();
    Facility f;
    std::string_view body = text.substr(1);
    if (auto hash = body.find('#'); hash != std::string_view::npos) {
      f.ordinal = read_int(body.substr(hash + 1));
      body = body.substr(0, hash);
    }
    if (f.ordinal < 1)
      throw bad();
    if (text[0] == 'G' || text[0] == 'g') {
      f.kind = Kind::Generator;
      f.bus_a = read_int(body);
    } else if (text[0] == 'L' || text[0] == 'l') {
      f.kind = Kind::Branch;
      const auto dash = body.find('-');
      if (dash == std::string_view::npos)
        throw bad();
      f.bus_a = read_int(body.substr(0, dash));
      f.bus_b = read_int(body.substr(dash + 1));
    } else {
      throw bad();
    }
    return f;
  }
};

/// Index into `branches` or `generators` addressed by a facility id.
inline std::size_t locate_facility(const Network& net, const Facility& f)
{
  int seen = 0;
  if (f.kind == Facility::Kind::Generator) {
    for (std::size_t g = 0; g < net.generators.size(); ++g)
      if (net.generators[g].bus == f.bus_a && ++seen == f.ordinal)
        return g;
  } else {
    for (std::size_t k = 0; k < net.branches.size(); ++k) {
      const auto& br = net.branches[k];
      const bool match = (br.from == f.bus_a && br.to == f.bus_b) ||
                         (br.from == f.bus_b && br.to == f.bus_a);
      if (match && ++seen == f.ordinal)
        return k;
    }
  }
  throw ValidationError("unknown facility " + f.to_string());
}

/// Copy of `net` with the facility outaged, the admittance rebuilt and the
/// emergency limit set active.
inline Network apply_contingency(const Network& net, const Facility& f)
{
  Network out = net;
  const auto idx = locate_facility(net, f);
  if (f.kind == Facility::Kind::Generator) {
    auto& g = out.generators[idx];
    if (!g.in_service())
      throw ValidationError("facility " + f.to_string() + " is already out of service");
    g.status = Status::Outaged;
    const auto bi = out.bus_index(g.bus);
    if (out.buses[bi].kind == BusKind::Slack) {
      bool remaining = false;
      for (const auto& other : out.generators)
        remaining = remaining || (other.bus == g.bus && other.in_service());
      if (!remaining)
        throw ValidationError("outage " + f.to_string() + " removes the last slack unit");
    }
  } else {
    auto& br = out.branches[idx];
    if (!br.in_service())
      throw ValidationError("facility " + f.to_string() + " is already out of service");
    br.status = Status::Outaged;
  }
  int isolated = 0;
  if (!is_connected(out, &isolated))
    throw IslandingError("outage " + f.to_string() + " islands bus " + std::to_string(isolated));
  out.limit_mode = LimitMode::Emergency;
  finalize_network(out);
  return out;
}

inline Network apply_contingency(const Network& net, std::string_view facility)
{
  return apply_contingency(net, Facility::parse(facility));
}

/// Inverse of `apply_contingency` for a single facility.
inline Network restore_facility(const Network& net, const Facility& f)
{
  Network out = net;
  const auto idx = locate_facility(net, f);
  if (f.kind == Facility::Kind::Generator)
    out.generators[idx].status = Status::InService;
  else
    out.branches[idx].status = Status::InService;
  out.limit_mode = LimitMode::Normal;
  finalize_network(out);
  return out;
}

inline double total_load_mw(const Network& net)
{
  double s = 0.0;
  for (const auto& b : net.buses)
    s += b.p_load;
  return s * net.mva_base;
}

} // namespace patc
