#pragma once

// Probabilistic ATC: Monte Carlo reference and the low-rank surrogate route,
// with the statistics, TRM table and report files of both.

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <exception>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <numbers>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "patc/atc.hpp"
#include "patc/error.hpp"
#include "patc/lhs.hpp"
#include "patc/lra.hpp"
#include "patc/nataf.hpp"
#include "patc/scenario.hpp"

namespace patc {

/// Runs fn(i) for i in [0, n) on up to `threads` workers. Exceptions are
/// rethrown in index order after all workers finish.
template <class Fn>
void parallel_for(std::size_t n, unsigned threads, Fn&& fn)
{
  if (threads <= 1 || n <= 1) {
    for (std::size_t i = 0; i < n; ++i)
      fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::exception_ptr> errors(n);
  std::vector<std::thread> pool;
  for (unsigned w = 0; w < std::min<std::size_t>(threads, n); ++w)
    pool.emplace_back([&] {
      for (std::size_t i; (i = next.fetch_add(1)) < n;) {
        try {
          fn(i);
        } catch (...) {
          errors[i] = std::current_exception();
        }
      }
    });
  for (auto& t : pool)
    t.join();
  for (auto& e : errors)
    if (e)
      std::rethrow_exception(e);
}

struct PatcSample
{
  Eigen::VectorXd xi;
  Eigen::VectorXd u;
  double patc = 0.0;
  std::size_t binding_case = 0;
  LimitClass binding_class = LimitClass::None;
  bool ok = false;
  std::string error;
};

/// Overall transfer capability at one standard-space point.
inline PatcSample evaluate_patc(const Problem& pb, const Eigen::VectorXd& xi)
{
  PatcSample s;
  s.xi = xi;
  try {
    s.u = to_physical(pb.nataf, xi);
    const auto r = overall_atc(
      pb.study, pb.txn, [&](const Network& net) { return pb.injections(net, s.u); }, pb.solver,
      EvalMode::EarlyStop);
    s.patc = r.overall;
    s.binding_case = r.binding_case;
    s.binding_class = r.cases[r.binding_case].binding_class;
    s.ok = std::isfinite(s.patc);
    if (!s.ok)
      s.error = "non-finite transfer capability";
  } catch (const Error& e) {
    s.error = e.what();
  }
  return s;
}

/// Evaluates every row of `xi`; the result is ordered by row.
inline std::vector<PatcSample> evaluate_batch(const Problem& pb, const Eigen::MatrixXd& xi,
                                              unsigned threads)
{
  std::vector<PatcSample> out(static_cast<std::size_t>(xi.rows()));
  parallel_for(out.size(), threads, [&](std::size_t k) {
    out[k] = evaluate_patc(pb, xi.row(static_cast<Eigen::Index>(k)).transpose());
  });
  return out;
}

/// Throws if more than `max_fraction` of the samples failed.
inline std::size_t check_failures(const std::vector<PatcSample>& s, double max_fraction = 0.01)
{
  std::size_t failed = 0;
  std::string first;
  for (std::size_t k = 0; k < s.size(); ++k)
    if (!s[k].ok) {
      if (failed++ == 0)
        first = "sample " + std::to_string(k) + ": " + s[k].error;
    }
  if (static_cast<double>(failed) > max_fraction * static_cast<double>(s.size()))
    throw ConvergenceError(std::to_string(failed) + " of " + std::to_string(s.size()) +
                           " transfer-capability solves failed (first: " + first +
                           "); the scenario is likely infeasible");
  return failed;
}

// ---------------------------------------------------------------------------
// Statistics

struct TrmRow
{
  double confidence = 0.0;
  double mean = 0.0; ///< MW
  double trm = 0.0;  ///< MW
  double atc = 0.0;  ///< MW
};

/// Linear interpolation between order statistics of sorted data.
inline double sorted_quantile(const std::vector<double>& sorted, double q)
{
  if (sorted.empty())
    throw ValidationError("quantile of an empty sample");
  const double h = (static_cast<double>(sorted.size()) - 1.0) * q;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const auto hi = std::min(lo + 1, sorted.size() - 1);
  return sorted[lo] + (h - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

/// Mean accumulated about the first value, exact for constant data.
inline double sample_mean(const std::vector<double>& x)
{
  if (x.empty())
    return 0.0;
  double s = 0.0;
  for (double v : x)
    s += v - x.front();
  return x.front() + s / static_cast<double>(x.size());
}

/// Unbiased sample standard deviation (0 for fewer than two samples).
inline double sample_std(const std::vector<double>& x)
{
  if (x.size() < 2)
    return 0.0;
  const double m = sample_mean(x);
  double s = 0.0;
  for (double v : x)
    s += (v - m) * (v - m);
  return std::sqrt(s / static_cast<double>(x.size() - 1));
}

/// ATC is the (1 - p_cl) quantile of the samples, TRM the gap to the mean.
inline TrmRow trm_at_confidence(const std::vector<double>& samples, double confidence)
{
  if (!(confidence > 0.0 && confidence < 1.0))
    throw ValidationError("confidence level must lie in (0, 1)");
  std::vector<double> sorted = samples;
  std::sort(sorted.begin(), sorted.end());
  TrmRow row;
  row.confidence = confidence;
  row.mean = sample_mean(samples);
  row.atc = sorted_quantile(sorted, 1.0 - confidence);
  row.trm = row.mean - row.atc;
  if (sorted.front() == sorted.back()) {
    row.atc = row.mean;
    row.trm = 0.0;
  }
  return row;
}

struct Curve
{
  std::vector<double> x;
  std::vector<double> y;
};

/// Empirical CDF as a step function: every distinct value contributes the
/// level just before and just after its jump.
inline Curve step_cdf(std::vector<double> samples)
{
  std::sort(samples.begin(), samples.end());
  Curve c;
  const double n = static_cast<double>(samples.size());
  for (std::size_t k = 0; k < samples.size();) {
    std::size_t j = k;
    while (j < samples.size() && samples[j] == samples[k])
      ++j;
    c.x.push_back(samples[k]);
    c.y.push_back(static_cast<double>(k) / n);
    c.x.push_back(samples[k]);
    c.y.push_back(static_cast<double>(j) / n);
    k = j;
  }
  return c;
}

/// Gaussian kernel density with Silverman's bandwidth on `points` grid
/// points; empty for a point mass.
inline Curve kernel_density(const std::vector<double>& samples, int points = 200)
{
  Curve c;
  if (samples.size() < 2)
    return c;
  std::vector<double> sorted = samples;
  std::sort(sorted.begin(), sorted.end());
  const double sd = sample_std(sorted);
  const double iqr = sorted_quantile(sorted, 0.75) - sorted_quantile(sorted, 0.25);
  double spread = sd;
  if (iqr > 0.0)
    spread = std::min(sd, iqr / 1.34);
  const double n = static_cast<double>(sorted.size());
  const double h = 0.9 * spread * std::pow(n, -0.2);
  if (!(h > 0.0))
    return c;
  const double lo = sorted.front() - 3.0 * h;
  const double hi = sorted.back() + 3.0 * h;
  const double norm = 1.0 / (n * h * std::sqrt(2.0 * std::numbers::pi));
  for (int g = 0; g < points; ++g) {
    const double x = lo + (hi - lo) * g / (points - 1);
    double s = 0.0;
    for (double v : sorted) {
      const double t = (x - v) / h;
      if (std::abs(t) < 8.0)
        s += std::exp(-0.5 * t * t);
    }
    c.x.push_back(x);
    c.y.push_back(s * norm);
  }
  return c;
}

/// Equal-width histogram normalized to a density; x holds bin centres.
inline Curve histogram(const std::vector<double>& samples, int bins = 50)
{
  Curve c;
  if (samples.empty())
    return c;
  const auto [mn, mx] = std::minmax_element(samples.begin(), samples.end());
  const double lo = *mn;
  const double width = (*mx - lo) / bins;
  if (!(width > 0.0))
    return c;
  std::vector<double> count(static_cast<std::size_t>(bins), 0.0);
  for (double v : samples) {
    auto b = static_cast<std::size_t>((v - lo) / width);
    count[std::min(b, count.size() - 1)] += 1.0;
  }
  for (int b = 0; b < bins; ++b) {
    c.x.push_back(lo + (b + 0.5) * width);
    c.y.push_back(count[static_cast<std::size_t>(b)] / (static_cast<double>(samples.size()) * width));
  }
  return c;
}

/// Sup distance between two step CDFs given as `step_cdf` curves.
inline double ks_distance(const Curve& a, const Curve& b)
{
  auto level = [](const Curve& c, double x) {
    // right-continuous value at x
    double f = 0.0;
    auto it = std::upper_bound(c.x.begin(), c.x.end(), x);
    if (it != c.x.begin())
      f = c.y[static_cast<std::size_t>(std::distance(c.x.begin(), it)) - 1];
    return f;
  };
  double d = 0.0;
  for (const Curve* c : {&a, &b})
    for (std::size_t k = 0; k < c->x.size(); ++k) {
      const double x = c->x[k];
      d = std::max(d, std::abs(level(a, x) - level(b, x)));
      // left limits
      const double xl = std::nextafter(x, -std::numeric_limits<double>::infinity());
      d = std::max(d, std::abs(level(a, xl) - level(b, xl)));
    }
  return d;
}

inline double ks_distance(const std::vector<double>& a, const std::vector<double>& b)
{
  return ks_distance(step_cdf(a), step_cdf(b));
}

// ---------------------------------------------------------------------------
// Reports

struct PatcReport
{
  std::string method; ///< "lra", "mcs" or "det"
  std::string scenario_hash;
  double mean_analytic = std::numeric_limits<double>::quiet_NaN();
  double std_analytic = std::numeric_limits<double>::quiet_NaN();
  double mean_empirical = 0.0;
  double std_empirical = 0.0;
  double deterministic_atc = std::numeric_limits<double>::quiet_NaN();
  std::vector<double> samples; ///< PATC values (MW), sample order
  std::vector<TrmRow> trm;
  std::vector<AtcCaseResult> cases; ///< deterministic per-case breakdown
  std::map<std::string, std::size_t> binding_cases; ///< case label -> count over solved samples
  std::size_t ed_size = 0;
  std::size_t surrogate_samples = 0;
  std::size_t atc_solves = 0;
  std::size_t failed_solves = 0;
  int enrichments = 0;
  int rank = 0;
  std::vector<int> degrees;
  std::size_t coefficient_count = 0;
  double validation_error = std::numeric_limits<double>::quiet_NaN();
  std::vector<double> error_trajectory;
  std::vector<std::string> warnings;
  double seconds = 0.0; ///< wall clock, reported separately from the result files
  std::string model_json;
};

struct RunSettings
{
  std::size_t ed_size = 125;
  std::size_t surrogate_samples = 2000;
  std::size_t mcs_samples = 10000;
  std::vector<int> ranks{1, 2, 3, 4, 5};
  std::vector<int> degrees{2, 3, 4, 5};
  double validation_target = 1e-2;
  int max_enrichments = 4;
  Seeds seeds;
  std::vector<double> confidence_levels{0.99, 0.98, 0.95, 0.90, 0.80};
  unsigned threads = 1;
  FitOptions fit;

  static RunSettings from(const Scenario& sc)
  {
    RunSettings s;
    s.ed_size = sc.lra.ed_size;
    s.surrogate_samples = sc.surrogate_samples;
    s.mcs_samples = sc.mcs_samples;
    s.ranks = sc.lra.ranks;
    s.degrees = sc.lra.degrees;
    s.validation_target = sc.lra.validation_target;
    s.max_enrichments = sc.lra.max_enrichments;
    s.seeds = sc.seeds;
    s.confidence_levels = sc.confidence_levels;
    s.threads = sc.threads;
    return s;
  }
};

/// Per-case breakdown at the expected inputs, every case traced in full.
inline OverallAtc deterministic_atc(const Problem& pb)
{
  return overall_atc(
    pb.study, pb.txn, [&](const Network& net) { return expected_injections(net, pb.inputs); },
    pb.solver, EvalMode::Full);
}

namespace detail {

inline void fill_statistics(PatcReport& r, const std::vector<double>& confidence_levels)
{
  r.mean_empirical = sample_mean(r.samples);
  r.std_empirical = sample_std(r.samples);
  r.trm.clear();
  for (double p : confidence_levels)
    r.trm.push_back(trm_at_confidence(r.samples, p));
}

inline void tally(PatcReport& r, const Problem& pb, const std::vector<PatcSample>& s)
{
  for (const auto& x : s)
    if (x.ok)
      ++r.binding_cases[pb.study.labels[x.binding_case]];
}

inline std::uint64_t batch_seed(std::uint64_t seed, int batch)
{
  return seed + 0x9E3779B97F4A7C15ULL * static_cast<std::uint64_t>(batch);
}

} // namespace detail

inline PatcReport run_mcs_patc(const Problem& pb, std::size_t samples, std::uint64_t seed,
                               const RunSettings& rs = {})
{
  if (samples < 2)
    throw ValidationError("Monte Carlo needs at least two samples");
  const auto t0 = std::chrono::steady_clock::now();
  PatcReport r;
  r.method = "mcs";
  r.scenario_hash = pb.scenario_hash;
  r.warnings = pb.warnings;
  const auto xi = lhs_design(pb.dimension(), samples, seed);
  const auto s = evaluate_batch(pb, xi, rs.threads);
  r.atc_solves = s.size();
  r.failed_solves = check_failures(s);
  for (const auto& x : s)
    if (x.ok)
      r.samples.push_back(x.patc);
  detail::tally(r, pb, s);
  detail::fill_statistics(r, rs.confidence_levels);
  const auto det = deterministic_atc(pb);
  r.cases = det.cases;
  r.deterministic_atc = det.overall;
  r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return r;
}

struct LraRun
{
  LraFit fit;
  ExperimentalDesign ed;
  PatcReport report;
};

inline LraRun run_lra_patc(const Problem& pb, const RunSettings& rs)
{
  if (rs.ed_size < 1 || rs.surrogate_samples < 2)
    throw ValidationError("design size must be >= 1 and surrogate samples >= 2");
  const auto t0 = std::chrono::steady_clock::now();
  LraRun run;
  PatcReport& r = run.report;
  r.method = "lra";
  r.scenario_hash = pb.scenario_hash;
  r.warnings = pb.warnings;
  run.ed.seed = rs.seeds.design;
  run.ed.scenario_hash = pb.scenario_hash;

  std::vector<PatcSample> all;
  auto add_batch = [&](std::size_t m, std::uint64_t seed) {
    const auto xi = lhs_design(pb.dimension(), m, seed);
    auto s = evaluate_batch(pb, xi, rs.threads);
    std::vector<Eigen::Index> keep;
    for (std::size_t k = 0; k < s.size(); ++k)
      if (s[k].ok)
        keep.push_back(static_cast<Eigen::Index>(k));
    Eigen::VectorXd y(static_cast<Eigen::Index>(keep.size()));
    for (std::size_t k = 0; k < keep.size(); ++k)
      y[static_cast<Eigen::Index>(k)] = s[static_cast<std::size_t>(keep[k])].patc;
    run.ed.append(xi(keep, Eigen::all), y);
    all.insert(all.end(), s.begin(), s.end());
    r.failed_solves = check_failures(all);
  };

  add_batch(rs.ed_size, rs.seeds.design);
  run.fit = fit(run.ed, rs.ranks, rs.degrees, rs.fit);
  const std::size_t extra = std::max<std::size_t>(1, rs.ed_size / 2);
  while (run.fit.report.validation_error > rs.validation_target &&
         r.enrichments < rs.max_enrichments) {
    ++r.enrichments;
    add_batch(extra, detail::batch_seed(rs.seeds.design, r.enrichments));
    run.fit = fit(run.ed, rs.ranks, rs.degrees, rs.fit);
  }
  run.fit.model.scenario_hash = pb.scenario_hash;
  r.atc_solves = all.size();
  r.ed_size = run.ed.size();
  detail::tally(r, pb, all);
  for (const auto& w : run.fit.report.warnings)
    r.warnings.push_back(w);

  const auto mom = analytic_moments(run.fit.model);
  for (const auto& w : mom.warnings)
    r.warnings.push_back(w);
  r.mean_analytic = mom.mean;
  r.std_analytic = std::sqrt(mom.variance);
  r.rank = run.fit.model.rank();
  r.degrees = run.fit.model.degrees;
  r.coefficient_count = run.fit.model.coefficient_count();
  r.validation_error = run.fit.report.validation_error;
  r.error_trajectory = run.fit.report.errors;

  const auto xs = lhs_design(pb.dimension(), rs.surrogate_samples, rs.seeds.surrogate);
  const Eigen::VectorXd ys = evaluate(run.fit.model, xs);
  r.samples.assign(ys.data(), ys.data() + ys.size());
  r.surrogate_samples = r.samples.size();
  detail::fill_statistics(r, rs.confidence_levels);

  const auto det = deterministic_atc(pb);
  r.cases = det.cases;
  r.deterministic_atc = det.overall;
  r.model_json = to_json(run.fit.model).dump(2);
  r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return run;
}

// ---------------------------------------------------------------------------
// Output files

namespace detail {

inline std::string g17(double v)
{
  if (std::isnan(v))
    return "nan";
  if (std::isinf(v))
    return v > 0 ? "inf" : "-inf";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

/// JSON number, or null when not finite.
inline nlohmann::json num(double v)
{
  return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr);
}

inline void write_file(const std::filesystem::path& p, const std::string& text)
{
  std::ofstream f(p, std::ios::binary);
  if (!f)
    throw std::runtime_error("cannot open " + p.string() + " for writing");
  f << text;
  if (!f)
    throw std::runtime_error("failed writing " + p.string());
}

inline std::string curve_csv(const char* x, const char* y, const Curve& c)
{
  std::string s = std::string(x) + "," + y + "\n";
  for (std::size_t k = 0; k < c.x.size(); ++k)
    s += g17(c.x[k]) + "," + g17(c.y[k]) + "\n";
  return s;
}

} // namespace detail

inline nlohmann::json summary_json(const PatcReport& r)
{
  using detail::num;
  nlohmann::json j;
  j["method"] = r.method;
  j["scenario_hash"] = r.scenario_hash;
  j["moments"] = {{"analytic", {{"mean", num(r.mean_analytic)}, {"std", num(r.std_analytic)}}},
                  {"empirical", {{"mean", num(r.mean_empirical)}, {"std", num(r.std_empirical)}}}};
  j["deterministic_atc"] = num(r.deterministic_atc);
  j["counts"] = {{"atc_solves", r.atc_solves},
                 {"failed_solves", r.failed_solves},
                 {"ed_size", r.ed_size},
                 {"surrogate_samples", r.surrogate_samples},
                 {"samples", r.samples.size()},
                 {"enrichments", r.enrichments}};
  auto trm = nlohmann::json::array();
  for (const auto& t : r.trm)
    trm.push_back({{"confidence", t.confidence},
                   {"mean", num(t.mean)},
                   {"trm", num(t.trm)},
                   {"atc", num(t.atc)}});
  j["trm"] = trm;
  if (r.method == "lra")
    j["model"] = {{"rank", r.rank},
                  {"degrees", r.degrees},
                  {"coefficient_count", r.coefficient_count},
                  {"validation_error", num(r.validation_error)},
                  {"error_trajectory", r.error_trajectory}};
  j["binding_cases"] = r.binding_cases;
  j["warnings"] = r.warnings;
  return j;
}

inline std::string cases_csv(const std::vector<AtcCaseResult>& cases)
{
  using detail::g17;
  std::string s = "case,outage,lambda_voltage_mw,lambda_thermal_mw,lambda_collapse_mw,"
                  "lambda_generator_mw,overall_mw,binding_class,binding_facility\n";
  for (const auto& c : cases)
    s += std::to_string(c.case_index) + "," + c.case_label + "," + g17(c.lambda_voltage) + "," +
         g17(c.lambda_thermal) + "," + g17(c.lambda_collapse) + "," + g17(c.lambda_generator) +
         "," + g17(c.overall) + "," + to_string(c.binding_class) + "," + c.binding_facility + "\n";
  return s;
}

/// Writes summary.json, pdf.csv, histogram.csv, cdf.csv, trm.csv, cases.csv
/// (and model.json for surrogate runs) into `dir`.
inline void emit_report(const PatcReport& r, const std::filesystem::path& dir)
{
  using detail::g17;
  std::filesystem::create_directories(dir);
  detail::write_file(dir / "summary.json", summary_json(r).dump(2) + "\n");
  detail::write_file(dir / "pdf.csv",
                     detail::curve_csv("value_mw", "density", kernel_density(r.samples)));
  detail::write_file(dir / "histogram.csv",
                     detail::curve_csv("bin_centre_mw", "density", histogram(r.samples)));
  detail::write_file(dir / "cdf.csv",
                     detail::curve_csv("value_mw", "cumulative_probability", step_cdf(r.samples)));
  std::string trm = "confidence,mean_mw,trm_mw,atc_mw\n";
  for (const auto& t : r.trm)
    trm += g17(t.confidence) + "," + g17(t.mean) + "," + g17(t.trm) + "," + g17(t.atc) + "\n";
  detail::write_file(dir / "trm.csv", trm);
  detail::write_file(dir / "cases.csv", cases_csv(r.cases));
  if (!r.model_json.empty())
    detail::write_file(dir / "model.json", r.model_json + "\n");
}

/// Reads a step CDF written by `emit_report`.
inline Curve read_cdf_csv(const std::filesystem::path& p)
{
  std::ifstream f(p);
  if (!f)
    throw std::runtime_error("cannot open " + p.string());
  Curve c;
  std::string line;
  std::getline(f, line);
  std::size_t n = 1;
  while (std::getline(f, line)) {
    ++n;
    if (line.empty())
      continue;
    const auto comma = line.find(',');
    if (comma == std::string::npos)
      throw ParseError(n, "expected two columns in " + p.string());
    try {
      c.x.push_back(std::stod(line.substr(0, comma)));
      c.y.push_back(std::stod(line.substr(comma + 1)));
    } catch (const std::exception&) {
      throw ParseError(n, "bad number in " + p.string());
    }
  }
  return c;
}

} // namespace patc
