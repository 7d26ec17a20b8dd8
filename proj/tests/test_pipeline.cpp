#include <atomic>
#include <cmath>
#include <filesystem>
#include <random>

#include <gtest/gtest.h>

#include "support.hpp"

using namespace patc;

namespace {

std::vector<double> draw(std::size_t n, std::uint64_t seed, int shape)
{
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g(80.0, 15.0);
  std::gamma_distribution<double> gam(2.0, 6.0);
  std::vector<double> x(n);
  for (auto& v : x)
    v = shape == 0 ? g(rng) : shape == 1 ? 120.0 - gam(rng) : std::round(g(rng));
  return x;
}

/// Two-sample KS statistic by direct comparison at every pooled value.
double ks_oracle(std::vector<double> a, std::vector<double> b)
{
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  std::vector<double> pooled = a;
  pooled.insert(pooled.end(), b.begin(), b.end());
  double d = 0.0;
  for (double x : pooled) {
    const double fa = static_cast<double>(std::upper_bound(a.begin(), a.end(), x) - a.begin()) / a.size();
    const double fb = static_cast<double>(std::upper_bound(b.begin(), b.end(), x) - b.begin()) / b.size();
    d = std::max(d, std::abs(fa - fb));
  }
  return d;
}

std::filesystem::path scratch_dir(const std::string& name)
{
  const auto p = std::filesystem::temp_directory_path() / ("patc_test_" + name);
  std::filesystem::remove_all(p);
  return p;
}

std::string read_all(const std::filesystem::path& p)
{
  return test::slurp(p.string());
}

Problem small_rts_problem()
{
  auto pb = test::load_scenario("case24_ieee_rts.m", "rts24_scenario.json").problem;
  return pb;
}

} // namespace

// ---------------------------------------------------------------------------
// Statistics

TEST(Statistics, QuantileInterpolatesBetweenOrderStatistics)
{
  const std::vector<double> s = {1.0, 2.0, 3.0, 4.0};
  EXPECT_DOUBLE_EQ(sorted_quantile(s, 0.5), 2.5);
  EXPECT_DOUBLE_EQ(sorted_quantile(s, 0.05), 1.15);
  EXPECT_DOUBLE_EQ(sorted_quantile(s, 0.0), 1.0);
  EXPECT_DOUBLE_EQ(sorted_quantile(s, 1.0), 4.0);
  EXPECT_THROW(sorted_quantile({}, 0.5), ValidationError);
}

TEST(Statistics, TrmIdentityAndCoverageHoldOnAnySample)
{
  for (int shape = 0; shape < 3; ++shape)
    for (std::size_t m : {50u, 2000u, 20000u}) {
      const auto x = draw(m, 100 + m, shape);
      for (double p : {0.99, 0.98, 0.95, 0.9, 0.8}) {
        const auto row = trm_at_confidence(x, p);
        EXPECT_EQ(row.atc, row.mean - row.trm);
        EXPECT_DOUBLE_EQ(row.mean, sample_mean(x));
        if (shape == 2)
          continue; // heavy ties make coverage jump at the quantile
        const double covered =
          static_cast<double>(std::count_if(x.begin(), x.end(), [&](double v) { return v >= row.atc; })) /
          static_cast<double>(m);
        EXPECT_LE(std::abs(covered - p), 1.0 / std::sqrt(static_cast<double>(m)))
          << "shape " << shape << " m " << m << " p " << p;
      }
    }
}

TEST(Statistics, PublishedRtsQuantilesGiveThePublishedMargin)
{
  // 21 samples: the 5% quantile is the second order statistic exactly, and
  // the last value is chosen so that the mean is the published one.
  std::vector<double> x = {50.0, 61.8815};
  for (int k = 0; k < 18; ++k)
    x.push_back(70.0 + k);
  double rest = 0.0;
  for (double v : x)
    rest += v;
  x.push_back(83.0312 * 21.0 - rest);
  const auto row = trm_at_confidence(x, 0.95);
  EXPECT_NEAR(row.mean, 83.0312, 1e-12);
  EXPECT_NEAR(row.atc, 61.8815, 1e-12);
  EXPECT_NEAR(row.trm, 21.1497, 1e-12);
  EXPECT_EQ(std::round((83.0312 - 61.8815) * 1e4) / 1e4, 21.1497);
}

TEST(Statistics, PointMassHasNoMargin)
{
  const std::vector<double> x(100, 42.5);
  for (double p : {0.99, 0.5, 0.01}) {
    const auto row = trm_at_confidence(x, p);
    EXPECT_EQ(row.trm, 0.0);
    EXPECT_EQ(row.atc, 42.5);
  }
  const auto c = step_cdf(x);
  ASSERT_EQ(c.x.size(), 2u);
  EXPECT_EQ(c.y[0], 0.0);
  EXPECT_EQ(c.y[1], 1.0);
  EXPECT_TRUE(kernel_density(x).x.empty());
  EXPECT_THROW(trm_at_confidence(x, 1.0), ValidationError);
}

TEST(Statistics, SampleMomentsOfTwoPoints)
{
  EXPECT_DOUBLE_EQ(sample_mean({3.0, 7.0}), 5.0);
  EXPECT_DOUBLE_EQ(sample_std({3.0, 7.0}), std::sqrt(8.0));
  EXPECT_EQ(sample_std({3.0}), 0.0);
}

TEST(Statistics, StepCdfIsMonotoneFromZeroToOne)
{
  const auto x = draw(500, 4, 2); // rounded, so ties occur
  const auto c = step_cdf(x);
  EXPECT_EQ(c.y.front(), 0.0);
  EXPECT_EQ(c.y.back(), 1.0);
  for (std::size_t k = 1; k < c.y.size(); ++k) {
    EXPECT_GE(c.y[k], c.y[k - 1]);
    EXPECT_GE(c.x[k], c.x[k - 1]);
  }
  std::vector<double> sorted = x;
  std::sort(sorted.begin(), sorted.end());
  for (std::size_t k = 1; k < c.x.size(); k += 2) {
    const auto below = std::upper_bound(sorted.begin(), sorted.end(), c.x[k]) - sorted.begin();
    EXPECT_DOUBLE_EQ(c.y[k], static_cast<double>(below) / 500.0);
  }
}

TEST(Statistics, KsDistanceMatchesDirectComparison)
{
  for (int shape = 0; shape < 3; ++shape) {
    const auto a = draw(700, 10 + shape, shape);
    const auto b = draw(450, 20 + shape, (shape + 1) % 3);
    EXPECT_DOUBLE_EQ(ks_distance(a, b), ks_oracle(a, b));
  }
  const auto a = draw(300, 3, 0);
  EXPECT_EQ(ks_distance(a, a), 0.0);
  EXPECT_EQ(ks_distance(std::vector<double>{1.0, 2.0}, std::vector<double>{3.0, 4.0}), 1.0);
}

TEST(Statistics, DensityEstimatesIntegrateToOne)
{
  const auto x = draw(2000, 8, 1);
  const auto kde = kernel_density(x);
  ASSERT_EQ(kde.x.size(), 200u);
  double area = 0.0;
  for (std::size_t k = 1; k < kde.x.size(); ++k)
    area += 0.5 * (kde.y[k] + kde.y[k - 1]) * (kde.x[k] - kde.x[k - 1]);
  EXPECT_NEAR(area, 1.0, 1e-3);
  const auto h = histogram(x);
  ASSERT_EQ(h.x.size(), 50u);
  double bars = 0.0;
  for (double y : h.y)
    bars += y * (h.x[1] - h.x[0]);
  EXPECT_NEAR(bars, 1.0, 1e-12);
}

// ---------------------------------------------------------------------------
// Workers

TEST(Workers, ParallelForVisitsEveryIndexOnce)
{
  std::vector<std::atomic<int>> hits(1000);
  parallel_for(hits.size(), 4, [&](std::size_t i) { hits[i]++; });
  for (const auto& h : hits)
    EXPECT_EQ(h.load(), 1);
}

TEST(Workers, FirstFailureByIndexIsRethrown)
{
  try {
    parallel_for(100, 4, [](std::size_t i) {
      if (i == 17 || i == 60)
        throw ValidationError("index " + std::to_string(i));
    });
    FAIL() << "expected an exception";
  } catch (const ValidationError& e) {
    EXPECT_NE(std::string(e.what()).find("index 17"), std::string::npos);
  }
}

TEST(Workers, FailureFractionIsBounded)
{
  std::vector<PatcSample> s(200);
  for (auto& x : s)
    x.ok = true;
  s[3].ok = false;
  s[9].ok = false;
  EXPECT_EQ(check_failures(s), 2u);
  s[11].ok = false;
  EXPECT_THROW(check_failures(s), ConvergenceError);
}

// ---------------------------------------------------------------------------
// Reports

TEST(Reports, FilesRoundTripAndAreByteStable)
{
  PatcReport r;
  r.method = "mcs";
  r.scenario_hash = "0123456789abcdef";
  r.samples = draw(300, 12, 0);
  detail::fill_statistics(r, {0.99, 0.95});
  r.mean_analytic = 1.0 / 3.0;
  r.std_analytic = std::sqrt(2.0);
  r.deterministic_atc = 82.76650000000001;
  const auto a = scratch_dir("report_a");
  const auto b = scratch_dir("report_b");
  emit_report(r, a);
  emit_report(r, b);
  for (const char* f : {"summary.json", "pdf.csv", "cdf.csv", "trm.csv", "cases.csv", "histogram.csv"}) {
    ASSERT_TRUE(std::filesystem::exists(a / f)) << f;
    EXPECT_EQ(read_all(a / f), read_all(b / f)) << f;
  }
  const auto j = nlohmann::json::parse(read_all(a / "summary.json"));
  EXPECT_EQ(j["moments"]["analytic"]["mean"].get<double>(), r.mean_analytic);
  EXPECT_EQ(j["moments"]["analytic"]["std"].get<double>(), r.std_analytic);
  EXPECT_EQ(j["moments"]["empirical"]["mean"].get<double>(), r.mean_empirical);
  EXPECT_EQ(j["moments"]["empirical"]["std"].get<double>(), r.std_empirical);
  EXPECT_EQ(j["deterministic_atc"].get<double>(), r.deterministic_atc);
  EXPECT_EQ(j["trm"][1]["atc"].get<double>(), r.trm[1].atc);
  const auto cdf = read_cdf_csv(a / "cdf.csv");
  const auto ref = step_cdf(r.samples);
  EXPECT_EQ(cdf.x, ref.x);
  EXPECT_EQ(cdf.y, ref.y);
  std::filesystem::remove_all(a);
  std::filesystem::remove_all(b);
}

TEST(Reports, PointMassCdfHasTwoRows)
{
  PatcReport r;
  r.method = "mcs";
  r.samples.assign(10, 5.0);
  detail::fill_statistics(r, {0.95});
  const auto d = scratch_dir("point_mass");
  emit_report(r, d);
  const auto c = read_cdf_csv(d / "cdf.csv");
  EXPECT_EQ(c.x.size(), 2u);
  std::filesystem::remove_all(d);
}

TEST(Reports, MalformedCdfIsRejected)
{
  const auto d = scratch_dir("bad_cdf");
  std::filesystem::create_directories(d);
  detail::write_file(d / "cdf.csv", "value_mw,cumulative_probability\n1.0,0.5\nnonsense\n");
  EXPECT_THROW(read_cdf_csv(d / "cdf.csv"), ParseError);
  EXPECT_THROW(read_cdf_csv(d / "missing.csv"), std::runtime_error);
  std::filesystem::remove_all(d);
}

// ---------------------------------------------------------------------------
// Runs on the 24-bus study

TEST(Runs, MonteCarloIsReproducibleAndCountsEverySolve)
{
  const auto pb = small_rts_problem();
  RunSettings serial;
  RunSettings threaded;
  threaded.threads = 3;
  const auto a = run_mcs_patc(pb, 6, 99, serial);
  const auto b = run_mcs_patc(pb, 6, 99, threaded);
  EXPECT_EQ(a.samples, b.samples);
  EXPECT_EQ(a.atc_solves, 6u);
  EXPECT_EQ(a.samples.size() + a.failed_solves, 6u);
  EXPECT_EQ(summary_json(a).dump(), summary_json(b).dump());
  const auto two = run_mcs_patc(pb, 2, 5, serial);
  ASSERT_EQ(two.samples.size(), 2u);
  EXPECT_DOUBLE_EQ(two.mean_empirical, 0.5 * (two.samples[0] + two.samples[1]));
  EXPECT_DOUBLE_EQ(two.std_empirical, std::abs(two.samples[0] - two.samples[1]) / std::sqrt(2.0));
  for (double v : a.samples)
    EXPECT_GE(v, 0.0);
  EXPECT_THROW(run_mcs_patc(pb, 1, 5, serial), ValidationError);
}

TEST(Runs, DegenerateInputsGiveAPointMass)
{
  auto pb = small_rts_problem();
  std::vector<Marginal> fixed;
  for (auto& in : pb.inputs) {
    in.marginal = Degenerate{marginal_mean(in.marginal)};
    fixed.push_back(in.marginal);
  }
  pb.nataf = fit_nataf(fixed, pb.correlation);
  RunSettings rs;
  rs.ed_size = 6;
  rs.surrogate_samples = 50;
  const auto run = run_lra_patc(pb, rs);
  const auto& r = run.report;
  EXPECT_EQ(r.atc_solves, 6u);
  EXPECT_EQ(r.std_empirical, 0.0);
  EXPECT_EQ(r.std_analytic, 0.0);
  EXPECT_DOUBLE_EQ(r.mean_empirical, r.deterministic_atc);
  for (const auto& t : r.trm)
    EXPECT_EQ(t.trm, 0.0);
  const auto mcs = run_mcs_patc(pb, 4, 1, rs);
  EXPECT_EQ(mcs.std_empirical, 0.0);
  EXPECT_EQ(mcs.mean_empirical, r.deterministic_atc);
}

TEST(Runs, SurrogateRunIsReproducible)
{
  const auto pb = small_rts_problem();
  RunSettings rs;
  rs.ed_size = 80;
  rs.surrogate_samples = 500;
  rs.ranks = {1, 2};
  rs.degrees = {1};
  rs.max_enrichments = 0;
  const auto a = run_lra_patc(pb, rs);
  rs.threads = 2;
  const auto b = run_lra_patc(pb, rs);
  EXPECT_EQ(a.report.samples, b.report.samples);
  EXPECT_EQ(a.report.model_json, b.report.model_json);
  EXPECT_EQ(a.report.atc_solves, 80u);
  EXPECT_EQ(a.report.ed_size + a.report.failed_solves, 80u);
  EXPECT_EQ(a.report.surrogate_samples, 500u);
  // Surrogate samples follow the analytic moments of the fitted model.
  const double se = a.report.std_analytic / std::sqrt(500.0);
  EXPECT_NEAR(a.report.mean_empirical, a.report.mean_analytic, 4.0 * se);
}
