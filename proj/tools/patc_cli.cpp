// patc: deterministic and probabilistic transfer capability from the command line.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "patc/patc.hpp"

namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p)
{
  std::ifstream f(p, std::ios::binary);
  if (!f)
    throw std::runtime_error("cannot open " + p.string());
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

struct Loaded
{
  patc::Scenario scenario;
  patc::Problem problem;
};

Loaded load(const std::string& case_path, const std::string& scenario_path)
{
  Loaded l;
  l.scenario = patc::parse_scenario(slurp(scenario_path));
  const auto net = patc::parse_case(slurp(case_path), patc::parse_options(l.scenario));
  for (const auto& w : net.warnings)
    std::cerr << "warning: " << w << "\n";
  l.problem = patc::build_problem(net, l.scenario);
  for (const auto& w : l.problem.warnings)
    std::cerr << "warning: " << w << "\n";
  return l;
}

void print_cases(const std::vector<patc::AtcCaseResult>& cases)
{
  std::printf("%-5s %-8s %12s %12s %12s %12s %12s  %s\n", "case", "outage", "voltage", "thermal",
              "collapse", "generator", "overall", "binding");
  for (const auto& c : cases)
    std::printf("%-5zu %-8s %12.4f %12.4f %12.4f %12.4f %12.4f  %s %s\n", c.case_index,
                c.case_label.c_str(), c.lambda_voltage, c.lambda_thermal, c.lambda_collapse,
                c.lambda_generator, c.overall, patc::to_string(c.binding_class),
                c.binding_facility.c_str());
}

void print_report(const patc::PatcReport& r, const fs::path& out)
{
  std::printf("method            %s\n", r.method.c_str());
  std::printf("deterministic ATC %.4f MW\n", r.deterministic_atc);
  if (r.method == "lra") {
    std::printf("analytic mean     %.4f MW\n", r.mean_analytic);
    std::printf("analytic std      %.4f MW\n", r.std_analytic);
    std::printf("rank / degree     %d / %d (%zu coefficients, validation error %.3g)\n", r.rank,
                r.degrees.empty() ? 0 : r.degrees.front(), r.coefficient_count,
                r.validation_error);
  }
  std::printf("sample mean       %.4f MW\n", r.mean_empirical);
  std::printf("sample std        %.4f MW\n", r.std_empirical);
  std::printf("ATC solves        %zu (%zu failed)\n", r.atc_solves, r.failed_solves);
  std::printf("%-10s %10s %10s %10s\n", "p_cl", "mean", "TRM", "ATC");
  for (const auto& t : r.trm)
    std::printf("%-10.3f %10.4f %10.4f %10.4f\n", t.confidence, t.mean, t.trm, t.atc);
  std::printf("wall clock        %.2f s\n", r.seconds);
  std::printf("report            %s\n", out.string().c_str());
}

fs::path report_dir(const std::string& arg)
{
  fs::path p(arg);
  return fs::is_directory(p) ? p : p.parent_path();
}

} // namespace

int main(int argc, char** argv)
{
  CLI::App app{"Probabilistic available transfer capability"};
  app.require_subcommand(1);

  std::string case_path;
  std::string scenario_path;
  std::string out_dir;
  std::size_t mc = 0;
  std::size_t ms = 0;
  std::size_t samples = 0;
  std::uint64_t seed = 0;
  unsigned threads = 0;

  auto* det = app.add_subcommand("det", "deterministic ATC per case");
  det->add_option("case", case_path, "MATPOWER case file")->required()->check(CLI::ExistingFile);
  det->add_option("scenario", scenario_path, "scenario JSON")->required()->check(CLI::ExistingFile);
  det->add_option("--out", out_dir, "write cases.csv here");

  auto* lra = app.add_subcommand("lra", "low-rank surrogate PATC");
  lra->add_option("case", case_path, "MATPOWER case file")->required()->check(CLI::ExistingFile);
  lra->add_option("scenario", scenario_path, "scenario JSON")->required()->check(CLI::ExistingFile);
  lra->add_option("--mc", mc, "experimental design size");
  lra->add_option("--ms", ms, "surrogate samples");
  lra->add_option("--seed", seed, "design seed");
  lra->add_option("--out", out_dir, "report directory")->default_val("patc-lra");
  lra->add_option("--threads", threads, "worker threads");

  auto* mcs = app.add_subcommand("mcs", "Latin hypercube Monte Carlo PATC");
  mcs->add_option("case", case_path, "MATPOWER case file")->required()->check(CLI::ExistingFile);
  mcs->add_option("scenario", scenario_path, "scenario JSON")->required()->check(CLI::ExistingFile);
  mcs->add_option("--samples", samples, "sample count");
  mcs->add_option("--seed", seed, "sampling seed");
  mcs->add_option("--out", out_dir, "report directory")->default_val("patc-mcs");
  mcs->add_option("--threads", threads, "worker threads");

  std::string lra_report;
  std::string mcs_report;
  auto* cmp = app.add_subcommand("compare", "compare a surrogate report with a Monte Carlo one");
  cmp->add_option("lra-report", lra_report, "report directory or its summary.json")->required();
  cmp->add_option("mcs-report", mcs_report, "report directory or its summary.json")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (det->parsed()) {
      auto l = load(case_path, scenario_path);
      const auto r = patc::deterministic_atc(l.problem);
      print_cases(r.cases);
      std::printf("overall ATC %.4f MW (case %zu)\n", r.overall, r.binding_case);
      if (!out_dir.empty()) {
        fs::create_directories(out_dir);
        std::ofstream(fs::path(out_dir) / "cases.csv") << patc::cases_csv(r.cases);
      }
      return 0;
    }
    if (lra->parsed() || mcs->parsed()) {
      auto l = load(case_path, scenario_path);
      auto rs = patc::RunSettings::from(l.scenario);
      if (threads)
        rs.threads = threads;
      if (seed) {
        rs.seeds.design = seed;
        rs.seeds.surrogate = seed + 1;
        rs.seeds.mcs = seed;
      }
      patc::PatcReport report;
      if (lra->parsed()) {
        if (mc)
          rs.ed_size = mc;
        if (ms)
          rs.surrogate_samples = ms;
        report = patc::run_lra_patc(l.problem, rs).report;
      } else {
        report = patc::run_mcs_patc(l.problem, samples ? samples : rs.mcs_samples, rs.seeds.mcs, rs);
      }
      patc::emit_report(report, out_dir);
      std::ofstream(fs::path(out_dir) / "timing.json")
        << nlohmann::json{{"seconds", report.seconds}}.dump() << "\n";
      print_report(report, out_dir);
      return 0;
    }
    if (cmp->parsed()) {
      const auto a = report_dir(lra_report);
      const auto b = report_dir(mcs_report);
      const auto sa = nlohmann::json::parse(slurp(a / "summary.json"));
      const auto sb = nlohmann::json::parse(slurp(b / "summary.json"));
      const auto ks = patc::ks_distance(patc::read_cdf_csv(a / "cdf.csv"),
                                        patc::read_cdf_csv(b / "cdf.csv"));
      auto stat = [](const nlohmann::json& s, const char* which, const char* key) {
        const auto& v = s.at("moments").at(which).at(key);
        return v.is_null() ? std::numeric_limits<double>::quiet_NaN() : v.get<double>();
      };
      const double ref_mean = stat(sb, "empirical", "mean");
      const double ref_std = stat(sb, "empirical", "std");
      nlohmann::json out;
      out["reference"] = {{"mean", ref_mean}, {"std", ref_std}};
      for (const char* which : {"analytic", "empirical"}) {
        const double m = stat(sa, which, "mean");
        const double s = stat(sa, which, "std");
        if (std::isnan(m))
          continue;
        out[which] = {{"mean", m},
                      {"std", s},
                      {"mean_delta_percent", 100.0 * (m - ref_mean) / ref_mean},
                      {"std_delta_percent", 100.0 * (s - ref_std) / ref_std}};
      }
      out["ks_distance"] = ks;
      out["atc_solves"] = {{"surrogate", sa.at("counts").at("atc_solves")},
                           {"reference", sb.at("counts").at("atc_solves")}};
      std::cout << out.dump(2) << "\n";
      return 0;
    }
  } catch (const patc::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  }
  return 0;
}
