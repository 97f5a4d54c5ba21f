// ngd: list, run and verify the descent experiments.

#include <CLI11.hpp>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include "ngd/ngd.hpp"

namespace {

constexpr int kExitUsage = 2;
constexpr int kExitVerificationFailed = 3;

std::string default_output_dir() {
  const char* dir = std::getenv("NGD_OUTPUT_DIR");
  return dir && *dir ? dir : ".";
}

ngd::EstimatorKind parse_estimator_name(const std::string& name) {
  for (ngd::EstimatorKind k : {ngd::EstimatorKind::NonProjection, ngd::EstimatorKind::Quasi, ngd::EstimatorKind::LeastSquares,
                               ngd::EstimatorKind::LeastSquaresVolume, ngd::EstimatorKind::Debiased})
    if (ngd::to_string(k) == name) return k;
  throw ngd::InvalidArgument("unknown estimator: " + name +
                             " (expected non-projection, quasi, least-squares, least-squares-volume or debiased)");
}

void print_summary(const ngd::RunArchive& archive) {
  for (const auto& [k, v] : ngd::summary_fields(archive.summary)) std::cout << k << ": " << v << '\n';
  for (const auto& e : archive.events) std::cout << "event: " << e << '\n';
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Natural gradient descent with optimal sampling: experiments and verification"};
  app.require_subcommand(1);

  auto* list = app.add_subcommand("list", "List registered experiments");

  auto* run = app.add_subcommand("run", "Run a registered experiment and write its archive");
  std::string run_name, out_path;
  int replications = 0, threads = ngd::default_threads();
  std::uint64_t seed = 0;
  bool seed_given = false;
  std::vector<std::string> sets;
  run->add_option("name", run_name, "Experiment name")->required();
  run->add_option("--replications", replications, "Number of replications")->check(CLI::PositiveNumber);
  auto* seed_opt = run->add_option("--seed", seed, "Master seed");
  run->add_option("--out", out_path, "Archive path (default: $NGD_OUTPUT_DIR/<name>.csv)");
  run->add_option("--set", sets, "Override key=value (repeatable)");
  run->add_option("--threads", threads, "Worker threads")->check(CLI::PositiveNumber);

  auto* verify = app.add_subcommand("verify", "Monte-Carlo check of an estimator's bias/variance constants");
  std::string estimator_name;
  ngd::VerifyOptions vopt;
  verify->add_option("estimator", estimator_name, "non-projection | quasi | least-squares | least-squares-volume | debiased")
      ->required();
  verify->add_option("--d", vopt.d, "Dimension of the Legendre space")->check(CLI::PositiveNumber);
  verify->add_option("--n", vopt.n, "Batch size")->check(CLI::PositiveNumber);
  verify->add_option("--replications", vopt.replications, "Monte-Carlo replications");
  verify->add_option("--seed", vopt.seed, "Seed");
  verify->add_option("--delta", vopt.delta, "Stability threshold of conditioned sampling");
  verify->add_flag("--skewed", vopt.skewed_system, "Non-projection on the system {1, 1+x}");

  auto* rate = app.add_subcommand("rate", "Fit the log-log slope of the mean loss gap of an archive");
  std::string archive_path, window;
  rate->add_option("archive", archive_path, "Archive path")->required();
  rate->add_option("--window", window, "Window a:b of steps")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitUsage;
  }
  seed_given = seed_opt->count() > 0;

  try {
    if (list->parsed()) {
      for (const auto& s : ngd::registry())
        std::cout << s.name << "\t" << s.description << " [T=" << s.config.T << ", replications=" << s.replications << "]\n";
      return 0;
    }

    if (run->parsed()) {
      ngd::ExperimentSpec spec = ngd::find_experiment(run_name);
      if (replications > 0) spec.replications = replications;
      if (seed_given) spec.master_seed = seed;
      for (const auto& s : sets) ngd::apply_override(spec, s);
      if (out_path.empty()) out_path = (std::filesystem::path(default_output_dir()) / (spec.name + ".csv")).string();
      const ngd::RunArchive archive = ngd::run_experiment(spec, threads);
      ngd::save_archive(out_path, archive);
      std::cout << "archive: " << out_path << '\n';
      print_summary(archive);
      return 0;
    }

    if (verify->parsed()) {
      vopt.kind = parse_estimator_name(estimator_name);
      const ngd::VerifyReport report = ngd::verify_constants(vopt);
      const auto& c = report.constants;
      std::printf("estimator %s d=%d n=%d replications=%d p_stable=%.6g k=%.6g\n", estimator_name.c_str(),
                  vopt.d, vopt.n, vopt.replications, report.p_stable, report.k);
      std::printf("constants c_bias1=%.6g c_bias2=%.6g c_var1=%.6g c_var2=%.6g\n", c.c_bias1, c.c_bias2, c.c_var1, c.c_var2);
      for (const auto& check : report.checks) {
        const char* rel = check.relation == ngd::VerifyCheck::Relation::AtLeast  ? ">="
                          : check.relation == ngd::VerifyCheck::Relation::AtMost ? "<="
                                                                                 : "==";
        std::printf("%s  %-40s %.10g %s %.10g (se %.3g, margin %g se)\n", check.pass ? "PASS" : "FAIL", check.label.c_str(),
                    check.estimate, rel, check.reference, check.standard_error, check.margin_se);
      }
      std::printf("%s\n", report.passed() ? "verification passed" : "verification FAILED");
      return report.passed() ? 0 : kExitVerificationFailed;
    }

    if (rate->parsed()) {
      const auto colon = window.find(':');
      if (colon == std::string::npos) throw ngd::InvalidArgument("window must be a:b");
      const int a = std::stoi(window.substr(0, colon)), b = std::stoi(window.substr(colon + 1));
      const ngd::RunArchive archive = ngd::load_archive(archive_path);
      const ngd::RateFit fit = ngd::fit_rate(archive, a, b);
      std::printf("slope: %.10g\nfirst_half_slope: %.10g\nsecond_half_slope: %.10g\nsuper_algebraic: %s\npoints: %d\n",
                  fit.slope, fit.first_half_slope, fit.second_half_slope, fit.super_algebraic ? "true" : "false",
                  fit.points);
      return 0;
    }
  } catch (const ngd::InvalidArgument& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return kExitUsage;
}
