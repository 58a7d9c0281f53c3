// Command-line entry point: run, verify, partition-stats, distill-only.

#include "mosaic/cli/config.hpp"
#include "mosaic/cli/runner.hpp"
#include "mosaic/core/errors.hpp"
#include "mosaic/verify/suites.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

namespace {

constexpr int kFailure = 1;
constexpr int kUsage = 2;

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  std::size_t workers = 1;
};

void add_common(CLI::App* app, Common& c, bool needs_config) {
  auto* opt = app->add_option("--config", c.config, "experiment config (TOML)");
  if (needs_config) opt->required();
  app->add_option("--seed", c.seed, "override the config's root seed");
  app->add_option("--out", c.out, "output directory (overrides the config and $MOSAIC_OUT_ROOT)");
  app->add_option("--workers", c.workers, "parallel client updates; results do not depend on it")
      ->check(CLI::PositiveNumber);
}

mosaic::cli::ExperimentConfig load(const Common& c) {
  auto config = mosaic::cli::load_config(c.config);
  if (c.seed) config.seed = *c.seed;
  config.validate();
  return config;
}

int cmd_run(const Common& c) {
  const auto outcome = mosaic::cli::run_experiment(load(c), {c.workers, c.out});
  const auto& r = outcome.result;
  std::printf("output: %s\n", outcome.dir.string().c_str());
  std::printf("baseline g_acc: %.4f\n", r.baseline_accuracy);
  if (r.distilled) std::printf("distilled g_acc: %.4f\n", r.distilled_accuracy);
  std::printf("final g_acc: %.4f\n", r.final_accuracy);
  return 0;
}

int cmd_distill_only(const Common& c) {
  const auto outcome = mosaic::cli::distill_only(load(c), {c.workers, c.out});
  std::printf("output: %s\n", outcome.dir.string().c_str());
  std::printf("baseline g_acc: %.4f\ndistilled g_acc: %.4f\n", outcome.baseline_accuracy,
              outcome.distilled_accuracy);
  return 0;
}

int cmd_partition(const Common& c) {
  std::cout << mosaic::cli::partition_report(load(c)).dump(2) << "\n";
  return 0;
}

int cmd_verify(const std::string& suite, const std::optional<std::string>& out) {
  const auto reports = mosaic::verify::run_suites(suite);
  const auto json = mosaic::verify::to_json(reports);
  const std::filesystem::path dir = out ? std::filesystem::path(*out) : std::filesystem::path(".");
  std::filesystem::create_directories(dir);
  std::ofstream(dir / "report.json") << json.dump(2) << "\n";
  bool pass = true;
  for (const auto& r : reports) {
    for (const auto& check : r.checks) {
      std::printf("%s %s/%s\n", check.pass ? "ok  " : "FAIL", r.suite.c_str(), check.name.c_str());
    }
    pass = pass && r.pass();
  }
  std::printf("%s: report written to %s\n", pass ? "all checks passed" : "failures",
              (dir / "report.json").string().c_str());
  return pass ? 0 : kFailure;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Federated data-free distillation simulator"};
  app.require_subcommand(1);

  Common run_opts, resume_opts, part_opts;
  auto* run = app.add_subcommand("run", "run the full schedule and write artifacts");
  add_common(run, run_opts, true);
  auto* resume = app.add_subcommand("distill-only", "re-run distillation from a finished run's checkpoints");
  add_common(resume, resume_opts, true);
  auto* part = app.add_subcommand("partition-stats", "print the client partition for a config");
  add_common(part, part_opts, true);

  std::string suite = "all";
  std::optional<std::string> verify_out;
  auto* verify = app.add_subcommand("verify", "run property suites and write report.json");
  verify->add_option("suite", suite, "gradcheck | aggregation | theorem | losses | all");
  verify->add_option("--out", verify_out, "directory for report.json (default: current directory)");

  CLI11_PARSE(app, argc, argv);
  try {
    if (run->parsed()) return cmd_run(run_opts);
    if (resume->parsed()) return cmd_distill_only(resume_opts);
    if (part->parsed()) return cmd_partition(part_opts);
    if (verify->parsed()) {
      if (!mosaic::verify::is_suite(suite)) {
        std::fprintf(stderr, "unknown suite '%s'\n%s", suite.c_str(), verify->help().c_str());
        return kUsage;
      }
      return cmd_verify(suite, verify_out);
    }
  } catch (const mosaic::ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return kUsage;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kFailure;
  }
  return kUsage;
}
