#pragma once

#include <json.hpp>

#include <string>
#include <vector>

namespace mosaic::verify {

struct CheckResult {
  std::string name;
  bool pass = false;
  nlohmann::json detail;
};

struct SuiteReport {
  std::string suite;
  std::vector<CheckResult> checks;
  double seconds = 0.0;

  bool pass() const;
};

/// gradcheck, aggregation, theorem, losses.
const std::vector<std::string>& suite_names();
bool is_suite(const std::string& name);

/// Runs one suite, or every suite for "all". Throws ConfigError for an
/// unknown name.
std::vector<SuiteReport> run_suites(const std::string& name);

SuiteReport gradcheck_suite();
/// `seeds` randomized 3-client instances on a width-4 model.
SuiteReport aggregation_suite(std::size_t seeds = 100);
/// Runs at 10⁶ Monte-Carlo samples and 1000 bias trials by default.
SuiteReport theorem_suite(std::size_t samples = 1000000, std::size_t trials = 1000);
SuiteReport losses_suite();

nlohmann::json to_json(const std::vector<SuiteReport>& reports);

}  // namespace mosaic::verify
