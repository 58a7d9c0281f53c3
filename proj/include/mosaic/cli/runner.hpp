#pragma once

#include "mosaic/cli/config.hpp"
#include "mosaic/protocol/schedule.hpp"

#include <json.hpp>

#include <filesystem>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

namespace mosaic::cli {

/// Environment variable naming the root under which relative output
/// directories are placed.
inline constexpr const char* kOutRootEnv = "MOSAIC_OUT_ROOT";

/// `out` wins when given; otherwise config.output_dir, placed under
/// $MOSAIC_OUT_ROOT when it is relative and the variable is set.
std::filesystem::path resolve_output_dir(const ExperimentConfig& config, const std::optional<std::string>& out);

std::string code_version();

/// Config snapshot, code version, stage wall times and artifact paths of one
/// run. Written to disk before the first stage and rewritten on every change
/// until finish(); afterwards it no longer changes.
class RunManifest {
 public:
  RunManifest(std::filesystem::path dir, const ExperimentConfig& config, std::string command);

  /// Records a file relative to the run directory.
  void add_artifact(const std::string& relative);
  void add_stage(const std::string& name, double seconds);
  void set(const std::string& key, nlohmann::json value);
  /// Marks the run complete (or failed), checks every artifact exists and
  /// writes the final manifest. Returns the artifacts that are missing.
  std::vector<std::string> finish(const std::string& status);

  const std::filesystem::path& dir() const { return dir_; }
  nlohmann::json snapshot() const;

 private:
  void write_locked() const;

  std::filesystem::path dir_;
  nlohmann::json doc_;
  std::vector<std::string> artifacts_;
  bool finished_ = false;
  mutable std::mutex mutex_;
};

struct RunOptions {
  std::size_t workers = 1;
  std::optional<std::string> out;
};

struct RunOutcome {
  std::filesystem::path dir;
  protocol::ScheduleResult result;
};

/// metrics.csv contents: `round,phase,epoch,g_acc,l_acc,mean_loss,loss_0..`.
/// Warm-up rounds, one row per distillation epoch (g_acc on the last), then
/// fine-tune rounds. Numbers print with %.17g; missing values stay empty.
/// Wall times are left out so the file is reproducible byte for byte.
std::string format_metrics_csv(const protocol::ScheduleResult& result, std::size_t clients, std::size_t t1);

/// Runs the full schedule and writes metrics.csv, events.jsonl,
/// checkpoints/*.params, partition.csv, generator histories, prototypes.csv,
/// summary.json and manifest.json into the output directory. Errors
/// propagate after the manifest is closed with status "failed".
RunOutcome run_experiment(const ExperimentConfig& config, const RunOptions& options);

struct ResumeOutcome {
  std::filesystem::path dir;
  double baseline_accuracy = 0.0;
  double distilled_accuracy = 0.0;
  distill::DistillResult distill;
};

/// Rebuilds the one-shot outputs from the checkpoints of an earlier run in the
/// output directory and distills them into its baseline global model again,
/// possibly with a different teacher or distillation settings. Writes
/// checkpoints/global_distilled_resume.params and distill_only.json.
ResumeOutcome distill_only(const ExperimentConfig& config, const RunOptions& options);

/// Partition statistics for the config's data and seed, as JSON.
nlohmann::json partition_report(const ExperimentConfig& config);

}  // namespace mosaic::cli
