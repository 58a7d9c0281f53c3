#pragma once

#include "mosaic/cli/config.hpp"
#include "mosaic/data/dataset.hpp"
#include "mosaic/data/partition.hpp"
#include "mosaic/distill/distill.hpp"
#include "mosaic/genopt/generator.hpp"
#include "mosaic/moe/experts.hpp"
#include "mosaic/protocol/client.hpp"

#include <json.hpp>

#include <functional>
#include <string>
#include <vector>

namespace mosaic::protocol {

struct RoundMetrics {
  std::size_t round = 0;
  std::string phase;
  double global_accuracy = 0.0;
  double local_accuracy = 0.0;
  /// Task loss per client id; NaN for clients not sampled this round.
  std::vector<double> client_loss;
  double wall_seconds = 0.0;
};

struct OneShot;
struct Federation;

/// Hooks a caller can attach to a schedule. All are optional.
struct ScheduleHooks {
  std::function<void(const Federation&)> setup;
  std::function<void(const OneShot&)> one_shot;
  std::function<void(const nlohmann::json&)> event;
  std::function<void(const std::string& name, const nn::ModelSpec&, const nn::ParamSet&)> checkpoint;
  std::function<void(const RoundMetrics&)> round;
};

/// Everything a running simulation holds.
struct Federation {
  cli::ExperimentConfig config;
  data::Dataset train;
  data::Dataset test;
  data::Partition partition;
  std::vector<ClientState> clients;
  nn::ModelSpec global_spec;
  nn::ParamSet global;
  Rng root{0};
  std::size_t workers = 1;
  ScheduleHooks hooks;
};

/// Builds data, partition, clients (with width budgets) and the initial
/// global model from the config.
Federation setup_federation(const cli::ExperimentConfig& config, std::size_t workers = 1, ScheduleHooks hooks = {});

/// One round with 0-based index `round`: sample, local updates (parallel over
/// clients, bit-identical for any worker count), aggregation per scheme and
/// evaluation. Throws AuditError if the test split is read before evaluation.
RoundMetrics run_round(Federation& fed, std::size_t round, double lr, const std::string& phase);

/// Output of the one-shot stage.
struct OneShot {
  std::vector<models::Model> generators;
  std::vector<std::size_t> generator_ids;
  std::vector<std::vector<genopt::EpochLosses>> histories;
  /// Client models at full width (global values outside their masks).
  std::vector<nn::ParamSet> client_full;
  moe::ExpertSet experts;
  std::vector<moe::Prototype> prototypes;
  std::vector<double> meta_loss;

  std::vector<const models::Model*> generator_ptrs() const;
  std::vector<const nn::ParamSet*> client_ptrs() const;
};

/// Generator training on every client (uploaded once each), class-wise
/// experts, prototypes and meta training.
OneShot one_shot_stage(Federation& fed, std::size_t round);

/// Value range of the training inputs, used for the generators' output squash.
std::pair<double, double> data_range(const data::Dataset& train);

/// Teacher of the configured kind over the one-shot outputs.
moe::Teacher teacher_for(const OneShot& shot, moe::TeacherKind kind);

/// Distills the teacher into the global model. Throws AuditError if any
/// dataset is read meanwhile.
distill::DistillResult distill_stage(Federation& fed, const OneShot& shot, const distill::DistillConfig& config);

struct ScheduleResult {
  std::vector<RoundMetrics> rounds;
  distill::DistillResult distill;
  bool distilled = false;
  double baseline_accuracy = 0.0;
  double distilled_accuracy = 0.0;
  double final_accuracy = 0.0;
  nn::ParamSet final_global;
  nn::ModelSpec global_spec;
  /// Wall time of every stage, in execution order.
  std::vector<std::pair<std::string, double>> stage_seconds;
};

/// T₁ warm-up rounds, then (when distillation is enabled) the one-shot
/// stage and distillation, then T₂ fine-tune rounds at lr·finetune_lr_factor.
ScheduleResult run_schedule(const cli::ExperimentConfig& config, std::size_t workers = 1, ScheduleHooks hooks = {});

}  // namespace mosaic::protocol
