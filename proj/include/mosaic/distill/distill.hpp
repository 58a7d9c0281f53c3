#pragma once

#include "mosaic/core/rng.hpp"
#include "mosaic/models/zoo.hpp"
#include "mosaic/moe/experts.hpp"
#include "mosaic/nn/losses.hpp"

#include <functional>
#include <vector>

namespace mosaic::distill {

struct DistillConfig {
  std::size_t epochs = 10;
  std::size_t steps_per_epoch = 20;
  std::size_t batch = 64;
  double lr = 0.01;
  double momentum = 0.9;
  double lambda_soft = 0.8;
  double lambda_hard = 0.2;
  /// Softening temperature T; the KL term is scaled by T² so gradients keep
  /// their magnitude. T = 1 leaves the loss as plain KL.
  double temperature = 1.0;
  /// Keep the student's BN running statistics (from real client data) and
  /// run it in eval mode; otherwise BN uses synthetic batch statistics.
  bool freeze_bn = true;
  moe::TeacherKind teacher = moe::TeacherKind::meta_moe;

  /// Throws ConfigError unless λ_soft, λ_hard ≥ 0 with a positive sum and T > 0.
  void validate() const;
};

/// λ_soft·KL(p_T ‖ p_S) + λ_hard·CE(student, argmax teacher); gradient wrt the
/// student logits, teacher constant.
nn::LossResult kd_loss(const Matrix& student_logits, const Matrix& teacher_logits, const DistillConfig& config);

/// Builds the teacher of the requested kind. Vanilla uses `client_models`
/// (full width, same spec as the experts). The referenced objects must
/// outlive the returned function.
moe::Teacher make_teacher(moe::TeacherKind kind, const moe::ExpertSet& experts,
                          const std::vector<const nn::ParamSet*>& client_models);

struct DistillResult {
  /// Mean loss of every epoch.
  std::vector<double> epoch_loss;
  /// Loss of every step.
  std::vector<double> step_loss;
};

/// Draws one batch of distillation inputs.
using Sampler = std::function<Matrix(std::size_t batch, Rng& rng)>;

/// config.epochs × config.steps_per_epoch SGD steps on kd_loss over batches
/// from `sampler`.
DistillResult distill_with_sampler(nn::ParamSet& student, const nn::ModelSpec& spec, const moe::Teacher& teacher,
                                   const Sampler& sampler, const DistillConfig& config, Rng rng);

/// config.epochs × config.steps_per_epoch steps; each draws an ensemble batch,
/// queries the teacher and takes one SGD step on kd_loss. Touches no dataset.
DistillResult distill_student(nn::ParamSet& student, const nn::ModelSpec& spec, const moe::Teacher& teacher,
                              const std::vector<const models::Model*>& generators,
                              const std::vector<std::size_t>& generator_ids, const DistillConfig& config, Rng rng);

}  // namespace mosaic::distill
