#include "mosaic/distill/distill.hpp"

#include "mosaic/core/errors.hpp"
#include "mosaic/genopt/generator.hpp"
#include "mosaic/nn/network.hpp"
#include "mosaic/nn/optim.hpp"

#include <numeric>

namespace mosaic::distill {

void DistillConfig::validate() const {
  if (!(lambda_soft >= 0.0) || !(lambda_hard >= 0.0) || !(lambda_soft + lambda_hard > 0.0)) {
    throw ConfigError("distillation weights must be non-negative with a positive sum");
  }
  if (!(temperature > 0.0)) throw ConfigError("distillation temperature must be positive");
}

nn::LossResult kd_loss(const Matrix& student_logits, const Matrix& teacher_logits, const DistillConfig& config) {
  config.validate();
  if (student_logits.rows() != teacher_logits.rows() || student_logits.cols() != teacher_logits.cols()) {
    throw ShapeError("student and teacher logits must have the same shape");
  }
  nn::LossResult out{0.0, Matrix::Zero(student_logits.rows(), student_logits.cols())};
  if (config.lambda_soft != 0.0) {
    const double t = config.temperature;
    if (t == 1.0) {
      const auto kl = nn::kl_divergence(student_logits, teacher_logits);
      out.value = config.lambda_soft * kl.value;
      out.grad = config.lambda_soft * kl.grad;
    } else {
      const auto kl = nn::kl_divergence(student_logits / t, teacher_logits / t);
      out.value = config.lambda_soft * t * t * kl.value;
      out.grad = (config.lambda_soft * t) * kl.grad;
    }
  }
  if (config.lambda_hard != 0.0) {
    const Labels hard = nn::argmax_rows(teacher_logits);
    const auto ce = nn::cross_entropy(student_logits, hard);
    if (config.lambda_soft != 0.0) {
      out.value += config.lambda_hard * ce.value;
      out.grad += config.lambda_hard * ce.grad;
    } else {
      out.value = config.lambda_hard * ce.value;
      out.grad = config.lambda_hard * ce.grad;
    }
  }
  return out;
}

moe::Teacher make_teacher(moe::TeacherKind kind, const moe::ExpertSet& experts,
                          const std::vector<const nn::ParamSet*>& client_models) {
  switch (kind) {
    case moe::TeacherKind::meta_moe:
      return [&experts](const Matrix& x) { return moe::meta_forward(experts, x, moe::MetaMode::raw_input); };
    case moe::TeacherKind::classwise_uniform:
      return [&experts](const Matrix& x) { return moe::classwise_uniform_forward(experts, x); };
    case moe::TeacherKind::vanilla:
      if (client_models.empty()) throw ConfigError("vanilla teacher needs client models");
      return [models = client_models, &experts](const Matrix& x) {
        return moe::vanilla_ensemble(models, experts.spec, x);
      };
  }
  throw ConfigError("unknown teacher kind");
}

DistillResult distill_with_sampler(nn::ParamSet& student, const nn::ModelSpec& spec, const moe::Teacher& teacher,
                                   const Sampler& sampler, const DistillConfig& config, Rng rng) {
  config.validate();
  nn::check_params(student, spec);
  DistillResult result;
  nn::OptimizerState state;
  const nn::OptimizerConfig opt = nn::SgdConfig{config.lr, config.momentum};
  const nn::Mode mode = config.freeze_bn ? nn::Mode::eval : nn::Mode::train;
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    double sum = 0.0;
    for (std::size_t step = 0; step < config.steps_per_epoch; ++step) {
      const Matrix inputs = sampler(config.batch, rng);
      const Matrix target = teacher(inputs);
      auto fwd = nn::forward(student, spec, inputs, mode);
      const auto loss = kd_loss(fwd.logits, target, config);
      auto grads = nn::backward(fwd.cache, loss.grad);
      nn::optimizer_step(student, grads.params, state, opt);
      if (!config.freeze_bn) nn::update_running_stats(student, spec, fwd.batch_stats);
      result.step_loss.push_back(loss.value);
      sum += loss.value;
    }
    result.epoch_loss.push_back(config.steps_per_epoch > 0 ? sum / static_cast<double>(config.steps_per_epoch) : 0.0);
  }
  return result;
}

DistillResult distill_student(nn::ParamSet& student, const nn::ModelSpec& spec, const moe::Teacher& teacher,
                              const std::vector<const models::Model*>& generators,
                              const std::vector<std::size_t>& generator_ids, const DistillConfig& config, Rng rng) {
  if (generators.empty()) throw ConfigError("distillation needs at least one generator");
  const Sampler sampler = [&](std::size_t batch, Rng& r) {
    return genopt::ensemble_sample(generators, generator_ids, batch, r).samples;
  };
  return distill_with_sampler(student, spec, teacher, sampler, config, std::move(rng));
}

}  // namespace mosaic::distill
