#pragma once

#include "mosaic/core/tensor.hpp"
#include "mosaic/nn/model_spec.hpp"
#include "mosaic/nn/param_set.hpp"

namespace mosaic::genopt {

/// Loss value and its gradient with respect to the generated samples.
struct SampleLoss {
  double value = 0.0;
  Matrix grad;
};

/// Mean per-row entropy of softmax(logits), with its gradient wrt the logits.
SampleLoss logit_entropy(const Matrix& logits);

/// Entropy of the batch-mean class distribution, with its gradient wrt the
/// logits. Larger is more diverse.
SampleLoss batch_mean_entropy(const Matrix& logits);

/// Mean per-sample prediction entropy of the frozen classifier (eval mode).
SampleLoss entropy_loss(const nn::ParamSet& classifier, const nn::ModelSpec& spec, const Matrix& samples);

/// Entropy of the batch-mean prediction of the frozen classifier (eval mode).
/// Needs at least two rows.
SampleLoss diversity_loss(const nn::ParamSet& classifier, const nn::ModelSpec& spec, const Matrix& samples);

/// Σ_l ‖μ_l − μ̂_l‖₂ + Σ_l ‖σ²_l − σ̂²_l‖₂ over the BN layers of the global
/// model, where μ_l, σ²_l are statistics of the batch reaching layer l in an
/// eval-mode pass. Throws ConfigError when the model has no BN layer.
SampleLoss inversion_loss(const nn::ParamSet& global, const nn::ModelSpec& spec, const Matrix& samples);

/// Adversarial objectives for one batch of discriminator logits.
struct AdversarialValues {
  /// E log(1 − D(G(z))), minimized by the generator (as written).
  double generator = 0.0;
  /// E log D(x) + E log(1 − D(G(z))), maximized by the discriminator.
  double discriminator = 0.0;
  /// Fraction of fake rows with D(G(z)) < 1/2.
  double fake_accuracy = 0.0;
};

AdversarialValues adversarial_values(const Matrix& real_logits, const Matrix& fake_logits);

/// log σ(s) and log(1 − σ(s)) computed without overflow.
double log_sigmoid(double s);
double log_one_minus_sigmoid(double s);

}  // namespace mosaic::genopt
