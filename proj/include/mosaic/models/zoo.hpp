#pragma once

#include "mosaic/core/rng.hpp"
#include "mosaic/nn/model_spec.hpp"
#include "mosaic/nn/param_set.hpp"

#include <vector>

namespace mosaic::models {

struct ClassifierShape {
  std::size_t input_dim = 16;
  std::vector<std::size_t> hidden = {64, 64};
  std::size_t classes = 8;
  double bn_momentum = 0.1;
};

/// input → [dense → batchnorm → relu] per hidden layer → output head, with
/// every hidden width scaled to ⌈ratio·w⌉.
nn::ModelSpec classifier_spec(const ClassifierShape& shape, double width_ratio = 1.0);

/// The classifier's trunk with a one-logit real/fake head in place of the
/// class head. Parameter names of the trunk match the classifier's.
nn::ModelSpec discriminator_spec(const nn::ModelSpec& classifier);

struct GeneratorShape {
  std::size_t latent_dim = 8;
  std::vector<std::size_t> hidden = {32, 32};
  std::size_t output_dim = 16;
  /// Range the tanh output is mapped onto.
  double lo = -1.0;
  double hi = 1.0;
};

struct Model {
  nn::ModelSpec spec;
  nn::ParamSet params;
};

/// Unconditional MLP generator z → sample: [dense → relu] per hidden layer,
/// a final dense to output_dim and a tanh squash onto [lo, hi].
Model build_generator(const GeneratorShape& shape, Rng& rng);

/// Meta model over concatenated expert logits: C·C → 4C → relu → C.
nn::ModelSpec meta_spec(std::size_t classes);

/// Meta parameters whose output equals the mean of the active expert slots:
/// the first 2C hidden units carry ±(slot sum)/k, the remaining 2C units start
/// at zero output weight.
nn::ParamSet meta_averaging_init(std::size_t classes, std::size_t top_k, Rng& rng);

/// Number of trainable scalars (running statistics excluded).
std::size_t param_count(const nn::ParamSet& params);

}  // namespace mosaic::models
