#include "mosaic/models/zoo.hpp"

#include "mosaic/core/errors.hpp"

#include <cmath>

namespace mosaic::models {

using nn::BatchNorm;
using nn::Dense;
using nn::ModelSpec;
using nn::OutputHead;
using nn::Relu;

ModelSpec classifier_spec(const ClassifierShape& shape, double width_ratio) {
  ModelSpec spec;
  spec.width_ratio = width_ratio;
  std::size_t in = shape.input_dim;
  for (std::size_t w : shape.hidden) {
    const std::size_t out = nn::scaled_width(w, width_ratio);
    spec.layers.emplace_back(Dense{in, out});
    spec.layers.emplace_back(BatchNorm{out, shape.bn_momentum});
    spec.layers.emplace_back(Relu{});
    in = out;
  }
  spec.layers.emplace_back(OutputHead{in, shape.classes});
  spec.validate();
  return spec;
}

ModelSpec discriminator_spec(const ModelSpec& classifier) {
  const auto head = classifier.head_index();
  if (!head) throw ShapeError("discriminator needs a classifier with an output head");
  ModelSpec spec = classifier;
  spec.layers.back() = OutputHead{classifier.feature_dim(), 1};
  return spec;
}

Model build_generator(const GeneratorShape& shape, Rng& rng) {
  if (shape.latent_dim < 1) throw ShapeError("generator latent dimension must be at least 1");
  if (!(shape.hi > shape.lo)) throw ShapeError("generator output range must be non-empty");
  Model g;
  std::size_t in = shape.latent_dim;
  for (std::size_t w : shape.hidden) {
    g.spec.layers.emplace_back(Dense{in, w});
    g.spec.layers.emplace_back(Relu{});
    in = w;
  }
  g.spec.layers.emplace_back(Dense{in, shape.output_dim});
  g.spec.layers.emplace_back(nn::Squash{shape.lo, shape.hi});
  g.params = nn::init_params(g.spec, rng);
  // Start the pre-squash output near 0 so early samples sit mid-range
  // instead of saturating tanh.
  const std::string last = ModelSpec::prefix(g.spec.layers.size() - 2) + "weight";
  g.params.mutable_at(last) *= 0.5;
  return g;
}

ModelSpec meta_spec(std::size_t classes) {
  ModelSpec spec;
  spec.layers.emplace_back(Dense{classes * classes, 4 * classes});
  spec.layers.emplace_back(Relu{});
  spec.layers.emplace_back(OutputHead{4 * classes, classes});
  spec.validate();
  return spec;
}

nn::ParamSet meta_averaging_init(std::size_t classes, std::size_t top_k, Rng& rng) {
  if (top_k == 0 || top_k > classes) throw ConfigError("top_k must lie in [1, C]");
  const ModelSpec spec = meta_spec(classes);
  nn::ParamSet params = nn::init_params(spec, rng);
  const auto C = static_cast<Eigen::Index>(classes);
  const double inv_k = 1.0 / static_cast<double>(top_k);
  Matrix& w1 = params.mutable_at("0.weight");
  Matrix& w2 = params.mutable_at("2.weight");
  w1.leftCols(2 * C).setZero();
  w2.setZero();
  for (Eigen::Index slot = 0; slot < C; ++slot) {
    for (Eigen::Index j = 0; j < C; ++j) {
      w1(slot * C + j, 2 * j) = inv_k;
      w1(slot * C + j, 2 * j + 1) = -inv_k;
    }
  }
  for (Eigen::Index j = 0; j < C; ++j) {
    w2(2 * j, j) = 1.0;
    w2(2 * j + 1, j) = -1.0;
  }
  return params;
}

std::size_t param_count(const nn::ParamSet& params) {
  std::size_t n = 0;
  for (const auto& e : params.entries()) {
    if (nn::is_trainable(e.role)) n += static_cast<std::size_t>(e.value.size());
  }
  return n;
}

}  // namespace mosaic::models
