#include "mosaic/nn/model_spec.hpp"

#include "mosaic/core/errors.hpp"

#include <cmath>

namespace mosaic::nn {
namespace {

template <class... Ts>
struct overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
overloaded(Ts...) -> overloaded<Ts...>;

// Width flowing out of a layer given the width flowing in (0 = unknown).
std::size_t out_width(const Layer& layer, std::size_t in) {
  return std::visit(overloaded{
                        [](const Dense& d) { return d.out; },
                        [](const BatchNorm& b) { return b.dim; },
                        [in](const Relu&) { return in; },
                        [in](const Squash&) { return in; },
                        [](const OutputHead& h) { return h.classes; },
                    },
                    layer);
}

std::size_t in_width(const Layer& layer) {
  return std::visit(overloaded{
                        [](const Dense& d) { return d.in; },
                        [](const BatchNorm& b) { return b.dim; },
                        [](const Relu&) { return std::size_t{0}; },
                        [](const Squash&) { return std::size_t{0}; },
                        [](const OutputHead& h) { return h.dim; },
                    },
                    layer);
}

}  // namespace

std::string ModelSpec::prefix(std::size_t layer) { return std::to_string(layer) + "."; }

void ModelSpec::validate() const {
  if (layers.empty()) throw ShapeError("model spec has no layers");
  if (!(width_ratio > 0.0 && width_ratio <= 1.0)) throw ShapeError("width ratio must lie in (0, 1]");
  std::size_t width = in_width(layers.front());
  if (width == 0) throw ShapeError("first layer must have a known input width");
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const std::size_t need = in_width(layers[i]);
    if (need != 0 && need != width) {
      throw ShapeError("layer " + std::to_string(i) + " expects width " + std::to_string(need) +
                       " but receives " + std::to_string(width));
    }
    if (std::holds_alternative<OutputHead>(layers[i]) && i + 1 != layers.size()) {
      throw ShapeError("output head must be the last layer");
    }
    if (const auto* bn = std::get_if<BatchNorm>(&layers[i]); bn && !(bn->momentum >= 0.0 && bn->momentum <= 1.0)) {
      throw ShapeError("batch-norm momentum must lie in [0, 1]");
    }
    width = out_width(layers[i], width);
    if (width == 0) throw ShapeError("layer " + std::to_string(i) + " has zero width");
  }
}

std::size_t ModelSpec::input_dim() const { return layers.empty() ? 0 : in_width(layers.front()); }

std::size_t ModelSpec::output_dim() const {
  std::size_t width = input_dim();
  for (const auto& layer : layers) width = out_width(layer, width);
  return width;
}

std::optional<std::size_t> ModelSpec::head_index() const {
  if (!layers.empty() && std::holds_alternative<OutputHead>(layers.back())) return layers.size() - 1;
  return std::nullopt;
}

std::size_t ModelSpec::feature_dim() const {
  if (auto h = head_index()) return std::get<OutputHead>(layers[*h]).dim;
  return 0;
}

std::vector<std::size_t> ModelSpec::batchnorm_layers() const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    if (std::holds_alternative<BatchNorm>(layers[i])) out.push_back(i);
  }
  return out;
}

std::size_t scaled_width(std::size_t dim, double ratio) {
  const double raw = ratio * static_cast<double>(dim);
  const auto width = static_cast<std::size_t>(std::ceil(raw - 1e-9));
  return width == 0 ? 1 : width;
}

ParamSet init_params(const ModelSpec& spec, Rng& rng) {
  spec.validate();
  ParamSet params;
  auto dense = [&](std::size_t i, std::size_t in, std::size_t out) {
    const double stddev = std::sqrt(2.0 / static_cast<double>(in));
    params.add(ModelSpec::prefix(i) + "weight", Role::weight,
               rng.normal_matrix(static_cast<Eigen::Index>(in), static_cast<Eigen::Index>(out), stddev));
    params.add(ModelSpec::prefix(i) + "bias", Role::bias, Matrix::Zero(1, static_cast<Eigen::Index>(out)));
  };
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    const Layer& layer = spec.layers[i];
    if (const auto* d = std::get_if<Dense>(&layer)) {
      dense(i, d->in, d->out);
    } else if (const auto* h = std::get_if<OutputHead>(&layer)) {
      dense(i, h->dim, h->classes);
    } else if (const auto* b = std::get_if<BatchNorm>(&layer)) {
      const auto dim = static_cast<Eigen::Index>(b->dim);
      const std::string p = ModelSpec::prefix(i);
      params.add(p + "gain", Role::bn_gain, Matrix::Ones(1, dim));
      params.add(p + "shift", Role::bn_shift, Matrix::Zero(1, dim));
      params.add(p + "running_mean", Role::bn_running_mean, Matrix::Zero(1, dim));
      params.add(p + "running_var", Role::bn_running_var, Matrix::Ones(1, dim));
    }
  }
  return params;
}

void check_params(const ParamSet& params, const ModelSpec& spec) {
  std::size_t expected = 0;
  auto require = [&](const std::string& name, Role role, Eigen::Index rows, Eigen::Index cols) {
    ++expected;
    if (!params.contains(name)) throw StructureError("missing parameter '" + name + "'");
    const auto& e = params.entry(name);
    if (e.role != role || e.value.rows() != rows || e.value.cols() != cols) {
      throw StructureError("parameter '" + name + "' has the wrong role or shape");
    }
  };
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    const Layer& layer = spec.layers[i];
    const std::string p = ModelSpec::prefix(i);
    std::size_t in = 0, out = 0;
    if (const auto* d = std::get_if<Dense>(&layer)) {
      in = d->in;
      out = d->out;
    } else if (const auto* h = std::get_if<OutputHead>(&layer)) {
      in = h->dim;
      out = h->classes;
    } else if (const auto* b = std::get_if<BatchNorm>(&layer)) {
      const auto dim = static_cast<Eigen::Index>(b->dim);
      require(p + "gain", Role::bn_gain, 1, dim);
      require(p + "shift", Role::bn_shift, 1, dim);
      require(p + "running_mean", Role::bn_running_mean, 1, dim);
      require(p + "running_var", Role::bn_running_var, 1, dim);
      continue;
    } else {
      continue;
    }
    require(p + "weight", Role::weight, static_cast<Eigen::Index>(in), static_cast<Eigen::Index>(out));
    require(p + "bias", Role::bias, 1, static_cast<Eigen::Index>(out));
  }
  if (expected != params.size()) throw StructureError("parameter set has entries the spec does not define");
}

}  // namespace mosaic::nn
