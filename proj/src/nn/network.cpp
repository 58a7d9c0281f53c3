#include "mosaic/nn/network.hpp"

#include "mosaic/core/errors.hpp"

#include <cmath>
#include <string>

namespace mosaic::nn {
namespace {

void check_width(const Matrix& x, std::size_t expected, std::size_t layer) {
  if (static_cast<std::size_t>(x.cols()) != expected) {
    throw ShapeError("layer " + std::to_string(layer) + " expects " + std::to_string(expected) +
                     " columns, got " + std::to_string(x.cols()));
  }
}

}  // namespace

void Batch::validate() const {
  if (labels && static_cast<Eigen::Index>(labels->size()) != inputs.rows()) {
    throw ShapeError("batch has " + std::to_string(inputs.rows()) + " rows but " +
                     std::to_string(labels->size()) + " labels");
  }
}

ForwardResult forward(const ParamSet& params, const ModelSpec& spec, const Batch& batch, Mode mode) {
  batch.validate();
  return forward(params, spec, batch.inputs, mode);
}

ForwardResult forward(const ParamSet& params, const ModelSpec& spec, const Matrix& inputs, Mode mode) {
  if (inputs.rows() == 0) throw ShapeError("empty batch");
  if (mode == Mode::train && inputs.rows() < 2 && !spec.batchnorm_layers().empty()) {
    throw DegenerateBatchError("train-mode batch norm needs at least 2 rows");
  }
  ForwardResult result;
  ForwardCache& cache = result.cache;
  cache.params = &params;
  cache.stamp = params.stamp();
  cache.spec = spec;
  cache.mode = mode;
  cache.layer_inputs.reserve(spec.layers.size());

  const double rows = static_cast<double>(inputs.rows());
  Matrix x = inputs;
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    const Layer& layer = spec.layers[i];
    const std::string p = ModelSpec::prefix(i);
    cache.layer_inputs.push_back(x);
    if (const auto* d = std::get_if<Dense>(&layer)) {
      check_width(x, d->in, i);
      x = (x * params.at(p + "weight")).rowwise() + params.at(p + "bias").row(0);
    } else if (const auto* h = std::get_if<OutputHead>(&layer)) {
      check_width(x, h->dim, i);
      result.features = x;
      x = (x * params.at(p + "weight")).rowwise() + params.at(p + "bias").row(0);
    } else if (const auto* b = std::get_if<BatchNorm>(&layer)) {
      check_width(x, b->dim, i);
      const RowVector mean = x.colwise().mean();
      const Matrix centered = x.rowwise() - mean;
      const RowVector var = centered.array().square().colwise().sum() / rows;
      result.batch_stats.push_back({mean, var});

      RowVector norm_mean = mean;
      RowVector norm_var = var;
      if (mode == Mode::eval) {
        norm_mean = params.at(p + "running_mean").row(0);
        norm_var = params.at(p + "running_var").row(0);
      }
      const RowVector inv_std = (norm_var.array() + kBatchNormEps).rsqrt().matrix();
      Matrix normalized = (x.rowwise() - norm_mean).array().rowwise() * inv_std.array();
      x = (normalized.array().rowwise() * params.at(p + "gain").row(0).array()).matrix().rowwise() +
          params.at(p + "shift").row(0);
      cache.bn_normalized.push_back(std::move(normalized));
      cache.bn_inv_std.push_back(inv_std);
    } else if (std::holds_alternative<Relu>(layer)) {
      x = x.cwiseMax(0.0);
    } else if (const auto* s = std::get_if<Squash>(&layer)) {
      const double half = 0.5 * (s->hi - s->lo);
      x = ((x.array().tanh() + 1.0) * half + s->lo).matrix();
    }
  }
  cache.output = x;
  result.logits = std::move(x);
  return result;
}

BackwardResult backward(const ForwardCache& cache, const Matrix& out_grad,
                        std::span<const BnStatGrad> stat_grads) {
  if (cache.params == nullptr) throw StaleCacheError("cache was not produced by forward()");
  if (cache.params->stamp() != cache.stamp) {
    throw StaleCacheError("parameters changed after the forward pass that produced this cache");
  }
  if (out_grad.rows() != cache.output.rows() || out_grad.cols() != cache.output.cols()) {
    throw ShapeError("output gradient shape does not match the forward output");
  }
  const ModelSpec& spec = cache.spec;
  const std::size_t bn_count = cache.bn_inv_std.size();
  if (!stat_grads.empty() && stat_grads.size() != bn_count) {
    throw ShapeError("expected one statistics gradient per batch-norm layer");
  }

  const ParamSet& params = *cache.params;
  BackwardResult result{Gradients::zeros_like(params), Matrix()};
  const double rows = static_cast<double>(out_grad.rows());
  Matrix grad = out_grad;
  std::size_t bn_index = bn_count;

  for (std::size_t li = spec.layers.size(); li-- > 0;) {
    const Layer& layer = spec.layers[li];
    const Matrix& x = cache.layer_inputs[li];
    const std::string p = ModelSpec::prefix(li);
    if (std::holds_alternative<Dense>(layer) || std::holds_alternative<OutputHead>(layer)) {
      result.params.mutable_at(p + "weight") = x.transpose() * grad;
      result.params.mutable_at(p + "bias") = grad.colwise().sum();
      grad = grad * params.at(p + "weight").transpose();
    } else if (std::holds_alternative<BatchNorm>(layer)) {
      --bn_index;
      const Matrix& normalized = cache.bn_normalized[bn_index];
      const RowVector& inv_std = cache.bn_inv_std[bn_index];
      const RowVector gain = params.at(p + "gain").row(0);
      result.params.mutable_at(p + "gain") = (grad.array() * normalized.array()).colwise().sum().matrix();
      result.params.mutable_at(p + "shift") = grad.colwise().sum();
      const Matrix dnorm = grad.array().rowwise() * gain.array();
      Matrix dx;
      if (cache.mode == Mode::train) {
        const RowVector sum_d = dnorm.colwise().sum();
        const RowVector sum_dn = (dnorm.array() * normalized.array()).colwise().sum().matrix();
        Matrix inner = (dnorm * rows).rowwise() - sum_d;
        inner -= (normalized.array().rowwise() * sum_dn.array()).matrix();
        dx = (inner.array().rowwise() * (inv_std.array() / rows)).matrix();
      } else {
        dx = dnorm.array().rowwise() * inv_std.array();
      }
      if (!stat_grads.empty()) {
        const BnStatGrad& sg = stat_grads[bn_index];
        const RowVector mean = x.colwise().mean();
        const Matrix centered = x.rowwise() - mean;
        dx.rowwise() += sg.mean / rows;
        dx += (centered.array().rowwise() * (sg.var.array() * (2.0 / rows))).matrix();
      }
      grad = std::move(dx);
    } else if (std::holds_alternative<Relu>(layer)) {
      grad = (x.array() > 0.0).select(grad, 0.0);
    } else if (const auto* s = std::get_if<Squash>(&layer)) {
      const double half = 0.5 * (s->hi - s->lo);
      const Eigen::ArrayXXd t = x.array().tanh();
      grad = (grad.array() * (1.0 - t.square()) * half).matrix();
    }
  }
  result.inputs = std::move(grad);
  return result;
}

void update_running_stats(ParamSet& params, const ModelSpec& spec, std::span<const BnStats> stats) {
  const auto bn_layers = spec.batchnorm_layers();
  if (stats.size() != bn_layers.size()) throw ShapeError("expected one statistics entry per batch-norm layer");
  for (std::size_t k = 0; k < bn_layers.size(); ++k) {
    const auto& bn = std::get<BatchNorm>(spec.layers[bn_layers[k]]);
    const std::string p = ModelSpec::prefix(bn_layers[k]);
    const double m = bn.momentum;
    Matrix& mean = params.mutable_at(p + "running_mean");
    Matrix& var = params.mutable_at(p + "running_var");
    mean.row(0) = (1.0 - m) * mean.row(0) + m * stats[k].mean;
    var.row(0) = (1.0 - m) * var.row(0) + m * stats[k].var;
    // Keep the running variance strictly positive even if a batch was constant.
    var = var.cwiseMax(1e-12);
  }
}

Matrix head_forward(const ParamSet& params, const ModelSpec& spec, const Matrix& features) {
  const auto h = spec.head_index();
  if (!h) throw ShapeError("model has no output head");
  const auto& head = std::get<OutputHead>(spec.layers[*h]);
  check_width(features, head.dim, *h);
  const std::string p = ModelSpec::prefix(*h);
  return (features * params.at(p + "weight")).rowwise() + params.at(p + "bias").row(0);
}

Matrix predict(const ParamSet& params, const ModelSpec& spec, const Matrix& inputs) {
  return forward(params, spec, inputs, Mode::eval).logits;
}

std::vector<int> argmax_rows(const Matrix& logits) {
  std::vector<int> out(static_cast<std::size_t>(logits.rows()));
  for (Eigen::Index r = 0; r < logits.rows(); ++r) {
    Eigen::Index best = 0;
    for (Eigen::Index c = 1; c < logits.cols(); ++c) {
      if (logits(r, c) > logits(r, best)) best = c;
    }
    out[static_cast<std::size_t>(r)] = static_cast<int>(best);
  }
  return out;
}

}  // namespace mosaic::nn
