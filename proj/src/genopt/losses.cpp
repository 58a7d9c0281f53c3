#include "mosaic/genopt/losses.hpp"

#include "mosaic/core/errors.hpp"
#include "mosaic/nn/losses.hpp"
#include "mosaic/nn/network.hpp"

#include <cmath>
#include <vector>

namespace mosaic::genopt {

namespace {

// p·log p with the 0·log 0 = 0 convention.
double plogp(double p) { return p > 0.0 ? p * std::log(p) : 0.0; }

}  // namespace

SampleLoss logit_entropy(const Matrix& logits) {
  if (logits.rows() == 0) throw ShapeError("entropy of an empty batch");
  const Matrix p = nn::softmax(logits);
  const Matrix logp = nn::log_softmax(logits);
  const double b = static_cast<double>(logits.rows());
  SampleLoss out;
  out.grad.resize(logits.rows(), logits.cols());
  for (Eigen::Index r = 0; r < logits.rows(); ++r) {
    double h = 0.0;
    for (Eigen::Index c = 0; c < logits.cols(); ++c) h -= plogp(p(r, c));
    out.value += h;
    // dH/dz_j = −p_j (log p_j + H)
    for (Eigen::Index c = 0; c < logits.cols(); ++c) out.grad(r, c) = -p(r, c) * (logp(r, c) + h) / b;
  }
  out.value /= b;
  return out;
}

SampleLoss batch_mean_entropy(const Matrix& logits) {
  if (logits.rows() == 0) throw ShapeError("entropy of an empty batch");
  const Matrix p = nn::softmax(logits);
  const double b = static_cast<double>(logits.rows());
  const RowVector w = p.colwise().sum() / b;
  SampleLoss out;
  RowVector g(w.cols());
  for (Eigen::Index k = 0; k < w.cols(); ++k) {
    out.value -= plogp(w(k));
    g(k) = w(k) > 0.0 ? -(std::log(w(k)) + 1.0) : 0.0;
  }
  out.grad.resize(logits.rows(), logits.cols());
  for (Eigen::Index r = 0; r < logits.rows(); ++r) {
    const double gp = (g.array() * p.row(r).array()).sum();
    for (Eigen::Index c = 0; c < logits.cols(); ++c) out.grad(r, c) = p(r, c) * (g(c) - gp) / b;
  }
  return out;
}

namespace {

SampleLoss through_classifier(const nn::ParamSet& classifier, const nn::ModelSpec& spec, const Matrix& samples,
                              SampleLoss (*on_logits)(const Matrix&)) {
  auto fwd = nn::forward(classifier, spec, samples, nn::Mode::eval);
  SampleLoss l = on_logits(fwd.logits);
  auto back = nn::backward(fwd.cache, l.grad);
  return {l.value, std::move(back.inputs)};
}

}  // namespace

SampleLoss entropy_loss(const nn::ParamSet& classifier, const nn::ModelSpec& spec, const Matrix& samples) {
  return through_classifier(classifier, spec, samples, &logit_entropy);
}

SampleLoss diversity_loss(const nn::ParamSet& classifier, const nn::ModelSpec& spec, const Matrix& samples) {
  if (samples.rows() < 2) throw DegenerateBatchError("diversity loss needs at least two samples");
  return through_classifier(classifier, spec, samples, &batch_mean_entropy);
}

SampleLoss inversion_loss(const nn::ParamSet& global, const nn::ModelSpec& spec, const Matrix& samples) {
  const auto bn_layers = spec.batchnorm_layers();
  if (bn_layers.empty()) throw ConfigError("inversion loss requested but the model has no batch-norm layer");
  if (samples.rows() < 2) throw DegenerateBatchError("inversion loss needs at least two samples");
  auto fwd = nn::forward(global, spec, samples, nn::Mode::eval);
  SampleLoss out;
  std::vector<nn::BnStatGrad> stat_grads;
  stat_grads.reserve(bn_layers.size());
  for (std::size_t l = 0; l < bn_layers.size(); ++l) {
    const std::string p = nn::ModelSpec::prefix(bn_layers[l]);
    const RowVector dm = fwd.batch_stats[l].mean - global.at(p + "running_mean");
    const RowVector dv = fwd.batch_stats[l].var - global.at(p + "running_var");
    const double nm = dm.norm();
    const double nv = dv.norm();
    out.value += nm + nv;
    nn::BnStatGrad g;
    g.mean = nm > 0.0 ? RowVector(dm / nm) : RowVector::Zero(dm.cols());
    g.var = nv > 0.0 ? RowVector(dv / nv) : RowVector::Zero(dv.cols());
    stat_grads.push_back(std::move(g));
  }
  const Matrix zero = Matrix::Zero(fwd.logits.rows(), fwd.logits.cols());
  auto back = nn::backward(fwd.cache, zero, stat_grads);
  out.grad = std::move(back.inputs);
  return out;
}

double log_sigmoid(double s) { return s >= 0.0 ? -std::log1p(std::exp(-s)) : s - std::log1p(std::exp(s)); }

double log_one_minus_sigmoid(double s) { return log_sigmoid(-s); }

AdversarialValues adversarial_values(const Matrix& real_logits, const Matrix& fake_logits) {
  if (real_logits.cols() != 1 || fake_logits.cols() != 1) throw ShapeError("discriminator must emit one logit");
  if (real_logits.rows() == 0 || fake_logits.rows() == 0) throw ShapeError("adversarial loss of an empty batch");
  AdversarialValues v;
  double real = 0.0;
  double fake = 0.0;
  double correct = 0.0;
  for (Eigen::Index r = 0; r < real_logits.rows(); ++r) real += log_sigmoid(real_logits(r, 0));
  for (Eigen::Index r = 0; r < fake_logits.rows(); ++r) {
    fake += log_one_minus_sigmoid(fake_logits(r, 0));
    if (fake_logits(r, 0) < 0.0) correct += 1.0;
  }
  real /= static_cast<double>(real_logits.rows());
  fake /= static_cast<double>(fake_logits.rows());
  v.generator = fake;
  v.discriminator = real + fake;
  v.fake_accuracy = correct / static_cast<double>(fake_logits.rows());
  return v;
}

}  // namespace mosaic::genopt
