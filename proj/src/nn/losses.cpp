#include "mosaic/nn/losses.hpp"

#include "mosaic/core/errors.hpp"

#include <cmath>
#include <string>

namespace mosaic::nn {

Matrix log_softmax(const Matrix& logits) {
  Matrix out(logits.rows(), logits.cols());
  for (Eigen::Index r = 0; r < logits.rows(); ++r) {
    const double peak = logits.row(r).maxCoeff();
    const double lse = peak + std::log((logits.row(r).array() - peak).exp().sum());
    out.row(r) = logits.row(r).array() - lse;
  }
  return out;
}

Matrix softmax(const Matrix& logits) { return log_softmax(logits).array().exp().matrix(); }

LossResult cross_entropy(const Matrix& logits, std::span<const int> labels) {
  if (static_cast<Eigen::Index>(labels.size()) != logits.rows()) {
    throw ShapeError("cross entropy: " + std::to_string(labels.size()) + " labels for " +
                     std::to_string(logits.rows()) + " rows");
  }
  if (logits.rows() == 0) throw ShapeError("cross entropy: empty batch");
  const Eigen::Index classes = logits.cols();
  for (int y : labels) {
    if (y < 0 || y >= classes) throw LabelError("label " + std::to_string(y) + " outside [0, C)");
  }
  const Matrix logp = log_softmax(logits);
  const double rows = static_cast<double>(logits.rows());
  LossResult result;
  result.grad = logp.array().exp().matrix();
  double total = 0.0;
  for (Eigen::Index r = 0; r < logits.rows(); ++r) {
    const int y = labels[static_cast<std::size_t>(r)];
    total -= logp(r, y);
    result.grad(r, y) -= 1.0;
  }
  result.value = total / rows;
  result.grad /= rows;
  return result;
}

LossResult kl_divergence(const Matrix& student_logits, const Matrix& teacher_logits) {
  if (student_logits.rows() != teacher_logits.rows() || student_logits.cols() != teacher_logits.cols()) {
    throw ShapeError("kl divergence: student and teacher logits differ in shape");
  }
  if (student_logits.rows() == 0) throw ShapeError("kl divergence: empty batch");
  const Matrix log_s = log_softmax(student_logits);
  const Matrix log_t = log_softmax(teacher_logits);
  const Matrix p_t = log_t.array().exp().matrix();
  const double rows = static_cast<double>(student_logits.rows());
  // Terms with p_T = 0 contribute 0 regardless of log p_T.
  const Eigen::ArrayXXd terms = (p_t.array() > 0.0).select(p_t.array() * (log_t.array() - log_s.array()), 0.0);
  LossResult result;
  result.value = terms.sum() / rows;
  result.grad = (log_s.array().exp() - p_t.array()).matrix() / rows;
  return result;
}

double distribution_entropy(std::span<const double> probs) {
  double sum = 0.0;
  for (double p : probs) {
    if (!(p >= 0.0)) throw DistributionError("probability entries must be non-negative");
    sum += p;
  }
  if (std::abs(sum - 1.0) > 1e-9) throw DistributionError("probabilities must sum to 1");
  double h = 0.0;
  for (double p : probs) {
    if (p > 0.0) h -= p * std::log(p);
  }
  return h;
}

}  // namespace mosaic::nn
