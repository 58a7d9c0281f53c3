#pragma once

#include "mosaic/core/tensor.hpp"

#include <span>

namespace mosaic::nn {

/// Scalar loss together with its gradient with respect to the input matrix.
struct LossResult {
  double value = 0.0;
  Matrix grad;
};

Matrix softmax(const Matrix& logits);
Matrix log_softmax(const Matrix& logits);

/// Mean over rows of −log softmax(logits)[label].
LossResult cross_entropy(const Matrix& logits, std::span<const int> labels);

/// Mean over rows of KL(softmax(teacher) ‖ softmax(student)); the gradient is
/// with respect to the student logits, the teacher being a constant target.
LossResult kl_divergence(const Matrix& student_logits, const Matrix& teacher_logits);

/// −Σ p log p with 0·log 0 = 0. Throws DistributionError on negative entries
/// or when the entries do not sum to 1 within 1e-9.
double distribution_entropy(std::span<const double> probs);

}  // namespace mosaic::nn
