#include "mosaic/data/synthetic.hpp"

#include "mosaic/core/errors.hpp"
#include "mosaic/core/rng.hpp"

#include <algorithm>
#include <numeric>

namespace mosaic::data {

Matrix synthetic_centers(const SyntheticSpec& spec) {
  if (spec.classes < 2) throw SizeError("synthetic data needs at least 2 classes");
  if (spec.dim < 2) throw SizeError("synthetic data needs at least 2 dimensions");
  Rng rng = Rng(spec.seed).derive("synthetic.centers");
  Matrix centers = rng.normal_matrix(static_cast<Eigen::Index>(spec.classes), static_cast<Eigen::Index>(spec.dim));
  for (Eigen::Index c = 0; c < centers.rows(); ++c) {
    centers.row(c) *= spec.radius / centers.row(c).norm();
  }
  return centers;
}

Dataset make_synthetic(const SyntheticSpec& spec, Split split) {
  if (spec.n_per_class < 2) throw SizeError("synthetic data needs at least 2 samples per class");
  const Matrix centers = synthetic_centers(spec);
  const std::uint64_t split_id = split == Split::train ? 0 : 1;
  Rng sample_rng = Rng(spec.seed).derive("synthetic.samples", {split_id});
  Rng order_rng = Rng(spec.seed).derive("synthetic.order", {split_id});

  const std::size_t n = spec.classes * spec.n_per_class;
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), order_rng.engine());

  Matrix inputs(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(spec.dim));
  Labels labels(n);
  std::size_t k = 0;
  for (std::size_t c = 0; c < spec.classes; ++c) {
    for (std::size_t j = 0; j < spec.n_per_class; ++j, ++k) {
      const auto row = static_cast<Eigen::Index>(order[k]);
      for (Eigen::Index d = 0; d < inputs.cols(); ++d) {
        inputs(row, d) = centers(static_cast<Eigen::Index>(c), d) + sample_rng.normal(0.0, spec.spread);
      }
      labels[order[k]] = static_cast<int>(c);
    }
  }
  return Dataset(std::move(inputs), std::move(labels), spec.classes, split);
}

}  // namespace mosaic::data
