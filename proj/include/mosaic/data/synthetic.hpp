#pragma once

#include "mosaic/data/dataset.hpp"

#include <cstdint>

namespace mosaic::data {

struct SyntheticSpec {
  std::size_t classes = 8;
  std::size_t n_per_class = 400;
  std::size_t dim = 16;
  double spread = 1.0;
  /// Radius of the hypersphere on which the class centers lie.
  double radius = 3.0;
  std::uint64_t seed = 0;
};

/// C isotropic Gaussian clusters N(center_c, spread²·I). Centers depend only
/// on the seed, so the train and test splits of one seed share them; the
/// samples of each split come from their own stream. Rows are shuffled.
Dataset make_synthetic(const SyntheticSpec& spec, Split split = Split::train);

/// The class centers used by make_synthetic for this spec (C × d).
Matrix synthetic_centers(const SyntheticSpec& spec);

}  // namespace mosaic::data
