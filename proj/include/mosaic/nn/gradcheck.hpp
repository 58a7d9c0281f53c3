#pragma once

#include "mosaic/nn/model_spec.hpp"
#include "mosaic/nn/param_set.hpp"

#include <cstdint>
#include <functional>
#include <string>
#include <utility>

namespace mosaic::nn {

/// A differentiable scalar functional of a parameter set: returns the loss and
/// its analytic gradient.
using ScalarLoss = std::function<std::pair<double, Gradients>(const ParamSet&)>;

struct GradcheckReport {
  double max_relative_error = 0.0;
  std::size_t checked = 0;
  std::string worst_entry;
  bool pass = false;
};

struct GradcheckOptions {
  double step = 1e-5;
  double tolerance = 1e-4;
  /// Denominator floor for the relative error, so entries whose true gradient
  /// is ~0 are judged on absolute error.
  double floor = 1e-7;
};

/// Compares the analytic gradient against central differences on every
/// trainable scalar of `params`. Relative error is
/// |analytic − numeric| / max(|analytic|, |numeric|, floor).
GradcheckReport gradcheck(const ParamSet& params, const ScalarLoss& loss, const GradcheckOptions& options = {});

/// Same, on parameters freshly initialized from `spec` with `seed`.
GradcheckReport gradcheck(const ModelSpec& spec, const ScalarLoss& loss, std::uint64_t seed,
                          const GradcheckOptions& options = {});

}  // namespace mosaic::nn
