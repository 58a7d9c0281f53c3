#pragma once

#include "mosaic/nn/param_set.hpp"

#include <cstdint>
#include <map>
#include <string>
#include <variant>

namespace mosaic::nn {

struct SgdConfig {
  double lr = 0.01;
  double momentum = 0.0;
};

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

using OptimizerConfig = std::variant<SgdConfig, AdamConfig>;

struct OptimizerState {
  std::map<std::string, Matrix, std::less<>> first;
  std::map<std::string, Matrix, std::less<>> second;
  std::int64_t steps = 0;
};

/// One in-place update of the trainable entries of `params`. Running
/// batch-norm statistics are never touched. Throws StructureError when the
/// gradient keys do not match the trainable entries.
void optimizer_step(ParamSet& params, const Gradients& grads, OptimizerState& state,
                    const OptimizerConfig& config);

}  // namespace mosaic::nn
