#pragma once

#include "mosaic/core/tensor.hpp"
#include "mosaic/nn/model_spec.hpp"
#include "mosaic/nn/param_set.hpp"

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

namespace mosaic::nn {

enum class Mode { train, eval };

inline constexpr double kBatchNormEps = 1e-5;

struct Batch {
  Matrix inputs;
  std::optional<Labels> labels;

  /// Throws ShapeError when labels are present but their count differs from
  /// the number of rows.
  void validate() const;
};

/// Mean and biased variance of the input to one BN layer over the batch.
struct BnStats {
  RowVector mean;
  RowVector var;
};

/// Upstream gradient with respect to a BN layer's batch statistics; used by
/// losses that look at the statistics directly.
struct BnStatGrad {
  RowVector mean;
  RowVector var;
};

/// Everything backward() needs. It refers to the ParamSet passed to forward(),
/// which must outlive the cache; mutating that ParamSet makes the cache stale.
struct ForwardCache {
  const ParamSet* params = nullptr;
  std::uint64_t stamp = 0;
  ModelSpec spec;
  Mode mode = Mode::train;
  std::vector<Matrix> layer_inputs;
  std::vector<Matrix> bn_normalized;
  std::vector<RowVector> bn_inv_std;
  Matrix output;
};

struct ForwardResult {
  Matrix logits;
  /// Input to the output head (penultimate features); empty if no head.
  Matrix features;
  /// One entry per BN layer in layer order, computed in both modes.
  std::vector<BnStats> batch_stats;
  ForwardCache cache;
};

struct BackwardResult {
  Gradients params;
  Matrix inputs;
};

/// Train mode normalizes with batch statistics and needs at least two rows;
/// eval mode normalizes with running statistics. Running statistics are not
/// modified here: pass the returned batch_stats to update_running_stats().
ForwardResult forward(const ParamSet& params, const ModelSpec& spec, const Matrix& inputs, Mode mode);
ForwardResult forward(const ParamSet& params, const ModelSpec& spec, const Batch& batch, Mode mode);

/// `stat_grads`, if given, holds one entry per BN layer and is added to the
/// gradient flowing into that layer's input.
BackwardResult backward(const ForwardCache& cache, const Matrix& out_grad,
                        std::span<const BnStatGrad> stat_grads = {});

/// running ← (1 − m)·running + m·batch for every BN layer.
void update_running_stats(ParamSet& params, const ModelSpec& spec, std::span<const BnStats> stats);

/// Applies only the output head to penultimate features.
Matrix head_forward(const ParamSet& params, const ModelSpec& spec, const Matrix& features);

/// Forward in eval mode, returning logits only.
Matrix predict(const ParamSet& params, const ModelSpec& spec, const Matrix& inputs);

std::vector<int> argmax_rows(const Matrix& logits);

}  // namespace mosaic::nn
