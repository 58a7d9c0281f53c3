#pragma once

#include "mosaic/models/width.hpp"
#include "mosaic/nn/model_spec.hpp"
#include "mosaic/nn/param_set.hpp"

#include <span>
#include <vector>

namespace mosaic::protocol {

/// One client's upload. `mask` is null for a full-width model; otherwise
/// `params` is the sub-model selected by `mask` from the global spec.
struct Contribution {
  std::size_t client_id = 0;
  double weight = 0.0;
  const nn::ParamSet* params = nullptr;
  const models::SubModelMask* mask = nullptr;
  const nn::ModelSpec* spec = nullptr;
};

/// Weighted mean of one coordinate over the contributions covering it.
///
/// Values are visited in ascending client id; zero-weight values are
/// skipped. With r the first remaining value and W the sum of weights, the
/// result is r + Σ (w_i/W)·(v_i − r), clamped to [min v_i, max v_i]. This
/// equals the weighted mean, returns identical inputs (or a sole contributor)
/// exactly and never leaves their range. Returns `fallback` when no covering
/// weight is positive.
double weighted_coordinate(std::span<const double> values, std::span<const double> weights, double fallback);

/// Coordinatewise weighted mean of full-width models with identical
/// structure (running statistics included). Throws StructureError on a
/// structure mismatch and ConfigError when weights are negative or all zero.
nn::ParamSet fedavg_aggregate(std::span<const Contribution> clients);

/// Every global coordinate becomes the weighted mean over exactly the clients
/// whose mask covers it; uncovered coordinates keep their value in
/// `previous`. A contribution without a mask covers everything.
nn::ParamSet partial_aggregate(const nn::ParamSet& previous, const nn::ModelSpec& global_spec,
                               std::span<const Contribution> clients);

struct GroupResult {
  nn::ModelSpec spec;
  std::vector<std::size_t> client_ids;
  nn::ParamSet params;
};

/// Groups contributions by spec equality and runs fedavg inside each group
/// with weights renormalized within the group. Groups are ordered by their
/// smallest client id; a group whose weights are all zero is skipped.
std::vector<GroupResult> grouped_aggregate(std::span<const Contribution> clients);

}  // namespace mosaic::protocol
