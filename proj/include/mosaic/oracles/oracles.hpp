#pragma once

// Brute-force reference implementations. They share no code with the library
// kernels they check: everything here is plain loops over scalars.

#include "mosaic/core/tensor.hpp"
#include "mosaic/nn/model_spec.hpp"
#include "mosaic/nn/param_set.hpp"

#include <functional>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace mosaic::oracles {

/// Weighted mean written the way the aggregation kernel defines it: first
/// positively weighted value as reference, weighted differences added in
/// order, clamped to the range of positively weighted values. `fallback` when
/// the weights sum to zero.
double mean_coordinate(const std::vector<double>& values, const std::vector<double>& weights, double fallback);

/// A client upload for the brute-force aggregators. `units` holds the kept
/// hidden units per hidden dense layer; empty means full width.
struct Upload {
  std::size_t id = 0;
  double weight = 0.0;
  nn::ParamSet params;
  std::vector<std::vector<std::size_t>> units;
};

/// Position inside the sub-model of global coordinate (r, c) of entry
/// `name`, or nullopt when `units` does not cover it.
std::optional<std::pair<long, long>> sub_position(const nn::ModelSpec& spec,
                                                  const std::vector<std::vector<std::size_t>>& units,
                                                  const std::string& name, nn::Role role, long r, long c);

/// For each global coordinate, collects the covering uploads by checking the
/// coordinate's row and column against each upload's units, then averages.
nn::ParamSet brute_partial(const nn::ParamSet& previous, const nn::ModelSpec& spec, std::vector<Upload> uploads);

/// Full-width uploads only.
nn::ParamSet brute_fedavg(std::vector<Upload> uploads);

/// Per class, the |D_ic|-weighted mean of full-width client models; the
/// global model for classes nobody holds.
std::vector<nn::ParamSet> brute_classwise(const std::vector<std::size_t>& ids,
                                          const std::vector<nn::ParamSet>& full_models,
                                          const std::vector<std::vector<std::size_t>>& histograms,
                                          const nn::ParamSet& global);

/// Network output computed one scalar at a time.
Matrix straight_forward(const nn::ParamSet& params, const nn::ModelSpec& spec, const Matrix& x, bool train_mode);

/// Central finite differences of f at x.
Matrix numeric_gradient(const std::function<double(const Matrix&)>& f, const Matrix& x, double step = 1e-5);

/// max |a − b| / max(|a|, |b|, floor) over entries.
double max_relative_error(const Matrix& a, const Matrix& b, double floor = 1e-7);

std::vector<double> softmax_row(const std::vector<double>& logits);
double entropy(const std::vector<double>& p);
double mean_cross_entropy(const Matrix& logits, const std::vector<int>& labels);
double mean_kl(const Matrix& teacher_logits, const Matrix& student_logits);

/// Silhouette by definition: singletons score 0; nullopt with fewer than two
/// clusters.
std::optional<double> brute_silhouette(const Matrix& features, const std::vector<int>& labels);

}  // namespace mosaic::oracles
