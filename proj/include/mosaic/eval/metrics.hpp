#pragma once

#include "mosaic/core/rng.hpp"
#include "mosaic/data/dataset.hpp"
#include "mosaic/nn/model_spec.hpp"
#include "mosaic/nn/param_set.hpp"

#include <optional>
#include <span>
#include <vector>

namespace mosaic::eval {

/// Fraction of rows whose argmax matches the label. Throws ConfigError on an
/// empty set.
double accuracy(const Matrix& logits, std::span<const int> labels);

/// Eval-mode accuracy of one model on the full test set.
double global_accuracy(const nn::ParamSet& params, const nn::ModelSpec& spec, const data::Dataset& test);

struct ModelRef {
  const nn::ParamSet* params = nullptr;
  const nn::ModelSpec* spec = nullptr;
};

/// The test set shuffled with `seed` and cut into N contiguous shards whose
/// sizes differ by at most one (the last n mod N shards get one extra row).
std::vector<std::vector<std::size_t>> split_test(std::size_t test_size, std::size_t clients, std::uint64_t seed);

/// Mean over clients of each model's accuracy on its own test shard.
double local_accuracy(const std::vector<ModelRef>& models, const data::Dataset& test, std::uint64_t seed);

/// Mean Euclidean distance over all unordered row pairs. Needs ≥ 2 rows.
double mean_pairwise_distance(const Matrix& features);

/// Mean pairwise distance between penultimate features under `model`.
double pairwise_diversity(const Matrix& batch, const nn::ParamSet& params, const nn::ModelSpec& spec);

/// Standard silhouette over feature rows with the given cluster labels;
/// singleton clusters score 0. Empty when fewer than two clusters occur.
std::optional<double> silhouette(const Matrix& features, std::span<const int> labels);

/// Silhouette of the batch's penultimate features under argmax pseudo-labels.
std::optional<double> silhouette_score(const Matrix& batch, const nn::ParamSet& params, const nn::ModelSpec& spec);

}  // namespace mosaic::eval
