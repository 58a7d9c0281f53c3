#include "mosaic/eval/metrics.hpp"

#include "mosaic/core/errors.hpp"
#include "mosaic/nn/network.hpp"

#include <algorithm>
#include <limits>
#include <map>
#include <numeric>

namespace mosaic::eval {

double accuracy(const Matrix& logits, std::span<const int> labels) {
  if (labels.empty()) throw ConfigError("accuracy of an empty set");
  if (static_cast<std::size_t>(logits.rows()) != labels.size()) throw ShapeError("logits and labels disagree");
  const auto pred = nn::argmax_rows(logits);
  std::size_t hits = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) hits += pred[i] == labels[i] ? 1 : 0;
  return static_cast<double>(hits) / static_cast<double>(labels.size());
}

double global_accuracy(const nn::ParamSet& params, const nn::ModelSpec& spec, const data::Dataset& test) {
  if (test.size() == 0) throw ConfigError("empty test set");
  return accuracy(nn::predict(params, spec, test.inputs()), test.labels());
}

std::vector<std::vector<std::size_t>> split_test(std::size_t test_size, std::size_t clients, std::uint64_t seed) {
  if (clients == 0) throw ConfigError("local accuracy needs at least one client");
  std::vector<std::size_t> order(test_size);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng = Rng(seed).derive("eval.local_split");
  std::shuffle(order.begin(), order.end(), rng.engine());
  const std::size_t base = test_size / clients;
  const std::size_t extra = test_size % clients;
  std::vector<std::vector<std::size_t>> shards(clients);
  std::size_t pos = 0;
  for (std::size_t i = 0; i < clients; ++i) {
    const std::size_t len = base + (i >= clients - extra ? 1 : 0);
    shards[i].assign(order.begin() + static_cast<std::ptrdiff_t>(pos),
                     order.begin() + static_cast<std::ptrdiff_t>(pos + len));
    pos += len;
  }
  return shards;
}

double local_accuracy(const std::vector<ModelRef>& models, const data::Dataset& test, std::uint64_t seed) {
  if (test.size() == 0) throw ConfigError("empty test set");
  const auto shards = split_test(test.size(), models.size(), seed);
  double sum = 0.0;
  std::size_t counted = 0;
  for (std::size_t i = 0; i < models.size(); ++i) {
    if (shards[i].empty()) continue;
    const nn::Batch b = test.batch(shards[i]);
    sum += accuracy(nn::predict(*models[i].params, *models[i].spec, b.inputs), *b.labels);
    ++counted;
  }
  return counted > 0 ? sum / static_cast<double>(counted) : 0.0;
}

double mean_pairwise_distance(const Matrix& features) {
  const Eigen::Index n = features.rows();
  if (n < 2) throw DegenerateBatchError("pairwise distance needs at least two rows");
  double sum = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = i + 1; j < n; ++j) sum += (features.row(i) - features.row(j)).norm();
  }
  return sum / (0.5 * static_cast<double>(n) * static_cast<double>(n - 1));
}

double pairwise_diversity(const Matrix& batch, const nn::ParamSet& params, const nn::ModelSpec& spec) {
  return mean_pairwise_distance(nn::forward(params, spec, batch, nn::Mode::eval).features);
}

std::optional<double> silhouette(const Matrix& features, std::span<const int> labels) {
  const Eigen::Index n = features.rows();
  if (n < 2) throw DegenerateBatchError("silhouette needs at least two rows");
  if (static_cast<std::size_t>(n) != labels.size()) throw ShapeError("features and labels disagree");
  std::map<int, std::size_t> sizes;
  for (int l : labels) ++sizes[l];
  if (sizes.size() < 2) return std::nullopt;
  double total = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    const int own = labels[static_cast<std::size_t>(i)];
    if (sizes[own] == 1) continue;
    std::map<int, double> dist;
    for (Eigen::Index j = 0; j < n; ++j) {
      if (j != i) dist[labels[static_cast<std::size_t>(j)]] += (features.row(i) - features.row(j)).norm();
    }
    const double a = dist[own] / static_cast<double>(sizes[own] - 1);
    double b = std::numeric_limits<double>::infinity();
    for (const auto& [label, d] : dist) {
      if (label != own) b = std::min(b, d / static_cast<double>(sizes[label]));
    }
    const double m = std::max(a, b);
    total += m > 0.0 ? (b - a) / m : 0.0;
  }
  return total / static_cast<double>(n);
}

std::optional<double> silhouette_score(const Matrix& batch, const nn::ParamSet& params, const nn::ModelSpec& spec) {
  const auto fwd = nn::forward(params, spec, batch, nn::Mode::eval);
  const auto pseudo = nn::argmax_rows(fwd.logits);
  return silhouette(fwd.features, pseudo);
}

}  // namespace mosaic::eval
