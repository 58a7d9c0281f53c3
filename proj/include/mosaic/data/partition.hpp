#pragma once

#include "mosaic/core/rng.hpp"
#include "mosaic/core/tensor.hpp"

#include <cstdint>
#include <iosfwd>
#include <vector>

namespace mosaic::data {

struct Partition {
  /// Sorted row indices per client; pairwise disjoint, covering, none empty.
  std::vector<std::vector<std::size_t>> client_shards;
  double omega = 1.0;
  std::uint64_t seed = 0;
};

/// Draws p ~ Dir(alpha·1_n). Small alpha is handled in log space so the draw
/// never collapses to an all-zero vector.
std::vector<double> sample_dirichlet(std::size_t n, double alpha, Rng& rng);

/// Per-class Dirichlet split: for every class, proportions p ~ Dir(ω·1_N) cut
/// the shuffled class indices into consecutive runs by cumulative share. Any
/// empty shard then receives one sample from the currently largest shard.
/// Throws ConfigError for N = 0 or ω ≤ 0, InfeasibleError when N exceeds the
/// number of samples.
Partition dirichlet_partition(const Labels& labels, std::size_t classes, std::size_t clients, double omega,
                              std::uint64_t seed);

struct PartitionStats {
  std::vector<std::vector<std::size_t>> histograms;
  std::vector<std::size_t> sizes;
  /// Mean over clients of the entropy of their label distribution.
  double mean_label_entropy = 0.0;
  /// Per client, the share of its samples held by its two largest classes.
  std::vector<double> top2_share;
  std::size_t min_size = 0;
  std::size_t max_size = 0;
};

PartitionStats partition_stats(const Partition& partition, const Labels& labels, std::size_t classes);

/// CSV with header `client_id,class,count`, one row per (client, class).
void write_partition_csv(std::ostream& out, const PartitionStats& stats);

}  // namespace mosaic::data
