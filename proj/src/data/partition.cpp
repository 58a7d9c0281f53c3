#include "mosaic/data/partition.hpp"

#include "mosaic/core/errors.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <ostream>
#include <random>
#include <string>

namespace mosaic::data {

std::vector<double> sample_dirichlet(std::size_t n, double alpha, Rng& rng) {
  if (!(alpha > 0.0)) throw ConfigError("Dirichlet concentration must be positive");
  // log Gamma(alpha) = log Gamma(alpha + 1) + log(U) / alpha keeps tiny draws
  // representable; the normalization happens after subtracting the max.
  std::vector<double> logs(n);
  std::gamma_distribution<double> gamma(alpha + 1.0, 1.0);
  for (auto& l : logs) {
    const double g = gamma(rng.engine());
    double u = rng.uniform();
    while (u <= 0.0) u = rng.uniform();
    l = std::log(g) + std::log(u) / alpha;
  }
  const double peak = *std::max_element(logs.begin(), logs.end());
  std::vector<double> p(n);
  double sum = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    p[i] = std::exp(logs[i] - peak);
    sum += p[i];
  }
  for (auto& v : p) v /= sum;
  return p;
}

Partition dirichlet_partition(const Labels& labels, std::size_t classes, std::size_t clients, double omega,
                              std::uint64_t seed) {
  if (clients == 0) throw ConfigError("partition needs at least one client");
  if (!(omega > 0.0)) throw ConfigError("omega must be positive");
  if (clients > labels.size()) {
    throw InfeasibleError(std::to_string(clients) + " clients but only " + std::to_string(labels.size()) +
                          " samples");
  }
  Partition part;
  part.omega = omega;
  part.seed = seed;
  part.client_shards.assign(clients, {});

  std::vector<std::vector<std::size_t>> by_class(classes);
  for (std::size_t i = 0; i < labels.size(); ++i) by_class.at(static_cast<std::size_t>(labels[i])).push_back(i);

  const Rng root(seed);
  for (std::size_t c = 0; c < classes; ++c) {
    auto& idx = by_class[c];
    if (idx.empty()) continue;
    Rng rng = root.derive("partition.class", {c});
    std::shuffle(idx.begin(), idx.end(), rng.engine());
    const auto shares = sample_dirichlet(clients, omega, rng);
    const double n_c = static_cast<double>(idx.size());
    double cumulative = 0.0;
    std::size_t begin = 0;
    for (std::size_t j = 0; j < clients; ++j) {
      cumulative += shares[j];
      std::size_t end = j + 1 == clients ? idx.size()
                                         : std::min(idx.size(), static_cast<std::size_t>(std::llround(cumulative * n_c)));
      end = std::max(end, begin);
      part.client_shards[j].insert(part.client_shards[j].end(), idx.begin() + static_cast<std::ptrdiff_t>(begin),
                                   idx.begin() + static_cast<std::ptrdiff_t>(end));
      begin = end;
    }
  }
  for (auto& shard : part.client_shards) std::sort(shard.begin(), shard.end());

  for (std::size_t j = 0; j < clients; ++j) {
    if (!part.client_shards[j].empty()) continue;
    std::size_t donor = 0;
    for (std::size_t k = 1; k < clients; ++k) {
      if (part.client_shards[k].size() > part.client_shards[donor].size()) donor = k;
    }
    part.client_shards[j].push_back(part.client_shards[donor].back());
    part.client_shards[donor].pop_back();
  }
  return part;
}

PartitionStats partition_stats(const Partition& partition, const Labels& labels, std::size_t classes) {
  PartitionStats s;
  const std::size_t n = partition.client_shards.size();
  s.histograms.assign(n, std::vector<std::size_t>(classes, 0));
  s.sizes.assign(n, 0);
  s.top2_share.assign(n, 0.0);
  double entropy_sum = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t row : partition.client_shards[i]) ++s.histograms[i].at(static_cast<std::size_t>(labels.at(row)));
    s.sizes[i] = partition.client_shards[i].size();
    if (s.sizes[i] == 0) continue;
    const double total = static_cast<double>(s.sizes[i]);
    double h = 0.0;
    for (std::size_t count : s.histograms[i]) {
      if (count == 0) continue;
      const double p = static_cast<double>(count) / total;
      h -= p * std::log(p);
    }
    entropy_sum += h;
    auto sorted = s.histograms[i];
    std::sort(sorted.begin(), sorted.end(), std::greater<>());
    const std::size_t top = sorted[0] + (sorted.size() > 1 ? sorted[1] : 0);
    s.top2_share[i] = static_cast<double>(top) / total;
  }
  s.mean_label_entropy = n == 0 ? 0.0 : entropy_sum / static_cast<double>(n);
  if (n > 0) {
    s.min_size = *std::min_element(s.sizes.begin(), s.sizes.end());
    s.max_size = *std::max_element(s.sizes.begin(), s.sizes.end());
  }
  return s;
}

void write_partition_csv(std::ostream& out, const PartitionStats& stats) {
  out << "client_id,class,count\n";
  for (std::size_t i = 0; i < stats.histograms.size(); ++i) {
    for (std::size_t c = 0; c < stats.histograms[i].size(); ++c) {
      out << i << ',' << c << ',' << stats.histograms[i][c] << '\n';
    }
  }
}

}  // namespace mosaic::data
