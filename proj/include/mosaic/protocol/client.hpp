#pragma once

#include "mosaic/core/rng.hpp"
#include "mosaic/data/dataset.hpp"
#include "mosaic/models/width.hpp"
#include "mosaic/models/zoo.hpp"
#include "mosaic/nn/optim.hpp"

#include <optional>
#include <vector>

namespace mosaic::protocol {

enum class Scheme { fedavg, static_pt, rolling_pt };

std::string_view scheme_name(Scheme scheme);
Scheme scheme_from_name(std::string_view name);

struct ClientState {
  std::size_t id = 0;
  /// Sorted row indices into the training set.
  std::vector<std::size_t> shard;
  std::size_t n = 0;
  /// |D_{i,c}| for every class; sums to n.
  std::vector<std::size_t> label_histogram;
  double ratio = 1.0;
  /// Mask under which `params` was received (identity for fedavg).
  models::SubModelMask mask;
  nn::ModelSpec spec;
  nn::ParamSet params;
  nn::OptimizerState optimizer;
  std::optional<models::Model> generator;
  /// Mean task loss over the steps of the last local update.
  double last_loss = 0.0;
  /// Task loss of every step of the last local update.
  std::vector<double> step_losses;
};

/// Builds the client for `shard`, computing n and the label histogram. Throws
/// ConfigError on an empty shard.
ClientState make_client(std::size_t id, std::vector<std::size_t> shard, const data::Dataset& train, double ratio);

struct LocalConfig {
  std::size_t iterations = 10;
  std::size_t batch = 32;
  double lr = 0.05;
  double momentum = 0.9;
  Scheme scheme = Scheme::fedavg;
  std::size_t round = 0;
};

/// The width ratio a client trains at under `scheme`; always 1 for fedavg.
double effective_ratio(const ClientState& client, Scheme scheme);

/// Mask a client receives in `round` under `scheme`.
models::SubModelMask client_mask(const ClientState& client, const nn::ModelSpec& global_spec, Scheme scheme,
                                 std::size_t round);

/// The client receives its (sub)model of `global`, then runs `iterations`
/// mini-batch cross-entropy steps with SGD on its own shard. Batches are
/// drawn without replacement when the shard is large enough and padded by
/// resampling otherwise, so BN always sees at least two rows. Optimizer state
/// starts fresh every round.
void local_update(ClientState& client, const data::Dataset& train, const nn::ParamSet& global,
                  const nn::ModelSpec& global_spec, const LocalConfig& config, Rng rng);

/// Uniform S-of-N draw without replacement, returned sorted. Throws
/// ConfigError unless 1 ≤ S ≤ N.
std::vector<std::size_t> sample_clients(std::size_t clients, std::size_t sampled, std::size_t round,
                                        std::uint64_t seed);

/// Row indices of one training mini-batch drawn from `shard`.
std::vector<std::size_t> draw_batch(const std::vector<std::size_t>& shard, std::size_t batch, Rng& rng);

}  // namespace mosaic::protocol
