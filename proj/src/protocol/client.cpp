#include "mosaic/protocol/client.hpp"

#include "mosaic/core/errors.hpp"
#include "mosaic/nn/losses.hpp"
#include "mosaic/nn/network.hpp"

#include <algorithm>
#include <numeric>

namespace mosaic::protocol {

std::string_view scheme_name(Scheme scheme) {
  switch (scheme) {
    case Scheme::fedavg: return "fedavg";
    case Scheme::static_pt: return "static_pt";
    case Scheme::rolling_pt: return "rolling_pt";
  }
  return "fedavg";
}

Scheme scheme_from_name(std::string_view name) {
  if (name == "fedavg") return Scheme::fedavg;
  if (name == "static_pt") return Scheme::static_pt;
  if (name == "rolling_pt") return Scheme::rolling_pt;
  throw ConfigError("unknown scheme '" + std::string(name) + "' (expected fedavg, static_pt or rolling_pt)");
}

ClientState make_client(std::size_t id, std::vector<std::size_t> shard, const data::Dataset& train, double ratio) {
  if (shard.empty()) throw ConfigError("client " + std::to_string(id) + " has an empty shard");
  std::sort(shard.begin(), shard.end());
  const Labels& labels = train.labels();
  ClientState c;
  c.id = id;
  c.n = shard.size();
  c.label_histogram.assign(train.classes(), 0);
  for (std::size_t row : shard) ++c.label_histogram[static_cast<std::size_t>(labels.at(row))];
  c.shard = std::move(shard);
  c.ratio = ratio;
  return c;
}

double effective_ratio(const ClientState& client, Scheme scheme) {
  return scheme == Scheme::fedavg ? 1.0 : client.ratio;
}

models::SubModelMask client_mask(const ClientState& client, const nn::ModelSpec& global_spec, Scheme scheme,
                                 std::size_t round) {
  const auto ms = scheme == Scheme::rolling_pt ? models::MaskScheme::rolling : models::MaskScheme::fixed;
  return models::submodel_mask(global_spec, effective_ratio(client, scheme), ms, round);
}

std::vector<std::size_t> draw_batch(const std::vector<std::size_t>& shard, std::size_t batch, Rng& rng) {
  const std::size_t b = std::max<std::size_t>(2, batch);
  std::vector<std::size_t> rows;
  rows.reserve(b);
  if (shard.size() >= b) {
    std::vector<std::size_t> pool = shard;
    for (std::size_t i = 0; i < b; ++i) {
      const std::size_t j = i + rng.index(pool.size() - i);
      std::swap(pool[i], pool[j]);
      rows.push_back(pool[i]);
    }
  } else {
    rows = shard;
    while (rows.size() < b) rows.push_back(shard[rng.index(shard.size())]);
  }
  return rows;
}

void local_update(ClientState& client, const data::Dataset& train, const nn::ParamSet& global,
                  const nn::ModelSpec& global_spec, const LocalConfig& config, Rng rng) {
  if (client.shard.empty()) throw ConfigError("client " + std::to_string(client.id) + " has an empty shard");
  client.mask = client_mask(client, global_spec, config.scheme, config.round);
  auto sub = models::extract_submodel(global, global_spec, client.mask);
  client.spec = std::move(sub.spec);
  client.params = std::move(sub.params);
  client.optimizer = {};
  client.step_losses.clear();
  const nn::OptimizerConfig opt = nn::SgdConfig{config.lr, config.momentum};
  for (std::size_t step = 0; step < config.iterations; ++step) {
    const nn::Batch batch = train.batch(draw_batch(client.shard, config.batch, rng));
    auto fwd = nn::forward(client.params, client.spec, batch, nn::Mode::train);
    const auto loss = nn::cross_entropy(fwd.logits, *batch.labels);
    auto grads = nn::backward(fwd.cache, loss.grad);
    nn::optimizer_step(client.params, grads.params, client.optimizer, opt);
    nn::update_running_stats(client.params, client.spec, fwd.batch_stats);
    client.step_losses.push_back(loss.value);
  }
  client.last_loss = client.step_losses.empty()
                         ? 0.0
                         : std::accumulate(client.step_losses.begin(), client.step_losses.end(), 0.0) /
                               static_cast<double>(client.step_losses.size());
}

std::vector<std::size_t> sample_clients(std::size_t clients, std::size_t sampled, std::size_t round,
                                        std::uint64_t seed) {
  if (sampled < 1 || sampled > clients) {
    throw ConfigError("sampled clients S=" + std::to_string(sampled) + " must lie in [1, N=" +
                      std::to_string(clients) + "]");
  }
  std::vector<std::size_t> ids(clients);
  std::iota(ids.begin(), ids.end(), std::size_t{0});
  Rng rng = Rng(seed).derive("sampling", {round});
  for (std::size_t i = 0; i < sampled; ++i) std::swap(ids[i], ids[i + rng.index(clients - i)]);
  ids.resize(sampled);
  std::sort(ids.begin(), ids.end());
  return ids;
}

}  // namespace mosaic::protocol
