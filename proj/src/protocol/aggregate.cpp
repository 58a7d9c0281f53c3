#include "mosaic/protocol/aggregate.hpp"

#include "mosaic/core/errors.hpp"
#include "mosaic/core/log.hpp"

#include <algorithm>
#include <map>

namespace mosaic::protocol {

double weighted_coordinate(std::span<const double> values, std::span<const double> weights, double fallback) {
  double total = 0.0;
  for (double w : weights) total += w;
  if (!(total > 0.0)) return fallback;
  // Zero-weight values take no part, not even as reference or range bound,
  // so a sole contributor comes back exactly.
  std::size_t first = 0;
  while (!(weights[first] > 0.0)) ++first;
  const double ref = values[first];
  double lo = ref;
  double hi = ref;
  double acc = 0.0;
  for (std::size_t i = first; i < values.size(); ++i) {
    if (!(weights[i] > 0.0)) continue;
    lo = std::min(lo, values[i]);
    hi = std::max(hi, values[i]);
    acc += (weights[i] / total) * (values[i] - ref);
  }
  return std::clamp(ref + acc, lo, hi);
}

namespace {

std::vector<const Contribution*> sorted_by_id(std::span<const Contribution> clients) {
  std::vector<const Contribution*> order;
  order.reserve(clients.size());
  for (const auto& c : clients) {
    if (c.params == nullptr) throw ConfigError("contribution without parameters");
    if (!(c.weight >= 0.0)) throw ConfigError("aggregation weights must be non-negative");
    order.push_back(&c);
  }
  std::stable_sort(order.begin(), order.end(),
                   [](const Contribution* a, const Contribution* b) { return a->client_id < b->client_id; });
  for (std::size_t i = 1; i < order.size(); ++i) {
    if (order[i]->client_id == order[i - 1]->client_id) throw ConfigError("duplicate client id in aggregation");
  }
  return order;
}

// Combines full-width views; covers[i] may be null for "covers everything".
nn::ParamSet combine(const nn::ParamSet& base, const std::vector<const nn::ParamSet*>& views,
                     const std::vector<const models::CoverageMap*>& covers, const std::vector<double>& weights) {
  nn::ParamSet out = base;
  std::vector<double> vals;
  std::vector<double> ws;
  vals.reserve(views.size());
  ws.reserve(views.size());
  auto entries = out.mutable_entries();
  for (std::size_t e = 0; e < entries.size(); ++e) {
    auto& entry = entries[e];
    std::vector<const models::CoverageMask*> masks(views.size(), nullptr);
    for (std::size_t i = 0; i < views.size(); ++i) {
      if (covers[i] == nullptr) continue;
      for (const auto& [name, mask] : *covers[i]) {
        if (name == entry.name) masks[i] = &mask;
      }
    }
    std::vector<const Matrix*> src(views.size());
    for (std::size_t i = 0; i < views.size(); ++i) src[i] = &views[i]->at(entry.name);
    for (Eigen::Index r = 0; r < entry.value.rows(); ++r) {
      for (Eigen::Index c = 0; c < entry.value.cols(); ++c) {
        vals.clear();
        ws.clear();
        for (std::size_t i = 0; i < views.size(); ++i) {
          if (covers[i] != nullptr && (masks[i] == nullptr || !(*masks[i])(r, c))) continue;
          vals.push_back((*src[i])(r, c));
          ws.push_back(weights[i]);
        }
        if (!vals.empty()) entry.value(r, c) = weighted_coordinate(vals, ws, entry.value(r, c));
      }
    }
  }
  return out;
}

}  // namespace

nn::ParamSet fedavg_aggregate(std::span<const Contribution> clients) {
  if (clients.empty()) throw ConfigError("fedavg needs at least one client");
  const auto order = sorted_by_id(clients);
  double total = 0.0;
  std::vector<const nn::ParamSet*> views;
  std::vector<double> weights;
  for (const auto* c : order) {
    if (!c->params->same_structure(*order.front()->params)) {
      throw StructureError("fedavg requires identical parameter structure across clients");
    }
    total += c->weight;
    views.push_back(c->params);
    weights.push_back(c->weight);
  }
  if (!(total > 0.0)) throw ConfigError("aggregation weights are all zero");
  const std::vector<const models::CoverageMap*> covers(views.size(), nullptr);
  return combine(*order.front()->params, views, covers, weights);
}

nn::ParamSet partial_aggregate(const nn::ParamSet& previous, const nn::ModelSpec& global_spec,
                               std::span<const Contribution> clients) {
  nn::check_params(previous, global_spec);
  const auto order = sorted_by_id(clients);
  std::vector<nn::ParamSet> embedded;
  std::vector<models::CoverageMap> coverage;
  embedded.reserve(order.size());
  coverage.reserve(order.size());
  std::vector<double> weights;
  for (const auto* c : order) {
    embedded.push_back(previous);
    if (c->mask == nullptr) {
      if (!c->params->same_structure(previous)) throw StructureError("unmasked contribution is not full width");
      embedded.back() = *c->params;
      coverage.emplace_back();
    } else {
      coverage.push_back(models::embed_submodel(embedded.back(), global_spec, *c->params, *c->mask));
    }
    weights.push_back(c->weight);
  }
  std::vector<const nn::ParamSet*> views;
  std::vector<const models::CoverageMap*> covers;
  for (std::size_t i = 0; i < order.size(); ++i) {
    views.push_back(&embedded[i]);
    covers.push_back(order[i]->mask == nullptr ? nullptr : &coverage[i]);
  }
  return combine(previous, views, covers, weights);
}

std::vector<GroupResult> grouped_aggregate(std::span<const Contribution> clients) {
  const auto order = sorted_by_id(clients);
  std::vector<GroupResult> groups;
  std::vector<std::vector<Contribution>> members;
  for (const auto* c : order) {
    if (c->spec == nullptr) throw ConfigError("grouped aggregation needs a spec per contribution");
    nn::check_params(*c->params, *c->spec);
    std::size_t g = 0;
    while (g < groups.size() && !(groups[g].spec == *c->spec)) ++g;
    if (g == groups.size()) {
      groups.push_back({*c->spec, {}, {}});
      members.emplace_back();
    }
    groups[g].client_ids.push_back(c->client_id);
    members[g].push_back(*c);
  }
  std::vector<GroupResult> out;
  for (std::size_t g = 0; g < groups.size(); ++g) {
    double total = 0.0;
    for (const auto& m : members[g]) total += m.weight;
    if (!(total > 0.0)) {
      log::info("skipping architecture group with zero total weight");
      continue;
    }
    groups[g].params = fedavg_aggregate(members[g]);
    out.push_back(std::move(groups[g]));
  }
  return out;
}

}  // namespace mosaic::protocol
