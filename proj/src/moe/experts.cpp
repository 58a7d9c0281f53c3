#include "mosaic/moe/experts.hpp"

#include "mosaic/core/errors.hpp"
#include "mosaic/core/log.hpp"
#include "mosaic/models/zoo.hpp"
#include "mosaic/nn/losses.hpp"
#include "mosaic/nn/network.hpp"
#include "mosaic/nn/optim.hpp"
#include "mosaic/protocol/aggregate.hpp"

#include <algorithm>
#include <numeric>
#include <ostream>

namespace mosaic::moe {

std::vector<nn::ParamSet> classwise_aggregate(const std::vector<ClientView>& clients, const nn::ParamSet& global,
                                              std::vector<std::size_t>* fallback_classes) {
  if (clients.empty()) throw ConfigError("class-wise aggregation needs at least one client");
  const std::size_t classes = clients.front().label_histogram.size();
  std::vector<nn::ParamSet> experts;
  experts.reserve(classes);
  if (fallback_classes) fallback_classes->clear();
  for (std::size_t c = 0; c < classes; ++c) {
    std::vector<protocol::Contribution> contribs;
    double total = 0.0;
    for (const auto& v : clients) {
      if (v.label_histogram.size() != classes) throw ShapeError("clients disagree on the class count");
      if (!v.params->same_structure(global)) throw StructureError("client view is not full width");
      const double w = static_cast<double>(v.label_histogram[c]);
      total += w;
      contribs.push_back({v.id, w, v.params, nullptr, nullptr});
    }
    if (total > 0.0) {
      experts.push_back(protocol::fedavg_aggregate(contribs));
    } else {
      log::info("class " + std::to_string(c) + " has no samples on any client; its expert is the global model");
      if (fallback_classes) fallback_classes->push_back(c);
      experts.push_back(global);
    }
  }
  return experts;
}

nn::ParamSet embed_client(const nn::ParamSet& global, const nn::ModelSpec& global_spec, const nn::ParamSet& sub,
                          const models::SubModelMask& mask) {
  nn::ParamSet full = global;
  models::embed_submodel(full, global_spec, sub, mask);
  return full;
}

ExpertSet build_expert_set(const std::vector<ClientView>& clients, const nn::ParamSet& global,
                           const nn::ModelSpec& spec, std::size_t top_k, Rng& rng) {
  nn::check_params(global, spec);
  ExpertSet set;
  set.spec = spec;
  set.experts = classwise_aggregate(clients, global, &set.fallback_classes);
  const std::size_t c = set.experts.size();
  if (top_k < 1 || top_k > c) throw ConfigError("top_k must lie in [1, C]");
  set.top_k = top_k;
  set.gating = global;
  set.meta_spec = models::meta_spec(c);
  set.meta = models::meta_averaging_init(c, top_k, rng);
  set.meta_ema = set.meta;
  return set;
}

std::vector<std::size_t> gate_topk(std::span<const double> scores, std::size_t k) {
  if (k < 1 || k > scores.size()) throw ConfigError("top_k must lie in [1, C]");
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  order.resize(k);
  std::sort(order.begin(), order.end());
  return order;
}

namespace {

Matrix model_logits(const nn::ParamSet& params, const nn::ModelSpec& spec, const Matrix& x, MetaMode mode) {
  return mode == MetaMode::raw_input ? nn::predict(params, spec, x) : nn::head_forward(params, spec, x);
}

void check_input(const ExpertSet& set, const Matrix& x, MetaMode mode) {
  const std::size_t want = mode == MetaMode::raw_input ? set.spec.input_dim() : set.spec.feature_dim();
  if (static_cast<std::size_t>(x.cols()) != want) {
    throw ShapeError("meta input has " + std::to_string(x.cols()) + " columns, expected " + std::to_string(want));
  }
}

// Row-wise active sets from the gating model.
std::vector<std::vector<std::size_t>> active_sets(const ExpertSet& set, const Matrix& x, MetaMode mode) {
  const Matrix g = model_logits(set.gating, set.spec, x, mode);
  std::vector<std::vector<std::size_t>> active(static_cast<std::size_t>(x.rows()));
  for (Eigen::Index r = 0; r < g.rows(); ++r) {
    const RowVector row = g.row(r);
    active[static_cast<std::size_t>(r)] = gate_topk(std::span<const double>(row.data(), row.size()), set.top_k);
  }
  return active;
}

}  // namespace

Matrix meta_inputs(const ExpertSet& set, const Matrix& x, MetaMode mode) {
  check_input(set, x, mode);
  const auto c = static_cast<Eigen::Index>(set.classes());
  const auto active = active_sets(set, x, mode);
  Matrix in = Matrix::Zero(x.rows(), c * c);
  for (Eigen::Index e = 0; e < c; ++e) {
    const Matrix logits = model_logits(set.experts[static_cast<std::size_t>(e)], set.spec, x, mode);
    for (Eigen::Index r = 0; r < x.rows(); ++r) {
      const auto& a = active[static_cast<std::size_t>(r)];
      if (std::binary_search(a.begin(), a.end(), static_cast<std::size_t>(e))) {
        in.block(r, e * c, 1, c) = logits.row(r);
      }
    }
  }
  return in;
}

Matrix meta_forward(const ExpertSet& set, const Matrix& x, MetaMode mode, bool use_ema) {
  return nn::predict(use_ema ? set.meta_ema : set.meta, set.meta_spec, meta_inputs(set, x, mode));
}

Matrix classwise_uniform_forward(const ExpertSet& set, const Matrix& x) {
  check_input(set, x, MetaMode::raw_input);
  const auto c = static_cast<Eigen::Index>(set.classes());
  const auto active = active_sets(set, x, MetaMode::raw_input);
  Matrix out = Matrix::Zero(x.rows(), c);
  for (Eigen::Index e = 0; e < c; ++e) {
    const Matrix logits = nn::predict(set.experts[static_cast<std::size_t>(e)], set.spec, x);
    for (Eigen::Index r = 0; r < x.rows(); ++r) {
      const auto& a = active[static_cast<std::size_t>(r)];
      if (std::binary_search(a.begin(), a.end(), static_cast<std::size_t>(e))) out.row(r) += logits.row(r);
    }
  }
  return out / static_cast<double>(set.top_k);
}

std::vector<Prototype> extract_prototypes(std::size_t client_id, const nn::ParamSet& params,
                                          const nn::ModelSpec& spec, const models::SubModelMask& mask,
                                          const nn::ModelSpec& global_spec, const data::Dataset& train,
                                          const std::vector<std::size_t>& shard, std::size_t q) {
  if (q < 1) throw ConfigError("prototype count q must be at least 1");
  const Labels& labels = train.labels();
  std::vector<std::vector<std::size_t>> by_class(train.classes());
  for (std::size_t row : shard) by_class[static_cast<std::size_t>(labels.at(row))].push_back(row);
  std::vector<std::size_t> order;
  for (std::size_t c = 0; c < by_class.size(); ++c) {
    if (!by_class[c].empty()) order.push_back(c);
  }
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return by_class[a].size() > by_class[b].size(); });
  if (order.size() < q) {
    log::info("client " + std::to_string(client_id) + " has " + std::to_string(order.size()) +
              " nonempty classes, fewer than q = " + std::to_string(q));
  } else {
    order.resize(q);
  }
  std::sort(order.begin(), order.end());
  std::vector<Prototype> out;
  for (std::size_t c : order) {
    const auto fwd = nn::forward(params, spec, train.batch(by_class[c]).inputs, nn::Mode::eval);
    const Matrix full = models::embed_features(fwd.features, global_spec, mask);
    out.push_back({client_id, static_cast<int>(c), full.colwise().mean(), by_class[c].size()});
  }
  return out;
}

std::vector<double> train_meta(ExpertSet& set, const std::vector<Prototype>& prototypes, const MetaConfig& config) {
  if (prototypes.empty()) throw ConfigError("meta training needs at least one prototype");
  if (!(config.ema_decay >= 0.0 && config.ema_decay <= 1.0)) throw ConfigError("ema_decay must lie in [0, 1]");
  Matrix features(static_cast<Eigen::Index>(prototypes.size()), prototypes.front().feature.cols());
  Labels labels;
  for (std::size_t i = 0; i < prototypes.size(); ++i) {
    features.row(static_cast<Eigen::Index>(i)) = prototypes[i].feature;
    labels.push_back(prototypes[i].label);
  }
  // Experts and gating are frozen, so the meta inputs are computed once.
  const Matrix inputs = meta_inputs(set, features, MetaMode::feature);
  nn::OptimizerState state;
  const nn::OptimizerConfig opt = nn::AdamConfig{config.lr};
  std::vector<double> losses;
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    auto fwd = nn::forward(set.meta, set.meta_spec, inputs, nn::Mode::train);
    const auto loss = nn::cross_entropy(fwd.logits, labels);
    auto grads = nn::backward(fwd.cache, loss.grad);
    nn::optimizer_step(set.meta, grads.params, state, opt);
    auto shadow = set.meta_ema.mutable_entries();
    for (std::size_t e = 0; e < shadow.size(); ++e) {
      shadow[e].value = config.ema_decay * shadow[e].value + (1.0 - config.ema_decay) * set.meta.entries()[e].value;
    }
    losses.push_back(loss.value);
  }
  return losses;
}

Matrix vanilla_ensemble(const std::vector<const nn::ParamSet*>& models, const nn::ModelSpec& spec, const Matrix& x) {
  if (models.empty()) throw ConfigError("vanilla ensemble needs at least one model");
  Matrix sum = nn::predict(*models.front(), spec, x);
  for (std::size_t i = 1; i < models.size(); ++i) sum += nn::predict(*models[i], spec, x);
  return sum / static_cast<double>(models.size());
}

std::string_view teacher_name(TeacherKind kind) {
  switch (kind) {
    case TeacherKind::meta_moe: return "meta_moe";
    case TeacherKind::classwise_uniform: return "classwise_uniform";
    case TeacherKind::vanilla: return "vanilla";
  }
  return "meta_moe";
}

TeacherKind teacher_from_name(std::string_view name) {
  if (name == "meta_moe") return TeacherKind::meta_moe;
  if (name == "classwise_uniform") return TeacherKind::classwise_uniform;
  if (name == "vanilla") return TeacherKind::vanilla;
  throw ConfigError("unknown teacher '" + std::string(name) + "' (expected meta_moe, classwise_uniform or vanilla)");
}

void write_prototypes_csv(std::ostream& out, const std::vector<Prototype>& prototypes) {
  out << "client,class,support";
  const Eigen::Index dim = prototypes.empty() ? 0 : prototypes.front().feature.cols();
  for (Eigen::Index j = 0; j < dim; ++j) out << ",f" << j;
  out << '\n';
  out.precision(17);
  for (const auto& p : prototypes) {
    out << p.client << ',' << p.label << ',' << p.support;
    for (Eigen::Index j = 0; j < p.feature.cols(); ++j) out << ',' << p.feature(j);
    out << '\n';
  }
}

}  // namespace mosaic::moe
