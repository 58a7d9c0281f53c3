#include "mosaic/models/width.hpp"

#include "mosaic/core/errors.hpp"
#include "mosaic/core/log.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace mosaic::models {

using nn::ModelSpec;

std::vector<double> width_budget(std::size_t clients, unsigned sigma, unsigned rho) {
  std::vector<double> ratios;
  ratios.reserve(clients);
  for (std::size_t i = 1; i <= clients; ++i) {
    const std::size_t level = std::min<std::size_t>(sigma, (static_cast<std::size_t>(rho) * i) / clients);
    ratios.push_back(std::ldexp(1.0, -static_cast<int>(level)));
  }
  return ratios;
}

std::string_view scheme_name(MaskScheme scheme) {
  return scheme == MaskScheme::fixed ? "static" : "rolling";
}

MaskScheme scheme_from_name(std::string_view name) {
  if (name == "static") return MaskScheme::fixed;
  if (name == "rolling") return MaskScheme::rolling;
  throw ConfigError("unknown mask scheme '" + std::string(name) + "'");
}

std::vector<std::size_t> hidden_dense_layers(const ModelSpec& spec) {
  std::vector<std::size_t> dense;
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    if (std::holds_alternative<nn::Dense>(spec.layers[i])) dense.push_back(i);
  }
  // Without a head the last dense layer produces the model output.
  if (!spec.head_index() && !dense.empty()) dense.pop_back();
  return dense;
}

SubModelMask submodel_mask(const ModelSpec& global, double ratio, MaskScheme scheme, std::size_t round) {
  if (!(ratio > 0.0) || ratio > 1.0) throw ConfigError("width ratio must lie in (0, 1]");
  SubModelMask mask;
  mask.scheme = scheme;
  mask.round = round;
  mask.ratio = ratio;
  for (std::size_t layer : hidden_dense_layers(global)) {
    const std::size_t w = std::get<nn::Dense>(global.layers[layer]).out;
    if (std::ceil(ratio * static_cast<double>(w) - 1e-9) < 1.0) {
      log::info("width ratio selects no unit of layer " + std::to_string(layer) + "; keeping one");
    }
    const std::size_t keep = nn::scaled_width(w, ratio);
    std::vector<std::size_t> units(keep);
    const std::size_t start = scheme == MaskScheme::rolling ? round % w : 0;
    for (std::size_t j = 0; j < keep; ++j) units[j] = (start + j) % w;
    std::sort(units.begin(), units.end());
    mask.units.push_back(std::move(units));
  }
  return mask;
}

namespace {

std::vector<std::size_t> iota(std::size_t n) {
  std::vector<std::size_t> v(n);
  std::iota(v.begin(), v.end(), std::size_t{0});
  return v;
}

void check_mask(const ModelSpec& global, const SubModelMask& mask) {
  const auto hidden = hidden_dense_layers(global);
  if (hidden.size() != mask.units.size()) {
    throw StructureError("mask has " + std::to_string(mask.units.size()) + " layers, spec has " +
                         std::to_string(hidden.size()) + " hidden dense layers");
  }
  for (std::size_t h = 0; h < hidden.size(); ++h) {
    const std::size_t w = std::get<nn::Dense>(global.layers[hidden[h]]).out;
    const auto& u = mask.units[h];
    if (u.empty()) throw StructureError("mask selects no unit of a hidden layer");
    for (std::size_t j = 0; j < u.size(); ++j) {
      if (u[j] >= w) throw StructureError("mask index out of layer width");
      if (j > 0 && u[j] <= u[j - 1]) throw StructureError("mask indices must be sorted and unique");
    }
  }
}

}  // namespace

std::vector<EntrySlice> mask_slices(const ModelSpec& global, const SubModelMask& mask) {
  check_mask(global, mask);
  std::vector<EntrySlice> slices;
  std::vector<std::size_t> current = iota(global.input_dim());
  std::size_t hidden = 0;
  const auto hidden_layers = hidden_dense_layers(global);
  for (std::size_t i = 0; i < global.layers.size(); ++i) {
    const std::string p = ModelSpec::prefix(i);
    const auto& layer = global.layers[i];
    if (const auto* d = std::get_if<nn::Dense>(&layer)) {
      const bool masked = hidden < hidden_layers.size() && hidden_layers[hidden] == i;
      std::vector<std::size_t> out = masked ? mask.units[hidden++] : iota(d->out);
      slices.push_back({p + "weight", current, out});
      slices.push_back({p + "bias", {0}, out});
      current = std::move(out);
    } else if (std::holds_alternative<nn::BatchNorm>(layer)) {
      for (const char* name : {"gain", "shift", "running_mean", "running_var"}) {
        slices.push_back({p + name, {0}, current});
      }
    } else if (const auto* h = std::get_if<nn::OutputHead>(&layer)) {
      std::vector<std::size_t> out = iota(h->classes);
      slices.push_back({p + "weight", current, out});
      slices.push_back({p + "bias", {0}, out});
      current = std::move(out);
    }
  }
  return slices;
}

ModelSpec submodel_spec(const ModelSpec& global, const SubModelMask& mask) {
  check_mask(global, mask);
  ModelSpec spec = global;
  spec.width_ratio = global.width_ratio * mask.ratio;
  std::size_t current = global.input_dim();
  std::size_t hidden = 0;
  const auto hidden_layers = hidden_dense_layers(global);
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    auto& layer = spec.layers[i];
    if (auto* d = std::get_if<nn::Dense>(&layer)) {
      d->in = current;
      if (hidden < hidden_layers.size() && hidden_layers[hidden] == i) d->out = mask.units[hidden++].size();
      current = d->out;
    } else if (auto* bn = std::get_if<nn::BatchNorm>(&layer)) {
      bn->dim = current;
    } else if (auto* h = std::get_if<nn::OutputHead>(&layer)) {
      h->dim = current;
      current = h->classes;
    }
  }
  spec.validate();
  return spec;
}

SubModel extract_submodel(const nn::ParamSet& global, const ModelSpec& global_spec, const SubModelMask& mask) {
  nn::check_params(global, global_spec);
  SubModel sub;
  sub.spec = submodel_spec(global_spec, mask);
  for (const auto& s : mask_slices(global_spec, mask)) {
    const auto& src = global.entry(s.name);
    Matrix m(static_cast<Eigen::Index>(s.rows.size()), static_cast<Eigen::Index>(s.cols.size()));
    for (std::size_t r = 0; r < s.rows.size(); ++r) {
      for (std::size_t c = 0; c < s.cols.size(); ++c) {
        m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) =
            src.value(static_cast<Eigen::Index>(s.rows[r]), static_cast<Eigen::Index>(s.cols[c]));
      }
    }
    sub.params.add(s.name, src.role, std::move(m));
  }
  return sub;
}

CoverageMap coverage(const nn::ParamSet& global, const ModelSpec& global_spec, const SubModelMask& mask) {
  CoverageMap map;
  for (const auto& s : mask_slices(global_spec, mask)) {
    const Matrix& g = global.at(s.name);
    CoverageMask cov = CoverageMask::Constant(g.rows(), g.cols(), false);
    for (std::size_t r : s.rows) {
      for (std::size_t c : s.cols) cov(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = true;
    }
    map.emplace_back(s.name, std::move(cov));
  }
  return map;
}

CoverageMap embed_submodel(nn::ParamSet& global, const ModelSpec& global_spec, const nn::ParamSet& sub,
                           const SubModelMask& mask) {
  nn::check_params(global, global_spec);
  nn::check_params(sub, submodel_spec(global_spec, mask));
  const auto slices = mask_slices(global_spec, mask);
  for (const auto& s : slices) {
    Matrix& dst = global.mutable_at(s.name);
    const Matrix& src = sub.at(s.name);
    for (std::size_t r = 0; r < s.rows.size(); ++r) {
      for (std::size_t c = 0; c < s.cols.size(); ++c) {
        dst(static_cast<Eigen::Index>(s.rows[r]), static_cast<Eigen::Index>(s.cols[c])) =
            src(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c));
      }
    }
  }
  return coverage(global, global_spec, mask);
}

Matrix embed_features(const Matrix& features, const ModelSpec& global_spec, const SubModelMask& mask) {
  check_mask(global_spec, mask);
  const std::size_t full = global_spec.feature_dim();
  if (mask.units.empty()) {
    if (static_cast<std::size_t>(features.cols()) != full) throw ShapeError("feature width mismatch");
    return features;
  }
  const auto& last = mask.units.back();
  if (static_cast<std::size_t>(features.cols()) != last.size()) {
    throw ShapeError("feature width " + std::to_string(features.cols()) + " does not match mask width " +
                     std::to_string(last.size()));
  }
  Matrix out = Matrix::Zero(features.rows(), static_cast<Eigen::Index>(full));
  for (std::size_t j = 0; j < last.size(); ++j) {
    out.col(static_cast<Eigen::Index>(last[j])) = features.col(static_cast<Eigen::Index>(j));
  }
  return out;
}

}  // namespace mosaic::models
