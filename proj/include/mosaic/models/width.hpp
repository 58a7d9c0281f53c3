#pragma once

#include "mosaic/nn/model_spec.hpp"
#include "mosaic/nn/param_set.hpp"

#include <Eigen/Core>

#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace mosaic::models {

/// R_i = (1/2)^min(σ, ⌊ρ·i/N⌋) for i = 1..N.
std::vector<double> width_budget(std::size_t clients, unsigned sigma, unsigned rho);

enum class MaskScheme { fixed, rolling };

std::string_view scheme_name(MaskScheme scheme);
MaskScheme scheme_from_name(std::string_view name);

/// Selected units of every hidden dense layer of a full-width model.
struct SubModelMask {
  /// One sorted, unique index list per hidden dense layer, in layer order.
  std::vector<std::vector<std::size_t>> units;
  MaskScheme scheme = MaskScheme::fixed;
  std::size_t round = 0;
  double ratio = 1.0;

  friend bool operator==(const SubModelMask&, const SubModelMask&) = default;
};

/// Layer indices of the dense layers whose outputs are hidden units.
std::vector<std::size_t> hidden_dense_layers(const nn::ModelSpec& spec);

/// fixed: the first ⌈R·w⌉ units of each hidden layer. rolling: a contiguous
/// wrap-around window of ⌈R·w⌉ units starting at (round mod w). Input and
/// output dimensions are never masked.
SubModelMask submodel_mask(const nn::ModelSpec& global, double ratio, MaskScheme scheme, std::size_t round);

struct SubModel {
  nn::ModelSpec spec;
  nn::ParamSet params;
};

/// Row/column selections that map one sub-model entry into its global entry.
struct EntrySlice {
  std::string name;
  std::vector<std::size_t> rows;
  std::vector<std::size_t> cols;
};

std::vector<EntrySlice> mask_slices(const nn::ModelSpec& global, const SubModelMask& mask);

/// Spec of the sub-model selected by `mask`.
nn::ModelSpec submodel_spec(const nn::ModelSpec& global, const SubModelMask& mask);

SubModel extract_submodel(const nn::ParamSet& global, const nn::ModelSpec& global_spec, const SubModelMask& mask);

using CoverageMask = Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Per global entry, which coordinates a sub-model covers.
using CoverageMap = std::vector<std::pair<std::string, CoverageMask>>;

CoverageMap coverage(const nn::ParamSet& global, const nn::ModelSpec& global_spec, const SubModelMask& mask);

/// Writes the sub-model's values into the masked coordinates of `global`
/// and returns which coordinates were written.
CoverageMap embed_submodel(nn::ParamSet& global, const nn::ModelSpec& global_spec, const nn::ParamSet& sub,
                           const SubModelMask& mask);

/// Scatters sub-model features (rows × sub width) into full-width features,
/// zero at unselected units of the last hidden layer.
Matrix embed_features(const Matrix& features, const nn::ModelSpec& global_spec, const SubModelMask& mask);

}  // namespace mosaic::models
