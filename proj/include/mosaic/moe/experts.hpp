#pragma once

#include "mosaic/core/rng.hpp"
#include "mosaic/data/dataset.hpp"
#include "mosaic/models/width.hpp"
#include "mosaic/nn/model_spec.hpp"
#include "mosaic/nn/param_set.hpp"

#include <functional>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

namespace mosaic::moe {

/// A client model brought to full width: coordinates outside its mask come
/// from the global model.
struct ClientView {
  std::size_t id = 0;
  const nn::ParamSet* params = nullptr;
  std::vector<std::size_t> label_histogram;
};

struct ExpertSet {
  nn::ModelSpec spec;
  /// One full-width model per class.
  std::vector<nn::ParamSet> experts;
  /// Classes with no sample anywhere, whose expert is the global model.
  std::vector<std::size_t> fallback_classes;
  nn::ParamSet gating;
  nn::ModelSpec meta_spec;
  nn::ParamSet meta;
  nn::ParamSet meta_ema;
  std::size_t top_k = 1;

  std::size_t classes() const { return experts.size(); }
};

/// θ_c = Σ_i |D_{i,c}| / Σ_j |D_{j,c}| · θ_i over full-width client views,
/// accumulated in ascending client id.
std::vector<nn::ParamSet> classwise_aggregate(const std::vector<ClientView>& clients, const nn::ParamSet& global,
                                              std::vector<std::size_t>* fallback_classes = nullptr);

/// Copy of `global` with the client's sub-model written into its mask.
nn::ParamSet embed_client(const nn::ParamSet& global, const nn::ModelSpec& global_spec, const nn::ParamSet& sub,
                          const models::SubModelMask& mask);

/// Assembles experts, gating (a copy of the global model) and the meta model
/// in its averaging initialization. Throws ConfigError unless 1 ≤ k ≤ C.
ExpertSet build_expert_set(const std::vector<ClientView>& clients, const nn::ParamSet& global,
                           const nn::ModelSpec& spec, std::size_t top_k, Rng& rng);

/// The k highest scores, ties to the lower index; returned in ascending class
/// order.
std::vector<std::size_t> gate_topk(std::span<const double> scores, std::size_t k);

enum class MetaMode { raw_input, feature };

/// Per row, the C·C concatenation of expert logits with inactive expert slots
/// set to zero. Raw mode runs full networks; feature mode applies only the
/// output heads to penultimate features.
Matrix meta_inputs(const ExpertSet& set, const Matrix& x, MetaMode mode);

/// Meta-model logits; the EMA shadow is used unless `use_ema` is false.
Matrix meta_forward(const ExpertSet& set, const Matrix& x, MetaMode mode, bool use_ema = true);

/// Uniform mean of the active experts' logits (the class-wise ensemble
/// without meta weighting).
Matrix classwise_uniform_forward(const ExpertSet& set, const Matrix& x);

struct Prototype {
  std::size_t client = 0;
  int label = 0;
  RowVector feature;
  std::size_t support = 0;
};

/// Mean penultimate feature of the client's samples of its q most frequent
/// classes (ties to the lower class), computed with its own model in eval
/// mode and scattered to full width.
std::vector<Prototype> extract_prototypes(std::size_t client_id, const nn::ParamSet& params,
                                          const nn::ModelSpec& spec, const models::SubModelMask& mask,
                                          const nn::ModelSpec& global_spec, const data::Dataset& train,
                                          const std::vector<std::size_t>& shard, std::size_t q);

struct MetaConfig {
  std::size_t epochs = 100;
  double lr = 1e-3;
  double ema_decay = 0.99;
};

/// Cross-entropy training of the meta model on prototypes in feature mode
/// with an EMA shadow updated after every step; experts and gating are
/// untouched. Returns the training loss per epoch. Throws ConfigError on an
/// empty prototype set.
std::vector<double> train_meta(ExpertSet& set, const std::vector<Prototype>& prototypes, const MetaConfig& config);

/// Unweighted mean of the models' logits, accumulated in the given order.
Matrix vanilla_ensemble(const std::vector<const nn::ParamSet*>& models, const nn::ModelSpec& spec, const Matrix& x);

enum class TeacherKind { meta_moe, classwise_uniform, vanilla };

std::string_view teacher_name(TeacherKind kind);
TeacherKind teacher_from_name(std::string_view name);

/// Maps raw inputs to teacher logits.
using Teacher = std::function<Matrix(const Matrix&)>;

/// CSV: client,class,support,f0,f1,...
void write_prototypes_csv(std::ostream& out, const std::vector<Prototype>& prototypes);

}  // namespace mosaic::moe
