#pragma once

#include "mosaic/core/rng.hpp"
#include "mosaic/data/dataset.hpp"
#include "mosaic/models/zoo.hpp"
#include "mosaic/nn/optim.hpp"

#include <iosfwd>
#include <vector>

namespace mosaic::genopt {

struct GenConfig {
  std::size_t epochs = 30;
  std::size_t steps_per_epoch = 10;
  std::size_t batch = 64;
  double lr = 1e-3;
  double disc_lr = 1e-3;
  double lambda_entropy = 1.0;
  double lambda_diversity = 5.0;
  double lambda_inversion = 10.0;
  /// Clients with at least this many samples skip the inversion term.
  double tau = 1000.0;
  /// Use −log D(G(z)) for the generator instead of log(1 − D(G(z))).
  bool non_saturating = false;
  models::GeneratorShape shape;
};

struct EpochLosses {
  std::size_t epoch = 0;
  double adv_generator = 0.0;
  double adv_discriminator = 0.0;
  double entropy = 0.0;
  double diversity = 0.0;
  double inversion = 0.0;
  double fake_accuracy = 0.0;
};

/// Generator training state of one client. The frozen classifier is a copy of
/// the local model taken at stage start and is never written to.
struct GenTrainState {
  models::Model generator;
  models::Model discriminator;
  models::Model frozen;
  nn::OptimizerState generator_opt;
  nn::OptimizerState discriminator_opt;
  std::size_t epoch = 0;
  std::vector<EpochLosses> history;
};

/// Discriminator = the classifier's trunk (copied) with a fresh one-logit head.
models::Model make_discriminator(const nn::ParamSet& classifier, const nn::ModelSpec& spec, Rng& rng);

GenTrainState init_gen_state(const nn::ParamSet& classifier, const nn::ModelSpec& classifier_spec,
                             const GenConfig& config, Rng& rng);

struct AdversarialStep {
  double adv_generator = 0.0;
  double adv_discriminator = 0.0;
  double fake_accuracy = 0.0;
};

/// One discriminator ascent step on E log D(x) + E log(1 − D(G(z))) followed
/// by one generator step on the adversarial term alone. Values are measured
/// before either update.
AdversarialStep adversarial_step(GenTrainState& state, const Matrix& real, const Matrix& latent,
                                 const GenConfig& config);

/// Gradient of the generator objective wrt its parameters, plus the values of
/// every term, for fixed discriminator and latent batch.
struct GeneratorObjective {
  double total = 0.0;
  double adv = 0.0;
  double entropy = 0.0;
  double diversity = 0.0;
  double inversion = 0.0;
  bool inversion_active = false;
  nn::Gradients grads;
};

/// L_G = L_adv + λe·L_entropy − λd·L_diversity + λi·L_inversion·[n < τ].
/// With the inversion term gated off it adds nothing to value or gradient.
GeneratorObjective generator_objective(const GenTrainState& state, const Matrix& latent,
                                       const nn::ParamSet& global, const nn::ModelSpec& global_spec,
                                       std::size_t client_samples, const GenConfig& config);

struct GenResult {
  models::Model generator;
  std::vector<EpochLosses> history;
};

/// Trains one client's generator for config.epochs epochs. Each step takes a
/// real batch from the shard, updates the discriminator, then updates the
/// generator on the full objective.
GenResult train_generator(const data::Dataset& train, const std::vector<std::size_t>& shard,
                          const nn::ParamSet& classifier, const nn::ModelSpec& classifier_spec,
                          const nn::ParamSet& global, const nn::ModelSpec& global_spec, const GenConfig& config,
                          Rng rng);

/// CSV header epoch,L_adv_G,L_adv_D,L_entropy,L_diversity,L_inversion,D_acc_fake.
void write_history_csv(std::ostream& out, const std::vector<EpochLosses>& history);

struct SyntheticBatch {
  Matrix samples;
  std::vector<std::size_t> source;
  Matrix latents;
};

/// Row r comes from generator r mod G with a fresh latent z ~ N(0, I).
/// `ids` labels the generators in `source`. Throws ConfigError when empty.
SyntheticBatch ensemble_sample(const std::vector<const models::Model*>& generators,
                               const std::vector<std::size_t>& ids, std::size_t batch, Rng& rng);

/// Weighted FedAvg of generators; the unstable baseline the ensemble is
/// compared against. Throws StructureError when specs differ.
models::Model aggregate_generators_baseline(const std::vector<const models::Model*>& generators,
                                            const std::vector<double>& weights);

}  // namespace mosaic::genopt
