#include "mosaic/genopt/generator.hpp"

#include "mosaic/core/errors.hpp"
#include "mosaic/genopt/losses.hpp"
#include "mosaic/nn/network.hpp"
#include "mosaic/protocol/aggregate.hpp"
#include "mosaic/protocol/client.hpp"

#include <cmath>
#include <ostream>

namespace mosaic::genopt {

namespace {

double sigmoid(double s) { return s >= 0.0 ? 1.0 / (1.0 + std::exp(-s)) : std::exp(s) / (1.0 + std::exp(s)); }

// One ascent step of the discriminator on a real and a fake batch; returns the
// adversarial values measured before the step.
AdversarialValues discriminator_step(GenTrainState& state, const Matrix& real, const Matrix& fake,
                                     const GenConfig& config) {
  auto& d = state.discriminator;
  auto fr = nn::forward(d.params, d.spec, real, nn::Mode::train);
  auto ff = nn::forward(d.params, d.spec, fake, nn::Mode::train);
  const AdversarialValues v = adversarial_values(fr.logits, ff.logits);
  // Descend on −(E log σ(s_r) + E log(1 − σ(s_f))).
  Matrix gr(fr.logits.rows(), 1);
  Matrix gf(ff.logits.rows(), 1);
  const double br = static_cast<double>(gr.rows());
  const double bf = static_cast<double>(gf.rows());
  for (Eigen::Index r = 0; r < gr.rows(); ++r) gr(r, 0) = -(1.0 - sigmoid(fr.logits(r, 0))) / br;
  for (Eigen::Index r = 0; r < gf.rows(); ++r) gf(r, 0) = sigmoid(ff.logits(r, 0)) / bf;
  auto grads = nn::backward(fr.cache, gr).params;
  grads += nn::backward(ff.cache, gf).params;
  nn::optimizer_step(d.params, grads, state.discriminator_opt, nn::AdamConfig{config.disc_lr, 0.5, 0.999, 1e-8});
  return v;
}

nn::OptimizerConfig generator_optimizer(const GenConfig& config) {
  return nn::AdamConfig{config.lr, 0.5, 0.999, 1e-8};
}

}  // namespace

models::Model make_discriminator(const nn::ParamSet& classifier, const nn::ModelSpec& spec, Rng& rng) {
  nn::check_params(classifier, spec);
  models::Model d;
  d.spec = models::discriminator_spec(spec);
  d.params = nn::init_params(d.spec, rng);
  const std::string head = nn::ModelSpec::prefix(*spec.head_index());
  for (const auto& e : classifier.entries()) {
    if (e.name.rfind(head, 0) == 0) continue;
    d.params.mutable_at(e.name) = e.value;
  }
  return d;
}

GenTrainState init_gen_state(const nn::ParamSet& classifier, const nn::ModelSpec& classifier_spec,
                             const GenConfig& config, Rng& rng) {
  GenTrainState s;
  Rng g_rng = rng.derive("generator.init");
  Rng d_rng = rng.derive("discriminator.init");
  s.generator = models::build_generator(config.shape, g_rng);
  s.discriminator = make_discriminator(classifier, classifier_spec, d_rng);
  s.frozen = {classifier_spec, classifier};
  return s;
}

GeneratorObjective generator_objective(const GenTrainState& state, const Matrix& latent,
                                       const nn::ParamSet& global, const nn::ModelSpec& global_spec,
                                       std::size_t client_samples, const GenConfig& config) {
  const auto& g = state.generator;
  auto gf = nn::forward(g.params, g.spec, latent, nn::Mode::eval);
  const Matrix& fake = gf.logits;
  GeneratorObjective out;

  auto df = nn::forward(state.discriminator.params, state.discriminator.spec, fake, nn::Mode::train);
  Matrix gs(df.logits.rows(), 1);
  const double b = static_cast<double>(gs.rows());
  for (Eigen::Index r = 0; r < gs.rows(); ++r) {
    const double s = df.logits(r, 0);
    if (config.non_saturating) {
      out.adv -= log_sigmoid(s);
      gs(r, 0) = -(1.0 - sigmoid(s)) / b;
    } else {
      out.adv += log_one_minus_sigmoid(s);
      gs(r, 0) = -sigmoid(s) / b;
    }
  }
  out.adv /= b;
  Matrix dx = nn::backward(df.cache, gs).inputs;

  const auto& f = state.frozen;
  const SampleLoss ent = entropy_loss(f.params, f.spec, fake);
  const SampleLoss div = diversity_loss(f.params, f.spec, fake);
  out.entropy = ent.value;
  out.diversity = div.value;
  if (config.lambda_entropy != 0.0) dx += config.lambda_entropy * ent.grad;
  if (config.lambda_diversity != 0.0) dx -= config.lambda_diversity * div.grad;
  out.total = out.adv + config.lambda_entropy * out.entropy - config.lambda_diversity * out.diversity;

  out.inversion_active =
      config.lambda_inversion != 0.0 && static_cast<double>(client_samples) < config.tau;
  if (!global_spec.batchnorm_layers().empty()) {
    const SampleLoss inv = inversion_loss(global, global_spec, fake);
    out.inversion = inv.value;
    if (out.inversion_active) {
      dx += config.lambda_inversion * inv.grad;
      out.total += config.lambda_inversion * inv.value;
    }
  } else if (out.inversion_active) {
    throw ConfigError("inversion loss requested but the global model has no batch-norm layer");
  }
  out.grads = nn::backward(gf.cache, dx).params;
  return out;
}

AdversarialStep adversarial_step(GenTrainState& state, const Matrix& real, const Matrix& latent,
                                 const GenConfig& config) {
  if (real.rows() != latent.rows()) throw ShapeError("real and latent batches must have the same size");
  const Matrix fake = nn::predict(state.generator.params, state.generator.spec, latent);
  const AdversarialValues v = discriminator_step(state, real, fake, config);
  // Generator step on the adversarial term alone.
  auto gf = nn::forward(state.generator.params, state.generator.spec, latent, nn::Mode::eval);
  auto df = nn::forward(state.discriminator.params, state.discriminator.spec, gf.logits, nn::Mode::train);
  Matrix gs(df.logits.rows(), 1);
  const double b = static_cast<double>(gs.rows());
  for (Eigen::Index r = 0; r < gs.rows(); ++r) {
    const double p = sigmoid(df.logits(r, 0));
    gs(r, 0) = config.non_saturating ? -(1.0 - p) / b : -p / b;
  }
  const Matrix dx = nn::backward(df.cache, gs).inputs;
  auto grads = nn::backward(gf.cache, dx).params;
  nn::optimizer_step(state.generator.params, grads, state.generator_opt, generator_optimizer(config));
  return {v.generator, v.discriminator, v.fake_accuracy};
}

GenResult train_generator(const data::Dataset& train, const std::vector<std::size_t>& shard,
                          const nn::ParamSet& classifier, const nn::ModelSpec& classifier_spec,
                          const nn::ParamSet& global, const nn::ModelSpec& global_spec, const GenConfig& config,
                          Rng rng) {
  if (shard.empty()) throw ConfigError("generator training needs a nonempty shard");
  if (config.batch < 2) throw ConfigError("generator batch must be at least 2");
  GenTrainState state = init_gen_state(classifier, classifier_spec, config, rng);
  Rng real_rng = rng.derive("generator.real");
  Rng latent_rng = rng.derive("generator.latent");
  const auto latent_dim = static_cast<Eigen::Index>(config.shape.latent_dim);
  const auto batch = static_cast<Eigen::Index>(config.batch);
  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    EpochLosses e;
    e.epoch = epoch;
    for (std::size_t step = 0; step < config.steps_per_epoch; ++step) {
      const Matrix real = train.batch(protocol::draw_batch(shard, config.batch, real_rng)).inputs;
      const Matrix latent = latent_rng.normal_matrix(batch, latent_dim);
      const Matrix fake = nn::predict(state.generator.params, state.generator.spec, latent);
      const AdversarialValues v = discriminator_step(state, real, fake, config);
      auto obj = generator_objective(state, latent, global, global_spec, shard.size(), config);
      nn::optimizer_step(state.generator.params, obj.grads, state.generator_opt, generator_optimizer(config));
      e.adv_generator += v.generator;
      e.adv_discriminator += v.discriminator;
      e.fake_accuracy += v.fake_accuracy;
      e.entropy += obj.entropy;
      e.diversity += obj.diversity;
      e.inversion += obj.inversion;
    }
    const double k = config.steps_per_epoch > 0 ? static_cast<double>(config.steps_per_epoch) : 1.0;
    e.adv_generator /= k;
    e.adv_discriminator /= k;
    e.fake_accuracy /= k;
    e.entropy /= k;
    e.diversity /= k;
    e.inversion /= k;
    state.history.push_back(e);
    state.epoch = epoch;
  }
  return {std::move(state.generator), std::move(state.history)};
}

void write_history_csv(std::ostream& out, const std::vector<EpochLosses>& history) {
  out << "epoch,L_adv_G,L_adv_D,L_entropy,L_diversity,L_inversion,D_acc_fake\n";
  out.precision(17);
  for (const auto& e : history) {
    out << e.epoch << ',' << e.adv_generator << ',' << e.adv_discriminator << ',' << e.entropy << ','
        << e.diversity << ',' << e.inversion << ',' << e.fake_accuracy << '\n';
  }
}

SyntheticBatch ensemble_sample(const std::vector<const models::Model*>& generators,
                               const std::vector<std::size_t>& ids, std::size_t batch, Rng& rng) {
  if (generators.empty()) throw ConfigError("ensemble sampling needs at least one generator");
  if (ids.size() != generators.size()) throw ConfigError("one id per generator required");
  const std::size_t g = generators.size();
  const std::size_t latent = generators.front()->spec.input_dim();
  const std::size_t out_dim = generators.front()->spec.output_dim();
  SyntheticBatch s;
  s.latents = rng.normal_matrix(static_cast<Eigen::Index>(batch), static_cast<Eigen::Index>(latent));
  s.samples.resize(static_cast<Eigen::Index>(batch), static_cast<Eigen::Index>(out_dim));
  s.source.resize(batch);
  for (std::size_t k = 0; k < g; ++k) {
    if (generators[k]->spec.input_dim() != latent || generators[k]->spec.output_dim() != out_dim) {
      throw ShapeError("ensemble generators must share latent and output dimensions");
    }
    std::vector<std::size_t> rows;
    for (std::size_t r = k; r < batch; r += g) rows.push_back(r);
    if (rows.empty()) continue;
    const Matrix out = nn::predict(generators[k]->params, generators[k]->spec, gather_rows(s.latents, rows));
    for (std::size_t j = 0; j < rows.size(); ++j) {
      s.samples.row(static_cast<Eigen::Index>(rows[j])) = out.row(static_cast<Eigen::Index>(j));
      s.source[rows[j]] = ids[k];
    }
  }
  return s;
}

models::Model aggregate_generators_baseline(const std::vector<const models::Model*>& generators,
                                            const std::vector<double>& weights) {
  if (generators.empty()) throw ConfigError("no generators to aggregate");
  if (weights.size() != generators.size()) throw ConfigError("one weight per generator required");
  std::vector<protocol::Contribution> contribs;
  for (std::size_t k = 0; k < generators.size(); ++k) {
    if (!(generators[k]->spec == generators.front()->spec)) {
      throw StructureError("aggregated generators must share one spec");
    }
    contribs.push_back({k, weights[k], &generators[k]->params, nullptr, &generators[k]->spec});
  }
  return {generators.front()->spec, protocol::fedavg_aggregate(contribs)};
}

}  // namespace mosaic::genopt
