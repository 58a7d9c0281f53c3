#include "mosaic/protocol/schedule.hpp"

#include "mosaic/core/errors.hpp"
#include "mosaic/core/log.hpp"
#include "mosaic/core/parallel.hpp"
#include "mosaic/data/idx.hpp"
#include "mosaic/data/synthetic.hpp"
#include "mosaic/eval/metrics.hpp"
#include "mosaic/protocol/aggregate.hpp"

#include <chrono>
#include <cmath>
#include <limits>

namespace mosaic::protocol {

namespace {

void emit(const Federation& fed, nlohmann::json event) {
  if (fed.hooks.event) fed.hooks.event(event);
}

void checkpoint(const Federation& fed, const std::string& name, const nn::ModelSpec& spec, const nn::ParamSet& p) {
  if (fed.hooks.checkpoint) fed.hooks.checkpoint(name, spec, p);
}

std::pair<data::Dataset, data::Dataset> load_data(const cli::ExperimentConfig& config) {
  const auto& d = config.dataset;
  if (d.kind == "idx") {
    return {data::load_idx(d.train_images, d.train_labels, d.classes, data::Split::train),
            data::load_idx(d.test_images, d.test_labels, d.classes, data::Split::test)};
  }
  data::SyntheticSpec spec;
  spec.classes = d.classes;
  spec.n_per_class = d.n_per_class;
  spec.dim = d.dim;
  spec.spread = d.spread;
  spec.radius = d.radius;
  spec.seed = Rng(config.seed).derive("dataset").seed();
  data::Dataset train = data::make_synthetic(spec, data::Split::train);
  spec.n_per_class = d.test_per_class;
  data::Dataset test = data::make_synthetic(spec, data::Split::test);
  return {std::move(train), std::move(test)};
}

class SplitAudit {
 public:
  SplitAudit(const data::Dataset& set, std::string what) : set_(set), before_(set.read_count()), what_(std::move(what)) {}
  void check() const {
    if (set_.read_count() != before_) throw AuditError(what_);
  }

 private:
  const data::Dataset& set_;
  std::uint64_t before_;
  std::string what_;
};

double seconds_since(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

}  // namespace

std::pair<double, double> data_range(const data::Dataset& train) {
  const Matrix& x = train.inputs();
  return {x.minCoeff(), x.maxCoeff()};
}

Federation setup_federation(const cli::ExperimentConfig& config, std::size_t workers, ScheduleHooks hooks) {
  config.validate();
  Federation fed;
  fed.config = config;
  fed.workers = std::max<std::size_t>(1, workers);
  fed.hooks = std::move(hooks);
  fed.root = Rng(config.seed);
  auto [train, test] = load_data(config);
  fed.train = std::move(train);
  fed.test = std::move(test);
  fed.config.dataset.dim = fed.train.dim();
  const auto& f = config.federation;
  fed.partition = data::dirichlet_partition(fed.train.labels(), fed.train.classes(), f.clients, f.omega,
                                            fed.root.derive("partition").seed());
  const auto ratios = models::width_budget(f.clients, f.sigma, f.rho);
  for (std::size_t i = 0; i < f.clients; ++i) {
    fed.clients.push_back(make_client(i, fed.partition.client_shards[i], fed.train, ratios[i]));
  }
  models::ClassifierShape shape;
  shape.input_dim = fed.train.dim();
  shape.hidden = config.model.hidden;
  shape.classes = fed.train.classes();
  shape.bn_momentum = config.model.bn_momentum;
  fed.global_spec = models::classifier_spec(shape, 1.0);
  Rng init = fed.root.derive("init");
  fed.global = nn::init_params(fed.global_spec, init);
  emit(fed, {{"event", "setup"},
             {"clients", f.clients},
             {"train_size", fed.train.size()},
             {"test_size", fed.test.size()},
             {"scheme", scheme_name(f.scheme)},
             {"ratios", ratios}});
  if (fed.hooks.setup) fed.hooks.setup(fed);
  return fed;
}

RoundMetrics run_round(Federation& fed, std::size_t round, double lr, const std::string& phase) {
  const auto start = std::chrono::steady_clock::now();
  const auto& f = fed.config.federation;
  const auto sampled = sample_clients(f.clients, f.sampled, round, fed.config.seed);
  LocalConfig local{f.local_steps, f.batch, lr, f.momentum, f.scheme, round};
  const SplitAudit audit(fed.test, "test split read during local training in round " + std::to_string(round + 1));
  parallel_for(sampled.size(), fed.workers, [&](std::size_t j) {
    ClientState& c = fed.clients[sampled[j]];
    local_update(c, fed.train, fed.global, fed.global_spec, local, fed.root.derive("local", {c.id, round}));
  });
  audit.check();

  std::vector<Contribution> contribs;
  for (std::size_t id : sampled) {
    const ClientState& c = fed.clients[id];
    const bool full = f.scheme == Scheme::fedavg;
    contribs.push_back({c.id, static_cast<double>(c.n), &c.params, full ? nullptr : &c.mask, &c.spec});
  }
  fed.global = f.scheme == Scheme::fedavg ? fedavg_aggregate(contribs)
                                          : partial_aggregate(fed.global, fed.global_spec, contribs);

  RoundMetrics m;
  m.round = round + 1;
  m.phase = phase;
  m.global_accuracy = eval::global_accuracy(fed.global, fed.global_spec, fed.test);
  std::vector<models::SubModel> fallback(fed.clients.size());
  std::vector<eval::ModelRef> refs;
  for (std::size_t i = 0; i < fed.clients.size(); ++i) {
    const ClientState& c = fed.clients[i];
    if (c.params.empty()) {
      fallback[i] = models::extract_submodel(fed.global, fed.global_spec,
                                             client_mask(c, fed.global_spec, f.scheme, round));
      refs.push_back({&fallback[i].params, &fallback[i].spec});
    } else {
      refs.push_back({&c.params, &c.spec});
    }
  }
  m.local_accuracy = eval::local_accuracy(refs, fed.test, fed.root.derive("eval").seed());
  m.client_loss.assign(fed.clients.size(), std::numeric_limits<double>::quiet_NaN());
  for (std::size_t id : sampled) m.client_loss[id] = fed.clients[id].last_loss;
  m.wall_seconds = seconds_since(start);

  emit(fed, {{"event", "round"},
             {"round", m.round},
             {"phase", m.phase},
             {"g_acc", m.global_accuracy},
             {"l_acc", m.local_accuracy},
             {"sampled", sampled},
             {"wall_seconds", m.wall_seconds}});
  const std::size_t every = fed.config.output.checkpoint_interval;
  if (every > 0 && m.round % every == 0) {
    char name[32];
    std::snprintf(name, sizeof name, "global_round_%04zu", m.round);
    checkpoint(fed, name, fed.global_spec, fed.global);
  }
  if (fed.hooks.round) fed.hooks.round(m);
  return m;
}

std::vector<const models::Model*> OneShot::generator_ptrs() const {
  std::vector<const models::Model*> out;
  for (const auto& g : generators) out.push_back(&g);
  return out;
}

std::vector<const nn::ParamSet*> OneShot::client_ptrs() const {
  std::vector<const nn::ParamSet*> out;
  for (const auto& p : client_full) out.push_back(&p);
  return out;
}

OneShot one_shot_stage(Federation& fed, std::size_t round) {
  const auto& cfg = fed.config;
  const auto& f = cfg.federation;
  // Clients that never trained receive the current global model first.
  for (auto& c : fed.clients) {
    if (c.params.empty()) {
      LocalConfig local{f.local_steps, f.batch, f.lr, f.momentum, f.scheme, round};
      local_update(c, fed.train, fed.global, fed.global_spec, local, fed.root.derive("local", {c.id, round}));
    }
  }
  const auto [lo, hi] = data_range(fed.train);
  const genopt::GenConfig gen = cfg.gen_config(lo, hi);
  const std::size_t n = fed.clients.size();
  OneShot shot;
  shot.generators.resize(n);
  shot.histories.resize(n);
  const SplitAudit audit(fed.test, "test split read during generator training");
  parallel_for(n, fed.workers, [&](std::size_t i) {
    const ClientState& c = fed.clients[i];
    auto result = genopt::train_generator(fed.train, c.shard, c.params, c.spec, fed.global, fed.global_spec, gen,
                                          fed.root.derive("generator", {c.id}));
    shot.generators[i] = std::move(result.generator);
    shot.histories[i] = std::move(result.history);
  });
  audit.check();
  for (std::size_t i = 0; i < n; ++i) {
    const ClientState& c = fed.clients[i];
    shot.generator_ids.push_back(c.id);
    emit(fed, {{"event", "generator_upload"},
               {"client", c.id},
               {"samples", c.n},
               {"inversion", gen.lambda_inversion != 0.0 && static_cast<double>(c.n) < gen.tau}});
    checkpoint(fed, "generator_client_" + std::to_string(c.id), shot.generators[i].spec, shot.generators[i].params);
  }

  std::vector<moe::ClientView> views;
  shot.client_full.reserve(n);
  for (const auto& c : fed.clients) shot.client_full.push_back(moe::embed_client(fed.global, fed.global_spec, c.params, c.mask));
  for (std::size_t i = 0; i < n; ++i) views.push_back({fed.clients[i].id, &shot.client_full[i], fed.clients[i].label_histogram});
  Rng meta_rng = fed.root.derive("meta.init");
  shot.experts = moe::build_expert_set(views, fed.global, fed.global_spec, cfg.effective_top_k(), meta_rng);
  for (std::size_t c : shot.experts.fallback_classes) emit(fed, {{"event", "expert_fallback"}, {"class", c}});

  std::vector<std::vector<moe::Prototype>> per_client(n);
  parallel_for(n, fed.workers, [&](std::size_t i) {
    const ClientState& c = fed.clients[i];
    per_client[i] = moe::extract_prototypes(c.id, c.params, c.spec, c.mask, fed.global_spec, fed.train, c.shard,
                                            cfg.moe.q);
  });
  for (auto& p : per_client) shot.prototypes.insert(shot.prototypes.end(), p.begin(), p.end());
  shot.meta_loss = moe::train_meta(shot.experts, shot.prototypes, cfg.meta_config());
  emit(fed, {{"event", "meta_trained"},
             {"prototypes", shot.prototypes.size()},
             {"final_loss", shot.meta_loss.empty() ? 0.0 : shot.meta_loss.back()}});
  for (std::size_t c = 0; c < shot.experts.classes(); ++c) {
    checkpoint(fed, "expert_class_" + std::to_string(c), fed.global_spec, shot.experts.experts[c]);
  }
  for (std::size_t i = 0; i < n; ++i) {
    checkpoint(fed, "client_full_" + std::to_string(fed.clients[i].id), fed.global_spec, shot.client_full[i]);
  }
  checkpoint(fed, "meta", shot.experts.meta_spec, shot.experts.meta);
  checkpoint(fed, "meta_ema", shot.experts.meta_spec, shot.experts.meta_ema);
  return shot;
}

moe::Teacher teacher_for(const OneShot& shot, moe::TeacherKind kind) {
  return distill::make_teacher(kind, shot.experts, shot.client_ptrs());
}

distill::DistillResult distill_stage(Federation& fed, const OneShot& shot, const distill::DistillConfig& config) {
  const SplitAudit train_audit(fed.train, "client data read during distillation");
  const SplitAudit test_audit(fed.test, "test split read during distillation");
  const moe::Teacher teacher = teacher_for(shot, config.teacher);
  auto result = distill::distill_student(fed.global, fed.global_spec, teacher, shot.generator_ptrs(),
                                         shot.generator_ids, config, fed.root.derive("distill"));
  train_audit.check();
  test_audit.check();
  emit(fed, {{"event", "distilled"},
             {"teacher", moe::teacher_name(config.teacher)},
             {"epoch_loss", result.epoch_loss}});
  return result;
}

ScheduleResult run_schedule(const cli::ExperimentConfig& config, std::size_t workers, ScheduleHooks hooks) {
  Federation fed = setup_federation(config, workers, std::move(hooks));
  const auto& f = fed.config.federation;
  ScheduleResult out;
  out.global_spec = fed.global_spec;
  std::string stage = "warmup";
  std::size_t round = 0;
  auto clock = std::chrono::steady_clock::now();
  const auto lap = [&](const std::string& name) {
    out.stage_seconds.emplace_back(name, seconds_since(clock));
    clock = std::chrono::steady_clock::now();
  };
  try {
    for (; round < f.t1; ++round) out.rounds.push_back(run_round(fed, round, f.lr, "warmup"));
    out.baseline_accuracy = out.rounds.empty() ? eval::global_accuracy(fed.global, fed.global_spec, fed.test)
                                               : out.rounds.back().global_accuracy;
    checkpoint(fed, "global_baseline", fed.global_spec, fed.global);
    lap("warmup");
    if (fed.config.distill.enabled) {
      stage = "one_shot";
      const OneShot shot = one_shot_stage(fed, round);
      if (fed.hooks.one_shot) fed.hooks.one_shot(shot);
      lap("one_shot");
      stage = "distill";
      out.distill = distill_stage(fed, shot, fed.config.distill_config());
      out.distilled = true;
      out.distilled_accuracy = eval::global_accuracy(fed.global, fed.global_spec, fed.test);
      emit(fed, {{"event", "distill_eval"}, {"g_acc", out.distilled_accuracy}});
      checkpoint(fed, "global_distilled", fed.global_spec, fed.global);
      lap("distill");
    }
    stage = "finetune";
    for (std::size_t j = 0; j < f.t2; ++j, ++round) {
      out.rounds.push_back(run_round(fed, round, f.lr * f.finetune_lr_factor, "finetune"));
    }
    lap("finetune");
  } catch (const Error& e) {
    throw Error("stage " + stage + " failed at round " + std::to_string(round + 1) + ": " + e.what());
  }
  out.final_accuracy = eval::global_accuracy(fed.global, fed.global_spec, fed.test);
  checkpoint(fed, "global_final", fed.global_spec, fed.global);
  out.final_global = fed.global;
  return out;
}

}  // namespace mosaic::protocol
