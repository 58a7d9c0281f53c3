#include "mosaic/cli/runner.hpp"

#include "mosaic/core/errors.hpp"
#include "mosaic/core/log.hpp"
#include "mosaic/data/partition.hpp"
#include "mosaic/eval/metrics.hpp"
#include "mosaic/nn/serialize.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>

#ifndef MOSAIC_VERSION
#define MOSAIC_VERSION "unknown"
#endif

namespace mosaic::cli {

namespace fs = std::filesystem;

namespace {

void write_text(const fs::path& path, const std::string& text) {
  fs::create_directories(path.parent_path());
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write " + path.string());
    out << text;
    if (!out) throw Error("failed writing " + path.string());
  }
  fs::rename(tmp, path);
}

std::string number(double v) {
  if (std::isnan(v)) return "";
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

double mean_finite(const std::vector<double>& v) {
  double s = 0.0;
  std::size_t n = 0;
  for (double x : v) {
    if (!std::isnan(x)) {
      s += x;
      ++n;
    }
  }
  return n == 0 ? std::nan("") : s / static_cast<double>(n);
}

std::string now_utc() {
  const std::time_t t = std::time(nullptr);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&t));
  return buf;
}

}  // namespace

fs::path resolve_output_dir(const ExperimentConfig& config, const std::optional<std::string>& out) {
  if (out) return fs::path(*out);
  fs::path dir(config.output_dir);
  if (dir.is_relative()) {
    if (const char* root = std::getenv(kOutRootEnv); root != nullptr && *root != '\0') return fs::path(root) / dir;
  }
  return dir;
}

std::string code_version() { return MOSAIC_VERSION; }

RunManifest::RunManifest(fs::path dir, const ExperimentConfig& config, std::string command) : dir_(std::move(dir)) {
  doc_ = {{"command", std::move(command)},
          {"code_version", code_version()},
          {"started", now_utc()},
          {"status", "running"},
          {"seed", config.seed},
          {"config", serialize_config(config)},
          {"stages", nlohmann::json::array()},
          {"artifacts", nlohmann::json::array()}};
  fs::create_directories(dir_);
  std::lock_guard lock(mutex_);
  write_locked();
}

void RunManifest::add_artifact(const std::string& relative) {
  std::lock_guard lock(mutex_);
  if (finished_) throw Error("manifest is closed");
  for (const auto& a : artifacts_) {
    if (a == relative) return;
  }
  artifacts_.push_back(relative);
  doc_["artifacts"].push_back(relative);
  write_locked();
}

void RunManifest::add_stage(const std::string& name, double seconds) {
  std::lock_guard lock(mutex_);
  if (finished_) throw Error("manifest is closed");
  doc_["stages"].push_back({{"name", name}, {"wall_seconds", seconds}});
  write_locked();
}

void RunManifest::set(const std::string& key, nlohmann::json value) {
  std::lock_guard lock(mutex_);
  if (finished_) throw Error("manifest is closed");
  doc_[key] = std::move(value);
  write_locked();
}

std::vector<std::string> RunManifest::finish(const std::string& status) {
  std::lock_guard lock(mutex_);
  if (finished_) throw Error("manifest is closed");
  std::vector<std::string> missing;
  for (const auto& a : artifacts_) {
    if (!fs::exists(dir_ / a)) missing.push_back(a);
  }
  doc_["status"] = missing.empty() ? status : "failed";
  if (!missing.empty()) doc_["missing_artifacts"] = missing;
  doc_["finished"] = now_utc();
  finished_ = true;
  write_locked();
  return missing;
}

nlohmann::json RunManifest::snapshot() const {
  std::lock_guard lock(mutex_);
  return doc_;
}

void RunManifest::write_locked() const { write_text(dir_ / "manifest.json", doc_.dump(2) + "\n"); }

std::string format_metrics_csv(const protocol::ScheduleResult& result, std::size_t clients, std::size_t t1) {
  std::ostringstream out;
  out << "round,phase,epoch,g_acc,l_acc,mean_loss";
  for (std::size_t i = 0; i < clients; ++i) out << ",loss_" << i;
  out << "\n";
  const auto round_row = [&](const protocol::RoundMetrics& m) {
    out << m.round << ',' << m.phase << ",," << number(m.global_accuracy) << ',' << number(m.local_accuracy) << ','
        << number(mean_finite(m.client_loss));
    for (std::size_t i = 0; i < clients; ++i) out << ',' << number(i < m.client_loss.size() ? m.client_loss[i] : NAN);
    out << "\n";
  };
  std::size_t r = 0;
  for (; r < result.rounds.size() && result.rounds[r].phase == "warmup"; ++r) round_row(result.rounds[r]);
  if (result.distilled) {
    const auto& losses = result.distill.epoch_loss;
    for (std::size_t e = 0; e < losses.size(); ++e) {
      const bool last = e + 1 == losses.size();
      out << t1 << ",distill," << e + 1 << ',' << (last ? number(result.distilled_accuracy) : "") << ",,"
          << number(losses[e]);
      for (std::size_t i = 0; i < clients; ++i) out << ',';
      out << "\n";
    }
  }
  for (; r < result.rounds.size(); ++r) round_row(result.rounds[r]);
  return out.str();
}

RunOutcome run_experiment(const ExperimentConfig& config, const RunOptions& options) {
  config.validate();
  RunOutcome outcome;
  outcome.dir = resolve_output_dir(config, options.out);
  RunManifest manifest(outcome.dir, config, "run");
  write_text(outcome.dir / "config.toml", serialize_config(config));
  manifest.add_artifact("config.toml");

  std::ofstream events(outcome.dir / "events.jsonl", std::ios::trunc);
  if (!events) throw Error("cannot write " + (outcome.dir / "events.jsonl").string());
  manifest.add_artifact("events.jsonl");
  std::mutex events_mutex;

  protocol::ScheduleHooks hooks;
  hooks.event = [&](const nlohmann::json& e) {
    std::lock_guard lock(events_mutex);
    events << e.dump() << "\n";
    events.flush();
  };
  hooks.checkpoint = [&](const std::string& name, const nn::ModelSpec& spec, const nn::ParamSet& params) {
    const std::string rel = "checkpoints/" + name + ".params";
    fs::create_directories(outcome.dir / "checkpoints");
    nn::save_params(outcome.dir / rel, params, &spec);
    manifest.add_artifact(rel);
  };
  hooks.setup = [&](const protocol::Federation& fed) {
    const auto stats = data::partition_stats(fed.partition, fed.train.labels(), fed.train.classes());
    std::ostringstream csv;
    data::write_partition_csv(csv, stats);
    write_text(outcome.dir / "partition.csv", csv.str());
    manifest.add_artifact("partition.csv");
  };
  hooks.one_shot = [&](const protocol::OneShot& shot) {
    for (std::size_t i = 0; i < shot.histories.size(); ++i) {
      std::ostringstream csv;
      genopt::write_history_csv(csv, shot.histories[i]);
      const std::string rel = "generators/history_client_" + std::to_string(shot.generator_ids[i]) + ".csv";
      write_text(outcome.dir / rel, csv.str());
      manifest.add_artifact(rel);
    }
    std::ostringstream csv;
    moe::write_prototypes_csv(csv, shot.prototypes);
    write_text(outcome.dir / "prototypes.csv", csv.str());
    manifest.add_artifact("prototypes.csv");
  };

  try {
    outcome.result = protocol::run_schedule(config, options.workers, hooks);
  } catch (const std::exception& e) {
    hooks.event({{"event", "failed"}, {"error", e.what()}});
    manifest.set("error", e.what());
    manifest.finish("failed");
    throw;
  }
  const auto& r = outcome.result;
  for (const auto& [stage, seconds] : r.stage_seconds) manifest.add_stage(stage, seconds);
  write_text(outcome.dir / "metrics.csv", format_metrics_csv(r, config.federation.clients, config.federation.t1));
  manifest.add_artifact("metrics.csv");
  nlohmann::json summary = {{"baseline_g_acc", r.baseline_accuracy},
                            {"distilled", r.distilled},
                            {"final_g_acc", r.final_accuracy},
                            {"rounds", r.rounds.size()}};
  if (r.distilled) summary["distilled_g_acc"] = r.distilled_accuracy;
  if (!r.rounds.empty()) summary["final_l_acc"] = r.rounds.back().local_accuracy;
  write_text(outcome.dir / "summary.json", summary.dump(2) + "\n");
  manifest.add_artifact("summary.json");
  manifest.set("summary", summary);
  events.close();
  const auto missing = manifest.finish("complete");
  if (!missing.empty()) throw Error("artifact missing at exit: " + missing.front());
  return outcome;
}

namespace {

protocol::OneShot load_one_shot(const fs::path& dir, const protocol::Federation& fed) {
  const auto load = [&](const std::string& name) {
    const fs::path path = dir / "checkpoints" / (name + ".params");
    if (!fs::exists(path)) throw Error("checkpoint not found: " + path.string());
    return nn::load_params(path);
  };
  protocol::OneShot shot;
  const std::size_t classes = fed.train.classes();
  shot.experts.spec = fed.global_spec;
  shot.experts.gating = fed.global;
  shot.experts.top_k = fed.config.effective_top_k();
  for (std::size_t c = 0; c < classes; ++c) {
    auto d = load("expert_class_" + std::to_string(c));
    nn::check_params(d.params, fed.global_spec);
    shot.experts.experts.push_back(std::move(d.params));
    std::size_t total = 0;
    for (const auto& client : fed.clients) total += client.label_histogram[c];
    if (total == 0) shot.experts.fallback_classes.push_back(c);
  }
  shot.experts.meta_spec = models::meta_spec(classes);
  shot.experts.meta = load("meta").params;
  shot.experts.meta_ema = load("meta_ema").params;
  nn::check_params(shot.experts.meta, shot.experts.meta_spec);
  nn::check_params(shot.experts.meta_ema, shot.experts.meta_spec);
  for (const auto& client : fed.clients) {
    auto g = load("generator_client_" + std::to_string(client.id));
    if (!g.spec) throw FormatError("generator checkpoint lacks its spec");
    shot.generators.push_back({*g.spec, std::move(g.params)});
    shot.generator_ids.push_back(client.id);
    auto full = load("client_full_" + std::to_string(client.id));
    nn::check_params(full.params, fed.global_spec);
    shot.client_full.push_back(std::move(full.params));
  }
  return shot;
}

}  // namespace

ResumeOutcome distill_only(const ExperimentConfig& config, const RunOptions& options) {
  config.validate();
  ResumeOutcome outcome;
  outcome.dir = resolve_output_dir(config, options.out);
  protocol::Federation fed = protocol::setup_federation(config, options.workers);
  auto base = nn::load_params(outcome.dir / "checkpoints" / "global_baseline.params");
  nn::check_params(base.params, fed.global_spec);
  fed.global = std::move(base.params);
  const protocol::OneShot shot = load_one_shot(outcome.dir, fed);
  outcome.baseline_accuracy = eval::global_accuracy(fed.global, fed.global_spec, fed.test);
  outcome.distill = protocol::distill_stage(fed, shot, config.distill_config());
  outcome.distilled_accuracy = eval::global_accuracy(fed.global, fed.global_spec, fed.test);
  nn::save_params(outcome.dir / "checkpoints" / "global_distilled_resume.params", fed.global, &fed.global_spec);
  const nlohmann::json report = {{"teacher", moe::teacher_name(config.distill.teacher)},
                                 {"baseline_g_acc", outcome.baseline_accuracy},
                                 {"distilled_g_acc", outcome.distilled_accuracy},
                                 {"epoch_loss", outcome.distill.epoch_loss}};
  write_text(outcome.dir / "distill_only.json", report.dump(2) + "\n");
  return outcome;
}

nlohmann::json partition_report(const ExperimentConfig& config) {
  const protocol::Federation fed = protocol::setup_federation(config);
  const auto stats = data::partition_stats(fed.partition, fed.train.labels(), fed.train.classes());
  return {{"clients", stats.sizes.size()},
          {"omega", config.federation.omega},
          {"sizes", stats.sizes},
          {"min_size", stats.min_size},
          {"max_size", stats.max_size},
          {"mean_label_entropy", stats.mean_label_entropy},
          {"top2_share", stats.top2_share},
          {"histograms", stats.histograms},
          {"width_ratios", models::width_budget(config.federation.clients, config.federation.sigma,
                                                config.federation.rho)}};
}

}  // namespace mosaic::cli
