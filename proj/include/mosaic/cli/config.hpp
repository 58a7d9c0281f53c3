#pragma once

#include "mosaic/distill/distill.hpp"
#include "mosaic/genopt/generator.hpp"
#include "mosaic/moe/experts.hpp"
#include "mosaic/protocol/client.hpp"

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace mosaic::cli {

struct DatasetConfig {
  std::string kind = "synthetic";
  std::size_t classes = 8;
  std::size_t n_per_class = 400;
  std::size_t test_per_class = 250;
  std::size_t dim = 16;
  double spread = 1.0;
  double radius = 3.0;
  std::string train_images;
  std::string train_labels;
  std::string test_images;
  std::string test_labels;

  friend bool operator==(const DatasetConfig&, const DatasetConfig&) = default;
};

struct ModelConfig {
  std::vector<std::size_t> hidden = {64, 64};
  double bn_momentum = 0.1;

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

struct FederationConfig {
  std::size_t clients = 10;
  std::size_t sampled = 10;
  double omega = 1.0;
  unsigned sigma = 4;
  unsigned rho = 5;
  protocol::Scheme scheme = protocol::Scheme::fedavg;
  std::size_t t1 = 40;
  std::size_t t2 = 40;
  std::size_t local_steps = 10;
  std::size_t batch = 32;
  double lr = 0.05;
  double momentum = 0.9;
  double finetune_lr_factor = 0.1;

  friend bool operator==(const FederationConfig&, const FederationConfig&) = default;
};

struct GeneratorConfig {
  std::size_t epochs = 30;
  std::size_t steps_per_epoch = 10;
  std::size_t batch = 64;
  std::size_t latent = 8;
  std::vector<std::size_t> hidden = {32, 32};
  double lr = 1e-3;
  double disc_lr = 1e-3;
  double lambda_entropy = 1.0;
  double lambda_diversity = 5.0;
  double lambda_inversion = 10.0;
  double tau = 1000.0;
  bool non_saturating = false;

  friend bool operator==(const GeneratorConfig&, const GeneratorConfig&) = default;
};

struct MoeConfig {
  /// 0 means k = C.
  std::size_t top_k = 0;
  std::size_t q = 3;
  std::size_t epochs = 100;
  double lr = 1e-3;
  double ema_decay = 0.99;

  friend bool operator==(const MoeConfig&, const MoeConfig&) = default;
};

struct DistillSection {
  bool enabled = true;
  std::size_t epochs = 10;
  std::size_t steps_per_epoch = 20;
  std::size_t batch = 64;
  double lr = 0.01;
  double momentum = 0.9;
  double lambda_soft = 0.8;
  double lambda_hard = 0.2;
  double temperature = 1.0;
  bool freeze_bn = true;
  moe::TeacherKind teacher = moe::TeacherKind::meta_moe;

  friend bool operator==(const DistillSection&, const DistillSection&) = default;
};

struct OutputConfig {
  /// Save the global model every this many rounds; 0 saves only stage
  /// boundaries and the final model.
  std::size_t checkpoint_interval = 0;

  friend bool operator==(const OutputConfig&, const OutputConfig&) = default;
};

struct ExperimentConfig {
  std::uint64_t seed = 0;
  std::string output_dir = "runs/default";
  DatasetConfig dataset;
  ModelConfig model;
  FederationConfig federation;
  GeneratorConfig generator;
  MoeConfig moe;
  DistillSection distill;
  OutputConfig output;

  /// Throws ConfigError naming the offending field when a documented range
  /// is violated.
  void validate() const;

  std::size_t effective_top_k() const { return moe.top_k == 0 ? dataset.classes : moe.top_k; }

  genopt::GenConfig gen_config(double lo, double hi) const;
  distill::DistillConfig distill_config() const;
  moe::MetaConfig meta_config() const;

  friend bool operator==(const ExperimentConfig&, const ExperimentConfig&) = default;
};

/// Parses TOML text. Unknown keys, wrong types and out-of-range values raise
/// ConfigError with the dotted field path.
ExperimentConfig parse_config(std::string_view text, std::string_view source = "config");
ExperimentConfig load_config(const std::string& path);

/// TOML text that parse_config maps back to an equal config.
std::string serialize_config(const ExperimentConfig& config);

}  // namespace mosaic::cli
