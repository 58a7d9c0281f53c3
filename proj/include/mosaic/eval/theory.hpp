#pragma once

#include "mosaic/core/rng.hpp"
#include "mosaic/data/dataset.hpp"
#include "mosaic/distill/distill.hpp"

#include <json.hpp>

#include <vector>

namespace mosaic::eval {

/// Expert c predicts f* + ε_c + δ_c with ε_c ~ N(0, σ_c²) independent.
struct NoiseModel {
  std::vector<double> variances;
  /// One bias vector per expert; empty means unbiased experts.
  std::vector<std::vector<double>> biases;
  double f_star = 0.0;

  /// Throws ConfigError unless every variance is positive and biases, when
  /// present, come one per expert with a common dimension.
  void validate() const;
};

struct VarianceReport {
  std::size_t k = 0;
  std::size_t samples = 0;
  double var_ve_closed = 0.0;
  double var_me_closed = 0.0;
  double var_ve_mc = 0.0;
  double var_me_mc = 0.0;
  /// Relative Monte-Carlo tolerance 3/√samples.
  double mc_tolerance = 0.0;
  std::vector<double> variance_weights;
  /// α_c ∝ 1/(σ_c² + ‖δ_c‖²) and the closed-form MSE of the three weightings.
  std::vector<double> mse_weights;
  double mse_uniform = 0.0;
  double mse_variance_weights = 0.0;
  double mse_mse_weights = 0.0;
  bool pass = false;
};

/// Var_VE = Σσ²/k² and Var_ME = 1/Σ(1/σ²) over the first k experts, with
/// Monte-Carlo estimates. Passes iff Var_ME ≤ Var_VE·(1 + 3ε) and both
/// estimates are within ε of their closed forms, ε = 3/√samples.
VarianceReport verify_variance_theorem(const NoiseModel& noise, std::size_t k, std::size_t samples,
                                       std::uint64_t seed);

struct BiasReport {
  double weighted_bias = 0.0;
  double mean_bias = 0.0;
  double max_bias = 0.0;
  bool given_pass = false;
  std::size_t random_trials = 0;
  std::size_t violations = 0;
  bool pass = false;
};

/// ‖Σ α_c δ_c‖² ≤ Σ α_c ‖δ_c‖² ≤ max_c ‖δ_c‖² on the given configuration and
/// on `trials` seeded random ones.
BiasReport verify_bias_bound(const NoiseModel& noise, const std::vector<double>& weights, std::size_t trials,
                             std::uint64_t seed);

/// Trains a freshly initialized student of `student_spec` on batches from
/// `sampler` labeled by `teacher`, then returns its test accuracy. BN runs on
/// batch statistics since a fresh student has no meaningful running ones.
double kd_transfer_score(const moe::Teacher& teacher, const distill::Sampler& sampler,
                         const nn::ModelSpec& student_spec, distill::DistillConfig config,
                         const data::Dataset& test, Rng rng);

nlohmann::json to_json(const VarianceReport& r);
nlohmann::json to_json(const BiasReport& r);

}  // namespace mosaic::eval
