#include "mosaic/eval/theory.hpp"

#include "mosaic/core/errors.hpp"
#include "mosaic/eval/metrics.hpp"

#include <algorithm>
#include <cmath>

namespace mosaic::eval {

void NoiseModel::validate() const {
  if (variances.empty()) throw ConfigError("noise model needs at least one expert");
  for (double v : variances) {
    if (!(v > 0.0)) throw ConfigError("expert variances must be positive");
  }
  if (!biases.empty()) {
    if (biases.size() != variances.size()) throw ConfigError("one bias vector per expert required");
    for (const auto& b : biases) {
      if (b.size() != biases.front().size()) throw ConfigError("bias vectors must share one dimension");
    }
  }
}

namespace {

double squared_norm(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return s;
}

std::vector<double> normalized(std::vector<double> w) {
  double s = 0.0;
  for (double x : w) s += x;
  for (double& x : w) x /= s;
  return w;
}

// ‖Σ α_c δ_c‖² + Σ α_c² σ_c².
double closed_mse(const NoiseModel& noise, const std::vector<double>& alpha) {
  double var = 0.0;
  for (std::size_t c = 0; c < alpha.size(); ++c) var += alpha[c] * alpha[c] * noise.variances[c];
  if (noise.biases.empty()) return var;
  std::vector<double> mean(noise.biases.front().size(), 0.0);
  for (std::size_t c = 0; c < alpha.size(); ++c) {
    for (std::size_t j = 0; j < mean.size(); ++j) mean[j] += alpha[c] * noise.biases[c][j];
  }
  return squared_norm(mean) + var;
}

}  // namespace

VarianceReport verify_variance_theorem(const NoiseModel& noise, std::size_t k, std::size_t samples,
                                       std::uint64_t seed) {
  noise.validate();
  if (k < 1 || k > noise.variances.size()) throw ConfigError("k must lie in [1, number of experts]");
  if (samples < 2) throw ConfigError("Monte-Carlo estimate needs at least two samples");
  VarianceReport r;
  r.k = k;
  r.samples = samples;
  const double kd = static_cast<double>(k);
  double inv_sum = 0.0;
  for (std::size_t c = 0; c < k; ++c) {
    r.var_ve_closed += noise.variances[c] / (kd * kd);
    inv_sum += 1.0 / noise.variances[c];
  }
  r.var_me_closed = 1.0 / inv_sum;
  std::vector<double> inv(k);
  std::vector<double> mse_raw(k);
  for (std::size_t c = 0; c < k; ++c) {
    inv[c] = 1.0 / noise.variances[c];
    const double b2 = noise.biases.empty() ? 0.0 : squared_norm(noise.biases[c]);
    mse_raw[c] = 1.0 / (noise.variances[c] + b2);
  }
  r.variance_weights = normalized(inv);
  r.mse_weights = normalized(mse_raw);
  const std::vector<double> uniform(k, 1.0 / kd);
  r.mse_uniform = closed_mse(noise, uniform);
  r.mse_variance_weights = closed_mse(noise, r.variance_weights);
  r.mse_mse_weights = closed_mse(noise, r.mse_weights);

  Rng rng = Rng(seed).derive("theorem.noise");
  std::vector<double> sd(k);
  for (std::size_t c = 0; c < k; ++c) sd[c] = std::sqrt(noise.variances[c]);
  // Welford accumulation of both ensemble predictions on shared draws.
  double mean_ve = 0.0, m2_ve = 0.0, mean_me = 0.0, m2_me = 0.0;
  std::normal_distribution<double> unit(0.0, 1.0);
  for (std::size_t s = 0; s < samples; ++s) {
    double ve = 0.0;
    double me = 0.0;
    for (std::size_t c = 0; c < k; ++c) {
      const double eps = sd[c] * unit(rng.engine());
      ve += eps / kd;
      me += r.variance_weights[c] * eps;
    }
    const double n = static_cast<double>(s + 1);
    const double d_ve = ve - mean_ve;
    mean_ve += d_ve / n;
    m2_ve += d_ve * (ve - mean_ve);
    const double d_me = me - mean_me;
    mean_me += d_me / n;
    m2_me += d_me * (me - mean_me);
  }
  r.var_ve_mc = m2_ve / static_cast<double>(samples - 1);
  r.var_me_mc = m2_me / static_cast<double>(samples - 1);
  r.mc_tolerance = 3.0 / std::sqrt(static_cast<double>(samples));
  const double eps = r.mc_tolerance;
  const bool ordering = r.var_me_mc <= r.var_ve_mc * (1.0 + 3.0 * eps);
  const bool ve_ok = std::abs(r.var_ve_mc - r.var_ve_closed) <= eps * r.var_ve_closed;
  const bool me_ok = std::abs(r.var_me_mc - r.var_me_closed) <= eps * r.var_me_closed;
  r.pass = ordering && ve_ok && me_ok;
  return r;
}

namespace {

struct BiasTriple {
  double weighted;
  double mean;
  double max;
};

BiasTriple bias_triple(const std::vector<std::vector<double>>& biases, const std::vector<double>& w) {
  BiasTriple t{0.0, 0.0, 0.0};
  std::vector<double> avg(biases.front().size(), 0.0);
  for (std::size_t c = 0; c < biases.size(); ++c) {
    const double n2 = squared_norm(biases[c]);
    t.mean += w[c] * n2;
    t.max = std::max(t.max, n2);
    for (std::size_t j = 0; j < avg.size(); ++j) avg[j] += w[c] * biases[c][j];
  }
  t.weighted = squared_norm(avg);
  return t;
}

// Allows rounding slack of a few ulps; the inequalities are exact in reals.
bool holds(const BiasTriple& t) {
  const double slack = 1e-12 * std::max(1.0, t.max);
  return t.weighted <= t.mean + slack && t.mean <= t.max + slack;
}

}  // namespace

BiasReport verify_bias_bound(const NoiseModel& noise, const std::vector<double>& weights, std::size_t trials,
                             std::uint64_t seed) {
  noise.validate();
  if (noise.biases.empty()) throw ConfigError("bias bound needs bias vectors");
  if (weights.size() != noise.biases.size()) throw ConfigError("one weight per expert required");
  double total = 0.0;
  for (double w : weights) {
    if (!(w >= 0.0)) throw ConfigError("weights must be non-negative");
    total += w;
  }
  if (std::abs(total - 1.0) > 1e-9) throw ConfigError("weights must sum to 1");
  BiasReport r;
  const auto given = bias_triple(noise.biases, weights);
  r.weighted_bias = given.weighted;
  r.mean_bias = given.mean;
  r.max_bias = given.max;
  r.given_pass = holds(given);
  r.random_trials = trials;
  Rng root = Rng(seed).derive("theorem.bias");
  for (std::size_t t = 0; t < trials; ++t) {
    Rng rng = root.derive("trial", {t});
    const std::size_t k = 1 + rng.index(8);
    const std::size_t dim = 1 + rng.index(5);
    std::vector<std::vector<double>> biases(k, std::vector<double>(dim));
    for (auto& b : biases) {
      for (double& x : b) x = rng.normal(0.0, 2.0);
    }
    std::vector<double> w(k);
    for (double& x : w) x = -std::log(rng.uniform(1e-12, 1.0));
    w = normalized(std::move(w));
    if (!holds(bias_triple(biases, w))) ++r.violations;
  }
  r.pass = r.given_pass && r.violations == 0;
  return r;
}

double kd_transfer_score(const moe::Teacher& teacher, const distill::Sampler& sampler,
                         const nn::ModelSpec& student_spec, distill::DistillConfig config,
                         const data::Dataset& test, Rng rng) {
  Rng init = rng.derive("transfer.init");
  nn::ParamSet student = nn::init_params(student_spec, init);
  config.freeze_bn = false;
  distill::distill_with_sampler(student, student_spec, teacher, sampler, config, rng.derive("transfer.steps"));
  return global_accuracy(student, student_spec, test);
}

nlohmann::json to_json(const VarianceReport& r) {
  return {{"k", r.k},
          {"samples", r.samples},
          {"var_ve_closed", r.var_ve_closed},
          {"var_me_closed", r.var_me_closed},
          {"var_ve_mc", r.var_ve_mc},
          {"var_me_mc", r.var_me_mc},
          {"mc_tolerance", r.mc_tolerance},
          {"variance_weights", r.variance_weights},
          {"mse_weights", r.mse_weights},
          {"mse_uniform", r.mse_uniform},
          {"mse_variance_weights", r.mse_variance_weights},
          {"mse_mse_weights", r.mse_mse_weights},
          {"pass", r.pass}};
}

nlohmann::json to_json(const BiasReport& r) {
  return {{"weighted_bias", r.weighted_bias}, {"mean_bias", r.mean_bias},         {"max_bias", r.max_bias},
          {"given_pass", r.given_pass},       {"random_trials", r.random_trials}, {"violations", r.violations},
          {"pass", r.pass}};
}

}  // namespace mosaic::eval
