#include "mosaic/verify/suites.hpp"

#include "mosaic/core/errors.hpp"
#include "mosaic/core/rng.hpp"
#include "mosaic/distill/distill.hpp"
#include "mosaic/eval/theory.hpp"
#include "mosaic/genopt/generator.hpp"
#include "mosaic/genopt/losses.hpp"
#include "mosaic/models/width.hpp"
#include "mosaic/models/zoo.hpp"
#include "mosaic/moe/experts.hpp"
#include "mosaic/nn/gradcheck.hpp"
#include "mosaic/nn/losses.hpp"
#include "mosaic/nn/network.hpp"
#include "mosaic/oracles/oracles.hpp"
#include "mosaic/protocol/aggregate.hpp"

#include <algorithm>
#include <chrono>
#include <cstring>
#include <cmath>
#include <functional>

namespace mosaic::verify {

namespace {

constexpr double kGradTolerance = 1e-4;
// Entries whose true gradient vanishes (a dense bias feeding batch norm) are
// judged on absolute error: 1e-4 relative to this floor.
constexpr double kGradFloor = 1e-5;
const nn::GradcheckOptions kOptions{1e-5, kGradTolerance, kGradFloor};

CheckResult from_gradcheck(std::string name, const nn::GradcheckReport& r) {
  return {std::move(name),
          r.pass && r.max_relative_error <= kGradTolerance,
          {{"max_relative_error", r.max_relative_error}, {"checked", r.checked}, {"worst", r.worst_entry}}};
}

CheckResult from_error(std::string name, double err, double tol) {
  return {std::move(name), err <= tol, {{"max_relative_error", err}, {"tolerance", tol}}};
}

// Σ out ⊙ R through the whole network, with parameter and input gradients.
struct Probe {
  nn::ModelSpec spec;
  Matrix x;
  Matrix weights;
  nn::Mode mode;

  double value(const nn::ParamSet& p, const Matrix& in) const {
    return (nn::forward(p, spec, in, mode).logits.array() * weights.array()).sum();
  }
  std::pair<double, nn::Gradients> loss(const nn::ParamSet& p) const {
    auto fwd = nn::forward(p, spec, x, mode);
    const double v = (fwd.logits.array() * weights.array()).sum();
    return {v, nn::backward(fwd.cache, weights).params};
  }
};

std::vector<CheckResult> layer_checks(const std::string& name, const nn::ModelSpec& spec, nn::Mode mode,
                                      std::uint64_t seed) {
  Rng rng(seed);
  nn::ParamSet params = nn::init_params(spec, rng);
  // Non-trivial BN affine parameters and running statistics.
  for (auto& e : params.mutable_entries()) {
    if (e.role == nn::Role::bn_gain) e.value = (1.0 + 0.3 * rng.normal_matrix(1, e.value.cols()).array()).matrix();
    if (e.role == nn::Role::bn_shift || e.role == nn::Role::bias) e.value = 0.2 * rng.normal_matrix(1, e.value.cols());
    if (e.role == nn::Role::bn_running_mean) e.value = 0.5 * rng.normal_matrix(1, e.value.cols());
    if (e.role == nn::Role::bn_running_var) e.value = (0.5 + rng.normal_matrix(1, e.value.cols()).array().abs()).matrix();
  }
  Probe probe{spec, rng.normal_matrix(6, static_cast<Eigen::Index>(spec.input_dim())),
              rng.normal_matrix(6, static_cast<Eigen::Index>(spec.output_dim())), mode};
  std::vector<CheckResult> out;
  bool has_params = false;
  for (const auto& e : params.entries()) has_params = has_params || nn::is_trainable(e.role);
  if (has_params) {
    out.push_back(from_gradcheck(name + ".params", nn::gradcheck(params, [&](const nn::ParamSet& p) { return probe.loss(p); }, kOptions)));
  }
  auto fwd = nn::forward(params, spec, probe.x, mode);
  const Matrix analytic = nn::backward(fwd.cache, probe.weights).inputs;
  const Matrix numeric = oracles::numeric_gradient([&](const Matrix& in) { return probe.value(params, in); }, probe.x);
  out.push_back(from_error(name + ".inputs", oracles::max_relative_error(analytic, numeric, kGradFloor), kGradTolerance));
  const Matrix reference = oracles::straight_forward(params, spec, probe.x, mode == nn::Mode::train);
  out.push_back(from_error(name + ".forward", oracles::max_relative_error(fwd.logits, reference, 1e-9), 1e-10));
  return out;
}

using SampleFn = std::function<genopt::SampleLoss(const Matrix&)>;

CheckResult sample_check(const std::string& name, const SampleFn& f, const Matrix& x) {
  const auto r = f(x);
  const Matrix numeric = oracles::numeric_gradient([&](const Matrix& in) { return f(in).value; }, x);
  return from_error(name, oracles::max_relative_error(r.grad, numeric, kGradFloor), kGradTolerance);
}

using LogitFn = std::function<nn::LossResult(const Matrix&)>;

CheckResult logit_check(const std::string& name, const LogitFn& f, const Matrix& x) {
  const auto r = f(x);
  const Matrix numeric = oracles::numeric_gradient([&](const Matrix& in) { return f(in).value; }, x);
  return from_error(name, oracles::max_relative_error(r.grad, numeric, kGradFloor), kGradTolerance);
}

models::ClassifierShape small_shape() {
  models::ClassifierShape s;
  s.input_dim = 5;
  s.hidden = {6, 5};
  s.classes = 4;
  return s;
}

// A classifier with perturbed, non-default BN running statistics.
nn::ParamSet random_classifier(const nn::ModelSpec& spec, Rng& rng) {
  nn::ParamSet p = nn::init_params(spec, rng);
  for (auto& e : p.mutable_entries()) {
    if (e.role == nn::Role::bn_running_mean) e.value = 0.3 * rng.normal_matrix(1, e.value.cols());
    if (e.role == nn::Role::bn_running_var) e.value = (0.5 + rng.normal_matrix(1, e.value.cols()).array().abs()).matrix();
  }
  return p;
}

}  // namespace

bool SuiteReport::pass() const {
  for (const auto& c : checks) {
    if (!c.pass) return false;
  }
  return true;
}

const std::vector<std::string>& suite_names() {
  static const std::vector<std::string> names = {"gradcheck", "aggregation", "theorem", "losses"};
  return names;
}

bool is_suite(const std::string& name) {
  if (name == "all") return true;
  for (const auto& n : suite_names()) {
    if (n == name) return true;
  }
  return false;
}

SuiteReport gradcheck_suite() {
  SuiteReport report{"gradcheck", {}, 0.0};
  auto add = [&](std::vector<CheckResult> v) { report.checks.insert(report.checks.end(), v.begin(), v.end()); };

  add(layer_checks("dense", {{nn::Dense{4, 3}}}, nn::Mode::train, 11));
  add(layer_checks("batchnorm.train", {{nn::Dense{4, 5}, nn::BatchNorm{5, 0.1}}}, nn::Mode::train, 12));
  add(layer_checks("batchnorm.eval", {{nn::Dense{4, 5}, nn::BatchNorm{5, 0.1}}}, nn::Mode::eval, 13));
  add(layer_checks("relu", {{nn::Dense{4, 5}, nn::Relu{}}}, nn::Mode::train, 14));
  add(layer_checks("squash", {{nn::Dense{4, 3}, nn::Squash{-2.0, 3.0}}}, nn::Mode::train, 15));
  add(layer_checks("output_head", {{nn::Dense{4, 5}, nn::Relu{}, nn::OutputHead{5, 3}}}, nn::Mode::train, 16));
  add(layer_checks("classifier", models::classifier_spec(small_shape()), nn::Mode::train, 17));
  add(layer_checks("meta", models::meta_spec(3), nn::Mode::train, 18));

  Rng rng(21);
  const Matrix logits = rng.normal_matrix(5, 4, 1.5);
  const Matrix teacher = rng.normal_matrix(5, 4, 1.5);
  const Labels labels = {0, 3, 1, 2, 3};
  report.checks.push_back(logit_check("loss.cross_entropy", [&](const Matrix& z) { return nn::cross_entropy(z, labels); }, logits));
  report.checks.push_back(logit_check("loss.kl", [&](const Matrix& z) { return nn::kl_divergence(z, teacher); }, logits));
  distill::DistillConfig kd;
  kd.temperature = 2.5;
  report.checks.push_back(logit_check("loss.kd", [&](const Matrix& z) { return distill::kd_loss(z, teacher, kd); }, logits));
  report.checks.push_back(sample_check("loss.logit_entropy", [](const Matrix& z) { return genopt::logit_entropy(z); }, logits));
  report.checks.push_back(sample_check("loss.batch_mean_entropy", [](const Matrix& z) { return genopt::batch_mean_entropy(z); }, logits));

  const nn::ModelSpec spec = models::classifier_spec(small_shape());
  Rng init(22);
  const nn::ParamSet classifier = random_classifier(spec, init);
  const Matrix samples = init.normal_matrix(6, 5);
  report.checks.push_back(sample_check("loss.entropy", [&](const Matrix& s) { return genopt::entropy_loss(classifier, spec, s); }, samples));
  report.checks.push_back(sample_check("loss.diversity", [&](const Matrix& s) { return genopt::diversity_loss(classifier, spec, s); }, samples));
  report.checks.push_back(sample_check("loss.inversion", [&](const Matrix& s) { return genopt::inversion_loss(classifier, spec, s); }, samples));

  // Full generator objective wrt generator parameters, every term active.
  for (bool non_saturating : {false, true}) {
    genopt::GenConfig cfg;
    cfg.shape.latent_dim = 3;
    cfg.shape.hidden = {6};
    cfg.shape.output_dim = 5;
    cfg.shape.lo = -2.0;
    cfg.shape.hi = 2.0;
    cfg.non_saturating = non_saturating;
    Rng g(23);
    const genopt::GenTrainState state = genopt::init_gen_state(classifier, spec, cfg, g);
    const Matrix latent = g.normal_matrix(6, 3);
    const auto objective = [&](const nn::ParamSet& p) {
      genopt::GenTrainState s = state;
      s.generator.params = p;
      auto o = genopt::generator_objective(s, latent, classifier, spec, 10, cfg);
      return std::make_pair(o.total, std::move(o.grads));
    };
    report.checks.push_back(from_gradcheck(non_saturating ? "generator_objective.non_saturating" : "generator_objective",
                                           nn::gradcheck(state.generator.params, objective, kOptions)));
  }
  return report;
}

namespace {

// Random values everywhere, running variances kept positive.
void randomize(nn::ParamSet& p, Rng& rng) {
  for (auto& e : p.mutable_entries()) {
    e.value = rng.normal_matrix(e.value.rows(), e.value.cols());
    if (e.role == nn::Role::bn_running_var) e.value = e.value.array().abs().matrix();
  }
}

bool bit_equal(const nn::ParamSet& a, const nn::ParamSet& b) { return a == b; }

}  // namespace

SuiteReport aggregation_suite(std::size_t seeds) {
  SuiteReport report{"aggregation", {}, 0.0};
  models::ClassifierShape shape;
  shape.input_dim = 3;
  shape.hidden = {4, 4};
  shape.classes = 3;
  const nn::ModelSpec spec = models::classifier_spec(shape);
  const double ratio_choices[] = {1.0, 0.5, 0.25, 0.75};
  std::size_t fedavg_bad = 0, partial_bad = 0, uncovered_bad = 0, grouped_bad = 0, classwise_bad = 0;
  std::size_t convex_bad = 0, homogeneous_bad = 0;
  for (std::size_t seed = 0; seed < seeds; ++seed) {
    Rng rng = Rng(seed).derive("verify.aggregation");
    nn::ParamSet previous = nn::init_params(spec, rng);
    randomize(previous, rng);
    // Client ids in shuffled order so sorting is exercised.
    std::vector<std::size_t> ids = {7, 2, 5};
    std::shuffle(ids.begin(), ids.end(), rng.engine());

    // fedavg and class-wise on full-width models.
    std::vector<nn::ParamSet> full(3, previous);
    std::vector<oracles::Upload> full_up;
    std::vector<protocol::Contribution> full_c;
    std::vector<std::vector<std::size_t>> hist(3, std::vector<std::size_t>(shape.classes));
    for (std::size_t i = 0; i < 3; ++i) {
      randomize(full[i], rng);
      for (auto& h : hist[i]) h = rng.index(3) == 0 ? 0 : rng.index(50);
    }
    hist[0][0] = hist[1][0] = hist[2][0] = 0;  // one class nobody holds
    for (std::size_t i = 0; i < 3; ++i) {
      const double w = static_cast<double>(1 + rng.index(40));
      full_up.push_back({ids[i], w, full[i], {}});
      full_c.push_back({ids[i], w, &full[i], nullptr, &spec});
    }
    const nn::ParamSet fed = protocol::fedavg_aggregate(full_c);
    if (!bit_equal(fed, oracles::brute_fedavg(full_up))) ++fedavg_bad;
    for (const auto& e : fed.entries()) {
      for (Eigen::Index k = 0; k < e.value.size(); ++k) {
        double lo = INFINITY, hi = -INFINITY;
        for (const auto& f : full) {
          lo = std::min(lo, f.at(e.name).data()[k]);
          hi = std::max(hi, f.at(e.name).data()[k]);
        }
        if (e.value.data()[k] < lo || e.value.data()[k] > hi) ++convex_bad;
      }
    }
    std::vector<protocol::Contribution> same;
    for (std::size_t i = 0; i < 3; ++i) same.push_back({ids[i], static_cast<double>(1 + i * 7), &full[0], nullptr, &spec});
    if (!bit_equal(protocol::fedavg_aggregate(same), full[0])) ++homogeneous_bad;

    std::vector<moe::ClientView> views;
    for (std::size_t i = 0; i < 3; ++i) views.push_back({ids[i], &full[i], hist[i]});
    const auto experts = moe::classwise_aggregate(views, previous);
    const auto expected = oracles::brute_classwise(ids, full, hist, previous);
    for (std::size_t c = 0; c < shape.classes; ++c) {
      if (!bit_equal(experts[c], expected[c])) ++classwise_bad;
    }

    // Partial aggregation over width-masked sub-models.
    std::vector<models::SubModelMask> masks(3);
    std::vector<models::SubModel> subs(3);
    std::vector<protocol::Contribution> part_c;
    std::vector<oracles::Upload> part_up;
    for (std::size_t i = 0; i < 3; ++i) {
      const double ratio = ratio_choices[rng.index(4)];
      const auto scheme = rng.index(2) == 0 ? models::MaskScheme::fixed : models::MaskScheme::rolling;
      masks[i] = models::submodel_mask(spec, ratio, scheme, rng.index(9));
      subs[i] = models::extract_submodel(previous, spec, masks[i]);
      randomize(subs[i].params, rng);
      const double w = rng.index(5) == 0 ? 0.0 : static_cast<double>(1 + rng.index(40));
      part_c.push_back({ids[i], w, &subs[i].params, &masks[i], &subs[i].spec});
      part_up.push_back({ids[i], w, subs[i].params, masks[i].units});
    }
    const nn::ParamSet partial = protocol::partial_aggregate(previous, spec, part_c);
    if (!bit_equal(partial, oracles::brute_partial(previous, spec, part_up))) ++partial_bad;
    for (const auto& e : partial.entries()) {
      for (Eigen::Index r = 0; r < e.value.rows(); ++r) {
        for (Eigen::Index c = 0; c < e.value.cols(); ++c) {
          bool covered = false;
          for (const auto& u : part_up) covered = covered || oracles::sub_position(spec, u.units, e.name, e.role, r, c).has_value();
          const double before = previous.at(e.name)(r, c);
          if (!covered && std::memcmp(&before, &e.value(r, c), sizeof(double)) != 0) ++uncovered_bad;
        }
      }
    }

    // Grouped: same-spec clients form groups, fedavg inside each.
    std::vector<protocol::Contribution> grouped_c;
    std::vector<oracles::Upload> grouped_up;
    std::vector<nn::ParamSet> half(3);
    const nn::ModelSpec small = models::submodel_spec(spec, models::submodel_mask(spec, 0.5, models::MaskScheme::fixed, 0));
    std::vector<nn::ModelSpec> specs(3);
    for (std::size_t i = 0; i < 3; ++i) {
      specs[i] = rng.index(2) == 0 ? spec : small;
      half[i] = nn::init_params(specs[i], rng);
      randomize(half[i], rng);
      const double w = static_cast<double>(1 + rng.index(40));
      grouped_c.push_back({ids[i], w, &half[i], nullptr, &specs[i]});
      grouped_up.push_back({ids[i], w, half[i], {}});
    }
    const auto groups = protocol::grouped_aggregate(grouped_c);
    for (const auto& g : groups) {
      std::vector<oracles::Upload> members;
      for (std::size_t i = 0; i < 3; ++i) {
        if (specs[i] == g.spec) members.push_back(grouped_up[i]);
      }
      if (members.size() != g.client_ids.size() || !bit_equal(g.params, oracles::brute_fedavg(members))) ++grouped_bad;
    }
  }
  const auto count = [&](const std::string& name, std::size_t bad) {
    report.checks.push_back({name, bad == 0, {{"seeds", seeds}, {"mismatches", bad}}});
  };
  count("fedavg_bitwise", fedavg_bad);
  count("fedavg_convex", convex_bad);
  count("fedavg_homogeneous", homogeneous_bad);
  count("partial_bitwise", partial_bad);
  count("partial_uncovered_unchanged", uncovered_bad);
  count("grouped_bitwise", grouped_bad);
  count("classwise_bitwise", classwise_bad);
  return report;
}

SuiteReport theorem_suite(std::size_t samples, std::size_t trials) {
  SuiteReport report{"theorem", {}, 0.0};
  eval::NoiseModel unequal{{1.0, 4.0}, {}, 0.0};
  const auto r = eval::verify_variance_theorem(unequal, 2, samples, 7);
  const bool closed = r.var_ve_closed == 1.25 && std::abs(r.var_me_closed - 0.8) <= 1e-15;
  const bool mc = std::abs(r.var_ve_mc / r.var_ve_closed - 1.0) <= 0.05 &&
                  std::abs(r.var_me_mc / r.var_me_closed - 1.0) <= 0.05;
  report.checks.push_back({"variance.closed_form", closed, eval::to_json(r)});
  report.checks.push_back({"variance.monte_carlo_5pct", mc && r.var_me_mc <= r.var_ve_mc, eval::to_json(r)});

  eval::NoiseModel equal{{2.0, 2.0}, {}, 0.0};
  const auto e = eval::verify_variance_theorem(equal, 2, samples, 8);
  const bool eq = std::abs(e.var_ve_mc / e.var_me_mc - 1.0) <= 0.01 && e.var_ve_closed == e.var_me_closed;
  report.checks.push_back({"variance.equal_case_1pct", eq, eval::to_json(e)});

  eval::NoiseModel biased{{1.0, 4.0, 0.5}, {{0.5, -1.0}, {2.0, 0.0}, {-0.3, 0.4}}, 0.0};
  const auto b = eval::verify_bias_bound(biased, {0.2, 0.3, 0.5}, trials, 9);
  report.checks.push_back({"bias_bound", b.pass && b.violations == 0, eval::to_json(b)});
  return report;
}

SuiteReport losses_suite() {
  SuiteReport report{"losses", {}, 0.0};
  auto near = [&](const std::string& name, double got, double want, double tol) {
    report.checks.push_back({name, std::abs(got - want) <= tol, {{"value", got}, {"expected", want}}});
  };
  const std::size_t classes = 6;
  const double ln_c = std::log(static_cast<double>(classes));

  near("entropy.uniform_is_ln_c", genopt::logit_entropy(Matrix::Constant(4, classes, 0.7)).value, ln_c, 1e-10);
  Matrix onehot = Matrix::Zero(4, classes);
  for (int r = 0; r < 4; ++r) onehot(r, r % 2) = 1000.0;
  near("entropy.confident_is_zero", genopt::logit_entropy(onehot).value, 0.0, 1e-10);

  Matrix same = Matrix::Zero(5, classes);
  same.col(2).setConstant(1000.0);
  near("diversity.collapsed_is_zero", genopt::batch_mean_entropy(same).value, 0.0, 1e-10);
  Matrix spread = Matrix::Zero(2 * classes, classes);
  for (std::size_t r = 0; r < 2 * classes; ++r) spread(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(r % classes)) = 1000.0;
  near("diversity.balanced_is_ln_c", genopt::batch_mean_entropy(spread).value, ln_c, 1e-10);

  Rng rng(31);
  const Matrix z = rng.normal_matrix(7, classes, 2.0);
  const Matrix t = rng.normal_matrix(7, classes, 2.0);
  near("kl.self_is_zero", nn::kl_divergence(z, z).value, 0.0, 1e-12);
  near("kl.matches_oracle", nn::kl_divergence(z, t).value, oracles::mean_kl(t, z), 1e-12);
  const Labels labels = nn::argmax_rows(t);
  near("cross_entropy.matches_oracle", nn::cross_entropy(z, labels).value,
       oracles::mean_cross_entropy(z, std::vector<int>(labels.begin(), labels.end())), 1e-12);

  distill::DistillConfig both;
  distill::DistillConfig soft = both;
  soft.lambda_hard = 0.0;
  distill::DistillConfig hard = both;
  hard.lambda_soft = 0.0;
  const auto kd = distill::kd_loss(z, t, both);
  const auto kl = nn::kl_divergence(z, t);
  const auto ce = nn::cross_entropy(z, labels);
  const auto exact = [&](const std::string& name, double got, double want) {
    report.checks.push_back({name, got == want, {{"value", got}, {"expected", want}}});
  };
  exact("kd.soft_only_is_scaled_kl", distill::kd_loss(z, t, soft).value, soft.lambda_soft * kl.value);
  exact("kd.hard_only_is_scaled_ce", distill::kd_loss(z, t, hard).value, hard.lambda_hard * ce.value);
  exact("kd.sum_of_terms", kd.value, both.lambda_soft * kl.value + both.lambda_hard * ce.value);
  distill::DistillConfig warm = soft;
  warm.temperature = 3.0;
  exact("kd.temperature_scaling", distill::kd_loss(z, t, warm).value,
        warm.lambda_soft * 9.0 * nn::kl_divergence(z / 3.0, t / 3.0).value);

  const std::vector<double> uniform(classes, 1.0 / static_cast<double>(classes));
  near("distribution_entropy.uniform", nn::distribution_entropy(uniform), ln_c, 1e-12);
  return report;
}

std::vector<SuiteReport> run_suites(const std::string& name) {
  if (!is_suite(name)) throw ConfigError("unknown suite '" + name + "'");
  std::vector<SuiteReport> out;
  for (const auto& s : suite_names()) {
    if (name != "all" && name != s) continue;
    const auto start = std::chrono::steady_clock::now();
    SuiteReport r = s == "gradcheck"     ? gradcheck_suite()
                    : s == "aggregation" ? aggregation_suite()
                    : s == "theorem"     ? theorem_suite()
                                         : losses_suite();
    r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    out.push_back(std::move(r));
  }
  return out;
}

nlohmann::json to_json(const std::vector<SuiteReport>& reports) {
  nlohmann::json suites = nlohmann::json::array();
  bool pass = true;
  for (const auto& r : reports) {
    nlohmann::json checks = nlohmann::json::array();
    for (const auto& c : r.checks) checks.push_back({{"name", c.name}, {"pass", c.pass}, {"detail", c.detail}});
    suites.push_back({{"suite", r.suite}, {"pass", r.pass()}, {"seconds", r.seconds}, {"checks", checks}});
    pass = pass && r.pass();
  }
  return {{"pass", pass}, {"suites", suites}};
}

}  // namespace mosaic::verify
