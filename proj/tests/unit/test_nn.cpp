#include "helpers.hpp"

#include "mosaic/core/errors.hpp"
#include "mosaic/models/zoo.hpp"
#include "mosaic/nn/gradcheck.hpp"
#include "mosaic/nn/losses.hpp"
#include "mosaic/nn/network.hpp"
#include "mosaic/nn/optim.hpp"
#include "mosaic/nn/serialize.hpp"
#include "mosaic/oracles/oracles.hpp"

#include <doctest.h>

#include <cmath>
#include <vector>

using namespace mosaic;

namespace {

nn::ModelSpec mlp_spec() { return models::classifier_spec({4, {5, 3}, 3, 0.1}); }

std::vector<int> labels_for(std::size_t rows, int classes) {
  std::vector<int> y(rows);
  for (std::size_t i = 0; i < rows; ++i) y[i] = static_cast<int>(i) % classes;
  return y;
}

}  // namespace

TEST_CASE("identity dense layer passes inputs through") {
  nn::ModelSpec spec{{nn::Dense{3, 3}}};
  nn::ParamSet p;
  p.add("0.weight", nn::Role::weight, Matrix::Identity(3, 3));
  p.add("0.bias", nn::Role::bias, Matrix::Zero(1, 3));
  Rng rng(0);
  Matrix x = rng.normal_matrix(4, 3);
  CHECK(testing::bytes_equal(nn::forward(p, spec, x, nn::Mode::eval).logits, x));
}

TEST_CASE("eval BN with running stats equal to the batch stats normalizes") {
  nn::ModelSpec spec{{nn::BatchNorm{3, 0.1}}};
  Rng rng(1);
  Matrix x = rng.normal_matrix(50, 3, 2.0);
  x.array().rowwise() += Eigen::Array<double, 1, 3>(1.0, -2.0, 0.5);
  nn::ParamSet p = nn::init_params(spec, rng);
  RowVector mean = x.colwise().mean();
  RowVector var = (x.rowwise() - mean).array().square().colwise().mean().matrix();
  p.mutable_at("0.running_mean") = mean;
  p.mutable_at("0.running_var") = var;
  Matrix y = nn::forward(p, spec, x, nn::Mode::eval).logits;
  RowVector ym = y.colwise().mean();
  RowVector yv = (y.rowwise() - ym).array().square().colwise().mean().matrix();
  for (int j = 0; j < 3; ++j) {
    CHECK(std::abs(ym(j)) < 1e-12);
    CHECK(yv(j) == doctest::Approx(1.0).epsilon(1e-4));
  }
}

TEST_CASE("forward matches the straight-line oracle in both modes") {
  auto spec = mlp_spec();
  Rng rng(0);
  nn::ParamSet p = nn::init_params(spec, rng);
  for (auto& e : p.mutable_entries()) {
    if (e.role == nn::Role::bn_running_var) e.value.array() += 0.5;
    if (e.role == nn::Role::bn_shift) e.value = 0.1 * rng.normal_matrix(1, e.value.cols());
  }
  Matrix x = rng.normal_matrix(7, 4);
  for (bool train : {true, false}) {
    Matrix got = nn::forward(p, spec, x, train ? nn::Mode::train : nn::Mode::eval).logits;
    Matrix want = oracles::straight_forward(p, spec, x, train);
    CHECK((got - want).cwiseAbs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("forward errors") {
  auto spec = mlp_spec();
  Rng rng(0);
  auto p = nn::init_params(spec, rng);
  CHECK_THROWS_AS(nn::forward(p, spec, Matrix::Zero(3, 5), nn::Mode::eval), ShapeError);
  CHECK_THROWS_AS(nn::forward(p, spec, Matrix::Zero(1, 4), nn::Mode::train), DegenerateBatchError);
  nn::Batch bad{Matrix::Zero(3, 4), Labels{0, 1}};
  CHECK_THROWS_AS(bad.validate(), ShapeError);
}

TEST_CASE("forward is deterministic") {
  auto spec = mlp_spec();
  Rng a(3), b(3);
  auto pa = nn::init_params(spec, a);
  auto pb = nn::init_params(spec, b);
  CHECK(pa == pb);
  Matrix x = a.normal_matrix(5, 4);
  CHECK(testing::bytes_equal(nn::forward(pa, spec, x, nn::Mode::train).logits,
                             nn::forward(pb, spec, x, nn::Mode::train).logits));
}

TEST_CASE("backward rejects a stale cache") {
  auto spec = mlp_spec();
  Rng rng(0);
  auto p = nn::init_params(spec, rng);
  auto fwd = nn::forward(p, spec, rng.normal_matrix(4, 4), nn::Mode::train);
  p.mutable_at("0.weight")(0, 0) += 1.0;
  CHECK_THROWS_AS(nn::backward(fwd.cache, Matrix::Ones(4, 3)), StaleCacheError);
}

TEST_CASE("a parameter the loss ignores gets an exactly zero gradient") {
  // Only the first output column enters the loss, so the head's other
  // columns receive nothing.
  auto spec = mlp_spec();
  Rng rng(2);
  auto p = nn::init_params(spec, rng);
  auto fwd = nn::forward(p, spec, rng.normal_matrix(6, 4), nn::Mode::train);
  Matrix g = Matrix::Zero(6, 3);
  g.col(0).setOnes();
  auto grads = nn::backward(fwd.cache, g).params;
  auto head = std::to_string(*spec.head_index()) + ".";
  CHECK(grads.at(head + "weight").rightCols(2).cwiseAbs().maxCoeff() == 0.0);
  CHECK(grads.at(head + "bias").rightCols(2).cwiseAbs().maxCoeff() == 0.0);
  grads.check_matches(p);
}

TEST_CASE("cross entropy") {
  CHECK(nn::cross_entropy(Matrix::Zero(3, 2), std::vector<int>{0, 1, 0}).value == doctest::Approx(std::log(2.0)));
  Matrix confident = Matrix::Zero(2, 3);
  confident(0, 1) = 1e6;
  confident(1, 2) = 1e6;
  CHECK(nn::cross_entropy(confident, std::vector<int>{1, 2}).value < 1e-12);

  Rng rng(0);
  Matrix logits = rng.normal_matrix(8, 10, 3.0);
  std::vector<int> y = {0, 3, 9, 1, 4, 4, 7, 2};
  CHECK(std::abs(nn::cross_entropy(logits, y).value - oracles::mean_cross_entropy(logits, y)) < 1e-10);
  CHECK_THROWS_AS(nn::cross_entropy(logits, std::vector<int>{0, 3, 10, 1, 4, 4, 7, 2}), LabelError);
  CHECK_THROWS_AS(nn::cross_entropy(logits, std::vector<int>{0, 3, -1, 1, 4, 4, 7, 2}), LabelError);
}

TEST_CASE("kl divergence") {
  Rng rng(4);
  Matrix t = rng.normal_matrix(5, 4);
  auto self = nn::kl_divergence(t, t);
  CHECK(self.value == 0.0);
  CHECK(self.grad.cwiseAbs().maxCoeff() < 1e-15);

  Matrix teacher(1, 2), student(1, 2);
  teacher << 1e3, -1e3;
  student << 0.0, 0.0;
  CHECK(nn::kl_divergence(student, teacher).value == doctest::Approx(std::log(2.0)).epsilon(1e-12));

  Matrix s = rng.normal_matrix(5, 4);
  CHECK(nn::kl_divergence(s, t).value >= 0.0);
  CHECK(std::abs(nn::kl_divergence(s, t).value - oracles::mean_kl(t, s)) < 1e-12);
  CHECK_THROWS_AS(nn::kl_divergence(s, Matrix::Zero(5, 3)), ShapeError);
}

TEST_CASE("distribution entropy") {
  std::vector<double> onehot = {0, 1, 0};
  CHECK(nn::distribution_entropy(onehot) == 0.0);
  std::vector<double> uniform(10, 0.1);
  CHECK(nn::distribution_entropy(uniform) == doctest::Approx(std::log(10.0)).epsilon(1e-12));
  std::vector<double> p = {0.5, 0.25, 0.25};
  CHECK(nn::distribution_entropy(p) == doctest::Approx(1.5 * std::log(2.0)).epsilon(1e-12));
  CHECK(std::abs(nn::distribution_entropy(p) - 1.0397) < 1e-4);
  std::vector<double> negative = {1.5, -0.5};
  std::vector<double> unnormalized = {0.5, 0.4};
  CHECK_THROWS_AS(nn::distribution_entropy(negative), DistributionError);
  CHECK_THROWS_AS(nn::distribution_entropy(unnormalized), DistributionError);
}

TEST_CASE("entropy stays within [0, ln C] on random distributions") {
  Rng rng(5);
  for (int trial = 0; trial < 200; ++trial) {
    std::size_t c = 2 + rng.index(9);
    std::vector<double> p(c);
    double total = 0.0;
    for (auto& v : p) total += (v = std::pow(rng.uniform(), 3.0));
    for (auto& v : p) v /= total;
    double h = nn::distribution_entropy(p);
    CHECK(h >= 0.0);
    CHECK(h <= std::log(static_cast<double>(c)) + 1e-12);
  }
}

TEST_CASE("optimizer steps") {
  nn::ParamSet p;
  p.add("w", nn::Role::weight, Matrix::Zero(1, 1));
  auto g = nn::Gradients::zeros_like(p);
  nn::OptimizerState state;
  nn::optimizer_step(p, g, state, nn::SgdConfig{0.1, 0.0});
  CHECK(p.at("w")(0, 0) == 0.0);

  g.mutable_at("w")(0, 0) = 1.0;
  nn::OptimizerState sgd;
  nn::optimizer_step(p, g, sgd, nn::SgdConfig{0.1, 0.0});
  CHECK(p.at("w")(0, 0) == doctest::Approx(-0.1).epsilon(1e-15));

  for (double grad : {1e-3, 1.0, 250.0, -7.0}) {
    nn::ParamSet q;
    q.add("w", nn::Role::weight, Matrix::Zero(1, 1));
    auto gq = nn::Gradients::zeros_like(q);
    gq.mutable_at("w")(0, 0) = grad;
    nn::OptimizerState adam;
    nn::optimizer_step(q, gq, adam, nn::AdamConfig{0.01, 0.9, 0.999, 1e-8});
    CHECK(std::abs(q.at("w")(0, 0)) == doctest::Approx(0.01).epsilon(1e-4));
    CHECK((q.at("w")(0, 0) < 0) == (grad > 0));
  }

  nn::Gradients wrong;
  wrong.add("v", Matrix::Zero(1, 1));
  CHECK_THROWS_AS(nn::optimizer_step(p, wrong, state, nn::SgdConfig{}), StructureError);
}

TEST_CASE("optimizer never touches running statistics") {
  auto spec = mlp_spec();
  Rng rng(0);
  auto p = nn::init_params(spec, rng);
  auto before = p;
  auto g = nn::Gradients::zeros_like(p);
  for (const auto& name : g.names()) g.mutable_at(name).setOnes();
  nn::OptimizerState st;
  nn::optimizer_step(p, g, st, nn::SgdConfig{0.1, 0.9});
  for (const auto& e : p.entries()) {
    if (!nn::is_trainable(e.role)) CHECK(testing::bytes_equal(e.value, before.at(e.name)));
  }
}

TEST_CASE("running statistics follow the momentum formula exactly") {
  auto spec = mlp_spec();
  Rng rng(6);
  auto p = nn::init_params(spec, rng);
  for (int step = 0; step < 3; ++step) {
    auto before = p;
    auto fwd = nn::forward(p, spec, rng.normal_matrix(9, 4), nn::Mode::train);
    nn::update_running_stats(p, spec, fwd.batch_stats);
    auto bn = spec.batchnorm_layers();
    for (std::size_t b = 0; b < bn.size(); ++b) {
      const double m = std::get<nn::BatchNorm>(spec.layers[bn[b]]).momentum;
      auto pre = nn::ModelSpec::prefix(bn[b]);
      Matrix mean = (1 - m) * before.at(pre + "running_mean") + m * fwd.batch_stats[b].mean;
      Matrix var = (1 - m) * before.at(pre + "running_var") + m * fwd.batch_stats[b].var;
      CHECK(testing::bytes_equal(p.at(pre + "running_mean"), mean));
      CHECK(testing::bytes_equal(p.at(pre + "running_var"), var));
    }
  }
}

TEST_CASE("gradcheck") {
  SUBCASE("linear model with quadratic loss") {
    nn::ModelSpec spec{{nn::Dense{3, 2}}};
    Rng rng(0);
    Matrix x = rng.normal_matrix(4, 3);
    auto loss = [&](const nn::ParamSet& p) {
      auto fwd = nn::forward(p, spec, x, nn::Mode::train);
      double v = 0.5 * fwd.logits.squaredNorm();
      return std::pair{v, nn::backward(fwd.cache, fwd.logits).params};
    };
    auto r = nn::gradcheck(spec, loss, 0);
    CHECK(r.pass);
    CHECK(r.max_relative_error < 1e-8);
  }
  auto spec = mlp_spec();
  Rng rng(0);
  Matrix x = rng.normal_matrix(8, 4);
  auto y = labels_for(8, 3);
  auto ce = [&](double scale) {
    return [&, scale](const nn::ParamSet& p) {
      auto fwd = nn::forward(p, spec, x, nn::Mode::train);
      auto l = nn::cross_entropy(fwd.logits, y);
      auto g = nn::backward(fwd.cache, l.grad).params;
      g *= scale;
      return std::pair{l.value, g};
    };
  };
  SUBCASE("two-layer MLP with BN and cross entropy") {
    CHECK(nn::gradcheck(spec, ce(1.0), 0, {1e-5, 1e-4, 1e-5}).pass);
  }
  SUBCASE("a corrupted gradient fails") {
    CHECK_FALSE(nn::gradcheck(spec, ce(1.01), 0, {1e-5, 1e-4, 1e-5}).pass);
  }
}

TEST_CASE("param serialization round-trips and rejects garbage") {
  auto spec = mlp_spec();
  Rng rng(0);
  auto p = nn::init_params(spec, rng);
  auto bytes = nn::encode_params(p, &spec);
  auto back = nn::decode_params(bytes);
  CHECK(back.params == p);
  REQUIRE(back.spec.has_value());
  CHECK(*back.spec == spec);
  auto j = nn::params_from_json(nn::params_to_json(p, &spec));
  CHECK(j.params == p);
  bytes.resize(bytes.size() - 3);
  CHECK_THROWS_AS(nn::decode_params(bytes), FormatError);
  bytes[0] = 'X';
  CHECK_THROWS_AS(nn::decode_params(bytes), FormatError);
}

TEST_CASE("spec validation and parameter checks") {
  nn::ModelSpec broken{{nn::Dense{3, 4}, nn::Dense{5, 2}}};
  CHECK_THROWS_AS(broken.validate(), ShapeError);
  CHECK_THROWS_AS(nn::ModelSpec{}.validate(), ShapeError);
  auto spec = mlp_spec();
  Rng rng(0);
  auto p = nn::init_params(spec, rng);
  nn::check_params(p, spec);
  auto other = nn::init_params(models::classifier_spec({4, {6, 3}, 3, 0.1}), rng);
  CHECK_THROWS_AS(nn::check_params(other, spec), StructureError);
}
