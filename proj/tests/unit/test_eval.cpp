#include "helpers.hpp"

#include "mosaic/core/errors.hpp"
#include "mosaic/data/synthetic.hpp"
#include "mosaic/eval/metrics.hpp"
#include "mosaic/eval/theory.hpp"
#include "mosaic/models/zoo.hpp"
#include "mosaic/nn/network.hpp"
#include "mosaic/oracles/oracles.hpp"

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

using namespace mosaic;

namespace {

Matrix one_hot(const Labels& y, std::size_t c) {
  Matrix m = Matrix::Zero(static_cast<Eigen::Index>(y.size()), static_cast<Eigen::Index>(c));
  for (std::size_t i = 0; i < y.size(); ++i) m(static_cast<Eigen::Index>(i), y[i]) = 1.0;
  return m;
}

Labels balanced(std::size_t c, std::size_t per) {
  Labels y;
  for (std::size_t k = 0; k < c; ++k) y.insert(y.end(), per, static_cast<int>(k));
  return y;
}

}  // namespace

TEST_CASE("accuracy") {
  const auto y = balanced(5, 20);
  CHECK(eval::accuracy(one_hot(y, 5), y) == 1.0);
  Matrix constant = Matrix::Zero(100, 5);
  constant.col(2).setOnes();
  CHECK(eval::accuracy(constant, y) == doctest::Approx(0.2).epsilon(1e-15));
  CHECK_THROWS_AS(eval::accuracy(Matrix(0, 5), Labels{}), ConfigError);

  Rng rng(3);
  Labels big;
  for (int i = 0; i < 10000; ++i) big.push_back(static_cast<int>(rng.index(10)));
  Matrix logits = rng.normal_matrix(10000, 10);
  CHECK(std::abs(eval::accuracy(logits, big) - 0.1) < 0.01);

  SUBCASE("row permutation does not change the score") {
    std::vector<std::size_t> perm(big.size());
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng.engine());
    Matrix pl(logits.rows(), logits.cols());
    Labels py(big.size());
    for (std::size_t i = 0; i < perm.size(); ++i) {
      pl.row(static_cast<Eigen::Index>(i)) = logits.row(static_cast<Eigen::Index>(perm[i]));
      py[i] = big[perm[i]];
    }
    CHECK(eval::accuracy(pl, py) == eval::accuracy(logits, big));
  }
}

TEST_CASE("local accuracy") {
  data::SyntheticSpec ds{4, 30, 5, 1.0, 3.0, 0};
  auto test = data::make_synthetic(ds, data::Split::test);
  auto spec = models::classifier_spec({5, {8}, 4, 0.1});
  Rng rng(0);
  auto p = nn::init_params(spec, rng);
  const double global = eval::global_accuracy(p, spec, test);

  CHECK(eval::local_accuracy({{&p, &spec}}, test, 7) == doctest::Approx(global).epsilon(1e-14));
  // Equal-size shards: the mean of per-shard accuracies of one model is the global one.
  std::vector<eval::ModelRef> same(4, {&p, &spec});
  CHECK(eval::local_accuracy(same, test, 7) == doctest::Approx(global).epsilon(1e-12));

  for (std::size_t n : {1, 3, 7, 120}) {
    auto shards = eval::split_test(120, n, 5);
    REQUIRE(shards.size() == n);
    std::size_t lo = 1000, hi = 0;
    std::vector<std::size_t> all;
    for (const auto& s : shards) {
      lo = std::min(lo, s.size());
      hi = std::max(hi, s.size());
      all.insert(all.end(), s.begin(), s.end());
    }
    CHECK(hi - lo <= 1);
    std::sort(all.begin(), all.end());
    std::vector<std::size_t> expect(120);
    std::iota(expect.begin(), expect.end(), 0);
    CHECK(all == expect);
  }
  CHECK(eval::split_test(120, 3, 5) == eval::split_test(120, 3, 5));
}

TEST_CASE("pairwise distance") {
  Matrix same = Matrix::Ones(5, 3);
  CHECK(eval::mean_pairwise_distance(same) == 0.0);
  Matrix two(2, 2);
  two << 0, 0, 3, 4;
  CHECK(eval::mean_pairwise_distance(two) == 5.0);
  Matrix three(3, 1);
  three << 0, 1, 3;
  CHECK(eval::mean_pairwise_distance(three) == doctest::Approx(2.0).epsilon(1e-15));
  CHECK_THROWS(eval::mean_pairwise_distance(Matrix::Ones(1, 3)));
}

TEST_CASE("silhouette") {
  Rng rng(1);
  SUBCASE("tight separated clusters") {
    Matrix f(40, 2);
    Labels y;
    for (int i = 0; i < 40; ++i) {
      const int k = i % 2;
      f(i, 0) = 10.0 * k + rng.normal(0.0, 0.1);
      f(i, 1) = rng.normal(0.0, 0.1);
      y.push_back(k);
    }
    CHECK(*eval::silhouette(f, y) > 0.9);
  }
  SUBCASE("a single cluster has no score") {
    CHECK_FALSE(eval::silhouette(Matrix::Ones(4, 2), Labels(4, 1)).has_value());
  }
  SUBCASE("four points by hand") {
    Matrix f(4, 1);
    f << 0, 1, 4, 5;
    Labels y{0, 0, 1, 1};
    // a = 1 for every point; b = 4.5, 3.5, 3.5, 4.5.
    CHECK(*eval::silhouette(f, y) == doctest::Approx((7.0 / 9.0 + 5.0 / 7.0) / 2.0).epsilon(1e-14));
    CHECK(*eval::silhouette(f, y) == doctest::Approx(*oracles::brute_silhouette(f, y)).epsilon(1e-14));
  }
  SUBCASE("random batches match the brute-force oracle") {
    for (int trial = 0; trial < 30; ++trial) {
      const auto n = static_cast<Eigen::Index>(2 + rng.index(63));
      Matrix f = rng.normal_matrix(n, 3);
      Labels y;
      for (Eigen::Index i = 0; i < n; ++i) y.push_back(static_cast<int>(rng.index(4)));
      auto got = eval::silhouette(f, y);
      auto want = oracles::brute_silhouette(f, y);
      REQUIRE(got.has_value() == want.has_value());
      if (got) {
        CHECK(*got == doctest::Approx(*want).epsilon(1e-12));
        CHECK(*got >= -1.0);
        CHECK(*got <= 1.0);
      }
    }
  }
}

TEST_CASE("variance of mixtures against plain averaging") {
  SUBCASE("two experts with variances one and four") {
    auto r = eval::verify_variance_theorem({{1.0, 4.0}, {}, 0.0}, 2, 200000, 0);
    CHECK(r.var_ve_closed == doctest::Approx(1.25).epsilon(1e-15));
    CHECK(r.var_me_closed == doctest::Approx(0.8).epsilon(1e-15));
    CHECK(std::abs(r.var_ve_mc / 1.25 - 1.0) < 0.05);
    CHECK(std::abs(r.var_me_mc / 0.8 - 1.0) < 0.05);
    CHECK(r.variance_weights[0] == doctest::Approx(0.8));
    CHECK(r.variance_weights[1] == doctest::Approx(0.2));
    CHECK(r.pass);
  }
  SUBCASE("equal variances give equality") {
    auto r = eval::verify_variance_theorem({{2.0, 2.0, 2.0}, {}, 1.0}, 3, 100000, 1);
    CHECK(r.var_me_closed == doctest::Approx(r.var_ve_closed).epsilon(1e-14));
    CHECK(std::abs(r.var_me_mc / r.var_ve_mc - 1.0) < 0.01);
    CHECK(r.pass);
  }
  SUBCASE("one expert") {
    auto r = eval::verify_variance_theorem({{3.0, 5.0}, {}, 0.0}, 1, 50000, 2);
    CHECK(r.var_ve_closed == 3.0);
    CHECK(r.var_me_closed == doctest::Approx(3.0).epsilon(1e-15));
  }
  SUBCASE("harmonic never exceeds arithmetic over a grid") {
    for (double a : {0.1, 0.5, 1.0, 3.0, 10.0}) {
      for (double b : {0.2, 1.0, 7.0}) {
        for (double c : {0.3, 2.0, 50.0}) {
          auto r = eval::verify_variance_theorem({{a, b, c}, {}, 0.0}, 3, 1000, 3);
          CHECK(r.var_me_closed <= r.var_ve_closed * (1.0 + 1e-12));
          const double hm = 3.0 / (1 / a + 1 / b + 1 / c), am = (a + b + c) / 3.0;
          CHECK(r.var_me_closed == doctest::Approx(hm / 3.0).epsilon(1e-13));
          CHECK(r.var_ve_closed == doctest::Approx(am / 3.0).epsilon(1e-13));
        }
      }
    }
  }
  SUBCASE("bad noise models") {
    CHECK_THROWS_AS(eval::NoiseModel({{1.0, 0.0}, {}, 0.0}).validate(), ConfigError);
    CHECK_THROWS_AS(eval::NoiseModel({{1.0, 1.0}, {{1.0}}, 0.0}).validate(), ConfigError);
    CHECK_THROWS_AS(eval::NoiseModel({{1.0, 1.0}, {{1.0}, {1.0, 2.0}}, 0.0}).validate(), ConfigError);
  }
}

TEST_CASE("bias bound") {
  eval::NoiseModel noise{{1.0, 1.0}, {{1.0, 0.0}, {0.0, 1.0}}, 0.0};
  auto r = eval::verify_bias_bound(noise, {0.5, 0.5}, 1000, 4);
  CHECK(r.weighted_bias == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(r.mean_bias == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(r.max_bias == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(r.given_pass);
  CHECK(r.random_trials == 1000);
  CHECK(r.violations == 0);
  CHECK(r.pass);

  eval::NoiseModel aligned{{1.0, 1.0}, {{2.0}, {2.0}}, 0.0};
  auto eq = eval::verify_bias_bound(aligned, {0.3, 0.7}, 10, 5);
  CHECK(eq.weighted_bias == doctest::Approx(4.0).epsilon(1e-14));
  CHECK(eq.mean_bias == doctest::Approx(4.0).epsilon(1e-14));
  CHECK(eq.pass);
}

TEST_CASE("knowledge transfer score") {
  data::SyntheticSpec ds{4, 80, 5, 0.6, 3.0, 0};
  auto train = data::make_synthetic(ds, data::Split::train);
  auto test = data::make_synthetic({4, 50, 5, 0.6, 3.0, 0}, data::Split::test);
  const Matrix centers = data::synthetic_centers(ds);
  moe::Teacher nearest = [&](const Matrix& x) {
    Matrix out(x.rows(), centers.rows());
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
      for (Eigen::Index k = 0; k < centers.rows(); ++k) out(i, k) = -(x.row(i) - centers.row(k)).squaredNorm();
    }
    return out;
  };
  const Matrix& xs = train.inputs();
  distill::Sampler real = [&](std::size_t n, Rng& rng) {
    Matrix b(static_cast<Eigen::Index>(n), xs.cols());
    for (Eigen::Index i = 0; i < b.rows(); ++i) b.row(i) = xs.row(static_cast<Eigen::Index>(rng.index(train.size())));
    return b;
  };
  distill::Sampler collapsed = [&](std::size_t n, Rng&) {
    return Matrix(Matrix::Zero(static_cast<Eigen::Index>(n), xs.cols()));
  };
  auto spec = models::classifier_spec({5, {16}, 4, 0.1});
  distill::DistillConfig cfg;
  cfg.epochs = 5;
  cfg.steps_per_epoch = 30;
  cfg.batch = 32;
  cfg.lr = 0.05;
  const double good = eval::kd_transfer_score(nearest, real, spec, cfg, test, Rng(1));
  const double bad = eval::kd_transfer_score(nearest, collapsed, spec, cfg, test, Rng(1));
  CHECK(good > 0.85);
  CHECK(bad < 0.45);
  CHECK(good == eval::kd_transfer_score(nearest, real, spec, cfg, test, Rng(1)));
}
