#include "helpers.hpp"

#include "mosaic/core/errors.hpp"
#include "mosaic/models/width.hpp"
#include "mosaic/models/zoo.hpp"
#include "mosaic/nn/network.hpp"
#include "mosaic/oracles/oracles.hpp"

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <set>

using namespace mosaic;

namespace {

nn::ModelSpec width8() { return models::classifier_spec({4, {8, 8}, 3, 0.1}); }

std::set<std::size_t> window(std::size_t start, std::size_t len, std::size_t w) {
  std::set<std::size_t> s;
  for (std::size_t j = 0; j < len; ++j) s.insert((start + j) % w);
  return s;
}

}  // namespace

TEST_CASE("width budgets match the known example vectors") {
  const double h = 0.5, q = 0.25, e = 0.125, s = 0.0625;
  CHECK(models::width_budget(10, 4, 5) == std::vector<double>{1, h, h, q, q, e, e, s, s, s});
  CHECK(models::width_budget(10, 4, 10) == std::vector<double>{h, q, e, s, s, s, s, s, s, s});
  CHECK(models::width_budget(10, 4, 40) == std::vector<double>(10, s));
}

TEST_CASE("width budgets hit the floor once rho reaches 4N and stay on the power grid") {
  for (std::size_t n : {1, 3, 10, 17}) {
    for (unsigned sigma : {0u, 2u, 4u}) {
      for (unsigned rho : {0u, 1u, 5u, 13u, static_cast<unsigned>(4 * n), static_cast<unsigned>(9 * n)}) {
        auto r = models::width_budget(n, sigma, rho);
        REQUIRE(r.size() == n);
        for (double v : r) {
          bool on_grid = false;
          for (unsigned j = 0; j <= sigma; ++j) on_grid = on_grid || v == std::ldexp(1.0, -static_cast<int>(j));
          CHECK(on_grid);
        }
        CHECK(std::is_sorted(r.rbegin(), r.rend()));
        if (rho >= 4 * n && sigma <= 4) {
          for (double v : r) CHECK(v == std::ldexp(1.0, -static_cast<int>(sigma)));
        }
      }
    }
  }
}

TEST_CASE("submodel masks") {
  auto spec = width8();
  SUBCASE("full ratio is the identity under both schemes") {
    for (auto scheme : {models::MaskScheme::fixed, models::MaskScheme::rolling}) {
      for (std::size_t round : {0, 3, 11}) {
        auto m = models::submodel_mask(spec, 1.0, scheme, round);
        for (const auto& u : m.units) CHECK(u == std::vector<std::size_t>{0, 1, 2, 3, 4, 5, 6, 7});
      }
    }
  }
  SUBCASE("rolling window arithmetic") {
    auto r0 = models::submodel_mask(spec, 0.5, models::MaskScheme::rolling, 0);
    CHECK(r0.units[0] == std::vector<std::size_t>{0, 1, 2, 3});
    auto r6 = models::submodel_mask(spec, 0.5, models::MaskScheme::rolling, 6);
    CHECK(std::set<std::size_t>(r6.units[0].begin(), r6.units[0].end()) == std::set<std::size_t>{6, 7, 0, 1});
    CHECK(r6.units[0] == std::vector<std::size_t>{0, 1, 6, 7});
  }
  SUBCASE("fixed quarter keeps the first two units every round") {
    for (std::size_t round = 0; round < 10; ++round) {
      auto m = models::submodel_mask(spec, 0.25, models::MaskScheme::fixed, round);
      for (const auto& u : m.units) CHECK(u == std::vector<std::size_t>{0, 1});
    }
  }
  SUBCASE("grid of widths, ratios and rounds") {
    for (std::size_t w : {1, 3, 4, 8, 10}) {
      auto s = models::classifier_spec({3, {w, w}, 2, 0.1});
      for (double ratio : {1.0, 0.5, 0.25, 0.3, 0.0625}) {
        for (std::size_t round = 0; round < 2 * w + 1; ++round) {
          const std::size_t len = std::max<std::size_t>(1, static_cast<std::size_t>(std::ceil(ratio * w - 1e-9)));
          auto fixed = models::submodel_mask(s, ratio, models::MaskScheme::fixed, round);
          auto rolling = models::submodel_mask(s, ratio, models::MaskScheme::rolling, round);
          CHECK(rolling == models::submodel_mask(s, ratio, models::MaskScheme::rolling, round));
          for (std::size_t l = 0; l < 2; ++l) {
            CHECK(fixed.units[l].size() == len);
            CHECK(fixed.units[l].back() == len - 1);
            const auto& u = rolling.units[l];
            CHECK(std::is_sorted(u.begin(), u.end()));
            CHECK(std::adjacent_find(u.begin(), u.end()) == u.end());
            CHECK(std::set<std::size_t>(u.begin(), u.end()) == window(round % w, len, w));
          }
        }
      }
    }
  }
  SUBCASE("bad ratio") {
    CHECK_THROWS_AS(models::submodel_mask(spec, 0.0, models::MaskScheme::fixed, 0), ConfigError);
    CHECK_THROWS_AS(models::submodel_mask(spec, 1.5, models::MaskScheme::fixed, 0), ConfigError);
  }
}

TEST_CASE("extract and embed") {
  auto spec = models::classifier_spec({3, {4, 4}, 2, 0.1});
  Rng rng(0);
  auto global = nn::init_params(spec, rng);
  for (auto& e : global.mutable_entries()) {
    e.value = rng.normal_matrix(e.value.rows(), e.value.cols());
    if (e.role == nn::Role::bn_running_var) e.value = (e.value.array().abs() + 0.1).matrix();
  }

  SUBCASE("full ratio extracts the whole model") {
    auto m = models::submodel_mask(spec, 1.0, models::MaskScheme::fixed, 0);
    auto sub = models::extract_submodel(global, spec, m);
    CHECK(sub.params == global);
    CHECK(sub.spec.layers == spec.layers);
  }
  SUBCASE("half width matches the coordinate oracle and round-trips") {
    for (std::size_t round : {0, 1, 3}) {
      auto m = models::submodel_mask(spec, 0.5, models::MaskScheme::rolling, round);
      auto sub = models::extract_submodel(global, spec, m);
      nn::check_params(sub.params, sub.spec);
      std::size_t covered = 0;
      for (const auto& e : global.entries()) {
        const Matrix& s = sub.params.at(e.name);
        for (Eigen::Index r = 0; r < e.value.rows(); ++r) {
          for (Eigen::Index c = 0; c < e.value.cols(); ++c) {
            auto pos = oracles::sub_position(spec, m.units, e.name, e.role, r, c);
            if (pos) {
              ++covered;
              CHECK(s(pos->first, pos->second) == e.value(r, c));
            }
          }
        }
        covered -= static_cast<std::size_t>(s.size());
      }
      CHECK(covered == 0);

      auto copy = global;
      auto cov = models::embed_submodel(copy, spec, sub.params, m);
      CHECK(copy == global);
      for (const auto& [name, mask] : cov) {
        const auto& e = global.entry(name);
        for (Eigen::Index r = 0; r < mask.rows(); ++r) {
          for (Eigen::Index c = 0; c < mask.cols(); ++c) {
            CHECK(mask(r, c) == oracles::sub_position(spec, m.units, name, e.role, r, c).has_value());
          }
        }
      }
    }
  }
  SUBCASE("a mask that does not fit the spec is rejected") {
    models::SubModelMask bad;
    bad.units = {{0, 9}, {0}};
    CHECK_THROWS_AS(models::extract_submodel(global, spec, bad), StructureError);
    bad.units = {{0}};
    CHECK_THROWS_AS(models::extract_submodel(global, spec, bad), StructureError);
    bad.units = {{1, 0}, {0}};
    CHECK_THROWS_AS(models::extract_submodel(global, spec, bad), StructureError);
  }
  SUBCASE("embedded features are zero off the mask") {
    auto m = models::submodel_mask(spec, 0.5, models::MaskScheme::rolling, 3);
    Matrix f = Matrix::Ones(2, 2);
    Matrix full = models::embed_features(f, spec, m);
    CHECK(full.cols() == 4);
    for (std::size_t j = 0; j < 4; ++j) {
      const bool kept = std::find(m.units[1].begin(), m.units[1].end(), j) != m.units[1].end();
      CHECK(full(0, static_cast<Eigen::Index>(j)) == (kept ? 1.0 : 0.0));
    }
  }
}

TEST_CASE("generators") {
  models::GeneratorShape shape{5, {12}, 7, -2.0, 3.0};
  Rng a(9), b(9);
  auto g1 = models::build_generator(shape, a);
  auto g2 = models::build_generator(shape, b);
  CHECK(g1.params == g2.params);
  CHECK(g1.spec.output_dim() == 7);
  CHECK(g1.spec.input_dim() == 5);
  Matrix out = nn::predict(g1.params, g1.spec, a.normal_matrix(50, 5, 10.0));
  CHECK(out.minCoeff() >= -2.0);
  CHECK(out.maxCoeff() <= 3.0);

  auto classifier = nn::init_params(models::classifier_spec({16, {64, 64}, 8, 0.1}), a);
  auto gen = models::build_generator({8, {32, 32}, 16, -1.0, 1.0}, a);
  CHECK(models::param_count(gen.params) < models::param_count(classifier));
}

TEST_CASE("param counts") {
  nn::ModelSpec dense{{nn::Dense{4, 3}}};
  Rng rng(0);
  CHECK(models::param_count(nn::init_params(dense, rng)) == 15);
  CHECK(models::param_count(nn::ParamSet{}) == 0);
  auto spec = width8();
  auto full = nn::init_params(spec, rng);
  auto half = models::extract_submodel(full, spec, models::submodel_mask(spec, 0.5, models::MaskScheme::fixed, 0));
  CHECK(models::param_count(half.params) < models::param_count(full));
}

TEST_CASE("discriminator shares the classifier trunk names") {
  auto spec = width8();
  auto disc = models::discriminator_spec(spec);
  CHECK(disc.output_dim() == 1);
  Rng rng(0);
  auto pc = nn::init_params(spec, rng);
  auto pd = nn::init_params(disc, rng);
  const auto head = nn::ModelSpec::prefix(*spec.head_index());
  for (const auto& e : pc.entries()) {
    if (e.name.rfind(head, 0) == 0) continue;
    CHECK(pd.contains(e.name));
  }
}

TEST_CASE("meta averaging initialization returns the slot mean") {
  const std::size_t c = 4;
  Rng rng(1);
  auto spec = models::meta_spec(c);
  for (std::size_t k : {1, 2, 4}) {
    auto p = models::meta_averaging_init(c, k, rng);
    nn::check_params(p, spec);
    Matrix x = rng.normal_matrix(6, static_cast<Eigen::Index>(c * c));
    Matrix y = nn::predict(p, spec, x);
    for (Eigen::Index r = 0; r < x.rows(); ++r) {
      for (std::size_t j = 0; j < c; ++j) {
        double sum = 0.0;
        for (std::size_t s = 0; s < c; ++s) sum += x(r, static_cast<Eigen::Index>(s * c + j));
        CHECK(y(r, static_cast<Eigen::Index>(j)) == doctest::Approx(sum / static_cast<double>(k)).epsilon(1e-12));
      }
    }
  }
  CHECK_THROWS_AS(models::meta_averaging_init(c, 0, rng), ConfigError);
  CHECK_THROWS_AS(models::meta_averaging_init(c, 5, rng), ConfigError);
}
