#include "helpers.hpp"

#include "mosaic/core/errors.hpp"
#include "mosaic/data/synthetic.hpp"
#include "mosaic/nn/losses.hpp"
#include "mosaic/nn/network.hpp"
#include "mosaic/oracles/oracles.hpp"
#include "mosaic/protocol/aggregate.hpp"
#include "mosaic/protocol/client.hpp"
#include "mosaic/protocol/schedule.hpp"

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>

using namespace mosaic;

namespace {

nn::ParamSet scalar(double v) {
  nn::ParamSet p;
  p.add("w", nn::Role::weight, Matrix::Constant(1, 1, v));
  return p;
}

nn::ModelSpec small_spec(std::size_t width = 4) { return models::classifier_spec({3, {width, width}, 3, 0.1}); }

nn::ParamSet random_params(const nn::ModelSpec& spec, Rng& rng) {
  auto p = nn::init_params(spec, rng);
  for (auto& e : p.mutable_entries()) {
    e.value = rng.normal_matrix(e.value.rows(), e.value.cols());
    if (e.role == nn::Role::bn_running_var) e.value = (e.value.array().abs() + 0.1).matrix();
  }
  return p;
}

data::Dataset small_train() { return data::make_synthetic({4, 40, 3, 1.0, 3.0, 0}); }

double shard_loss(const protocol::ClientState& c, const data::Dataset& train) {
  auto batch = train.batch(c.shard);
  auto logits = nn::forward(c.params, c.spec, batch.inputs, nn::Mode::train).logits;
  return nn::cross_entropy(logits, *batch.labels).value;
}

}  // namespace

TEST_CASE("weighted coordinate") {
  std::vector<double> v = {0.0, 4.0}, w = {1.0, 3.0};
  CHECK(protocol::weighted_coordinate(v, w, -1.0) == 3.0);
  std::vector<double> zero = {0.0, 0.0};
  CHECK(protocol::weighted_coordinate(v, zero, -1.0) == -1.0);
  Rng rng(0);
  for (int t = 0; t < 500; ++t) {
    std::vector<double> vals(1 + rng.index(5)), ws(vals.size());
    for (std::size_t i = 0; i < vals.size(); ++i) {
      vals[i] = rng.normal(0.0, 5.0);
      ws[i] = rng.uniform(0.0, 10.0);
    }
    const double got = protocol::weighted_coordinate(vals, ws, 0.0);
    CHECK(got == oracles::mean_coordinate(vals, ws, 0.0));
    CHECK(got >= *std::min_element(vals.begin(), vals.end()));
    CHECK(got <= *std::max_element(vals.begin(), vals.end()));
    std::vector<double> same(vals.size(), vals[0]);
    CHECK(protocol::weighted_coordinate(same, ws, 0.0) == vals[0]);
    // A sole positively weighted value comes back exactly.
    const std::size_t owner = rng.index(vals.size());
    std::vector<double> sole(vals.size(), 0.0);
    sole[owner] = ws[owner] + 1.0;
    CHECK(protocol::weighted_coordinate(vals, sole, 0.0) == vals[owner]);
  }
}

TEST_CASE("fedavg aggregation") {
  auto a = scalar(0.0), b = scalar(4.0);
  SUBCASE("single client is returned exactly") {
    std::vector<protocol::Contribution> c = {{3, 2.0, &b}};
    CHECK(protocol::fedavg_aggregate(c) == b);
  }
  SUBCASE("size-weighted mean") {
    std::vector<protocol::Contribution> c = {{0, 1.0, &a}, {1, 3.0, &b}};
    CHECK(protocol::fedavg_aggregate(c).at("w")(0, 0) == 3.0);
  }
  SUBCASE("client order does not matter") {
    auto spec = small_spec();
    Rng rng(4);
    std::vector<nn::ParamSet> ps;
    for (int i = 0; i < 5; ++i) ps.push_back(random_params(spec, rng));
    std::vector<protocol::Contribution> c;
    for (std::size_t i = 0; i < ps.size(); ++i) c.push_back({i * 7 % 5, 1.0 + static_cast<double>(i), &ps[i]});
    auto ref = protocol::fedavg_aggregate(c);
    for (int t = 0; t < 10; ++t) {
      std::shuffle(c.begin(), c.end(), rng.engine());
      CHECK(protocol::fedavg_aggregate(c) == ref);
    }
  }
  SUBCASE("errors") {
    auto spec = small_spec();
    Rng rng(0);
    auto p = random_params(spec, rng);
    std::vector<protocol::Contribution> mismatch = {{0, 1.0, &a}, {1, 1.0, &p}};
    CHECK_THROWS_AS(protocol::fedavg_aggregate(mismatch), StructureError);
    std::vector<protocol::Contribution> negative = {{0, -1.0, &a}, {1, 1.0, &b}};
    CHECK_THROWS_AS(protocol::fedavg_aggregate(negative), ConfigError);
    std::vector<protocol::Contribution> zero = {{0, 0.0, &a}, {1, 0.0, &b}};
    CHECK_THROWS_AS(protocol::fedavg_aggregate(zero), ConfigError);
  }
}

TEST_CASE("partial aggregation") {
  auto spec = small_spec();
  Rng rng(1);
  auto previous = random_params(spec, rng);

  SUBCASE("full masks reduce to fedavg bit for bit") {
    std::vector<nn::ParamSet> ps = {random_params(spec, rng), random_params(spec, rng), random_params(spec, rng)};
    std::vector<protocol::Contribution> c;
    for (std::size_t i = 0; i < 3; ++i) c.push_back({i, 1.0 + static_cast<double>(i), &ps[i]});
    CHECK(protocol::partial_aggregate(previous, spec, c) == protocol::fedavg_aggregate(c));
  }
  SUBCASE("rolling masks at rounds 0, 1, 2 match the coordinate oracle") {
    std::vector<models::SubModelMask> masks;
    std::vector<models::SubModel> subs;
    for (std::size_t r = 0; r < 3; ++r) {
      masks.push_back(models::submodel_mask(spec, 0.5, models::MaskScheme::rolling, r));
      auto sub = models::extract_submodel(random_params(spec, rng), spec, masks.back());
      subs.push_back(sub);
    }
    std::vector<protocol::Contribution> c;
    std::vector<oracles::Upload> uploads;
    for (std::size_t i = 0; i < 3; ++i) {
      const double w = static_cast<double>(1 + 2 * i);
      c.push_back({i, w, &subs[i].params, &masks[i], &subs[i].spec});
      uploads.push_back({i, w, subs[i].params, masks[i].units});
    }
    CHECK(protocol::partial_aggregate(previous, spec, c) == oracles::brute_partial(previous, spec, uploads));
  }
  SUBCASE("a coordinate nobody covers keeps its value") {
    // Both clients hold the same quarter; units 1..3 stay untouched.
    auto mask = models::submodel_mask(spec, 0.25, models::MaskScheme::fixed, 0);
    auto s1 = models::extract_submodel(random_params(spec, rng), spec, mask);
    auto s2 = models::extract_submodel(random_params(spec, rng), spec, mask);
    std::vector<protocol::Contribution> c = {{0, 1.0, &s1.params, &mask, &s1.spec}, {1, 2.0, &s2.params, &mask, &s2.spec}};
    auto out = protocol::partial_aggregate(previous, spec, c);
    auto cov = models::coverage(previous, spec, mask);
    std::size_t untouched = 0;
    for (const auto& [name, m] : cov) {
      for (Eigen::Index i = 0; i < m.size(); ++i) {
        if (!m.data()[i]) {
          ++untouched;
          CHECK(std::memcmp(&out.at(name).data()[i], &previous.at(name).data()[i], sizeof(double)) == 0);
        }
      }
    }
    CHECK(untouched > 0);
  }
}

TEST_CASE("grouped aggregation") {
  SUBCASE("one group equals fedavg") {
    nn::ModelSpec s{{nn::Dense{1, 1}}};
    auto dense = [](double v) {
      nn::ParamSet p;
      p.add("0.weight", nn::Role::weight, Matrix::Constant(1, 1, v));
      p.add("0.bias", nn::Role::bias, Matrix::Constant(1, 1, -v));
      return p;
    };
    auto p0 = dense(0.0), p1 = dense(4.0);
    std::vector<protocol::Contribution> c = {{0, 1.0, &p0, nullptr, &s}, {1, 3.0, &p1, nullptr, &s}};
    auto groups = protocol::grouped_aggregate(c);
    REQUIRE(groups.size() == 1);
    CHECK(groups[0].params == protocol::fedavg_aggregate(c));
    CHECK(groups[0].params.at("0.weight")(0, 0) == 3.0);
  }
  SUBCASE("two groups renormalize within themselves") {
    auto s1 = small_spec(4), s2 = small_spec(2);
    Rng rng(2);
    nn::ParamSet p1 = nn::init_params(s1, rng), p2 = nn::init_params(s1, rng);
    nn::ParamSet q1 = nn::init_params(s2, rng), q2 = nn::init_params(s2, rng);
    p1.mutable_at("0.bias").setConstant(0.0);
    p2.mutable_at("0.bias").setConstant(4.0);
    q1.mutable_at("0.bias").setConstant(0.0);
    q2.mutable_at("0.bias").setConstant(4.0);
    std::vector<protocol::Contribution> c = {{3, 2.0, &q1, nullptr, &s2},
                                             {0, 1.0, &p1, nullptr, &s1},
                                             {5, 2.0, &q2, nullptr, &s2},
                                             {1, 3.0, &p2, nullptr, &s1}};
    auto groups = protocol::grouped_aggregate(c);
    REQUIRE(groups.size() == 2);
    CHECK(groups[0].client_ids == std::vector<std::size_t>{0, 1});
    CHECK(groups[1].client_ids == std::vector<std::size_t>{3, 5});
    CHECK(groups[0].params.at("0.bias")(0, 0) == 3.0);
    CHECK(groups[1].params.at("0.bias")(0, 0) == 2.0);
    CHECK(groups[0].spec == s1);
    CHECK(groups[1].spec == s2);
  }
}

TEST_CASE("homogeneity: identical clients aggregate to themselves under every rule") {
  auto spec = small_spec();
  Rng rng(3);
  auto p = random_params(spec, rng);
  std::vector<nn::ParamSet> copies(3, p);
  std::vector<protocol::Contribution> c;
  for (std::size_t i = 0; i < 3; ++i) c.push_back({i, rng.uniform(0.1, 5.0), &copies[i], nullptr, &spec});
  CHECK(protocol::fedavg_aggregate(c) == p);
  CHECK(protocol::partial_aggregate(random_params(spec, rng), spec, c) == p);
  CHECK(protocol::grouped_aggregate(c)[0].params == p);
}

TEST_CASE("client sampling") {
  auto all = protocol::sample_clients(7, 7, 3, 0);
  CHECK(all == std::vector<std::size_t>{0, 1, 2, 3, 4, 5, 6});
  CHECK(protocol::sample_clients(10, 4, 5, 9) == protocol::sample_clients(10, 4, 5, 9));
  CHECK_THROWS_AS(protocol::sample_clients(3, 4, 0, 0), ConfigError);
  CHECK_THROWS_AS(protocol::sample_clients(3, 0, 0, 0), ConfigError);

  std::vector<double> hits(10, 0.0);
  const std::size_t rounds = 10000;
  for (std::size_t r = 0; r < rounds; ++r) {
    auto s = protocol::sample_clients(10, 3, r, 42);
    CHECK(s.size() == 3);
    CHECK(std::is_sorted(s.begin(), s.end()));
    for (auto i : s) hits[i] += 1.0;
  }
  for (double h : hits) CHECK(std::abs(h / rounds - 0.3) <= 0.02);
}

TEST_CASE("clients") {
  auto train = small_train();
  SUBCASE("histogram matches the shard") {
    std::vector<std::size_t> shard = {0, 3, 5, 8, 13, 21, 34};
    auto c = protocol::make_client(2, shard, train, 0.5);
    CHECK(c.n == shard.size());
    CHECK(std::accumulate(c.label_histogram.begin(), c.label_histogram.end(), std::size_t{0}) == c.n);
    std::vector<std::size_t> h(4, 0);
    for (auto i : shard) ++h[static_cast<std::size_t>(train.labels()[i])];
    CHECK(c.label_histogram == h);
    CHECK_THROWS_AS(protocol::make_client(0, {}, train, 1.0), ConfigError);
  }
  auto spec = models::classifier_spec({3, {8, 8}, 4, 0.1});
  Rng rng(0);
  auto global = nn::init_params(spec, rng);
  std::vector<std::size_t> shard(60);
  std::iota(shard.begin(), shard.end(), 0);

  SUBCASE("zero iterations leave the received model") {
    for (auto scheme : {protocol::Scheme::fedavg, protocol::Scheme::rolling_pt}) {
      auto c = protocol::make_client(0, shard, train, 0.5);
      protocol::LocalConfig cfg;
      cfg.iterations = 0;
      cfg.scheme = scheme;
      cfg.round = 2;
      protocol::local_update(c, train, global, spec, cfg, Rng(1));
      auto mask = protocol::client_mask(c, spec, scheme, 2);
      CHECK(c.params == models::extract_submodel(global, spec, mask).params);
    }
  }
  SUBCASE("identical clients and seeds give identical updates") {
    auto c1 = protocol::make_client(0, shard, train, 1.0);
    auto c2 = protocol::make_client(0, shard, train, 1.0);
    protocol::LocalConfig cfg;
    protocol::local_update(c1, train, global, spec, cfg, Rng(7));
    protocol::local_update(c2, train, global, spec, cfg, Rng(7));
    CHECK(c1.params == c2.params);
    CHECK(c1.step_losses == c2.step_losses);
  }
  SUBCASE("ten steps lower the shard loss in at least 90% of trials") {
    int lowered = 0;
    const int trials = 50;
    for (int t = 0; t < trials; ++t) {
      Rng init(100 + static_cast<std::uint64_t>(t));
      auto g = nn::init_params(spec, init);
      auto c = protocol::make_client(0, shard, train, 1.0);
      protocol::LocalConfig zero;
      zero.iterations = 0;
      protocol::local_update(c, train, g, spec, zero, Rng(0));
      const double before = shard_loss(c, train);
      protocol::LocalConfig cfg;
      cfg.iterations = 10;
      protocol::local_update(c, train, g, spec, cfg, Rng(static_cast<std::uint64_t>(t)));
      lowered += shard_loss(c, train) <= before;
    }
    CHECK(lowered >= 45);
  }
}

TEST_CASE("schedule") {
  auto config = testing::tiny_config();
  SUBCASE("metrics stream has one entry per round and accuracies in [0, 1]") {
    auto r = protocol::run_schedule(config);
    CHECK(r.rounds.size() == config.federation.t1 + config.federation.t2);
    for (std::size_t i = 0; i < r.rounds.size(); ++i) {
      CHECK(r.rounds[i].round == i + 1);
      CHECK(r.rounds[i].phase == (i < config.federation.t1 ? "warmup" : "finetune"));
      CHECK(r.rounds[i].global_accuracy >= 0.0);
      CHECK(r.rounds[i].global_accuracy <= 1.0);
      CHECK(r.rounds[i].local_accuracy >= 0.0);
      CHECK(r.rounds[i].local_accuracy <= 1.0);
      std::size_t sampled = 0;
      for (double l : r.rounds[i].client_loss) sampled += !std::isnan(l);
      CHECK(sampled == config.federation.sampled);
    }
    CHECK(r.distilled);
    CHECK(r.baseline_accuracy == r.rounds[config.federation.t1 - 1].global_accuracy);
  }
  SUBCASE("with distillation off the run is the plain baseline loop") {
    for (auto scheme : {protocol::Scheme::fedavg, protocol::Scheme::rolling_pt}) {
      auto c = config;
      c.federation.scheme = scheme;
      c.federation.rho = 5;
      c.federation.t2 = 0;
      c.distill.enabled = false;
      auto r = protocol::run_schedule(c);
      auto fed = protocol::setup_federation(c);
      for (std::size_t t = 0; t < c.federation.t1; ++t) {
        auto m = protocol::run_round(fed, t, c.federation.lr, "warmup");
        CHECK(m.global_accuracy == r.rounds[t].global_accuracy);
      }
      CHECK(fed.global == r.final_global);
      CHECK_FALSE(r.distilled);
    }
  }
  SUBCASE("warm-up rounds are identical with and without distillation") {
    auto off = config;
    off.distill.enabled = false;
    auto a = protocol::run_schedule(config);
    auto b = protocol::run_schedule(off);
    for (std::size_t t = 0; t < config.federation.t1; ++t) {
      CHECK(a.rounds[t].global_accuracy == b.rounds[t].global_accuracy);
      CHECK(a.rounds[t].local_accuracy == b.rounds[t].local_accuracy);
    }
    CHECK(a.baseline_accuracy == b.baseline_accuracy);
  }
  SUBCASE("every generator is uploaded exactly once") {
    std::map<std::size_t, int> uploads;
    std::map<std::string, int> saved;
    protocol::ScheduleHooks hooks;
    hooks.event = [&](const nlohmann::json& e) {
      if (e.at("event") == "generator_upload") ++uploads[e.at("client").get<std::size_t>()];
    };
    hooks.checkpoint = [&](const std::string& name, const nn::ModelSpec&, const nn::ParamSet&) { ++saved[name]; };
    protocol::run_schedule(config, 1, hooks);
    CHECK(uploads.size() == config.federation.clients);
    for (const auto& [id, count] : uploads) {
      CHECK(count == 1);
      CHECK(saved["generator_client_" + std::to_string(id)] == 1);
    }
  }
  SUBCASE("distillation reads no dataset") {
    auto fed = protocol::setup_federation(config);
    for (std::size_t t = 0; t < config.federation.t1; ++t) protocol::run_round(fed, t, 0.05, "warmup");
    auto shot = protocol::one_shot_stage(fed, config.federation.t1);
    const auto train_reads = fed.train.read_count();
    const auto test_reads = fed.test.read_count();
    protocol::distill_stage(fed, shot, config.distill_config());
    CHECK(fed.train.read_count() == train_reads);
    CHECK(fed.test.read_count() == test_reads);
  }
  SUBCASE("local training and generator training never read the test split") {
    auto fed = protocol::setup_federation(config);
    const auto reads = fed.test.read_count();
    // run_round reads the test split only for evaluation, after training.
    for (auto& c : fed.clients) {
      protocol::LocalConfig cfg;
      protocol::local_update(c, fed.train, fed.global, fed.global_spec, cfg, Rng(c.id));
    }
    CHECK(fed.test.read_count() == reads);
  }
}

TEST_CASE("results do not depend on the worker count") {
  auto config = testing::tiny_config(3);
  auto a = protocol::run_schedule(config, 1);
  auto b = protocol::run_schedule(config, 4);
  CHECK(a.final_global == b.final_global);
  REQUIRE(a.rounds.size() == b.rounds.size());
  for (std::size_t i = 0; i < a.rounds.size(); ++i) {
    CHECK(a.rounds[i].global_accuracy == b.rounds[i].global_accuracy);
    CHECK(a.rounds[i].local_accuracy == b.rounds[i].local_accuracy);
  }
  CHECK(a.distill.step_loss == b.distill.step_loss);
}
