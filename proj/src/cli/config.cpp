#include "mosaic/cli/config.hpp"

#include "mosaic/core/errors.hpp"

#include <toml.hpp>

#include <fstream>
#include <limits>
#include <set>
#include <sstream>

namespace mosaic::cli {

namespace {

// Reads keys from one TOML table and remembers which were consumed, so that
// anything left over can be rejected as unknown.
class Section {
 public:
  Section(const toml::table* table, std::string path) : table_(table), path_(std::move(path)) {}

  std::string field(std::string_view key) const { return path_.empty() ? std::string(key) : path_ + "." + std::string(key); }

  const toml::node* node(std::string_view key) {
    used_.insert(std::string(key));
    return table_ == nullptr ? nullptr : table_->get(key);
  }

  void read(std::string_view key, std::size_t& out) {
    if (const auto* n = node(key)) out = to_size(*n, key);
  }

  void read(std::string_view key, unsigned& out) {
    if (const auto* n = node(key)) {
      const std::size_t v = to_size(*n, key);
      if (v > std::numeric_limits<unsigned>::max()) throw ConfigError(field(key) + ": value too large");
      out = static_cast<unsigned>(v);
    }
  }

  void read(std::string_view key, double& out) {
    if (const auto* n = node(key)) {
      if (const auto* f = n->as_floating_point()) {
        out = f->get();
      } else if (const auto* i = n->as_integer()) {
        out = static_cast<double>(i->get());
      } else {
        throw ConfigError(field(key) + ": expected a number");
      }
    }
  }

  void read(std::string_view key, bool& out) {
    if (const auto* n = node(key)) {
      const auto* b = n->as_boolean();
      if (b == nullptr) throw ConfigError(field(key) + ": expected true or false");
      out = b->get();
    }
  }

  void read(std::string_view key, std::string& out) {
    if (const auto* n = node(key)) {
      const auto* s = n->as_string();
      if (s == nullptr) throw ConfigError(field(key) + ": expected a string");
      out = s->get();
    }
  }

  void read(std::string_view key, std::vector<std::size_t>& out) {
    if (const auto* n = node(key)) {
      const auto* arr = n->as_array();
      if (arr == nullptr) throw ConfigError(field(key) + ": expected an array of integers");
      out.clear();
      for (std::size_t i = 0; i < arr->size(); ++i) {
        out.push_back(to_size(*arr->get(i), std::string(key) + "[" + std::to_string(i) + "]"));
      }
    }
  }

  template <typename Enum, typename FromName>
  void read_enum(std::string_view key, Enum& out, FromName from_name) {
    std::string name;
    read(key, name);
    if (name.empty()) return;
    try {
      out = from_name(name);
    } catch (const ConfigError& e) {
      throw ConfigError(field(key) + ": " + e.what());
    }
  }

  Section sub(std::string_view key) {
    const auto* n = node(key);
    if (n == nullptr) return {nullptr, field(key)};
    const auto* t = n->as_table();
    if (t == nullptr) throw ConfigError(field(key) + ": expected a table");
    return {t, field(key)};
  }

  /// Throws on the first key that was never read.
  void finish() const {
    if (table_ == nullptr) return;
    for (const auto& [k, v] : *table_) {
      if (!used_.contains(std::string(k.str()))) throw ConfigError(field(k.str()) + ": unknown key");
    }
  }

 private:
  std::size_t to_size(const toml::node& n, std::string_view key) const {
    const auto* i = n.as_integer();
    if (i == nullptr) throw ConfigError(field(key) + ": expected an integer");
    if (i->get() < 0) throw ConfigError(field(key) + ": must be non-negative");
    return static_cast<std::size_t>(i->get());
  }

  const toml::table* table_;
  std::string path_;
  std::set<std::string> used_;
};

void require(bool ok, const std::string& field, const std::string& rule) {
  if (!ok) throw ConfigError(field + ": " + rule);
}

}  // namespace

void ExperimentConfig::validate() const {
  require(seed <= static_cast<std::uint64_t>(std::numeric_limits<std::int64_t>::max()), "seed", "must fit in 63 bits");
  require(!output_dir.empty(), "output_dir", "must not be empty");
  const auto& d = dataset;
  require(d.kind == "synthetic" || d.kind == "idx", "dataset.kind", "must be \"synthetic\" or \"idx\"");
  require(d.classes >= 2, "dataset.classes", "must be at least 2");
  if (d.kind == "synthetic") {
    require(d.n_per_class >= 2, "dataset.n_per_class", "must be at least 2");
    require(d.test_per_class >= 1, "dataset.test_per_class", "must be at least 1");
    require(d.dim >= 2, "dataset.dim", "must be at least 2");
    require(d.spread >= 0.0, "dataset.spread", "must be non-negative");
    require(d.radius > 0.0, "dataset.radius", "must be positive");
  } else {
    require(!d.train_images.empty(), "dataset.train_images", "required for idx datasets");
    require(!d.train_labels.empty(), "dataset.train_labels", "required for idx datasets");
    require(!d.test_images.empty(), "dataset.test_images", "required for idx datasets");
    require(!d.test_labels.empty(), "dataset.test_labels", "required for idx datasets");
  }
  require(!model.hidden.empty(), "model.hidden", "needs at least one hidden layer");
  for (std::size_t w : model.hidden) require(w >= 1, "model.hidden", "widths must be at least 1");
  require(model.bn_momentum > 0.0 && model.bn_momentum <= 1.0, "model.bn_momentum", "must lie in (0, 1]");
  const auto& f = federation;
  require(f.clients >= 1, "federation.clients", "must be at least 1");
  require(f.sampled >= 1 && f.sampled <= f.clients, "federation.sampled", "must lie in [1, clients]");
  require(f.omega > 0.0, "federation.omega", "must be positive");
  require(f.sigma >= 1, "federation.sigma", "must be a positive integer");
  require(f.rho >= 1, "federation.rho", "must be a positive integer");
  require(f.batch >= 2, "federation.batch", "must be at least 2");
  require(f.lr > 0.0, "federation.lr", "must be positive");
  require(f.momentum >= 0.0 && f.momentum < 1.0, "federation.momentum", "must lie in [0, 1)");
  require(f.finetune_lr_factor > 0.0, "federation.finetune_lr_factor", "must be positive");
  const auto& g = generator;
  require(g.batch >= 2, "generator.batch", "must be at least 2");
  require(g.latent >= 1, "generator.latent", "must be at least 1");
  for (std::size_t w : g.hidden) require(w >= 1, "generator.hidden", "widths must be at least 1");
  require(g.lr > 0.0, "generator.lr", "must be positive");
  require(g.disc_lr > 0.0, "generator.disc_lr", "must be positive");
  require(g.lambda_entropy >= 0.0, "generator.lambda_entropy", "must be non-negative");
  require(g.lambda_diversity >= 0.0, "generator.lambda_diversity", "must be non-negative");
  require(g.lambda_inversion >= 0.0, "generator.lambda_inversion", "must be non-negative");
  require(g.tau >= 0.0, "generator.tau", "must be non-negative");
  require(moe.top_k <= d.classes, "moe.top_k", "must lie in [1, classes] (0 selects all classes)");
  require(moe.q >= 1, "moe.q", "must be at least 1");
  require(moe.lr > 0.0, "moe.lr", "must be positive");
  require(moe.ema_decay >= 0.0 && moe.ema_decay <= 1.0, "moe.ema_decay", "must lie in [0, 1]");
  const auto& k = distill;
  require(k.lambda_soft >= 0.0, "distill.lambda_soft", "must be non-negative");
  require(k.lambda_hard >= 0.0, "distill.lambda_hard", "must be non-negative");
  require(k.lambda_soft + k.lambda_hard > 0.0, "distill.lambda_soft", "lambda_soft + lambda_hard must be positive");
  require(k.temperature > 0.0, "distill.temperature", "must be positive");
  require(k.batch >= 2, "distill.batch", "must be at least 2");
  require(k.lr > 0.0, "distill.lr", "must be positive");
  require(k.momentum >= 0.0 && k.momentum < 1.0, "distill.momentum", "must lie in [0, 1)");
}

genopt::GenConfig ExperimentConfig::gen_config(double lo, double hi) const {
  genopt::GenConfig c;
  c.epochs = generator.epochs;
  c.steps_per_epoch = generator.steps_per_epoch;
  c.batch = generator.batch;
  c.lr = generator.lr;
  c.disc_lr = generator.disc_lr;
  c.lambda_entropy = generator.lambda_entropy;
  c.lambda_diversity = generator.lambda_diversity;
  c.lambda_inversion = generator.lambda_inversion;
  c.tau = generator.tau;
  c.non_saturating = generator.non_saturating;
  c.shape.latent_dim = generator.latent;
  c.shape.hidden = generator.hidden;
  c.shape.output_dim = dataset.dim;
  c.shape.lo = lo;
  c.shape.hi = hi;
  return c;
}

distill::DistillConfig ExperimentConfig::distill_config() const {
  distill::DistillConfig c;
  c.epochs = distill.epochs;
  c.steps_per_epoch = distill.steps_per_epoch;
  c.batch = distill.batch;
  c.lr = distill.lr;
  c.momentum = distill.momentum;
  c.lambda_soft = distill.lambda_soft;
  c.lambda_hard = distill.lambda_hard;
  c.temperature = distill.temperature;
  c.freeze_bn = distill.freeze_bn;
  c.teacher = distill.teacher;
  return c;
}

moe::MetaConfig ExperimentConfig::meta_config() const { return {moe.epochs, moe.lr, moe.ema_decay}; }

ExperimentConfig parse_config(std::string_view text, std::string_view source) {
  toml::table root;
  try {
    root = toml::parse(text, source);
  } catch (const toml::parse_error& e) {
    const auto& where = e.source().begin;
    throw ConfigError(std::string(source) + ":" + std::to_string(where.line) + ":" + std::to_string(where.column) +
                      ": " + std::string(e.description()));
  }
  ExperimentConfig c;
  Section top(&root, "");
  std::size_t seed = c.seed;
  top.read("seed", seed);
  c.seed = seed;
  top.read("output_dir", c.output_dir);

  Section d = top.sub("dataset");
  d.read("kind", c.dataset.kind);
  d.read("classes", c.dataset.classes);
  d.read("n_per_class", c.dataset.n_per_class);
  d.read("test_per_class", c.dataset.test_per_class);
  d.read("dim", c.dataset.dim);
  d.read("spread", c.dataset.spread);
  d.read("radius", c.dataset.radius);
  d.read("train_images", c.dataset.train_images);
  d.read("train_labels", c.dataset.train_labels);
  d.read("test_images", c.dataset.test_images);
  d.read("test_labels", c.dataset.test_labels);
  d.finish();

  Section m = top.sub("model");
  m.read("hidden", c.model.hidden);
  m.read("bn_momentum", c.model.bn_momentum);
  m.finish();

  Section f = top.sub("federation");
  f.read("clients", c.federation.clients);
  f.read("sampled", c.federation.sampled);
  f.read("omega", c.federation.omega);
  f.read("sigma", c.federation.sigma);
  f.read("rho", c.federation.rho);
  f.read_enum("scheme", c.federation.scheme, protocol::scheme_from_name);
  f.read("t1", c.federation.t1);
  f.read("t2", c.federation.t2);
  f.read("local_steps", c.federation.local_steps);
  f.read("batch", c.federation.batch);
  f.read("lr", c.federation.lr);
  f.read("momentum", c.federation.momentum);
  f.read("finetune_lr_factor", c.federation.finetune_lr_factor);
  f.finish();

  Section g = top.sub("generator");
  g.read("epochs", c.generator.epochs);
  g.read("steps_per_epoch", c.generator.steps_per_epoch);
  g.read("batch", c.generator.batch);
  g.read("latent", c.generator.latent);
  g.read("hidden", c.generator.hidden);
  g.read("lr", c.generator.lr);
  g.read("disc_lr", c.generator.disc_lr);
  g.read("lambda_entropy", c.generator.lambda_entropy);
  g.read("lambda_diversity", c.generator.lambda_diversity);
  g.read("lambda_inversion", c.generator.lambda_inversion);
  g.read("tau", c.generator.tau);
  g.read("non_saturating", c.generator.non_saturating);
  g.finish();

  Section e = top.sub("moe");
  e.read("top_k", c.moe.top_k);
  e.read("q", c.moe.q);
  e.read("epochs", c.moe.epochs);
  e.read("lr", c.moe.lr);
  e.read("ema_decay", c.moe.ema_decay);
  e.finish();

  Section k = top.sub("distill");
  k.read("enabled", c.distill.enabled);
  k.read("epochs", c.distill.epochs);
  k.read("steps_per_epoch", c.distill.steps_per_epoch);
  k.read("batch", c.distill.batch);
  k.read("lr", c.distill.lr);
  k.read("momentum", c.distill.momentum);
  k.read("lambda_soft", c.distill.lambda_soft);
  k.read("lambda_hard", c.distill.lambda_hard);
  k.read("temperature", c.distill.temperature);
  k.read("freeze_bn", c.distill.freeze_bn);
  k.read_enum("teacher", c.distill.teacher, moe::teacher_from_name);
  k.finish();

  Section o = top.sub("output");
  o.read("checkpoint_interval", c.output.checkpoint_interval);
  o.finish();

  top.finish();
  c.validate();
  return c;
}

ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path);
  std::ostringstream text;
  text << in.rdbuf();
  return parse_config(text.str(), path);
}

namespace {

toml::array to_array(const std::vector<std::size_t>& v) {
  toml::array a;
  for (std::size_t x : v) a.push_back(static_cast<std::int64_t>(x));
  return a;
}

std::int64_t i64(std::size_t v) { return static_cast<std::int64_t>(v); }

}  // namespace

std::string serialize_config(const ExperimentConfig& c) {
  toml::table root;
  root.insert("seed", static_cast<std::int64_t>(c.seed));
  root.insert("output_dir", c.output_dir);
  root.insert("dataset", toml::table{{"kind", c.dataset.kind},
                                     {"classes", i64(c.dataset.classes)},
                                     {"n_per_class", i64(c.dataset.n_per_class)},
                                     {"test_per_class", i64(c.dataset.test_per_class)},
                                     {"dim", i64(c.dataset.dim)},
                                     {"spread", c.dataset.spread},
                                     {"radius", c.dataset.radius},
                                     {"train_images", c.dataset.train_images},
                                     {"train_labels", c.dataset.train_labels},
                                     {"test_images", c.dataset.test_images},
                                     {"test_labels", c.dataset.test_labels}});
  root.insert("model", toml::table{{"hidden", to_array(c.model.hidden)}, {"bn_momentum", c.model.bn_momentum}});
  const auto& f = c.federation;
  root.insert("federation", toml::table{{"clients", i64(f.clients)},
                                        {"sampled", i64(f.sampled)},
                                        {"omega", f.omega},
                                        {"sigma", static_cast<std::int64_t>(f.sigma)},
                                        {"rho", static_cast<std::int64_t>(f.rho)},
                                        {"scheme", std::string(protocol::scheme_name(f.scheme))},
                                        {"t1", i64(f.t1)},
                                        {"t2", i64(f.t2)},
                                        {"local_steps", i64(f.local_steps)},
                                        {"batch", i64(f.batch)},
                                        {"lr", f.lr},
                                        {"momentum", f.momentum},
                                        {"finetune_lr_factor", f.finetune_lr_factor}});
  const auto& g = c.generator;
  root.insert("generator", toml::table{{"epochs", i64(g.epochs)},
                                       {"steps_per_epoch", i64(g.steps_per_epoch)},
                                       {"batch", i64(g.batch)},
                                       {"latent", i64(g.latent)},
                                       {"hidden", to_array(g.hidden)},
                                       {"lr", g.lr},
                                       {"disc_lr", g.disc_lr},
                                       {"lambda_entropy", g.lambda_entropy},
                                       {"lambda_diversity", g.lambda_diversity},
                                       {"lambda_inversion", g.lambda_inversion},
                                       {"tau", g.tau},
                                       {"non_saturating", g.non_saturating}});
  root.insert("moe", toml::table{{"top_k", i64(c.moe.top_k)},
                                 {"q", i64(c.moe.q)},
                                 {"epochs", i64(c.moe.epochs)},
                                 {"lr", c.moe.lr},
                                 {"ema_decay", c.moe.ema_decay}});
  const auto& k = c.distill;
  root.insert("distill", toml::table{{"enabled", k.enabled},
                                     {"epochs", i64(k.epochs)},
                                     {"steps_per_epoch", i64(k.steps_per_epoch)},
                                     {"batch", i64(k.batch)},
                                     {"lr", k.lr},
                                     {"momentum", k.momentum},
                                     {"lambda_soft", k.lambda_soft},
                                     {"lambda_hard", k.lambda_hard},
                                     {"temperature", k.temperature},
                                     {"freeze_bn", k.freeze_bn},
                                     {"teacher", std::string(moe::teacher_name(k.teacher))}});
  root.insert("output", toml::table{{"checkpoint_interval", i64(c.output.checkpoint_interval)}});
  std::ostringstream out;
  out << root << '\n';
  return out.str();
}

}  // namespace mosaic::cli
