#include "mosaic/nn/serialize.hpp"

#include "mosaic/core/errors.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <string>

namespace mosaic::nn {
namespace {

constexpr char kMagic[8] = {'M', 'O', 'S', 'A', 'I', 'C', 'P', 'S'};
constexpr std::uint32_t kVersion = 1;

class Writer {
 public:
  void bytes(const void* data, std::size_t n) {
    const auto* p = static_cast<const std::uint8_t*>(data);
    out_.insert(out_.end(), p, p + n);
  }
  template <typename T>
  void le(T value) {
    using U = std::make_unsigned_t<T>;
    auto u = static_cast<U>(value);
    for (std::size_t i = 0; i < sizeof(T); ++i) out_.push_back(static_cast<std::uint8_t>(u >> (8 * i)));
  }
  void f64(double value) { le(std::bit_cast<std::uint64_t>(value)); }
  std::vector<std::uint8_t> take() { return std::move(out_); }

 private:
  std::vector<std::uint8_t> out_;
};

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> in) : in_(in) {}

  void need(std::size_t n) const {
    if (pos_ + n > in_.size()) {
      throw FormatError("parameter container truncated at byte offset " + std::to_string(pos_));
    }
  }
  template <typename T>
  T le() {
    need(sizeof(T));
    std::make_unsigned_t<T> u = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) {
      u |= static_cast<std::make_unsigned_t<T>>(in_[pos_ + i]) << (8 * i);
    }
    pos_ += sizeof(T);
    return static_cast<T>(u);
  }
  double f64() { return std::bit_cast<double>(le<std::uint64_t>()); }
  std::string str(std::size_t n) {
    need(n);
    std::string s(reinterpret_cast<const char*>(in_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  std::size_t pos() const { return pos_; }
  bool done() const { return pos_ == in_.size(); }

 private:
  std::span<const std::uint8_t> in_;
  std::size_t pos_ = 0;
};

}  // namespace

nlohmann::json spec_to_json(const ModelSpec& spec) {
  nlohmann::json layers = nlohmann::json::array();
  for (const Layer& layer : spec.layers) {
    if (const auto* d = std::get_if<Dense>(&layer)) {
      layers.push_back({{"kind", "dense"}, {"in", d->in}, {"out", d->out}});
    } else if (const auto* b = std::get_if<BatchNorm>(&layer)) {
      layers.push_back({{"kind", "batchnorm"}, {"dim", b->dim}, {"momentum", b->momentum}});
    } else if (std::holds_alternative<Relu>(layer)) {
      layers.push_back({{"kind", "relu"}});
    } else if (const auto* s = std::get_if<Squash>(&layer)) {
      layers.push_back({{"kind", "squash"}, {"lo", s->lo}, {"hi", s->hi}});
    } else if (const auto* h = std::get_if<OutputHead>(&layer)) {
      layers.push_back({{"kind", "output_head"}, {"dim", h->dim}, {"classes", h->classes}});
    }
  }
  return {{"width_ratio", spec.width_ratio}, {"layers", layers}};
}

ModelSpec spec_from_json(const nlohmann::json& j) {
  try {
    ModelSpec spec;
    spec.width_ratio = j.at("width_ratio").get<double>();
    for (const auto& l : j.at("layers")) {
      const auto kind = l.at("kind").get<std::string>();
      if (kind == "dense") {
        spec.layers.emplace_back(Dense{l.at("in").get<std::size_t>(), l.at("out").get<std::size_t>()});
      } else if (kind == "batchnorm") {
        spec.layers.emplace_back(BatchNorm{l.at("dim").get<std::size_t>(), l.at("momentum").get<double>()});
      } else if (kind == "relu") {
        spec.layers.emplace_back(Relu{});
      } else if (kind == "squash") {
        spec.layers.emplace_back(Squash{l.at("lo").get<double>(), l.at("hi").get<double>()});
      } else if (kind == "output_head") {
        spec.layers.emplace_back(OutputHead{l.at("dim").get<std::size_t>(), l.at("classes").get<std::size_t>()});
      } else {
        throw FormatError("unknown layer kind '" + kind + "'");
      }
    }
    spec.validate();
    return spec;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("malformed model spec: ") + e.what());
  }
}

std::vector<std::uint8_t> encode_params(const ParamSet& params, const ModelSpec* spec) {
  Writer w;
  w.bytes(kMagic, sizeof(kMagic));
  w.le<std::uint32_t>(kVersion);
  const std::string spec_text = spec ? spec_to_json(*spec).dump() : std::string();
  w.le<std::uint32_t>(static_cast<std::uint32_t>(spec_text.size()));
  w.bytes(spec_text.data(), spec_text.size());
  w.le<std::uint32_t>(static_cast<std::uint32_t>(params.size()));
  for (const ParamEntry& e : params.entries()) {
    w.le<std::uint16_t>(static_cast<std::uint16_t>(e.name.size()));
    w.bytes(e.name.data(), e.name.size());
    w.le<std::uint8_t>(static_cast<std::uint8_t>(e.role));
    w.le<std::uint8_t>(2);
    w.le<std::uint64_t>(static_cast<std::uint64_t>(e.value.rows()));
    w.le<std::uint64_t>(static_cast<std::uint64_t>(e.value.cols()));
    for (Eigen::Index k = 0; k < e.value.size(); ++k) w.f64(e.value.data()[k]);
  }
  return w.take();
}

DecodedParams decode_params(std::span<const std::uint8_t> bytes) {
  Reader r(bytes);
  if (r.str(sizeof(kMagic)) != std::string(kMagic, sizeof(kMagic))) {
    throw FormatError("bad parameter container magic at byte offset 0");
  }
  const auto version = r.le<std::uint32_t>();
  if (version != kVersion) throw FormatError("unsupported parameter container version " + std::to_string(version));
  DecodedParams out;
  const auto spec_len = r.le<std::uint32_t>();
  if (spec_len > 0) {
    const std::size_t at = r.pos();
    const std::string text = r.str(spec_len);
    try {
      out.spec = spec_from_json(nlohmann::json::parse(text));
    } catch (const nlohmann::json::exception&) {
      throw FormatError("unparsable model spec at byte offset " + std::to_string(at));
    }
  }
  const auto count = r.le<std::uint32_t>();
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto name_len = r.le<std::uint16_t>();
    std::string name = r.str(name_len);
    const std::size_t role_at = r.pos();
    const auto role = r.le<std::uint8_t>();
    if (role > static_cast<std::uint8_t>(Role::bn_running_var)) {
      throw FormatError("bad role byte at offset " + std::to_string(role_at));
    }
    const std::size_t ndim_at = r.pos();
    if (r.le<std::uint8_t>() != 2) throw FormatError("unsupported rank at byte offset " + std::to_string(ndim_at));
    const auto rows = r.le<std::uint64_t>();
    const auto cols = r.le<std::uint64_t>();
    r.need(rows * cols * sizeof(double));
    Matrix value(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
    for (Eigen::Index k = 0; k < value.size(); ++k) value.data()[k] = r.f64();
    out.params.add(std::move(name), static_cast<Role>(role), std::move(value));
  }
  if (!r.done()) throw FormatError("trailing bytes after parameter container at offset " + std::to_string(r.pos()));
  if (out.spec) check_params(out.params, *out.spec);
  return out;
}

void save_params(const std::filesystem::path& path, const ParamSet& params, const ModelSpec* spec) {
  const auto bytes = encode_params(params, spec);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("cannot open '" + path.string() + "' for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw FormatError("failed writing '" + path.string() + "'");
}

DecodedParams load_params(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open '" + path.string() + "'");
  const std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_params(bytes);
}

nlohmann::json params_to_json(const ParamSet& params, const ModelSpec* spec) {
  nlohmann::json entries = nlohmann::json::array();
  for (const ParamEntry& e : params.entries()) {
    std::vector<double> values(e.value.data(), e.value.data() + e.value.size());
    entries.push_back({{"name", e.name},
                       {"role", std::string(role_name(e.role))},
                       {"shape", {e.value.rows(), e.value.cols()}},
                       {"values", values}});
  }
  nlohmann::json j = {{"format", "mosaic-params"}, {"version", kVersion}, {"entries", entries}};
  if (spec) j["spec"] = spec_to_json(*spec);
  return j;
}

DecodedParams params_from_json(const nlohmann::json& j) {
  try {
    DecodedParams out;
    if (j.contains("spec")) out.spec = spec_from_json(j.at("spec"));
    for (const auto& e : j.at("entries")) {
      const auto shape = e.at("shape").get<std::vector<std::size_t>>();
      const auto values = e.at("values").get<std::vector<double>>();
      if (shape.size() != 2 || shape[0] * shape[1] != values.size()) {
        throw FormatError("entry '" + e.at("name").get<std::string>() + "' has inconsistent shape");
      }
      Matrix m(static_cast<Eigen::Index>(shape[0]), static_cast<Eigen::Index>(shape[1]));
      std::copy(values.begin(), values.end(), m.data());
      out.params.add(e.at("name").get<std::string>(), role_from_name(e.at("role").get<std::string>()), std::move(m));
    }
    if (out.spec) check_params(out.params, *out.spec);
    return out;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("malformed parameter JSON: ") + e.what());
  }
}

}  // namespace mosaic::nn
