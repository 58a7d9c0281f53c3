#include "mosaic/nn/param_set.hpp"

#include "mosaic/core/errors.hpp"

#include <atomic>
#include <cstring>

namespace mosaic::nn {
namespace {

std::uint64_t next_stamp() {
  static std::atomic<std::uint64_t> counter{1};
  return counter.fetch_add(1, std::memory_order_relaxed);
}

}  // namespace

std::string_view role_name(Role role) {
  switch (role) {
    case Role::weight: return "weight";
    case Role::bias: return "bias";
    case Role::bn_gain: return "bn_gain";
    case Role::bn_shift: return "bn_shift";
    case Role::bn_running_mean: return "bn_running_mean";
    case Role::bn_running_var: return "bn_running_var";
  }
  return "unknown";
}

Role role_from_name(std::string_view name) {
  for (Role r : {Role::weight, Role::bias, Role::bn_gain, Role::bn_shift, Role::bn_running_mean,
                 Role::bn_running_var}) {
    if (role_name(r) == name) return r;
  }
  throw FormatError("unknown parameter role '" + std::string(name) + "'");
}

ParamSet::ParamSet() : stamp_(next_stamp()) {}

ParamSet::ParamSet(const ParamSet& other)
    : entries_(other.entries_), index_(other.index_), stamp_(next_stamp()) {}

ParamSet& ParamSet::operator=(const ParamSet& other) {
  if (this != &other) {
    entries_ = other.entries_;
    index_ = other.index_;
    touch();
  }
  return *this;
}

ParamSet::ParamSet(ParamSet&& other) noexcept
    : entries_(std::move(other.entries_)), index_(std::move(other.index_)), stamp_(next_stamp()) {
  other.touch();
}

ParamSet& ParamSet::operator=(ParamSet&& other) noexcept {
  if (this != &other) {
    entries_ = std::move(other.entries_);
    index_ = std::move(other.index_);
    touch();
    other.touch();
  }
  return *this;
}

void ParamSet::touch() { stamp_ = next_stamp(); }

void ParamSet::add(std::string name, Role role, Matrix value) {
  if (index_.count(name) != 0) throw StructureError("duplicate parameter '" + name + "'");
  if (role == Role::bn_running_var && (value.array() <= 0.0).any()) {
    throw StructureError("running variance '" + name + "' must be positive");
  }
  index_.emplace(name, entries_.size());
  entries_.push_back({std::move(name), role, std::move(value)});
  touch();
}

bool ParamSet::contains(std::string_view name) const { return index_.find(name) != index_.end(); }

const ParamEntry& ParamSet::entry(std::string_view name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw StructureError("no parameter named '" + std::string(name) + "'");
  return entries_[it->second];
}

Matrix& ParamSet::mutable_at(std::string_view name) {
  auto it = index_.find(name);
  if (it == index_.end()) throw StructureError("no parameter named '" + std::string(name) + "'");
  touch();
  return entries_[it->second].value;
}

std::span<ParamEntry> ParamSet::mutable_entries() {
  touch();
  return entries_;
}

bool ParamSet::same_structure(const ParamSet& other) const {
  if (entries_.size() != other.entries_.size()) return false;
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    const auto& a = entries_[i];
    const auto& b = other.entries_[i];
    if (a.name != b.name || a.role != b.role || a.value.rows() != b.value.rows() ||
        a.value.cols() != b.value.cols()) {
      return false;
    }
  }
  return true;
}

bool operator==(const ParamSet& a, const ParamSet& b) {
  if (!a.same_structure(b)) return false;
  for (std::size_t i = 0; i < a.entries_.size(); ++i) {
    const Matrix& x = a.entries_[i].value;
    const Matrix& y = b.entries_[i].value;
    for (Eigen::Index k = 0; k < x.size(); ++k) {
      // Bitwise comparison so that NaN payloads and signed zeros count.
      if (std::memcmp(x.data() + k, y.data() + k, sizeof(double)) != 0) return false;
    }
  }
  return true;
}

Gradients Gradients::zeros_like(const ParamSet& params) {
  Gradients g;
  for (const auto& e : params.entries()) {
    if (is_trainable(e.role)) g.add(e.name, Matrix::Zero(e.value.rows(), e.value.cols()));
  }
  return g;
}

void Gradients::add(std::string name, Matrix value) {
  if (values_.count(name) != 0) throw StructureError("duplicate gradient '" + name + "'");
  names_.push_back(name);
  values_.emplace(std::move(name), std::move(value));
}

bool Gradients::contains(std::string_view name) const { return values_.find(name) != values_.end(); }

const Matrix& Gradients::at(std::string_view name) const {
  auto it = values_.find(name);
  if (it == values_.end()) throw StructureError("no gradient named '" + std::string(name) + "'");
  return it->second;
}

Matrix& Gradients::mutable_at(std::string_view name) {
  auto it = values_.find(name);
  if (it == values_.end()) throw StructureError("no gradient named '" + std::string(name) + "'");
  return it->second;
}

Gradients& Gradients::operator+=(const Gradients& other) {
  if (other.names_ != names_) throw StructureError("gradient key sets differ");
  for (const auto& name : names_) {
    Matrix& lhs = values_.at(name);
    const Matrix& rhs = other.values_.at(name);
    if (lhs.rows() != rhs.rows() || lhs.cols() != rhs.cols()) {
      throw StructureError("gradient shapes differ for '" + name + "'");
    }
    lhs += rhs;
  }
  return *this;
}

Gradients& Gradients::operator*=(double scale) {
  for (auto& [name, value] : values_) value *= scale;
  return *this;
}

void Gradients::check_matches(const ParamSet& params) const {
  std::size_t trainable = 0;
  for (const auto& e : params.entries()) {
    if (!is_trainable(e.role)) continue;
    ++trainable;
    auto it = values_.find(e.name);
    if (it == values_.end()) throw StructureError("missing gradient for '" + e.name + "'");
    if (it->second.rows() != e.value.rows() || it->second.cols() != e.value.cols()) {
      throw StructureError("gradient shape mismatch for '" + e.name + "'");
    }
  }
  if (trainable != values_.size()) throw StructureError("gradient has keys not in the parameter set");
}

}  // namespace mosaic::nn
