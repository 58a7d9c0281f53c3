#pragma once

#include "mosaic/core/tensor.hpp"

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace mosaic::nn {

enum class Role : std::uint8_t {
  weight = 0,
  bias = 1,
  bn_gain = 2,
  bn_shift = 3,
  bn_running_mean = 4,
  bn_running_var = 5,
};

constexpr bool is_trainable(Role role) {
  return role != Role::bn_running_mean && role != Role::bn_running_var;
}

std::string_view role_name(Role role);
Role role_from_name(std::string_view name);

struct ParamEntry {
  std::string name;
  Role role;
  Matrix value;
};

/// Named parameter tensors of one model, in definition order.
///
/// Every mutation through the non-const accessors refreshes `stamp()`, which
/// forward caches use to detect that the parameters they captured have changed.
class ParamSet {
 public:
  ParamSet();
  ParamSet(const ParamSet& other);
  ParamSet& operator=(const ParamSet& other);
  ParamSet(ParamSet&& other) noexcept;
  ParamSet& operator=(ParamSet&& other) noexcept;

  void add(std::string name, Role role, Matrix value);

  bool contains(std::string_view name) const;
  const ParamEntry& entry(std::string_view name) const;
  const Matrix& at(std::string_view name) const { return entry(name).value; }
  Matrix& mutable_at(std::string_view name);

  std::span<const ParamEntry> entries() const { return entries_; }
  std::span<ParamEntry> mutable_entries();

  std::size_t size() const { return entries_.size(); }
  bool empty() const { return entries_.empty(); }
  std::uint64_t stamp() const { return stamp_; }

  /// Same names, roles and shapes in the same order.
  bool same_structure(const ParamSet& other) const;

  /// Bit-identical values and identical structure.
  friend bool operator==(const ParamSet& a, const ParamSet& b);

 private:
  void touch();

  std::vector<ParamEntry> entries_;
  std::map<std::string, std::size_t, std::less<>> index_;
  std::uint64_t stamp_;
};

/// Gradients over the trainable subset of a ParamSet, same order and shapes.
class Gradients {
 public:
  static Gradients zeros_like(const ParamSet& params);

  void add(std::string name, Matrix value);
  bool contains(std::string_view name) const;
  const Matrix& at(std::string_view name) const;
  Matrix& mutable_at(std::string_view name);

  const std::vector<std::string>& names() const { return names_; }
  std::size_t size() const { return names_.size(); }

  Gradients& operator+=(const Gradients& other);
  Gradients& operator*=(double scale);

  /// Throws StructureError unless the key set equals the trainable subset of
  /// `params` with matching shapes.
  void check_matches(const ParamSet& params) const;

 private:
  std::vector<std::string> names_;
  std::map<std::string, Matrix, std::less<>> values_;
};

}  // namespace mosaic::nn
