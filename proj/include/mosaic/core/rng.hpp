#pragma once

#include "mosaic/core/tensor.hpp"

#include <cstdint>
#include <initializer_list>
#include <random>
#include <string_view>

namespace mosaic {

// splitmix64 finalizer; used to derive independent seeds for named streams.
constexpr std::uint64_t mix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

constexpr std::uint64_t hash_name(std::string_view name) {
  std::uint64_t h = 0xCBF29CE484222325ULL;
  for (char c : name) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001B3ULL;
  }
  return h;
}

/// A seeded random stream. Streams are derived, never shared: every stage asks
/// for `derive("name", ids...)` so that re-running one stage, or running clients
/// in a different order or on different threads, sees the same numbers.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : seed_(seed), engine_(mix64(seed)) {}

  std::uint64_t seed() const { return seed_; }

  Rng derive(std::string_view name, std::initializer_list<std::uint64_t> ids = {}) const {
    std::uint64_t s = mix64(seed_ ^ hash_name(name));
    for (std::uint64_t id : ids) s = mix64(s ^ mix64(id + 0x632BE59BD9B4E019ULL));
    return Rng(s);
  }

  std::mt19937_64& engine() { return engine_; }

  double normal(double mean = 0.0, double stddev = 1.0) {
    return std::normal_distribution<double>(mean, stddev)(engine_);
  }
  double uniform(double lo = 0.0, double hi = 1.0) {
    return std::uniform_real_distribution<double>(lo, hi)(engine_);
  }
  std::size_t index(std::size_t n) {
    return std::uniform_int_distribution<std::size_t>(0, n - 1)(engine_);
  }

  Matrix normal_matrix(Eigen::Index rows, Eigen::Index cols, double stddev = 1.0) {
    Matrix m(rows, cols);
    std::normal_distribution<double> dist(0.0, stddev);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = dist(engine_);
    return m;
  }

 private:
  std::uint64_t seed_;
  std::mt19937_64 engine_;
};

}  // namespace mosaic
