#pragma once

#include "mosaic/cli/config.hpp"
#include "mosaic/core/rng.hpp"
#include "mosaic/nn/param_set.hpp"

#include <cstring>
#include <filesystem>
#include <string>

namespace testing {

/// A federation small enough to run end to end in about a second.
inline mosaic::cli::ExperimentConfig tiny_config(std::uint64_t seed = 0) {
  mosaic::cli::ExperimentConfig c;
  c.seed = seed;
  c.dataset.classes = 4;
  c.dataset.n_per_class = 60;
  c.dataset.test_per_class = 40;
  c.dataset.dim = 6;
  c.model.hidden = {12, 12};
  c.federation.clients = 4;
  c.federation.sampled = 3;
  c.federation.omega = 0.1;
  c.federation.t1 = 3;
  c.federation.t2 = 2;
  c.federation.local_steps = 3;
  c.federation.batch = 16;
  c.generator.epochs = 2;
  c.generator.steps_per_epoch = 3;
  c.generator.batch = 16;
  c.generator.hidden = {8};
  c.moe.q = 2;
  c.moe.epochs = 5;
  c.distill.epochs = 2;
  c.distill.steps_per_epoch = 3;
  c.distill.batch = 16;
  return c;
}

inline bool bytes_equal(const mosaic::Matrix& a, const mosaic::Matrix& b) {
  return a.rows() == b.rows() && a.cols() == b.cols() &&
         std::memcmp(a.data(), b.data(), sizeof(double) * static_cast<std::size_t>(a.size())) == 0;
}

inline std::filesystem::path scratch_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("mosaic_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace testing
