#pragma once

#include "mosaic/core/tensor.hpp"
#include "mosaic/nn/network.hpp"

#include <atomic>
#include <cstdint>
#include <memory>
#include <vector>

namespace mosaic::data {

enum class Split { train, test };

/// Labeled samples, one per row. Every read through the accessors is counted
/// so that stages which must not touch a split can be audited.
class Dataset {
 public:
  Dataset() = default;
  /// Throws ShapeError / LabelError when rows and labels disagree or a label
  /// is outside [0, classes).
  Dataset(Matrix inputs, Labels labels, std::size_t classes, Split split);

  const Matrix& inputs() const {
    record();
    return inputs_;
  }
  const Labels& labels() const {
    record();
    return labels_;
  }
  nn::Batch batch(const std::vector<std::size_t>& rows) const;

  std::size_t size() const { return labels_.size(); }
  std::size_t dim() const { return static_cast<std::size_t>(inputs_.cols()); }
  std::size_t classes() const { return classes_; }
  Split split() const { return split_; }

  std::uint64_t read_count() const { return reads_ ? reads_->load() : 0; }

 private:
  void record() const {
    if (reads_) reads_->fetch_add(1, std::memory_order_relaxed);
  }

  Matrix inputs_;
  Labels labels_;
  std::size_t classes_ = 0;
  Split split_ = Split::train;
  std::shared_ptr<std::atomic<std::uint64_t>> reads_ = std::make_shared<std::atomic<std::uint64_t>>(0);
};

std::vector<std::size_t> label_histogram(const Labels& labels, std::size_t classes);

}  // namespace mosaic::data
