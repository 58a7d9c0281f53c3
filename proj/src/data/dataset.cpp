#include "mosaic/data/dataset.hpp"

#include "mosaic/core/errors.hpp"

#include <string>

namespace mosaic::data {

Dataset::Dataset(Matrix inputs, Labels labels, std::size_t classes, Split split)
    : inputs_(std::move(inputs)), labels_(std::move(labels)), classes_(classes), split_(split) {
  if (static_cast<std::size_t>(inputs_.rows()) != labels_.size()) {
    throw ShapeError("dataset has " + std::to_string(inputs_.rows()) + " rows but " +
                     std::to_string(labels_.size()) + " labels");
  }
  for (int y : labels_) {
    if (y < 0 || static_cast<std::size_t>(y) >= classes_) {
      throw LabelError("label " + std::to_string(y) + " outside [0, " + std::to_string(classes_) + ")");
    }
  }
}

nn::Batch Dataset::batch(const std::vector<std::size_t>& rows) const {
  record();
  nn::Batch b;
  b.inputs = gather_rows(inputs_, rows);
  Labels y;
  y.reserve(rows.size());
  for (std::size_t r : rows) y.push_back(labels_.at(r));
  b.labels = std::move(y);
  return b;
}

std::vector<std::size_t> label_histogram(const Labels& labels, std::size_t classes) {
  std::vector<std::size_t> h(classes, 0);
  for (int y : labels) ++h.at(static_cast<std::size_t>(y));
  return h;
}

}  // namespace mosaic::data
