#pragma once

#include <Eigen/Core>

#include <cstddef>
#include <vector>

namespace mosaic {

// Row-major so that one row is one sample.
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using RowVector = Eigen::Matrix<double, 1, Eigen::Dynamic>;
using Labels = std::vector<int>;

inline Matrix gather_rows(const Matrix& source, const std::vector<std::size_t>& rows) {
  Matrix out(static_cast<Eigen::Index>(rows.size()), source.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    out.row(static_cast<Eigen::Index>(i)) = source.row(static_cast<Eigen::Index>(rows[i]));
  }
  return out;
}

}  // namespace mosaic
