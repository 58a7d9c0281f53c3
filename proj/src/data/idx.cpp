#include "mosaic/data/idx.hpp"

#include "mosaic/core/errors.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

namespace mosaic::data {
namespace {

constexpr std::uint32_t kImagesMagic = 0x00000803;
constexpr std::uint32_t kLabelsMagic = 0x00000801;

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open '" + path.string() + "'");
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::uint32_t be32(const std::vector<std::uint8_t>& bytes, std::size_t offset, const std::string& file) {
  if (offset + 4 > bytes.size()) {
    throw FormatError(file + ": truncated header at byte offset " + std::to_string(offset));
  }
  return (std::uint32_t{bytes[offset]} << 24) | (std::uint32_t{bytes[offset + 1]} << 16) |
         (std::uint32_t{bytes[offset + 2]} << 8) | std::uint32_t{bytes[offset + 3]};
}

void put_be32(std::ofstream& out, std::uint32_t v) {
  const char b[4] = {static_cast<char>(v >> 24), static_cast<char>(v >> 16), static_cast<char>(v >> 8),
                     static_cast<char>(v)};
  out.write(b, 4);
}

}  // namespace

Dataset load_idx(const std::filesystem::path& images_path, const std::filesystem::path& labels_path,
                 std::optional<std::size_t> classes, Split split) {
  const std::string img_name = images_path.string();
  const std::string lbl_name = labels_path.string();
  const auto images = read_file(images_path);
  const auto labels = read_file(labels_path);

  if (be32(images, 0, img_name) != kImagesMagic) throw FormatError(img_name + ": bad magic at byte offset 0");
  if (be32(labels, 0, lbl_name) != kLabelsMagic) throw FormatError(lbl_name + ": bad magic at byte offset 0");

  const std::uint64_t n = be32(images, 4, img_name);
  const std::uint64_t rows = be32(images, 8, img_name);
  const std::uint64_t cols = be32(images, 12, img_name);
  const std::uint64_t n_labels = be32(labels, 4, lbl_name);
  if (n != n_labels) {
    throw FormatError(lbl_name + ": label count " + std::to_string(n_labels) + " at byte offset 4 differs from " +
                      std::to_string(n) + " images");
  }
  const std::uint64_t pixels = rows * cols;
  const std::uint64_t image_bytes_needed = 16 + n * pixels;
  if (images.size() < image_bytes_needed) {
    throw FormatError(img_name + ": truncated pixel data at byte offset " + std::to_string(images.size()) +
                      " (expected " + std::to_string(image_bytes_needed) + " bytes)");
  }
  if (labels.size() < 8 + n) {
    throw FormatError(lbl_name + ": truncated label data at byte offset " + std::to_string(labels.size()) +
                      " (expected " + std::to_string(8 + n) + " bytes)");
  }

  Matrix x(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(pixels));
  for (std::uint64_t i = 0; i < n; ++i) {
    for (std::uint64_t p = 0; p < pixels; ++p) {
      x(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(p)) = images[16 + i * pixels + p] / 255.0;
    }
  }
  Labels y(n);
  int max_label = 0;
  for (std::uint64_t i = 0; i < n; ++i) {
    y[i] = labels[8 + i];
    max_label = std::max(max_label, y[i]);
  }
  const std::size_t c = classes.value_or(std::max<std::size_t>(2, static_cast<std::size_t>(max_label) + 1));
  return Dataset(std::move(x), std::move(y), c, split);
}

void write_idx(const std::filesystem::path& images_path, const std::filesystem::path& labels_path,
               const Dataset& dataset, std::size_t image_rows, std::size_t image_cols) {
  if (image_rows * image_cols != dataset.dim()) {
    throw ShapeError("image shape " + std::to_string(image_rows) + "x" + std::to_string(image_cols) +
                     " does not match row width " + std::to_string(dataset.dim()));
  }
  std::ofstream img(images_path, std::ios::binary | std::ios::trunc);
  std::ofstream lbl(labels_path, std::ios::binary | std::ios::trunc);
  if (!img || !lbl) throw FormatError("cannot open IDX output files for writing");
  put_be32(img, kImagesMagic);
  put_be32(img, static_cast<std::uint32_t>(dataset.size()));
  put_be32(img, static_cast<std::uint32_t>(image_rows));
  put_be32(img, static_cast<std::uint32_t>(image_cols));
  const Matrix& x = dataset.inputs();
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    for (Eigen::Index p = 0; p < x.cols(); ++p) {
      const double v = std::clamp(std::round(x(i, p) * 255.0), 0.0, 255.0);
      img.put(static_cast<char>(static_cast<std::uint8_t>(v)));
    }
  }
  put_be32(lbl, kLabelsMagic);
  put_be32(lbl, static_cast<std::uint32_t>(dataset.size()));
  for (int y : dataset.labels()) lbl.put(static_cast<char>(static_cast<std::uint8_t>(y)));
  if (!img || !lbl) throw FormatError("failed writing IDX files");
}

}  // namespace mosaic::data
