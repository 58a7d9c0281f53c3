#pragma once

#include "mosaic/data/dataset.hpp"

#include <filesystem>
#include <optional>

namespace mosaic::data {

/// Reads an MNIST-style pair of IDX files: unsigned-byte images (magic
/// 0x00000803, dims n × rows × cols) and unsigned-byte labels (magic
/// 0x00000801, dim n), all big-endian. Pixels are scaled to [0, 1] and each
/// image becomes one row. When `classes` is not given it is max(label) + 1.
/// Malformed input raises FormatError naming the byte offset.
Dataset load_idx(const std::filesystem::path& images_path, const std::filesystem::path& labels_path,
                 std::optional<std::size_t> classes = std::nullopt, Split split = Split::train);

/// Writes `dataset` back in the same format, with each row reshaped to
/// rows × cols and pixels stored as round(255·value) clamped to [0, 255].
void write_idx(const std::filesystem::path& images_path, const std::filesystem::path& labels_path,
               const Dataset& dataset, std::size_t image_rows, std::size_t image_cols);

}  // namespace mosaic::data
