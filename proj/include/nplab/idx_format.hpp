#pragma once

#include <filesystem>

#include "nplab/dataset.hpp"

namespace nplab {

// MNIST IDX convention: big-endian headers, unsigned-byte payloads.
// Images file magic 0x00000803 with dims (N, H, W); labels file magic
// 0x00000801 with dim (N).  Pixels scale to [0, 1] by division by 255.
Dataset load_mnist_idx(const std::filesystem::path& images_path,
                       const std::filesystem::path& labels_path);

// Fixture writer: quantizes values back to bytes with round(v * 255).
// Datasets whose values lie on the k/255 grid round-trip bit-exactly.
void write_mnist_idx(const Dataset& d, const std::filesystem::path& images_path,
                     const std::filesystem::path& labels_path);

}  // namespace nplab
