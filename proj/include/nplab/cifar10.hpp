#pragma once

#include <filesystem>

#include "nplab/dataset.hpp"

namespace nplab {

// CIFAR-10 binary batches: 3073-byte records, one label byte followed by
// 3x1024 channel-planar pixels.  Optional input path; nothing in the
// acceptance suite depends on it.
Dataset load_cifar10_bin(const std::filesystem::path& path);

// Fixture writer, same quantization contract as the IDX writer.
void write_cifar10_bin(const Dataset& d, const std::filesystem::path& path);

}  // namespace nplab
