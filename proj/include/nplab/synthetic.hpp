#pragma once

#include <cstdint>

#include "nplab/dataset.hpp"

namespace nplab {

enum class SyntheticKind { gaussian_blobs, two_moons };

// Low-dimensional two-class generators; dimension small enough that the
// packet grids over their domain stay affordable.
struct SyntheticSpec {
  SyntheticKind kind = SyntheticKind::gaussian_blobs;
  int dimension = 2;       // 1..3 for blobs; two-moons is inherently 2-d
  int64_t per_class = 100;
  double noise = 0.2;
  uint64_t seed = 0;
};

// Deterministic in spec.seed.  value range = empirical bounding box padded
// by 3 * noise, so every generated point is strictly inside.
Dataset make_synthetic(const SyntheticSpec& spec);

}  // namespace nplab
