#pragma once

#include <cstdint>
#include <span>
#include <utility>
#include <vector>

#include "nplab/tensor.hpp"

namespace nplab {

// Labeled inputs plus the metadata attacks and packet grids need: the class
// count and the valid value range (attack clamping, grid domains).
struct Dataset {
  Tensor inputs;            // N x feature-shape
  std::vector<int> labels;  // length N, values in [0, class_count)
  int class_count = 0;
  double value_lo = 0.0;
  double value_hi = 1.0;

  int64_t size() const { return inputs.rank() >= 1 ? inputs.dim(0) : 0; }
  int64_t feature_size() const { return size() > 0 ? inputs.size() / size() : 0; }
  std::vector<int64_t> feature_shape() const;

  // Checks the type invariants; throws DataError on violation.
  void validate() const;
};

// New dataset holding rows[idx[0]], rows[idx[1]], ... of d.
Dataset take(const Dataset& d, std::span<const int64_t> idx);

// Stacked input rows (k x feature-shape) for a list of indices.
Tensor gather_inputs(const Dataset& d, std::span<const int64_t> idx);
std::vector<int> gather_labels(const Dataset& d, std::span<const int64_t> idx);

// Contiguous row block [start, stop) of any batch-major tensor.
Tensor rows_block(const Tensor& t, int64_t start, int64_t stop);

// n samples without replacement, deterministic in seed.
Dataset subset(const Dataset& d, int64_t n, uint64_t seed);

// Two disjoint parts; the first holds round(fraction * N) samples.
std::pair<Dataset, Dataset> split(const Dataset& d, double fraction, uint64_t seed);

// Per-class sample counts (length class_count).
std::vector<int64_t> class_counts(const Dataset& d);

}  // namespace nplab
