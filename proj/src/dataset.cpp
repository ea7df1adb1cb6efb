#include "nplab/dataset.hpp"

#include <cmath>
#include <cstring>

#include "nplab/common.hpp"
#include "nplab/rng.hpp"

namespace nplab {

std::vector<int64_t> Dataset::feature_shape() const {
  check<DataError>(inputs.rank() >= 1, "dataset inputs must have a leading sample axis, got ",
                   inputs.shape_str());
  return {inputs.shape().begin() + 1, inputs.shape().end()};
}

void Dataset::validate() const {
  check<DataError>(inputs.rank() >= 1, "dataset inputs must have a leading sample axis, got ",
                   inputs.shape_str());
  check<DataError>(static_cast<int64_t>(labels.size()) == size(), "dataset has ", size(),
                   " inputs but ", labels.size(), " labels");
  check<DataError>(class_count > 0, "dataset class_count must be positive, got ", class_count);
  check<DataError>(value_lo <= value_hi, "dataset value range [", value_lo, ", ", value_hi,
                   "] is inverted");
  for (size_t i = 0; i < labels.size(); ++i)
    check<DataError>(labels[i] >= 0 && labels[i] < class_count, "label ", labels[i],
                     " at sample ", i, " outside [0, ", class_count, ")");
  for (int64_t i = 0; i < inputs.size(); ++i)
    check<DataError>(inputs[i] >= value_lo && inputs[i] <= value_hi, "input value ", inputs[i],
                     " outside value range [", value_lo, ", ", value_hi, "]");
}

Tensor gather_inputs(const Dataset& d, std::span<const int64_t> idx) {
  int64_t fs = d.feature_size();
  std::vector<int64_t> shape = d.feature_shape();
  shape.insert(shape.begin(), static_cast<int64_t>(idx.size()));
  Tensor out(shape);
  for (size_t r = 0; r < idx.size(); ++r) {
    check<DataError>(idx[r] >= 0 && idx[r] < d.size(), "sample index ", idx[r],
                     " outside dataset of size ", d.size());
    std::memcpy(out.data() + static_cast<int64_t>(r) * fs, d.inputs.data() + idx[r] * fs,
                static_cast<size_t>(fs) * sizeof(double));
  }
  return out;
}

std::vector<int> gather_labels(const Dataset& d, std::span<const int64_t> idx) {
  std::vector<int> out(idx.size());
  for (size_t r = 0; r < idx.size(); ++r) {
    check<DataError>(idx[r] >= 0 && idx[r] < d.size(), "sample index ", idx[r],
                     " outside dataset of size ", d.size());
    out[r] = d.labels[static_cast<size_t>(idx[r])];
  }
  return out;
}

Tensor rows_block(const Tensor& t, int64_t start, int64_t stop) {
  check<ConfigError>(t.rank() >= 1 && start >= 0 && start <= stop && stop <= t.dim(0),
                     "row block [", start, ", ", stop, ") invalid for shape ", t.shape_str());
  std::vector<int64_t> shape = t.shape();
  shape[0] = stop - start;
  Tensor out(shape);
  const int64_t row = t.dim(0) > 0 ? t.size() / t.dim(0) : 0;
  std::memcpy(out.data(), t.data() + start * row,
              static_cast<size_t>((stop - start) * row) * sizeof(double));
  return out;
}

Dataset take(const Dataset& d, std::span<const int64_t> idx) {
  Dataset out;
  out.inputs = gather_inputs(d, idx);
  out.labels = gather_labels(d, idx);
  out.class_count = d.class_count;
  out.value_lo = d.value_lo;
  out.value_hi = d.value_hi;
  return out;
}

Dataset subset(const Dataset& d, int64_t n, uint64_t seed) {
  check<ConfigError>(n >= 0 && n <= d.size(), "subset of ", n, " samples from a dataset of ",
                     d.size());
  auto perm = RngStream(seed, 0).permutation(d.size());
  perm.resize(static_cast<size_t>(n));
  return take(d, perm);
}

std::pair<Dataset, Dataset> split(const Dataset& d, double fraction, uint64_t seed) {
  check<ConfigError>(fraction >= 0.0 && fraction <= 1.0, "split fraction ", fraction,
                     " outside [0, 1]");
  auto perm = RngStream(seed, 0).permutation(d.size());
  auto n1 = static_cast<size_t>(std::llround(fraction * static_cast<double>(d.size())));
  std::span<const int64_t> all(perm);
  return {take(d, all.subspan(0, n1)), take(d, all.subspan(n1))};
}

std::vector<int64_t> class_counts(const Dataset& d) {
  std::vector<int64_t> counts(static_cast<size_t>(d.class_count), 0);
  for (int label : d.labels) {
    check<DataError>(label >= 0 && label < d.class_count, "label ", label, " outside [0, ",
                     d.class_count, ")");
    ++counts[static_cast<size_t>(label)];
  }
  return counts;
}

}  // namespace nplab
