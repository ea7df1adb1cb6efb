#pragma once

#include <cstdint>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

#include "nplab/common.hpp"

namespace nplab {

// Dense row-major f64 tensor with value semantics.  Rank 0 (shape {}) is a
// scalar with size 1; that is the only broadcast-capable shape.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::vector<int64_t> shape);
  Tensor(std::vector<int64_t> shape, std::vector<double> values);

  static Tensor zeros(std::vector<int64_t> shape) { return Tensor(std::move(shape)); }
  static Tensor full(std::vector<int64_t> shape, double v);
  static Tensor scalar(double v) { return Tensor({}, {v}); }
  static Tensor row(std::initializer_list<double> v);  // rank-1

  int rank() const { return static_cast<int>(shape_.size()); }
  int64_t size() const { return static_cast<int64_t>(data_.size()); }
  int64_t dim(int i) const;
  const std::vector<int64_t>& shape() const { return shape_; }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  std::vector<double>& values() { return data_; }
  const std::vector<double>& values() const { return data_; }

  double& operator[](int64_t i) { return data_[static_cast<size_t>(i)]; }
  double operator[](int64_t i) const { return data_[static_cast<size_t>(i)]; }

  // Value of a size-1 tensor (any rank); errors otherwise.
  double item() const;

  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }
  bool all_finite() const;
  double max_abs() const;

  Tensor reshaped(std::vector<int64_t> new_shape) const;
  std::string shape_str() const { return shape_str(shape_); }
  static std::string shape_str(std::span<const int64_t> s);

 private:
  std::vector<int64_t> shape_;
  std::vector<double> data_;
};

// Product of dims; rejects negative entries.
int64_t shape_size(std::span<const int64_t> shape);

}  // namespace nplab
