#include "nplab/tensor.hpp"

#include <cmath>

namespace nplab {

int64_t shape_size(std::span<const int64_t> shape) {
  int64_t n = 1;
  for (int64_t d : shape) {
    check(d >= 0, "tensor shape has a negative dim: ", Tensor::shape_str(shape));
    n *= d;
  }
  return n;
}

Tensor::Tensor(std::vector<int64_t> shape)
    : shape_(std::move(shape)), data_(static_cast<size_t>(shape_size(shape_)), 0.0) {}

Tensor::Tensor(std::vector<int64_t> shape, std::vector<double> values) : shape_(std::move(shape)) {
  int64_t n = shape_size(shape_);
  check(n == static_cast<int64_t>(values.size()), "tensor init: shape ", shape_str(),
        " wants ", n, " values, got ", values.size());
  data_ = std::move(values);
}

Tensor Tensor::full(std::vector<int64_t> shape, double v) {
  Tensor t(std::move(shape));
  for (double& x : t.data_) x = v;
  return t;
}

Tensor Tensor::row(std::initializer_list<double> v) {
  return Tensor({static_cast<int64_t>(v.size())}, std::vector<double>(v));
}

int64_t Tensor::dim(int i) const {
  check(i >= 0 && i < rank(), "dim index ", i, " out of range for shape ", shape_str());
  return shape_[static_cast<size_t>(i)];
}

double Tensor::item() const {
  check(size() == 1, "item() needs a size-1 tensor, got shape ", shape_str());
  return data_[0];
}

bool Tensor::all_finite() const {
  for (double v : data_)
    if (!std::isfinite(v)) return false;
  return true;
}

double Tensor::max_abs() const {
  double m = 0.0;
  for (double v : data_) m = std::max(m, std::fabs(v));
  return m;
}

Tensor Tensor::reshaped(std::vector<int64_t> new_shape) const {
  // One dim may be -1 and is inferred from the element count.
  int64_t known = 1;
  int infer = -1;
  for (size_t i = 0; i < new_shape.size(); ++i) {
    if (new_shape[i] == -1) {
      check(infer < 0, "reshape: more than one -1 in ", shape_str(new_shape));
      infer = static_cast<int>(i);
    } else {
      check(new_shape[i] >= 0, "reshape: bad dim in ", shape_str(new_shape));
      known *= new_shape[i];
    }
  }
  if (infer >= 0) {
    check(known > 0 && size() % known == 0, "reshape: cannot infer -1 going from ",
          shape_str(), " to ", shape_str(new_shape));
    new_shape[static_cast<size_t>(infer)] = size() / known;
  }
  check(shape_size(new_shape) == size(), "reshape: size mismatch going from ", shape_str(),
        " to ", shape_str(new_shape));
  Tensor out;
  out.shape_ = std::move(new_shape);
  out.data_ = data_;
  return out;
}

std::string Tensor::shape_str(std::span<const int64_t> s) {
  std::string r = "(";
  for (size_t i = 0; i < s.size(); ++i) {
    if (i) r += ", ";
    r += std::to_string(s[i]);
  }
  r += ")";
  return r;
}

}  // namespace nplab
