#pragma once

#include <functional>
#include <string>

#include "nplab/tensor.hpp"

namespace nplab {

// Scalar-valued function of one tensor, evaluated fresh on each call (the
// checker probes x +- h*e_i, so f must not capture stale state).
using ScalarFn = std::function<double(const Tensor&)>;

struct GradCheckReport {
  bool pass = false;
  double max_rel_err = 0.0;
  int64_t worst_coord = -1;
  std::string note;  // set when a probe produced a non-finite value
};

// Compares an analytic gradient against central finite differences
// (f(x+h e_i) - f(x-h e_i)) / 2h, coordinate by coordinate.  Relative error
// uses max(|analytic|, |numeric|, 1e-12) as the denominator.
GradCheckReport grad_check(const ScalarFn& f, const Tensor& x, const Tensor& analytic_grad,
                           double h, double tol);

}  // namespace nplab
