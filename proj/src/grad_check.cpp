#include "nplab/grad_check.hpp"

#include <cmath>

#include "nplab/common.hpp"

namespace nplab {

GradCheckReport grad_check(const ScalarFn& f, const Tensor& x, const Tensor& analytic_grad,
                           double h, double tol) {
  check(analytic_grad.same_shape(x), "grad_check: gradient shape ", analytic_grad.shape_str(),
        " does not match input ", x.shape_str());
  check(h > 0.0 && tol > 0.0, "grad_check: h and tol must be positive");
  GradCheckReport rep;
  rep.pass = true;
  Tensor probe = x;
  for (int64_t i = 0; i < x.size(); ++i) {
    double orig = probe[i];
    probe[i] = orig + h;
    double fp = f(probe);
    probe[i] = orig - h;
    double fm = f(probe);
    probe[i] = orig;
    if (!std::isfinite(fp) || !std::isfinite(fm)) {
      rep.pass = false;
      rep.worst_coord = i;
      rep.note = format_msg("non-finite value at coordinate ", i);
      return rep;
    }
    double numeric = (fp - fm) / (2.0 * h);
    double analytic = analytic_grad[i];
    double denom = std::max({std::fabs(numeric), std::fabs(analytic), 1e-12});
    double rel = std::fabs(numeric - analytic) / denom;
    if (rel > rep.max_rel_err) {
      rep.max_rel_err = rel;
      rep.worst_coord = i;
    }
  }
  rep.pass = rep.max_rel_err <= tol;
  return rep;
}

}  // namespace nplab
