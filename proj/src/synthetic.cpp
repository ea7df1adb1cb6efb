#include "nplab/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "nplab/common.hpp"
#include "nplab/rng.hpp"

namespace nplab {

Dataset make_synthetic(const SyntheticSpec& spec) {
  check<ConfigError>(spec.per_class > 0, "synthetic: per_class must be positive, got ",
                     spec.per_class);
  check<ConfigError>(spec.noise >= 0.0, "synthetic: noise must be non-negative, got ",
                     spec.noise);
  int d = spec.dimension;
  if (spec.kind == SyntheticKind::gaussian_blobs)
    check<ConfigError>(d >= 1 && d <= 3, "gaussian-blobs: dimension must be 1..3, got ", d);
  else
    check<ConfigError>(d == 2, "two-moons: dimension must be 2, got ", d);

  int64_t n = 2 * spec.per_class;
  Dataset out;
  out.inputs = Tensor({n, d});
  out.labels.resize(static_cast<size_t>(n));
  out.class_count = 2;
  RngStream rng(spec.seed, 0);

  if (spec.kind == SyntheticKind::gaussian_blobs) {
    // Class c sits at (-1)^(c+1) * (1, ..., 1).
    for (int64_t i = 0; i < n; ++i) {
      int label = i < spec.per_class ? 0 : 1;
      double center = label == 0 ? -1.0 : 1.0;
      for (int a = 0; a < d; ++a)
        out.inputs[i * d + a] = center + spec.noise * rng.normal();
      out.labels[static_cast<size_t>(i)] = label;
    }
  } else {
    // Two interleaved half circles in the plane.
    for (int64_t i = 0; i < n; ++i) {
      int label = i < spec.per_class ? 0 : 1;
      int64_t j = label == 0 ? i : i - spec.per_class;
      double t = std::numbers::pi * static_cast<double>(j) /
                 static_cast<double>(std::max<int64_t>(spec.per_class - 1, 1));
      double x, y;
      if (label == 0) {
        x = std::cos(t);
        y = std::sin(t);
      } else {
        x = 1.0 - std::cos(t);
        y = 0.5 - std::sin(t);
      }
      out.inputs[i * 2] = x + spec.noise * rng.normal();
      out.inputs[i * 2 + 1] = y + spec.noise * rng.normal();
      out.labels[static_cast<size_t>(i)] = label;
    }
  }

  double lo = out.inputs[0], hi = out.inputs[0];
  for (int64_t i = 1; i < out.inputs.size(); ++i) {
    lo = std::min(lo, out.inputs[i]);
    hi = std::max(hi, out.inputs[i]);
  }
  out.value_lo = lo - 3.0 * spec.noise;
  out.value_hi = hi + 3.0 * spec.noise;
  if (out.value_lo == out.value_hi) out.value_hi = out.value_lo + 1.0;  // degenerate noise 0
  return out;
}

}  // namespace nplab
