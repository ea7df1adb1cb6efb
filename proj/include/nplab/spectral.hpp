#pragma once

#include <cstdint>
#include <optional>
#include <utility>
#include <vector>

#include "nplab/dataset.hpp"
#include "nplab/model.hpp"
#include "nplab/tensor.hpp"

namespace nplab {

// Low-frequency window of the centered spectrum, half-open on both axes:
// rows [r0, r1) x cols [c0, c1).  Defaults pick the 6x6 window straddling
// the center bin of a 28x28 spectrum; 32x32 profiles use [15:19).
struct SpectralConfig {
  int64_t r0 = 12, r1 = 18;
  int64_t c0 = 12, c1 = 18;
  bool grayscale = true;

  // Slice must be non-empty and inside an h x w spectrum.
  void validate(int64_t h, int64_t w) const;
};

// C x H x W -> H x W.  One channel passes through; three channels are
// averaged with equal weight (the ratio downstream is scale-invariant, so
// luma weighting would change nothing that matters).  Other channel counts
// are rejected.
Tensor to_gray(const Tensor& image);

// Magnitudes of the direct 2-d DFT of an H x W image, center-shifted so the
// zero-frequency bin lands at (H/2, W/2).  Evaluated row-column factored --
// the same double sum, not a fast transform.  Requires H, W >= 2.
Tensor dft2_centered(const Tensor& image);

// (S_total - S_lf) / S_total where both sums run over bin magnitudes of the
// centered spectrum and S_lf covers the config window.  An all-zero image
// has no energy to apportion: nullopt, never 0/0.  Rank-3 input is collapsed
// by to_gray (the config must have grayscale set); rank-2 is used as is.
std::optional<double> hf_ratio(const Tensor& image, const SpectralConfig& cfg);

// One checkpoint's point on the ratio-vs-accuracy trend.
struct RatioPoint {
  double accuracy = 0.0;    // test accuracy supplied by the caller
  double mean_ratio = 0.0;  // mean hf-ratio of the one-step descent deltas
  int64_t samples = 0;      // deltas with a defined ratio (nonzero energy)
};

// For each checkpoint, runs one descent step (the N=1 delta) on every
// dataset sample and averages the hf-ratio of the resulting perturbations.
// Inputs must be image-shaped (C x H x W features).
std::vector<RatioPoint> hf_ratio_vs_accuracy(
    const std::vector<std::pair<const Model*, double>>& checkpoints, const Dataset& d,
    double epsilon, const SpectralConfig& cfg);

// Spearman rank correlation with midranks for ties.  Both series need at
// least two entries and some variation; a constant series has no ranking.
double spearman(const std::vector<double>& a, const std::vector<double>& b);

}  // namespace nplab
