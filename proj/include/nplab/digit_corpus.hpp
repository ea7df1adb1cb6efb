#pragma once

#include <cstdint>

#include "nplab/dataset.hpp"

namespace nplab {

// Procedurally rendered 28x28 ten-class digit corpus (seven-segment glyphs
// with random rotation/scale/translation, a soft brush, and pixel noise).
// Serves as the desk-scale handwritten-digit stand-in; fixtures written via
// the IDX codec feed the same loader path real MNIST files would.
//
// The striped variant collapses the glyphs into five shape pairs and makes
// class parity visible only through a low-amplitude fine grating, so the
// discriminative signal lives at high spatial frequency.
struct DigitCorpusSpec {
  int64_t count = 2000;
  uint64_t seed = 0;
  bool striped = false;
  double stripe_amplitude = 0.15;
  double stripe_frequency = 10.0;  // cycles across the 28-pixel extent
  double noise = 0.08;             // pixel noise std dev
};

Dataset make_digit_corpus(const DigitCorpusSpec& spec);

}  // namespace nplab
