#pragma once

#include <cstdint>
#include <vector>

#include "nplab/tensor.hpp"

namespace nplab {

// Deterministic RNG: xoshiro256++ state expanded from (seed, stream) via
// splitmix64.  Every consumer that needs independent randomness derives its
// own stream id from one experiment seed, so runs replay bit-for-bit.
class RngStream {
 public:
  explicit RngStream(uint64_t seed, uint64_t stream = 0);

  uint64_t next_u64();
  double uniform();                        // [0, 1)
  double uniform(double lo, double hi);    // [lo, hi)
  double normal();                         // standard normal, Box-Muller
  double normal(double mean, double sd);
  int64_t below(int64_t n);                // uniform in [0, n)

  void fill_uniform(Tensor& t, double lo, double hi);
  void fill_normal(Tensor& t, double mean, double sd);
  std::vector<int64_t> permutation(int64_t n);  // Fisher-Yates

 private:
  uint64_t s_[4];
  double cached_normal_ = 0.0;
  bool has_cached_normal_ = false;
};

}  // namespace nplab
