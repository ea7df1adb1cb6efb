#include "nplab/rng.hpp"

#include <cmath>
#include <numbers>

#include "nplab/common.hpp"

namespace nplab {
namespace {

uint64_t splitmix64(uint64_t& x) {
  x += 0x9E3779B97F4A7C15ULL;
  uint64_t z = x;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

uint64_t rotl(uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }

}  // namespace

RngStream::RngStream(uint64_t seed, uint64_t stream) {
  // Mix the stream id with a large odd constant so (seed, 0), (seed, 1), ...
  // land in unrelated splitmix sequences.
  uint64_t x = seed ^ (0xA3EC4E1DB9E34B57ULL * (stream + 1));
  for (auto& word : s_) word = splitmix64(x);
}

uint64_t RngStream::next_u64() {
  uint64_t result = rotl(s_[0] + s_[3], 23) + s_[0];
  uint64_t t = s_[1] << 17;
  s_[2] ^= s_[0];
  s_[3] ^= s_[1];
  s_[1] ^= s_[2];
  s_[0] ^= s_[3];
  s_[2] ^= t;
  s_[3] = rotl(s_[3], 45);
  return result;
}

double RngStream::uniform() {
  return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double RngStream::uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

double RngStream::normal() {
  if (has_cached_normal_) {
    has_cached_normal_ = false;
    return cached_normal_;
  }
  double u1 = 1.0 - uniform();  // (0, 1], keeps the log finite
  double u2 = uniform();
  double r = std::sqrt(-2.0 * std::log(u1));
  double a = 2.0 * std::numbers::pi * u2;
  cached_normal_ = r * std::sin(a);
  has_cached_normal_ = true;
  return r * std::cos(a);
}

double RngStream::normal(double mean, double sd) { return mean + sd * normal(); }

int64_t RngStream::below(int64_t n) {
  check(n > 0, "RngStream::below needs n > 0, got ", n);
  return static_cast<int64_t>((static_cast<__uint128_t>(next_u64()) * static_cast<uint64_t>(n)) >> 64);
}

void RngStream::fill_uniform(Tensor& t, double lo, double hi) {
  for (double& v : t.values()) v = uniform(lo, hi);
}

void RngStream::fill_normal(Tensor& t, double mean, double sd) {
  for (double& v : t.values()) v = normal(mean, sd);
}

std::vector<int64_t> RngStream::permutation(int64_t n) {
  std::vector<int64_t> p(static_cast<size_t>(n));
  for (int64_t i = 0; i < n; ++i) p[static_cast<size_t>(i)] = i;
  for (int64_t i = n - 1; i > 0; --i) {
    int64_t j = below(i + 1);
    std::swap(p[static_cast<size_t>(i)], p[static_cast<size_t>(j)]);
  }
  return p;
}

}  // namespace nplab
