#include "nplab/spectral.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "nplab/attacks.hpp"
#include "nplab/common.hpp"

namespace nplab {
namespace {

constexpr double kTau = 6.28318530717958647692;  // 2 pi

// One-axis DFT twiddle table: w[k][j] = e^{-i tau k j / n}, stored as
// interleaved cos/sin rows.
struct Twiddles {
  int64_t n;
  std::vector<double> c, s;  // n*n each, row k = frequency k

  explicit Twiddles(int64_t n_) : n(n_), c((size_t)(n_ * n_)), s((size_t)(n_ * n_)) {
    for (int64_t k = 0; k < n; ++k)
      for (int64_t j = 0; j < n; ++j) {
        // Reduce k*j mod n before the trig call so large products do not
        // lose the angle to rounding.
        const double angle = kTau * (double)((k * j) % n) / (double)n;
        c[(size_t)(k * n + j)] = std::cos(angle);
        s[(size_t)(k * n + j)] = -std::sin(angle);
      }
  }
};

}  // namespace

void SpectralConfig::validate(int64_t h, int64_t w) const {
  check<ConfigError>(r0 >= 0 && r0 < r1 && r1 <= h && c0 >= 0 && c0 < c1 && c1 <= w,
                     "spectral slice [", r0, ":", r1, ")x[", c0, ":", c1,
                     ") does not fit a ", h, "x", w, " spectrum");
}

Tensor to_gray(const Tensor& image) {
  check<ConfigError>(image.rank() == 3, "to_gray expects channels x rows x cols, got ",
                     image.shape_str());
  const int64_t ch = image.dim(0), h = image.dim(1), w = image.dim(2);
  check<ConfigError>(ch == 1 || ch == 3, "to_gray supports 1 or 3 channels, got ", ch);
  if (ch == 1) return image.reshaped({h, w});
  Tensor out = Tensor::zeros({h, w});
  const int64_t plane = h * w;
  for (int64_t i = 0; i < plane; ++i)
    out[i] = (image[i] + image[plane + i] + image[2 * plane + i]) / 3.0;
  return out;
}

Tensor dft2_centered(const Tensor& image) {
  check<ConfigError>(image.rank() == 2, "dft2 expects a rows x cols image, got ",
                     image.shape_str());
  const int64_t h = image.dim(0), w = image.dim(1);
  check<ConfigError>(h >= 2 && w >= 2, "dft2 needs at least 2x2, got ", image.shape_str());

  // Row pass: G[y, v] = sum_x f[y, x] e^{-i tau v x / W}.
  const Twiddles tw(w);
  std::vector<double> gre((size_t)(h * w)), gim((size_t)(h * w));
  for (int64_t y = 0; y < h; ++y)
    for (int64_t v = 0; v < w; ++v) {
      double re = 0.0, im = 0.0;
      for (int64_t x = 0; x < w; ++x) {
        const double f = image[y * w + x];
        re += f * tw.c[(size_t)(v * w + x)];
        im += f * tw.s[(size_t)(v * w + x)];
      }
      gre[(size_t)(y * w + v)] = re;
      gim[(size_t)(y * w + v)] = im;
    }

  // Column pass: F[u, v] = sum_y G[y, v] e^{-i tau u y / H}, then magnitude
  // into the center-shifted bin.
  const Twiddles th(h);
  Tensor out = Tensor::zeros({h, w});
  for (int64_t u = 0; u < h; ++u)
    for (int64_t v = 0; v < w; ++v) {
      double re = 0.0, im = 0.0;
      for (int64_t y = 0; y < h; ++y) {
        const double cy = th.c[(size_t)(u * h + y)], sy = th.s[(size_t)(u * h + y)];
        const double are = gre[(size_t)(y * w + v)], aim = gim[(size_t)(y * w + v)];
        re += are * cy - aim * sy;
        im += are * sy + aim * cy;
      }
      const int64_t su = (u + h / 2) % h, sv = (v + w / 2) % w;
      out[su * w + sv] = std::hypot(re, im);
    }
  return out;
}

std::optional<double> hf_ratio(const Tensor& image, const SpectralConfig& cfg) {
  Tensor plane = image;
  if (image.rank() == 3) {
    check<ConfigError>(cfg.grayscale,
                       "hf_ratio on a multi-channel image needs grayscale conversion enabled");
    plane = to_gray(image);
  }
  check<ConfigError>(plane.rank() == 2, "hf_ratio expects an image, got ", image.shape_str());
  cfg.validate(plane.dim(0), plane.dim(1));

  const Tensor spectrum = dft2_centered(plane);
  const int64_t w = spectrum.dim(1);
  double total = 0.0;
  for (int64_t i = 0; i < spectrum.size(); ++i) total += spectrum[i];
  if (total == 0.0) return std::nullopt;  // no energy: ratio undefined
  double lf = 0.0;
  for (int64_t r = cfg.r0; r < cfg.r1; ++r)
    for (int64_t c = cfg.c0; c < cfg.c1; ++c) lf += spectrum[r * w + c];
  return (total - lf) / total;
}

std::vector<RatioPoint> hf_ratio_vs_accuracy(
    const std::vector<std::pair<const Model*, double>>& checkpoints, const Dataset& d,
    double epsilon, const SpectralConfig& cfg) {
  check<ConfigError>(!checkpoints.empty(), "ratio trend needs at least one checkpoint");
  check<ConfigError>(d.feature_shape().size() == 3,
                     "ratio trend needs channels x rows x cols features, got rank ",
                     (long long)d.feature_shape().size());
  std::vector<RatioPoint> series;
  series.reserve(checkpoints.size());
  for (const auto& [model, accuracy] : checkpoints) {
    const std::vector<ConjugateRecord> records = build_conjugate_dataset(*model, d, epsilon, 1);
    RatioPoint pt;
    pt.accuracy = accuracy;
    double sum = 0.0;
    for (const ConjugateRecord& r : records)
      if (const std::optional<double> ratio = hf_ratio(r.delta, cfg)) {
        sum += *ratio;
        ++pt.samples;
      }
    pt.mean_ratio = pt.samples > 0 ? sum / (double)pt.samples : 0.0;
    series.push_back(pt);
  }
  return series;
}

namespace {

// Average rank (1-based) with ties sharing the mean of their positions.
std::vector<double> midranks(const std::vector<double>& v) {
  const size_t n = v.size();
  std::vector<size_t> order(n);
  std::iota(order.begin(), order.end(), (size_t)0);
  std::sort(order.begin(), order.end(), [&](size_t a, size_t b) { return v[a] < v[b]; });
  std::vector<double> rank(n);
  size_t i = 0;
  while (i < n) {
    size_t j = i;
    while (j + 1 < n && v[order[j + 1]] == v[order[i]]) ++j;
    const double shared = 0.5 * ((double)i + (double)j) + 1.0;
    for (size_t k = i; k <= j; ++k) rank[order[k]] = shared;
    i = j + 1;
  }
  return rank;
}

}  // namespace

double spearman(const std::vector<double>& a, const std::vector<double>& b) {
  check<ConfigError>(a.size() == b.size(), "spearman needs equal-length series, got ",
                     (long long)a.size(), " and ", (long long)b.size());
  check<ConfigError>(a.size() >= 2, "spearman needs at least two points, got ",
                     (long long)a.size());
  const std::vector<double> ra = midranks(a), rb = midranks(b);
  const double n = (double)a.size();
  const double mean = (n + 1.0) / 2.0;  // ranks always average to this
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (size_t i = 0; i < a.size(); ++i) {
    const double da = ra[i] - mean, db = rb[i] - mean;
    sab += da * db;
    saa += da * da;
    sbb += db * db;
  }
  check<ConfigError>(saa > 0.0 && sbb > 0.0,
                     "spearman is undefined when a series is constant");
  return sab / std::sqrt(saa * sbb);
}

}  // namespace nplab
