#include "nplab/digit_corpus.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>

#include "nplab/common.hpp"
#include "nplab/rng.hpp"

namespace nplab {
namespace {

constexpr int kSize = 28;
constexpr double kBrushSigma = 0.028;

struct Pt {
  double x, y;
};
struct Seg {
  Pt a, b;
};

// Seven-segment layout in the unit square (x right, y down).
constexpr Pt kTopL{0.25, 0.15}, kTopR{0.75, 0.15};
constexpr Pt kMidL{0.25, 0.50}, kMidR{0.75, 0.50};
constexpr Pt kBotL{0.25, 0.85}, kBotR{0.75, 0.85};

enum SegId { TOP, MID, BOT, TL, TR, BL, BR };
constexpr Seg kSegs[7] = {
    {kTopL, kTopR}, {kMidL, kMidR}, {kBotL, kBotR},
    {kTopL, kMidL}, {kTopR, kMidR}, {kMidL, kBotL}, {kMidR, kBotR},
};

const std::array<std::vector<int>, 10> kDigitSegs = {{
    {TOP, TL, TR, BL, BR, BOT},       // 0
    {TR, BR},                         // 1
    {TOP, TR, MID, BL, BOT},          // 2
    {TOP, TR, MID, BR, BOT},          // 3
    {TL, MID, TR, BR},                // 4
    {TOP, TL, MID, BR, BOT},          // 5
    {TOP, TL, MID, BL, BR, BOT},      // 6
    {TOP, TR, BR},                    // 7
    {TOP, TL, TR, MID, BL, BR, BOT},  // 8
    {TOP, TL, TR, MID, BR, BOT},      // 9
}};

// In the striped corpus each glyph shape is shared by one even and one odd
// class; only the grating orientation separates them.
constexpr int kShapeOf[10] = {0, 0, 2, 2, 4, 4, 7, 7, 8, 8};

void render(int glyph, bool striped, int label, const DigitCorpusSpec& spec, RngStream& rng,
            double* img) {
  double theta = rng.uniform(-0.15, 0.15);
  double scale = rng.uniform(0.85, 1.1);
  double tx = rng.uniform(-0.08, 0.08);
  double ty = rng.uniform(-0.08, 0.08);
  double c = std::cos(theta), s = std::sin(theta);
  auto transform = [&](Pt p) -> Pt {
    double x = p.x - 0.5, y = p.y - 0.5;
    return {scale * (c * x - s * y) + 0.5 + tx, scale * (s * x + c * y) + 0.5 + ty};
  };

  std::vector<Seg> segs;
  for (int id : kDigitSegs[static_cast<size_t>(glyph)])
    segs.push_back({transform(kSegs[id].a), transform(kSegs[id].b)});

  double phase = striped ? rng.uniform(0.0, 2.0 * std::numbers::pi) : 0.0;

  for (int row = 0; row < kSize; ++row) {
    double py = (row + 0.5) / kSize;
    for (int col = 0; col < kSize; ++col) {
      double px = (col + 0.5) / kSize;
      double v = 0.0;
      for (const Seg& sg : segs) {
        double dx = sg.b.x - sg.a.x, dy = sg.b.y - sg.a.y;
        double len2 = dx * dx + dy * dy;
        double t = ((px - sg.a.x) * dx + (py - sg.a.y) * dy) / len2;
        t = std::clamp(t, 0.0, 1.0);
        double ex = px - (sg.a.x + t * dx), ey = py - (sg.a.y + t * dy);
        double d2 = ex * ex + ey * ey;
        v = std::max(v, std::exp(-d2 / (2.0 * kBrushSigma * kBrushSigma)));
      }
      if (striped) {
        double coord = label % 2 == 0 ? static_cast<double>(row) : static_cast<double>(col);
        v += spec.stripe_amplitude *
             std::sin(2.0 * std::numbers::pi * spec.stripe_frequency * coord / kSize + phase);
      }
      img[row * kSize + col] = v;
    }
  }
  for (int i = 0; i < kSize * kSize; ++i) {
    img[i] += rng.normal(0.0, spec.noise);
    img[i] = std::clamp(img[i], 0.0, 1.0);
  }
}

}  // namespace

Dataset make_digit_corpus(const DigitCorpusSpec& spec) {
  check<ConfigError>(spec.count > 0, "digit corpus: count must be positive, got ", spec.count);
  check<ConfigError>(spec.noise >= 0.0 && spec.stripe_amplitude >= 0.0,
                     "digit corpus: noise and stripe amplitude must be non-negative");
  Dataset d;
  d.inputs = Tensor({spec.count, 1, kSize, kSize});
  d.labels.resize(static_cast<size_t>(spec.count));
  d.class_count = 10;
  d.value_lo = 0.0;
  d.value_hi = 1.0;

  // Labels cycle through the classes before shuffling, so every prefix of
  // the shuffled corpus stays near-balanced.
  auto perm = RngStream(spec.seed, 1).permutation(spec.count);
  for (int64_t i = 0; i < spec.count; ++i) {
    int label = static_cast<int>(i % 10);
    int glyph = spec.striped ? kShapeOf[label] : label;
    RngStream rng(spec.seed, 1000 + static_cast<uint64_t>(i));
    int64_t slot = perm[static_cast<size_t>(i)];
    render(glyph, spec.striped, label, spec, rng, d.inputs.data() + slot * kSize * kSize);
    d.labels[static_cast<size_t>(slot)] = label;
  }
  return d;
}

}  // namespace nplab
