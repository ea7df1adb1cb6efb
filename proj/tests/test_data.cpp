#include <cstdint>
#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "nplab/cifar10.hpp"
#include "nplab/common.hpp"
#include "nplab/dataset.hpp"
#include "nplab/digit_corpus.hpp"
#include "nplab/idx_format.hpp"
#include "nplab/rng.hpp"
#include "nplab/synthetic.hpp"

using namespace nplab;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir() {
  auto dir = fs::temp_directory_path() / "nplab_test_data";
  fs::create_directories(dir);
  return dir;
}

// Random dataset whose values sit exactly on the k/255 byte grid, so codec
// round-trips must be bit-identical.
Dataset byte_grid_dataset(int64_t n, int64_t c, int64_t hw, uint64_t seed) {
  Dataset d;
  d.inputs = Tensor({n, c, hw, hw});
  d.labels.resize(static_cast<size_t>(n));
  d.class_count = 10;
  RngStream rng(seed, 0);
  for (int64_t i = 0; i < d.inputs.size(); ++i)
    d.inputs[i] = static_cast<double>(rng.below(256)) / 255.0;
  for (auto& l : d.labels) l = static_cast<int>(rng.below(10));
  return d;
}

}  // namespace

TEST_CASE("idx: write-then-read round-trips bit-exactly") {
  auto dir = temp_dir();
  Dataset d = byte_grid_dataset(10, 1, 28, 7);
  write_mnist_idx(d, dir / "imgs.idx", dir / "labels.idx");
  CHECK(fs::file_size(dir / "imgs.idx") == 16 + 7840);  // header example from the format doc
  Dataset r = load_mnist_idx(dir / "imgs.idx", dir / "labels.idx");
  CHECK(r.size() == 10);
  CHECK(r.inputs.shape() == std::vector<int64_t>{10, 1, 28, 28});
  CHECK(r.inputs.values() == d.inputs.values());
  CHECK(r.labels == d.labels);
  CHECK(r.class_count == 10);
  r.validate();
}

TEST_CASE("idx: corrupt files are rejected with byte offsets") {
  auto dir = temp_dir();
  Dataset d = byte_grid_dataset(4, 1, 28, 8);
  write_mnist_idx(d, dir / "i2.idx", dir / "l2.idx");

  SUBCASE("labels file passed as images: wrong magic") {
    try {
      (void)load_mnist_idx(dir / "l2.idx", dir / "l2.idx");
      FAIL("expected DataError");
    } catch (const DataError& e) {
      std::string msg = e.what();
      CHECK(msg.find("wrong magic") != std::string::npos);
      CHECK(msg.find("byte offset 0") != std::string::npos);
    }
  }

  SUBCASE("truncated payload names the offset") {
    auto bytes = fs::file_size(dir / "i2.idx");
    fs::resize_file(dir / "i2.idx", bytes - 100);
    try {
      (void)load_mnist_idx(dir / "i2.idx", dir / "l2.idx");
      FAIL("expected DataError");
    } catch (const DataError& e) {
      CHECK(std::string(e.what()).find("truncated payload at byte offset 16") !=
            std::string::npos);
    }
  }

  SUBCASE("image/label count mismatch is rejected") {
    Dataset d3 = byte_grid_dataset(3, 1, 28, 9);
    write_mnist_idx(d3, dir / "i3.idx", dir / "l3.idx");
    CHECK_THROWS_AS((void)load_mnist_idx(dir / "i2.idx", dir / "l3.idx"), DataError);
  }

  SUBCASE("missing file") {
    CHECK_THROWS_AS((void)load_mnist_idx(dir / "nope.idx", dir / "l2.idx"), DataError);
  }
}

TEST_CASE("cifar10: fixtures round-trip; bad lengths rejected") {
  auto dir = temp_dir();
  Dataset d = byte_grid_dataset(2, 3, 32, 11);
  write_cifar10_bin(d, dir / "c.bin");
  CHECK(fs::file_size(dir / "c.bin") == 2 * 3073);
  Dataset r = load_cifar10_bin(dir / "c.bin");
  CHECK(r.size() == 2);
  CHECK(r.inputs.shape() == std::vector<int64_t>{2, 3, 32, 32});
  CHECK(r.inputs.values() == d.inputs.values());
  CHECK(r.labels == d.labels);

  SUBCASE("empty file gives an empty dataset") {
    std::ofstream(dir / "empty.bin", std::ios::binary).close();
    Dataset e = load_cifar10_bin(dir / "empty.bin");
    CHECK(e.size() == 0);
  }

  SUBCASE("length not a multiple of the record size") {
    std::ofstream out(dir / "bad.bin", std::ios::binary);
    std::vector<char> junk(3073 + 17, 0);
    out.write(junk.data(), static_cast<std::streamsize>(junk.size()));
    out.close();
    CHECK_THROWS_AS((void)load_cifar10_bin(dir / "bad.bin"), DataError);
  }
}

TEST_CASE("synthetic: blobs are balanced, deterministic, and bounded") {
  SyntheticSpec spec;
  spec.kind = SyntheticKind::gaussian_blobs;
  spec.dimension = 2;
  spec.per_class = 100;
  spec.noise = 0.2;
  spec.seed = 5;
  Dataset d = make_synthetic(spec);
  CHECK(d.size() == 200);
  auto counts = class_counts(d);
  CHECK(counts[0] == 100);
  CHECK(counts[1] == 100);
  d.validate();

  Dataset d2 = make_synthetic(spec);
  CHECK(d.inputs.values() == d2.inputs.values());

  SUBCASE("noise 0 collapses each class onto its center") {
    spec.noise = 0.0;
    spec.per_class = 5;
    Dataset z = make_synthetic(spec);
    for (int64_t i = 0; i < z.size(); ++i) {
      double expected = z.labels[static_cast<size_t>(i)] == 0 ? -1.0 : 1.0;
      CHECK(z.inputs[i * 2] == expected);
      CHECK(z.inputs[i * 2 + 1] == expected);
    }
  }

  SUBCASE("two-moons demands d = 2") {
    spec.kind = SyntheticKind::two_moons;
    spec.dimension = 3;
    CHECK_THROWS_AS((void)make_synthetic(spec), ConfigError);
    spec.dimension = 2;
    Dataset m = make_synthetic(spec);
    CHECK(m.size() == 200);
    m.validate();
  }
}

TEST_CASE("subset and split are deterministic and label-preserving") {
  SyntheticSpec spec;
  spec.per_class = 200;
  spec.noise = 0.1;
  spec.seed = 3;
  Dataset d = make_synthetic(spec);

  SUBCASE("subset of everything is a permutation") {
    Dataset p = subset(d, d.size(), 77);
    auto counts = class_counts(p);
    CHECK(counts[0] == 200);
    CHECK(counts[1] == 200);
    double sum_orig = 0.0, sum_perm = 0.0;
    for (int64_t i = 0; i < d.inputs.size(); ++i) sum_orig += d.inputs[i];
    for (int64_t i = 0; i < p.inputs.size(); ++i) sum_perm += p.inputs[i];
    CHECK(sum_orig == doctest::Approx(sum_perm).epsilon(1e-12));
    CHECK(p.inputs.values() != d.inputs.values());  // seed 77 actually shuffles
  }

  SUBCASE("same seed twice gives identical subsets") {
    Dataset a = subset(d, 50, 123);
    Dataset b = subset(d, 50, 123);
    CHECK(a.inputs.values() == b.inputs.values());
    CHECK(a.labels == b.labels);
    Dataset c = subset(d, 50, 124);
    CHECK(a.inputs.values() != c.inputs.values());
  }

  SUBCASE("oversized subset is rejected") {
    CHECK_THROWS_AS((void)subset(d, d.size() + 1, 0), ConfigError);
  }

  SUBCASE("a 50% split of a balanced set stays balanced within 5 points") {
    auto [left, right] = split(d, 0.5, 9);
    CHECK(left.size() == 200);
    CHECK(right.size() == 200);
    auto lc = class_counts(left);
    // 5 percentage points of 200 samples = 10 samples off a perfect 100/100
    CHECK(std::abs(lc[0] - 100) <= 10);
    CHECK(std::abs(lc[1] - 100) <= 10);
  }
}

TEST_CASE("digit corpus: deterministic, balanced, in range") {
  DigitCorpusSpec spec;
  spec.count = 60;
  spec.seed = 21;
  Dataset d = make_digit_corpus(spec);
  CHECK(d.size() == 60);
  CHECK(d.inputs.shape() == std::vector<int64_t>{60, 1, 28, 28});
  d.validate();
  auto counts = class_counts(d);
  for (auto c : counts) CHECK(c == 6);

  Dataset d2 = make_digit_corpus(spec);
  CHECK(d.inputs.values() == d2.inputs.values());
  CHECK(d.labels == d2.labels);

  // Glyphs actually draw something: mean intensity well above the noise floor.
  double mean = 0.0;
  for (int64_t i = 0; i < d.inputs.size(); ++i) mean += d.inputs[i];
  mean /= static_cast<double>(d.inputs.size());
  CHECK(mean > 0.05);
  CHECK(mean < 0.5);

  SUBCASE("striped variant differs and stays in range") {
    DigitCorpusSpec st = spec;
    st.striped = true;
    Dataset s = make_digit_corpus(st);
    s.validate();
    CHECK(s.inputs.values() != d.inputs.values());
    CHECK(s.labels == d.labels);  // same label cycle and shuffle
  }
}
