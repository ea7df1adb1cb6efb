#include "nplab/cifar10.hpp"

#include <cmath>
#include <fstream>
#include <vector>

#include "nplab/common.hpp"

namespace nplab {

namespace {
constexpr int64_t kRecordBytes = 3073;  // 1 label + 3 * 32 * 32 pixels
constexpr int64_t kPixels = 3072;
}  // namespace

Dataset load_cifar10_bin(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  check<DataError>(in.good(), "cannot open ", path.string());
  std::vector<unsigned char> bytes(std::istreambuf_iterator<char>(in),
                                   std::istreambuf_iterator<char>{});
  check<DataError>(bytes.size() % kRecordBytes == 0, path.string(), ": file length ",
                   bytes.size(), " is not a multiple of ", kRecordBytes);
  int64_t n = static_cast<int64_t>(bytes.size()) / kRecordBytes;

  Dataset d;
  d.inputs = Tensor({n, 3, 32, 32});
  d.labels.resize(static_cast<size_t>(n));
  d.class_count = 10;
  d.value_lo = 0.0;
  d.value_hi = 1.0;
  for (int64_t r = 0; r < n; ++r) {
    const unsigned char* rec = bytes.data() + r * kRecordBytes;
    int label = rec[0];
    check<DataError>(label < 10, path.string(), ": label ", label, " at byte offset ",
                     r * kRecordBytes, " outside [0, 10)");
    d.labels[static_cast<size_t>(r)] = label;
    double* dst = d.inputs.data() + r * kPixels;
    for (int64_t i = 0; i < kPixels; ++i) dst[i] = static_cast<double>(rec[1 + i]) / 255.0;
  }
  return d;
}

void write_cifar10_bin(const Dataset& d, const std::filesystem::path& path) {
  check<DataError>(d.inputs.rank() == 4 && d.inputs.dim(1) == 3 && d.inputs.dim(2) == 32 &&
                       d.inputs.dim(3) == 32,
                   "CIFAR writer expects (N, 3, 32, 32) inputs, got ", d.inputs.shape_str());
  std::ofstream out(path, std::ios::binary);
  check<DataError>(out.good(), "cannot open ", path.string(), " for writing");
  for (int64_t r = 0; r < d.size(); ++r) {
    auto label = static_cast<unsigned char>(d.labels[static_cast<size_t>(r)]);
    out.write(reinterpret_cast<const char*>(&label), 1);
    const double* src = d.inputs.data() + r * kPixels;
    for (int64_t i = 0; i < kPixels; ++i) {
      double v = src[i];
      check<DataError>(v >= 0.0 && v <= 1.0, "CIFAR writer: value ", v, " outside [0, 1]");
      auto byte = static_cast<unsigned char>(std::lround(v * 255.0));
      out.write(reinterpret_cast<const char*>(&byte), 1);
    }
  }
  check<DataError>(out.good(), "failed writing ", path.string());
}

}  // namespace nplab
