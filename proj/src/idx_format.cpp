#include "nplab/idx_format.hpp"

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <vector>

#include "nplab/common.hpp"

namespace nplab {
namespace {

constexpr uint32_t kImagesMagic = 0x00000803;
constexpr uint32_t kLabelsMagic = 0x00000801;

std::string hex_u32(uint32_t v) {
  char buf[9];
  std::snprintf(buf, sizeof buf, "%08x", v);
  return std::string(buf);
}

struct ByteReader {
  std::filesystem::path path;
  std::vector<unsigned char> bytes;
  size_t pos = 0;

  explicit ByteReader(const std::filesystem::path& p) : path(p) {
    std::ifstream in(p, std::ios::binary);
    check<DataError>(in.good(), "cannot open ", p.string());
    bytes.assign(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
  }

  uint32_t read_u32_be() {
    check<DataError>(pos + 4 <= bytes.size(), path.string(), ": truncated header at byte offset ",
                     pos, " (need 4 bytes, have ", bytes.size() - pos, ")");
    uint32_t v = (static_cast<uint32_t>(bytes[pos]) << 24) |
                 (static_cast<uint32_t>(bytes[pos + 1]) << 16) |
                 (static_cast<uint32_t>(bytes[pos + 2]) << 8) |
                 static_cast<uint32_t>(bytes[pos + 3]);
    pos += 4;
    return v;
  }

  const unsigned char* payload(size_t n) {
    check<DataError>(pos + n <= bytes.size(), path.string(), ": truncated payload at byte offset ",
                     pos, " (need ", n, " bytes, have ", bytes.size() - pos, ")");
    const unsigned char* p = bytes.data() + pos;
    pos += n;
    return p;
  }

  void expect_consumed() {
    check<DataError>(pos == bytes.size(), path.string(), ": ", bytes.size() - pos,
                     " unexpected trailing bytes at byte offset ", pos);
  }
};

void write_u32_be(std::ofstream& out, uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v >> 24), static_cast<unsigned char>(v >> 16),
                        static_cast<unsigned char>(v >> 8), static_cast<unsigned char>(v)};
  out.write(reinterpret_cast<const char*>(b), 4);
}

}  // namespace

Dataset load_mnist_idx(const std::filesystem::path& images_path,
                       const std::filesystem::path& labels_path) {
  ByteReader img(images_path);
  uint32_t magic = img.read_u32_be();
  check<DataError>(magic == kImagesMagic, images_path.string(), ": wrong magic 0x",
                   hex_u32(magic), " at byte offset 0 (expected 0x00000803)");
  uint32_t n = img.read_u32_be();
  uint32_t h = img.read_u32_be();
  uint32_t w = img.read_u32_be();
  check<DataError>(h > 0 && w > 0, images_path.string(), ": zero image dims ", h, "x", w,
                   " at byte offset 8");
  const unsigned char* pixels = img.payload(static_cast<size_t>(n) * h * w);
  img.expect_consumed();

  ByteReader lab(labels_path);
  uint32_t lmagic = lab.read_u32_be();
  check<DataError>(lmagic == kLabelsMagic, labels_path.string(), ": wrong magic 0x",
                   hex_u32(lmagic), " at byte offset 0 (expected 0x00000801)");
  uint32_t ln = lab.read_u32_be();
  check<DataError>(ln == n, labels_path.string(), ": label count ", ln,
                   " (byte offset 4) does not match image count ", n);
  const unsigned char* labels = lab.payload(ln);
  lab.expect_consumed();

  Dataset d;
  d.inputs = Tensor({static_cast<int64_t>(n), 1, static_cast<int64_t>(h), static_cast<int64_t>(w)});
  for (int64_t i = 0; i < d.inputs.size(); ++i)
    d.inputs[i] = static_cast<double>(pixels[static_cast<size_t>(i)]) / 255.0;
  d.labels.resize(n);
  d.class_count = 10;
  d.value_lo = 0.0;
  d.value_hi = 1.0;
  for (uint32_t i = 0; i < n; ++i) {
    int label = labels[i];
    check<DataError>(label < 10, labels_path.string(), ": label ", label, " at byte offset ",
                     8 + i, " outside [0, 10)");
    d.labels[i] = label;
  }
  return d;
}

void write_mnist_idx(const Dataset& d, const std::filesystem::path& images_path,
                     const std::filesystem::path& labels_path) {
  check<DataError>(d.inputs.rank() == 4 && d.inputs.dim(1) == 1,
                   "IDX writer expects (N, 1, H, W) inputs, got ", d.inputs.shape_str());
  check<DataError>(static_cast<int64_t>(d.labels.size()) == d.size(), "IDX writer: ", d.size(),
                   " images but ", d.labels.size(), " labels");
  std::ofstream img(images_path, std::ios::binary);
  check<DataError>(img.good(), "cannot open ", images_path.string(), " for writing");
  write_u32_be(img, kImagesMagic);
  write_u32_be(img, static_cast<uint32_t>(d.size()));
  write_u32_be(img, static_cast<uint32_t>(d.inputs.dim(2)));
  write_u32_be(img, static_cast<uint32_t>(d.inputs.dim(3)));
  for (int64_t i = 0; i < d.inputs.size(); ++i) {
    double v = d.inputs[i];
    check<DataError>(v >= 0.0 && v <= 1.0, "IDX writer: value ", v, " outside [0, 1]");
    auto byte = static_cast<unsigned char>(std::lround(v * 255.0));
    img.write(reinterpret_cast<const char*>(&byte), 1);
  }
  check<DataError>(img.good(), "failed writing ", images_path.string());

  std::ofstream lab(labels_path, std::ios::binary);
  check<DataError>(lab.good(), "cannot open ", labels_path.string(), " for writing");
  write_u32_be(lab, kLabelsMagic);
  write_u32_be(lab, static_cast<uint32_t>(d.size()));
  for (int label : d.labels) {
    auto byte = static_cast<unsigned char>(label);
    lab.write(reinterpret_cast<const char*>(&byte), 1);
  }
  check<DataError>(lab.good(), "failed writing ", labels_path.string());
}

}  // namespace nplab
