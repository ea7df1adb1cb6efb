#include "nplab/hash.hpp"

#include <cstdio>
#include <fstream>
#include <vector>

#include "nplab/common.hpp"

namespace nplab {

uint64_t fnv1a64(const void* data, size_t n, uint64_t h) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 0x100000001B3ULL;
  }
  return h;
}

uint64_t fnv1a64(const std::string& s) { return fnv1a64(s.data(), s.size()); }

uint64_t fnv1a64_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  check<DataError>(in.good(), "cannot open file for hashing: ", p.string());
  uint64_t h = 0xCBF29CE484222325ULL;
  std::vector<char> buf(1 << 16);
  while (in) {
    in.read(buf.data(), static_cast<std::streamsize>(buf.size()));
    h = fnv1a64(buf.data(), static_cast<size_t>(in.gcount()), h);
  }
  return h;
}

std::string hash_hex(uint64_t h) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return std::string(buf);
}

}  // namespace nplab
