#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

namespace nplab {

// FNV-1a 64-bit.  Used for provenance / stage-isolation checks in reports;
// detects accidental modification, not adversarial tampering.
uint64_t fnv1a64(const void* data, size_t n, uint64_t h = 0xCBF29CE484222325ULL);
uint64_t fnv1a64(const std::string& s);
uint64_t fnv1a64_file(const std::filesystem::path& p);
std::string hash_hex(uint64_t h);

}  // namespace nplab
