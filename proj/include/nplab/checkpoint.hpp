#pragma once

#include <filesystem>
#include <string>

#include "nplab/model.hpp"

namespace nplab {

// Versioned binary weights file.  Layout:
//   magic "NPCK" | u32 version | u32 spec_len | spec JSON bytes |
//   u32 tensor_count | per tensor: u32 name_len, name, u32 rank,
//   u64 dims..., f64 payload...
// All integers and floats little-endian; payloads are raw IEEE-754 bits, so a
// save/load round trip is bit-exact.
void save_checkpoint(const Model& m, const std::filesystem::path& path);
Model load_checkpoint(const std::filesystem::path& path);

// Spec <-> JSON (used by the checkpoint header and experiment configs).
std::string model_spec_to_json(const ModelSpec& spec);
ModelSpec model_spec_from_json(const std::string& text);

}  // namespace nplab
