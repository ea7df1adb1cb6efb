#include "nplab/checkpoint.hpp"

#include <cstdint>
#include <cstring>
#include <fstream>

#include <json.hpp>

#include "nplab/common.hpp"

namespace nplab {
namespace {

using json = nlohmann::ordered_json;

constexpr char kMagic[4] = {'N', 'P', 'C', 'K'};
constexpr uint32_t kVersion = 1;

// Little-endian primitives.  Written byte-by-byte so the file format does not
// depend on host endianness.
void put_u32(std::string& out, uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back((char)((v >> (8 * i)) & 0xff));
}
void put_u64(std::string& out, uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back((char)((v >> (8 * i)) & 0xff));
}

struct Cursor {
  const std::string& bytes;
  size_t pos = 0;
  std::string where;

  void need(size_t n, const char* what) {
    check<DataError>(pos + n <= bytes.size(), where, ": truncated ", what, " at byte offset ",
                     (long long)pos);
  }
  uint32_t u32(const char* what) {
    need(4, what);
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= (uint32_t)(uint8_t)bytes[pos + (size_t)i] << (8 * i);
    pos += 4;
    return v;
  }
  uint64_t u64(const char* what) {
    need(8, what);
    uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= (uint64_t)(uint8_t)bytes[pos + (size_t)i] << (8 * i);
    pos += 8;
    return v;
  }
  std::string str(size_t n, const char* what) {
    need(n, what);
    std::string s = bytes.substr(pos, n);
    pos += n;
    return s;
  }
};

json spec_json(const ModelSpec& spec) {
  json j;
  j["kind"] = model_kind(spec);
  if (const auto* s = std::get_if<MlpSpec>(&spec)) {
    j["widths"] = s->widths;
    j["activation"] = s->activation == Activation::relu ? "relu" : "tanh";
  } else if (const auto* s = std::get_if<ConvNetSpec>(&spec)) {
    j["in_channels"] = s->in_channels;
    j["hw"] = s->hw;
    j["c1"] = s->c1;
    j["c2"] = s->c2;
    j["classes"] = s->classes;
  } else {
    const auto& u = std::get<UnetSpec>(spec);
    j["in_channels"] = u.in_channels;
    j["hw"] = u.hw;
    j["base_channels"] = u.base_channels;
    j["depth"] = u.depth;
  }
  return j;
}

ModelSpec spec_from(const json& j) {
  check<DataError>(j.is_object() && j.contains("kind"), "model spec JSON needs a kind field");
  const std::string kind = j.at("kind").get<std::string>();
  if (kind == "mlp") {
    MlpSpec s;
    s.widths = j.at("widths").get<std::vector<int64_t>>();
    const std::string act = j.at("activation").get<std::string>();
    check<DataError>(act == "relu" || act == "tanh", "unknown mlp activation ", act);
    s.activation = act == "relu" ? Activation::relu : Activation::tanh;
    return s;
  }
  if (kind == "convnet") {
    ConvNetSpec s;
    s.in_channels = j.at("in_channels").get<int64_t>();
    s.hw = j.at("hw").get<int64_t>();
    s.c1 = j.at("c1").get<int64_t>();
    s.c2 = j.at("c2").get<int64_t>();
    s.classes = j.at("classes").get<int64_t>();
    return s;
  }
  if (kind == "unet-generator") {
    UnetSpec s;
    s.in_channels = j.at("in_channels").get<int64_t>();
    s.hw = j.at("hw").get<int64_t>();
    s.base_channels = j.at("base_channels").get<int64_t>();
    s.depth = j.at("depth").get<int>();
    return s;
  }
  throw DataError(format_msg("unknown model kind ", kind));
}

}  // namespace

std::string model_spec_to_json(const ModelSpec& spec) { return spec_json(spec).dump(); }

ModelSpec model_spec_from_json(const std::string& text) {
  json j = json::parse(text, nullptr, false);
  check<DataError>(!j.is_discarded(), "model spec is not valid JSON");
  return spec_from(j);
}

void save_checkpoint(const Model& m, const std::filesystem::path& path) {
  std::string out;
  out.append(kMagic, 4);
  put_u32(out, kVersion);
  const std::string spec = model_spec_to_json(m.spec);
  put_u32(out, (uint32_t)spec.size());
  out += spec;
  put_u32(out, (uint32_t)m.params.size());
  for (const auto& [name, t] : m.params) {
    put_u32(out, (uint32_t)name.size());
    out += name;
    put_u32(out, (uint32_t)t.rank());
    for (int64_t d : t.shape()) put_u64(out, (uint64_t)d);
    for (double v : t.values()) {
      uint64_t bits;
      std::memcpy(&bits, &v, 8);
      put_u64(out, bits);
    }
  }
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  check<DataError>(f.good(), "cannot open checkpoint for writing: ", path.string());
  f.write(out.data(), (std::streamsize)out.size());
  f.flush();
  check<DataError>(f.good(), "short write to checkpoint: ", path.string());
}

Model load_checkpoint(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  check<DataError>(f.good(), "cannot open checkpoint: ", path.string());
  std::string bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());

  Cursor c{bytes, 0, path.string()};
  const std::string magic = c.str(4, "magic");
  check<DataError>(std::memcmp(magic.data(), kMagic, 4) == 0, path.string(),
                   ": not a checkpoint file (bad magic)");
  const uint32_t version = c.u32("version");
  check<DataError>(version == kVersion, path.string(), ": unsupported checkpoint version ",
                   (long long)version);
  const uint32_t spec_len = c.u32("spec length");
  const std::string spec_text = c.str(spec_len, "spec JSON");

  Model loaded = build_model(model_spec_from_json(spec_text), 0);
  const uint32_t count = c.u32("tensor count");
  check<DataError>(count == loaded.params.size(), path.string(), ": checkpoint holds ",
                   (long long)count, " tensors but the spec builds ",
                   (long long)loaded.params.size());
  for (auto& [name, t] : loaded.params) {
    const uint32_t name_len = c.u32("tensor name length");
    const std::string got = c.str(name_len, "tensor name");
    check<DataError>(got == name, path.string(), ": expected tensor ", name, ", found ", got);
    const uint32_t rank = c.u32("tensor rank");
    check<DataError>((int)rank == t.rank(), path.string(), ": tensor ", name, " rank ",
                     (long long)rank, " does not match the spec");
    for (int d = 0; d < t.rank(); ++d) {
      const uint64_t dim = c.u64("tensor dim");
      check<DataError>((int64_t)dim == t.dim(d), path.string(), ": tensor ", name,
                       " shape mismatch on axis ", d);
    }
    for (double& v : t.values()) {
      const uint64_t bits = c.u64("tensor payload");
      std::memcpy(&v, &bits, 8);
    }
  }
  check<DataError>(c.pos == bytes.size(), path.string(), ": ",
                   (long long)(bytes.size() - c.pos), " trailing bytes after the last tensor");
  return loaded;
}

}  // namespace nplab
