#include <fstream>
#include <iterator>

#include "sapm/bytes.hpp"
#include "sapm/model.hpp"

namespace sapm {

namespace {

constexpr std::string_view kMagic = "SAPMCKPT";
constexpr std::uint8_t kVersion = 1;

}  // namespace

std::vector<std::uint8_t> read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file(const std::string& path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("cannot write " + path);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw FormatError("write failed: " + path);
}

std::vector<std::uint8_t> serialize_checkpoint(const Model& model) {
  ByteWriter w;
  w.raw(kMagic);
  w.u8(kVersion);
  const std::string config = model.config.to_kv().str();
  w.u32(static_cast<std::uint32_t>(config.size()));
  w.raw(config);
  const NamedTensors state = model.named_state();
  w.u32(static_cast<std::uint32_t>(state.size()));
  for (const auto& [name, t] : state) {
    w.u16(static_cast<std::uint16_t>(name.size()));
    w.raw(name);
    const Shape& s = t.shape();
    w.u8(static_cast<std::uint8_t>(s.rank()));
    for (std::size_t i = 0; i < s.rank(); ++i) w.u32(static_cast<std::uint32_t>(s[i]));
    for (double v : t.data()) w.f32(static_cast<float>(v));
  }
  return std::move(w.bytes());
}

Model deserialize_checkpoint(const std::vector<std::uint8_t>& bytes) {
  ByteReader r(bytes, "checkpoint");
  if (r.str(kMagic.size()) != kMagic) throw FormatError("not a checkpoint (bad magic)");
  if (r.u8() != kVersion) throw FormatError("unsupported checkpoint version");
  const std::string config = r.str(r.u32());
  Model model = Model::init(ModelConfig::from_kv(KeyValues::parse(config)));
  NamedTensors state = model.named_state();
  const std::uint32_t records = r.u32();
  if (records != state.size())
    throw FormatError("checkpoint has " + std::to_string(records) + " tensors, model expects " +
                      std::to_string(state.size()));
  for (auto& [name, t] : state) {
    const std::string stored = r.str(r.u16());
    if (stored != name) throw FormatError("checkpoint tensor '" + stored + "', expected '" + name + "'");
    const std::size_t rank = r.u8();
    const Shape& s = t.shape();
    if (rank != s.rank()) throw FormatError("checkpoint rank mismatch for " + name);
    for (std::size_t i = 0; i < rank; ++i)
      if (r.u32() != s[i]) throw FormatError("checkpoint shape mismatch for " + name);
    for (double& v : t.data()) v = r.f32();
  }
  if (r.remaining() != 0) throw FormatError("checkpoint has trailing bytes");
  return model;
}

void save_checkpoint(const Model& model, const std::string& path) {
  write_file(path, serialize_checkpoint(model));
}

Model load_checkpoint(const std::string& path) { return deserialize_checkpoint(read_file(path)); }

}  // namespace sapm
