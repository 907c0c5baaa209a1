#include "food/checkpoint.hpp"

#include <algorithm>
#include <cstring>

#include "food/binio.hpp"

namespace food::ckpt {

void Checkpoint::put_entry(Entry e) {
  require(!e.name.empty() && e.name.size() <= 0xFFFF, ErrorKind::kInvalidArgument, "bad checkpoint tensor name");
  require(e.value.rank() <= 255, ErrorKind::kShape, "tensor rank too large for checkpoint: " + e.name);
  for (auto& x : entries_)
    if (x.name == e.name) {
      x = std::move(e);
      return;
    }
  entries_.push_back(std::move(e));
}

void Checkpoint::put(const std::string& name, const Tensor& t) { put_entry({name, DType::kF32, t.cast<double>()}); }
void Checkpoint::put(const std::string& name, const Tensor64& t) { put_entry({name, DType::kF64, t}); }
void Checkpoint::put(const std::string& name, std::span<const double> v) {
  put_entry({name, DType::kF64, Tensor64(Shape{v.size()}, std::vector<double>(v.begin(), v.end()))});
}

bool Checkpoint::has(const std::string& name) const {
  return std::any_of(entries_.begin(), entries_.end(), [&](const Entry& e) { return e.name == name; });
}

const Entry& Checkpoint::at(const std::string& name) const {
  for (const auto& e : entries_)
    if (e.name == name) return e;
  fail(ErrorKind::kMismatch, "checkpoint has no tensor named '" + name + "'");
}

Tensor Checkpoint::get_f32(const std::string& name) const { return at(name).value.cast<float>(); }

std::vector<double> Checkpoint::get_vec(const std::string& name) const { return at(name).value.vec(); }

void Checkpoint::erase_prefix(const std::string& prefix) {
  std::erase_if(entries_, [&](const Entry& e) { return e.name.starts_with(prefix); });
}

std::vector<std::uint8_t> Checkpoint::serialize() const {
  binio::Writer w;
  w.bytes(kMagic, sizeof kMagic);
  w.u32(kVersion);
  w.u32(static_cast<std::uint32_t>(entries_.size()));
  for (const auto& e : entries_) {
    w.u16(static_cast<std::uint16_t>(e.name.size()));
    w.str(e.name);
    w.u8(static_cast<std::uint8_t>(e.dtype));
    w.u8(static_cast<std::uint8_t>(e.value.rank()));
    for (std::size_t d : e.value.shape()) w.u32(static_cast<std::uint32_t>(d));
    if (e.dtype == DType::kF32)
      for (double v : e.value.data()) w.f32(static_cast<float>(v));
    else
      for (double v : e.value.data()) w.f64(v);
  }
  const std::string m = meta.dump();
  w.u32(static_cast<std::uint32_t>(m.size()));
  w.str(m);
  return w.buffer();
}

Checkpoint Checkpoint::deserialize(std::vector<std::uint8_t> bytes, const std::string& source) {
  binio::Reader r(std::move(bytes), source);
  const std::string magic = r.str(8, "magic");
  if (std::memcmp(magic.data(), kMagic, 8) != 0) fail(ErrorKind::kFormat, source + ": bad magic");
  const std::uint32_t version = r.u32("version");
  if (version != kVersion)
    fail(ErrorKind::kFormat, source + ": version mismatch (file " + std::to_string(version) + ", expected " +
                                 std::to_string(kVersion) + ")");
  const std::uint32_t count = r.u32("tensor count");
  Checkpoint ck;
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::string idx = "tensor #" + std::to_string(i);
    const std::uint16_t len = r.u16(idx + " name length");
    Entry e;
    e.name = r.str(len, idx + " name");
    const std::string what = "tensor '" + e.name + "'";
    const std::uint8_t code = r.u8(what + " dtype");
    if (code > 1) fail(ErrorKind::kFormat, source + ": unknown dtype code " + std::to_string(code) + " for " + what);
    e.dtype = static_cast<DType>(code);
    const std::uint8_t rank = r.u8(what + " rank");
    Shape shape(rank);
    for (auto& d : shape) d = r.u32(what + " dims");
    const std::size_t n = shape_size(shape);
    const std::size_t width = e.dtype == DType::kF32 ? 4 : 8;
    r.need(n * width, what + " payload");
    std::vector<double> vals(n);
    for (auto& v : vals) v = e.dtype == DType::kF32 ? static_cast<double>(r.f32(what)) : r.f64(what);
    e.value = Tensor64(shape, std::move(vals));
    ck.entries_.push_back(std::move(e));
  }
  const std::uint32_t mlen = r.u32("metadata length");
  const std::string m = r.str(mlen, "metadata");
  try {
    ck.meta = nlohmann::json::parse(m);
  } catch (const nlohmann::json::exception& ex) {
    fail(ErrorKind::kFormat, source + ": metadata is not valid JSON (" + ex.what() + ")");
  }
  if (r.remaining() != 0) fail(ErrorKind::kFormat, source + ": trailing bytes after metadata");
  return ck;
}

void Checkpoint::save(const std::filesystem::path& path) const {
  binio::Writer w;
  const auto bytes = serialize();
  w.bytes(bytes.data(), bytes.size());
  w.save(path);
}

Checkpoint Checkpoint::load(const std::filesystem::path& path) {
  return deserialize(binio::read_file(path, ErrorKind::kMissingArtifact), path.string());
}

void put_network(Checkpoint& ck, nn::Network<float>& net) {
  ck.meta["architecture"] = net.architecture();
  for (const auto& p : net.named_state()) ck.put(p.name, *p.value);
}

nn::Network<float> get_network(const Checkpoint& ck) {
  require(ck.meta.contains("architecture"), ErrorKind::kFormat, "checkpoint metadata has no architecture");
  nn::Network<float> net = nn::Network<float>::from_architecture(ck.meta.at("architecture"));
  for (auto& p : net.named_state()) {
    const Entry& e = ck.at(p.name);
    require(e.value.shape() == p.value->shape(), ErrorKind::kMismatch,
            "checkpoint tensor '" + p.name + "' has shape " + shape_str(e.value.shape()) + ", network expects " +
                shape_str(p.value->shape()));
    *p.value = e.value.cast<float>();
  }
  return net;
}

void save_checkpoint(nn::Network<float>& net, const std::filesystem::path& path, const nlohmann::json& meta) {
  Checkpoint ck;
  ck.meta = meta.is_object() ? meta : nlohmann::json::object();
  put_network(ck, net);
  ck.save(path);
}

nn::Network<float> load_checkpoint(const std::filesystem::path& path) { return get_network(Checkpoint::load(path)); }

}  // namespace food::ckpt
