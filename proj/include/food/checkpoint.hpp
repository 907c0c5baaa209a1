#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "food/network.hpp"
#include "json.hpp"

namespace food::ckpt {

inline constexpr char kMagic[8] = {'F', 'O', 'O', 'D', 'C', 'K', 'P', 'T'};
inline constexpr std::uint32_t kVersion = 1;

enum class DType : std::uint8_t { kF32 = 0, kF64 = 1 };

struct Entry {
  std::string name;
  DType dtype = DType::kF32;
  Tensor64 value;  // f32 entries are widened losslessly
};

// Layout: "FOODCKPT", u32 version, u32 tensor count, then per tensor u16 name
// length, name, u8 dtype, u8 rank, u32 dims, payload; then u32 metadata
// length and the metadata JSON text. All little-endian.
class Checkpoint {
 public:
  nlohmann::json meta = nlohmann::json::object();

  void put(const std::string& name, const Tensor& t);
  void put(const std::string& name, const Tensor64& t);
  void put(const std::string& name, std::span<const double> v);  // f64 vector
  bool has(const std::string& name) const;
  const Entry& at(const std::string& name) const;
  Tensor get_f32(const std::string& name) const;
  std::vector<double> get_vec(const std::string& name) const;
  const std::vector<Entry>& entries() const { return entries_; }
  // Drops every entry whose name starts with `prefix`.
  void erase_prefix(const std::string& prefix);

  std::vector<std::uint8_t> serialize() const;
  static Checkpoint deserialize(std::vector<std::uint8_t> bytes, const std::string& source);
  void save(const std::filesystem::path& path) const;
  static Checkpoint load(const std::filesystem::path& path);

 private:
  void put_entry(Entry e);
  std::vector<Entry> entries_;
};

// Stores architecture in meta["architecture"] and all network state.
void put_network(Checkpoint& ck, nn::Network<float>& net);
nn::Network<float> get_network(const Checkpoint& ck);

void save_checkpoint(nn::Network<float>& net, const std::filesystem::path& path,
                     const nlohmann::json& meta = nlohmann::json::object());
nn::Network<float> load_checkpoint(const std::filesystem::path& path);

}  // namespace food::ckpt
