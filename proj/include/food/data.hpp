#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "food/tensor.hpp"
#include "json.hpp"

namespace food::data {

// Images in raw [0,1] pixel space, batch-first [N, ch, h, w].
struct Dataset {
  Tensor images;
  std::vector<int> labels;
  std::size_t num_classes = 0;
  std::string name;
  nlohmann::json provenance = nlohmann::json::object();

  std::size_t size() const { return labels.size(); }
  Shape sample_shape() const { return images.sample_shape(); }
  Dataset subset(std::span<const std::size_t> rows) const;
  std::vector<std::size_t> class_counts() const;

  // Throws unless values lie in [0,1], labels in range, and N matches.
  void validate() const;
};

enum class OodMode { kCenterBlob, kRing, kUniformNoise };

OodMode parse_ood_mode(const std::string& s);
std::string to_string(OodMode m);

struct BlobCenter {
  double row = 0;
  double col = 0;
};

// Seeded blob-image task. Class c draws
//   pixel(i,j) = clip(exp(-|(i,j) - center_c|^2 / (2 sigma_b^2)) + eta, 0, 1),
// eta ~ N(0, sigma_n^2), independently per pixel and sample.
struct SyntheticSpec {
  std::size_t height = 16;
  std::size_t width = 16;
  std::size_t channels = 1;
  std::vector<BlobCenter> centers{{4, 4}, {4, 12}, {12, 4}, {12, 12}};
  double blob_sigma = 2.0;
  double noise_sigma = 0.05;
  std::size_t train_per_class = 150;
  std::size_t val_per_class = 50;
  std::size_t test_per_class = 100;
  std::size_t ood_count = 400;
  OodMode ood_mode = OodMode::kCenterBlob;
  BlobCenter ood_center{8, 8};
  double ring_radius = 5.0;
  std::uint64_t seed = 7;

  std::size_t num_classes() const { return centers.size(); }
  void validate() const;
  nlohmann::json to_json() const;
  static SyntheticSpec from_json(const nlohmann::json& j);
};

struct SyntheticSplits {
  Dataset train, val, test_in, test_ood;
};

SyntheticSplits gen_synthetic(const SyntheticSpec& spec);

// Stratified split. Each output keeps the input's relative order; per-class
// counts use largest-remainder rounding so they deviate by at most one from
// the exact proportion.
std::vector<Dataset> split(const Dataset& ds, const std::vector<double>& fractions, std::uint64_t seed);

// CIFAR-10 binary: 3073-byte records, label byte then R, G, B 32x32 planes.
Dataset load_cifar10_binary(const std::filesystem::path& path);
void save_cifar10_binary(const Dataset& ds, const std::filesystem::path& path);

// IDX: images magic 0x00000803 [N, rows, cols], labels 0x00000801 [N], big-endian.
Dataset load_idx(const std::filesystem::path& images, const std::filesystem::path& labels);
void save_idx(const Dataset& ds, const std::filesystem::path& images, const std::filesystem::path& labels);

// Native format: "FOODDATA", u32 version, u32 rank, u32 dims..., f32 pixels,
// u32 label count, i32 labels, u32 json length, json provenance. Little-endian.
void save_dataset(const Dataset& ds, const std::filesystem::path& path);
Dataset load_dataset(const std::filesystem::path& path);

// Per-channel pixel mean and standard deviation (population).
void channel_stats(const Dataset& ds, std::vector<double>& mean, std::vector<double>& stddev);

}  // namespace food::data
