#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "food/checkpoint.hpp"
#include "food/data.hpp"
#include "food/detector.hpp"
#include "food/eval.hpp"
#include "food/gausshead.hpp"
#include "food/network.hpp"
#include "food/oodgen.hpp"
#include "food/scoring.hpp"
#include "food/train.hpp"
#include "json.hpp"

namespace food::pipeline {

inline constexpr int kSchemaVersion = 1;

std::uint64_t fnv1a64(std::string_view bytes);
std::string hex64(std::uint64_t v);

struct DataConfig {
  // "synthetic", "cifar10", "idx" or "native"
  std::string source = "synthetic";
  data::SyntheticSpec synthetic;
  // file sources: keys train, val, test, ood (cifar10/native) or
  // {train,test,ood}_{images,labels} (idx); val is split off train if absent
  std::map<std::string, std::string> paths;
  double val_fraction = 0.25;
};

struct CraftSettings {
  double epsilon = 0.01;
  oodgen::StepScale step = oodgen::StepScale::kMeanAbs;
  std::size_t max_iter = 10;
  double thres_percentile = 95.0;
  oodgen::ThresReading thres_reading = oodgen::ThresReading::kLower;
  std::size_t batch_size = 64;
};

struct RunConfig {
  std::uint64_t seed = 7;
  DataConfig data;
  nn::MiniResNetOptions model;
  train::ClassifierConfig train;
  head::HeadLossConfig finetune;
  CraftSettings craft;
  detector::DetectorFitConfig detector;
  double mdstar_ridge = 1e-4;
  eval::BenchConfig bench;
  bool eval_latency_from_bench = false;
  std::filesystem::path artifacts_dir = "artifacts";

  // Fully resolved config (defaults filled in) and its FNV-1a 64 hash.
  nlohmann::json canonical;
  std::uint64_t hash = 0;

  // Collects every violation into one kConfig error. Relative paths are
  // resolved against `base_dir`.
  static RunConfig from_json(const nlohmann::json& j, std::optional<std::uint64_t> seed_override = std::nullopt,
                             const std::filesystem::path& base_dir = {});
  static RunConfig load(const std::filesystem::path& path, std::optional<std::uint64_t> seed_override = std::nullopt);

  std::string hash_hex() const { return hex64(hash); }
  // {config_hash, seed} record embedded in artifacts.
  nlohmann::json stamp() const;
  // Hash of the seed and the config sections a stage's output depends on
  // ("train", "finetune", "craft" or "fit-detector"). Artifacts carry it so a
  // later stage can reuse them while only downstream sections change.
  std::string lineage(std::string_view stage) const;
};

struct Splits {
  data::Dataset train, val, test_in, test_ood;
};

Splits load_data(const RunConfig& cfg);

// Standard artifact file names inside artifacts_dir.
namespace names {
inline constexpr const char* kBase = "base.ckpt";
inline constexpr const char* kFinetuned = "finetuned.ckpt";
inline constexpr const char* kCrafted = "crafted.fooddata";
inline constexpr const char* kCraftReport = "craft_report.json";
inline constexpr const char* kHistogram = "llr_histogram.csv";
inline constexpr const char* kFood = "food.ckpt";
inline constexpr const char* kMetricsCsv = "metrics.csv";
inline constexpr const char* kMetricsJson = "metrics.json";
inline constexpr const char* kLatencyCsv = "latency.csv";
inline constexpr const char* kLatencyJson = "latency.json";
}  // namespace names

struct TrainOutcome {
  nn::Network<float> net;
  std::vector<double> losses;
  double test_accuracy = 0;
};
TrainOutcome run_train(const RunConfig& cfg, const Splits& s);

struct FinetuneOutcome {
  head::FinetuneReport chosen;
  std::vector<head::FinetuneReport> all;
  double test_accuracy = 0;
};
// Installs the data-initialized Gaussian head and fine-tunes `net` in place.
FinetuneOutcome run_finetune(const RunConfig& cfg, const Splits& s, nn::Network<float>& net);

struct CraftOutcome {
  double thres = 0;
  std::vector<double> val_llr;
  oodgen::CraftedSet crafted;
};
CraftOutcome run_craft(const CraftSettings& cs, const nn::Network<float>& net, const data::Dataset& val);

// Everything the detector stage fits, plus the network it belongs to.
struct FoodModel {
  nn::Network<float> net;
  scoring::LayerGaussianStats stats_mixed;
  scoring::LayerGaussianStats stats_avg;
  detector::MdStarStats mdstar;
  detector::DetectorModel det_mixed;  // stage 4 / FOOD
  detector::DetectorModel det_avg;    // stage 3
  double thres = 0;

  void store(ckpt::Checkpoint& ck) const;
  static FoodModel restore(const ckpt::Checkpoint& ck);
};

// Per-sample detection inputs for every method, from one forward pass.
struct SampleScores {
  std::size_t count = 0;
  std::size_t layers = 0;
  std::vector<double> llr, msp, mdstar;
  std::vector<double> f_mixed, f_avg;  // [count][layers]

  void append(const SampleScores& o);
  // [F(x,1..L), LLR] rows.
  std::vector<double> detector_rows(bool mixed) const;
};

struct Fitted {
  scoring::LayerGaussianStats stats_mixed, stats_avg;
  detector::MdStarStats mdstar;
};

// Layer statistics (both pooling policies) and MD* from the training split.
Fitted fit_statistics(const RunConfig& cfg, const nn::Network<float>& net, const data::Dataset& train);

SampleScores score_dataset(const nn::Network<float>& net, const Fitted& f, const data::Dataset& ds,
                           std::size_t batch_size = 128);

// Fits both detectors on validation rows (in) and crafted rows (ood).
FoodModel fit_food(const RunConfig& cfg, nn::Network<float> net, Fitted f, const data::Dataset& val,
                   const data::Dataset& crafted, double thres);

inline const std::vector<std::string>& method_names() {
  static const std::vector<std::string> m{"FOOD",
                                          "LLR-only",
                                          "MSP",
                                          "MD*",
                                          "Stage 1 - LLR",
                                          "Stage 2 - Likelihood sum + LLR",
                                          "Stage 3 - FOOD - Avg Pooling",
                                          "Stage 4 - FOOD - Mixed Pooling"};
  return m;
}

// Scores of one method for every sample.
std::vector<double> method_scores(const FoodModel& m, const SampleScores& s, const std::string& method);

std::vector<eval::MetricRow> run_eval(const FoodModel& m, const data::Dataset& in, const data::Dataset& out);

// FOOD, MSP and MD* sharing one forward pass per repeat, plus forward-only.
eval::LatencyReport run_bench(const FoodModel& m, const data::Dataset& pool, const eval::BenchConfig& bc);

}  // namespace food::pipeline
