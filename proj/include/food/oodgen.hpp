#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "food/data.hpp"
#include "food/network.hpp"
#include "json.hpp"

namespace food::oodgen {

// Which tail of the in-distribution LLR values bounds the region.
//   kLower: nearest-rank (100 - p)th percentile, index ceil((100-p)/100 n)
//   kUpper: nearest-rank p-th percentile, index ceil(p/100 n)
enum class ThresReading { kLower, kUpper };

ThresReading parse_thres_reading(const std::string& s);
std::string to_string(ThresReading r);

// Sorted ascending, 1-based nearest rank. Needs at least 20 values.
double compute_thres(std::span<const double> llr_values, double percentile = 95.0,
                     ThresReading reading = ThresReading::kLower);

// How the input gradient is turned into a step before scaling by epsilon.
//   kRaw:     g
//   kMeanAbs: g / mean_j |g_j|, per sample and iteration, so epsilon is the
//             mean per-pixel move in input units
//   kSign:    sign(g)
enum class StepScale { kRaw, kMeanAbs, kSign };

StepScale parse_step_scale(const std::string& s);
std::string to_string(StepScale s);

struct CraftConfig {
  double epsilon = 0.01;
  StepScale step = StepScale::kRaw;
  std::size_t max_iter = 10;
  double thres = 0;
  double clip_lo = 0.0;
  double clip_hi = 1.0;
  std::size_t batch_size = 64;

  void validate() const;
};

enum class SampleStatus : std::uint8_t { kOk = 0, kNonFinite = 1 };

struct CraftReport {
  std::vector<std::size_t> iterations;
  std::vector<double> initial_llr;
  std::vector<double> final_llr;
  std::vector<bool> reached;
  std::vector<SampleStatus> status;

  std::size_t size() const { return iterations.size(); }
  double reached_fraction() const;
  std::size_t failures() const;
  void append(const CraftReport& other);
  nlohmann::json to_json() const;
};

template <typename T>
struct CraftResult {
  BasicTensor<T> x_art;
  CraftReport report;
};

// Repeats x <- clip(x - eps * step(grad_x LLR(x))) and stops once LLR(x) <= thres
// or after max_iter steps. The check follows each step, so every sample is
// perturbed at least once. Samples are processed together but stop
// independently. A non-finite gradient marks the sample failed and leaves it
// at its last finite position.
template <typename T>
CraftResult<T> craft(const nn::Network<T>& net, const BasicTensor<T>& x, const CraftConfig& cfg);

// craft() over a dataset in batches of cfg.batch_size. Crafted samples keep
// their source labels.
struct CraftedSet {
  data::Dataset ood;
  CraftReport report;
};
CraftedSet craft_batch(const nn::Network<float>& net, const data::Dataset& val, const CraftConfig& cfg);

// LLR for every sample of a dataset.
std::vector<double> dataset_llr(const nn::Network<float>& net, const data::Dataset& ds, std::size_t batch_size = 256);

struct HistogramBin {
  double lo = 0, hi = 0;
  std::size_t before = 0, after = 0;
};

// Shared equal-width bins over the union of both value sets.
std::vector<HistogramBin> llr_histogram(std::span<const double> before, std::span<const double> after,
                                        std::size_t bins = 30);
// `tags` become constant trailing columns.
std::string histogram_csv(const std::vector<HistogramBin>& h, double thres,
                          const std::vector<std::pair<std::string, std::string>>& tags = {});

}  // namespace food::oodgen
