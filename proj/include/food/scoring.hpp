#pragma once

#include <span>
#include <string>
#include <vector>

#include "food/checkpoint.hpp"
#include "food/data.hpp"
#include "food/gausshead.hpp"
#include "food/network.hpp"

namespace food::scoring {

// max_c h[c] minus the mean of the remaining C-1 entries. Ties for the
// maximum go to the lowest index.
template <typename T>
double llr(std::span<const T> head_out);

// Same value; writes d(llr)/d(head_out) into `grad`.
template <typename T>
T llr_with_grad(std::span<const T> head_out, std::span<T> grad);

// Max softmax probability.
template <typename T>
double msp(std::span<const T> head_out);

enum class PoolKind { kMax, kAverage };
enum class PoolPolicy { kMixed, kAverage };

std::string to_string(PoolKind k);
std::string to_string(PoolPolicy p);
PoolKind parse_pool_kind(const std::string& s);
PoolPolicy parse_pool_policy(const std::string& s);

// Layer l in 1..L: mixed policy max-pools l <= floor(L/2), averages the rest.
PoolKind pool_kind(std::size_t l, std::size_t L, PoolPolicy policy);

// Global spatial pooling of one [ch, h, w] map (any trailing dims flatten
// into the spatial extent; rank 1 is a 1x1 map per channel).
template <typename T>
std::vector<double> spatial_pool(std::span<const T> rep, std::size_t channels, PoolKind kind);
std::vector<double> spatial_pool(const Tensor& rep, PoolKind kind);  // rep: [ch, ...]

// Pooled tap outputs, [L][N][ch] flattened per layer as N rows of width ch.
struct PooledTaps {
  std::vector<std::size_t> widths;
  std::vector<std::vector<double>> rows;
  std::size_t count = 0;

  std::size_t num_layers() const { return widths.size(); }
  std::span<const double> row(std::size_t l, std::size_t n) const {
    return std::span<const double>(rows[l]).subspan(n * widths[l], widths[l]);
  }
  void append(const PooledTaps& other);
};

PooledTaps pool_taps(const std::vector<Tensor>& taps, const std::vector<PoolKind>& kinds);

// Per-layer class-conditional diagonal Gaussians of pooled representations.
struct LayerGaussianStats {
  PoolPolicy policy = PoolPolicy::kMixed;
  std::vector<PoolKind> kinds;
  std::vector<head::DiagGaussians> layers;

  std::size_t num_layers() const { return layers.size(); }
  std::size_t num_classes() const { return layers.empty() ? 0 : layers[0].num_classes(); }

  // Checks layer count and widths against tap shapes.
  void check_compatible(const std::vector<Shape>& tap_shapes) const;

  // Tensors "{prefix}.layer{l}.class{c}.{mu|logvar}" (l from 1) plus
  // meta[prefix] = {policy, kinds, layers, classes}.
  void store(ckpt::Checkpoint& ck, const std::string& prefix = "stats") const;
  static LayerGaussianStats restore(const ckpt::Checkpoint& ck, const std::string& prefix = "stats");
};

LayerGaussianStats fit_layer_stats(const PooledTaps& pooled, std::span<const int> labels, std::size_t num_classes,
                                   PoolPolicy policy);
LayerGaussianStats fit_layer_stats(const nn::Network<float>& net, const data::Dataset& train, PoolPolicy policy,
                                   std::size_t batch_size = 128);

// Evaluates F(x,l) = max_c log N(v; mu_c, diag(var_c)) with precomputed
// inverse variances and log-determinants.
class FeatureScorer {
 public:
  FeatureScorer() = default;
  explicit FeatureScorer(const LayerGaussianStats& stats);

  std::size_t num_layers() const { return layers_.size(); }
  double layer_feature(std::size_t l, std::span<const double> v) const;
  // [N][L] row-major.
  std::vector<double> features(const PooledTaps& pooled) const;

 private:
  struct Class {
    std::vector<double> mean, inv_var;
    double constant = 0;
  };
  std::vector<std::vector<Class>> layers_;
};

// Features for a single pooled sample; reference path for tests.
std::vector<double> layer_features(const LayerGaussianStats& stats, const std::vector<std::vector<double>>& pooled);

struct ScoreVector {
  std::vector<double> features;
  double llr = 0;
  double msp = 0;
  std::vector<double> head;
};

// Full per-sample scoring of a batch with the given stats.
std::vector<ScoreVector> score_batch(const nn::Network<float>& net, const LayerGaussianStats& stats,
                                     const Tensor& batch);

}  // namespace food::scoring
