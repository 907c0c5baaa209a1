#pragma once

#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "food/tensor.hpp"
#include "json.hpp"

namespace food::nn {

using json = nlohmann::json;

enum class Mode { kEval, kTrain };

// Per-layer forward state kept for the backward pass. Composite layers nest
// their children's caches.
template <typename T>
struct Cache {
  std::vector<BasicTensor<T>> saved;
  std::vector<std::size_t> dims;
  std::vector<Cache> children;
};

template <typename T>
struct Param {
  std::string name;
  BasicTensor<T>* value = nullptr;
  bool trainable = true;
};

template <typename T>
class Layer {
 public:
  virtual ~Layer() = default;

  virtual std::string type() const = 0;
  virtual json describe() const = 0;
  // Shapes exclude the batch dimension.
  virtual Shape output_shape(const Shape& in) const = 0;

  virtual BasicTensor<T> forward(const BasicTensor<T>& x, Mode mode, Cache<T>* cache) const = 0;

  // Accumulates parameter gradients into `grads` (one slot per trainable
  // parameter, in params() order) and returns d(loss)/d(input) when
  // `need_input_grad` is set; otherwise an empty tensor.
  virtual BasicTensor<T> backward(const BasicTensor<T>& grad_out, const Cache<T>& cache,
                                  std::span<BasicTensor<T>> grads, bool need_input_grad) const = 0;

  // Trainable parameters and persistent buffers.
  virtual std::vector<Param<T>> params() { return {}; }

  std::size_t num_trainable() const;

  // Folds train-mode batch statistics into persistent buffers.
  virtual void commit(const Cache<T>&) {}

  virtual std::unique_ptr<Layer> clone() const = 0;
};

// Fixed per-channel (x - mean) / std. Lets crafted inputs stay in raw [0,1].
template <typename T>
class Normalize final : public Layer<T> {
 public:
  Normalize(std::vector<double> mean, std::vector<double> stddev);
  std::string type() const override { return "normalize"; }
  json describe() const override;
  Shape output_shape(const Shape& in) const override { return in; }
  BasicTensor<T> forward(const BasicTensor<T>& x, Mode mode, Cache<T>* cache) const override;
  BasicTensor<T> backward(const BasicTensor<T>& g, const Cache<T>& cache, std::span<BasicTensor<T>> grads,
                          bool need_input_grad) const override;
  std::vector<Param<T>> params() override;
  std::unique_ptr<Layer<T>> clone() const override { return std::make_unique<Normalize>(*this); }

 private:
  BasicTensor<T> mean_, std_;
};

template <typename T>
class Conv2d final : public Layer<T> {
 public:
  Conv2d(std::size_t in_ch, std::size_t out_ch, std::size_t kernel, std::size_t stride, std::size_t pad, bool bias);
  std::string type() const override { return "conv2d"; }
  json describe() const override;
  Shape output_shape(const Shape& in) const override;
  BasicTensor<T> forward(const BasicTensor<T>& x, Mode mode, Cache<T>* cache) const override;
  BasicTensor<T> backward(const BasicTensor<T>& g, const Cache<T>& cache, std::span<BasicTensor<T>> grads,
                          bool need_input_grad) const override;
  std::vector<Param<T>> params() override;
  std::unique_ptr<Layer<T>> clone() const override { return std::make_unique<Conv2d>(*this); }

  BasicTensor<T>& weight() { return weight_; }
  BasicTensor<T>& bias() { return bias_; }

 private:
  std::size_t in_, out_, k_, stride_, pad_;
  bool has_bias_;
  BasicTensor<T> weight_, bias_;
};

template <typename T>
class BatchNorm2d final : public Layer<T> {
 public:
  explicit BatchNorm2d(std::size_t channels, double momentum = 0.1, double eps = 1e-5);
  std::string type() const override { return "batchnorm2d"; }
  json describe() const override;
  Shape output_shape(const Shape& in) const override { return in; }
  BasicTensor<T> forward(const BasicTensor<T>& x, Mode mode, Cache<T>* cache) const override;
  BasicTensor<T> backward(const BasicTensor<T>& g, const Cache<T>& cache, std::span<BasicTensor<T>> grads,
                          bool need_input_grad) const override;
  std::vector<Param<T>> params() override;
  void commit(const Cache<T>& cache) override;
  std::unique_ptr<Layer<T>> clone() const override { return std::make_unique<BatchNorm2d>(*this); }

 private:
  std::size_t ch_;
  double momentum_, eps_;
  BasicTensor<T> gamma_, beta_, running_mean_, running_var_;
};

template <typename T>
class ReLU final : public Layer<T> {
 public:
  std::string type() const override { return "relu"; }
  json describe() const override { return {{"type", "relu"}}; }
  Shape output_shape(const Shape& in) const override { return in; }
  BasicTensor<T> forward(const BasicTensor<T>& x, Mode mode, Cache<T>* cache) const override;
  BasicTensor<T> backward(const BasicTensor<T>& g, const Cache<T>& cache, std::span<BasicTensor<T>> grads,
                          bool need_input_grad) const override;
  std::unique_ptr<Layer<T>> clone() const override { return std::make_unique<ReLU>(*this); }
};

// conv3x3-bn-relu-conv3x3-bn plus identity or 1x1-conv-bn shortcut, then relu.
template <typename T>
class ResidualBlock final : public Layer<T> {
 public:
  ResidualBlock(std::size_t in_ch, std::size_t out_ch, std::size_t stride);
  std::string type() const override { return "residual"; }
  json describe() const override;
  Shape output_shape(const Shape& in) const override { return conv1_.output_shape(in); }
  BasicTensor<T> forward(const BasicTensor<T>& x, Mode mode, Cache<T>* cache) const override;
  BasicTensor<T> backward(const BasicTensor<T>& g, const Cache<T>& cache, std::span<BasicTensor<T>> grads,
                          bool need_input_grad) const override;
  std::vector<Param<T>> params() override;
  void commit(const Cache<T>& cache) override;
  std::unique_ptr<Layer<T>> clone() const override { return std::make_unique<ResidualBlock>(*this); }

 private:
  std::size_t in_, out_, stride_;
  Conv2d<T> conv1_, conv2_;
  BatchNorm2d<T> bn1_, bn2_;
  std::optional<Conv2d<T>> short_conv_;
  std::optional<BatchNorm2d<T>> short_bn_;
};

template <typename T>
class GlobalAvgPool final : public Layer<T> {
 public:
  std::string type() const override { return "global_avg_pool"; }
  json describe() const override { return {{"type", "global_avg_pool"}}; }
  Shape output_shape(const Shape& in) const override { return {in.at(0)}; }
  BasicTensor<T> forward(const BasicTensor<T>& x, Mode mode, Cache<T>* cache) const override;
  BasicTensor<T> backward(const BasicTensor<T>& g, const Cache<T>& cache, std::span<BasicTensor<T>> grads,
                          bool need_input_grad) const override;
  std::unique_ptr<Layer<T>> clone() const override { return std::make_unique<GlobalAvgPool>(*this); }
};

// y = x W^T + b on flattened samples.
template <typename T>
class Dense final : public Layer<T> {
 public:
  Dense(std::size_t in, std::size_t out);
  std::string type() const override { return "dense"; }
  json describe() const override;
  Shape output_shape(const Shape&) const override { return {out_}; }
  BasicTensor<T> forward(const BasicTensor<T>& x, Mode mode, Cache<T>* cache) const override;
  BasicTensor<T> backward(const BasicTensor<T>& g, const Cache<T>& cache, std::span<BasicTensor<T>> grads,
                          bool need_input_grad) const override;
  std::vector<Param<T>> params() override;
  std::unique_ptr<Layer<T>> clone() const override { return std::make_unique<Dense>(*this); }

  BasicTensor<T>& weight() { return weight_; }
  BasicTensor<T>& bias() { return bias_; }

 private:
  std::size_t in_, out_;
  BasicTensor<T> weight_, bias_;
};

// Builds a layer from its describe() record; parameters are zero/identity
// initialized and expected to be loaded or initialized afterwards.
template <typename T>
std::unique_ptr<Layer<T>> make_layer(const json& desc);

// He-normal init of conv/dense weights, unit BN scale.
template <typename T>
void init_params(Layer<T>& layer, std::uint64_t seed);

}  // namespace food::nn
