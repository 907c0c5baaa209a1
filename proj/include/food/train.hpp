#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "food/data.hpp"
#include "food/network.hpp"

namespace food::train {

class Optimizer {
 public:
  virtual ~Optimizer() = default;
  virtual void step(std::vector<nn::Param<float>>& params, const std::vector<Tensor>& grads) = 0;
};

// PyTorch-style SGD: g += wd * p; v = momentum * v + g; p -= lr * v.
class Sgd final : public Optimizer {
 public:
  Sgd(double lr, double momentum, double weight_decay) : lr_(lr), momentum_(momentum), wd_(weight_decay) {}
  void step(std::vector<nn::Param<float>>& params, const std::vector<Tensor>& grads) override;
  void set_lr(double lr) { lr_ = lr; }

 private:
  double lr_, momentum_, wd_;
  std::vector<Tensor> velocity_;
};

// sq = alpha * sq + (1 - alpha) * g^2; p -= lr * g / (sqrt(sq) + eps).
class RmsProp final : public Optimizer {
 public:
  RmsProp(double lr, double alpha, double eps) : lr_(lr), alpha_(alpha), eps_(eps) {}
  void step(std::vector<nn::Param<float>>& params, const std::vector<Tensor>& grads) override;

 private:
  double lr_, alpha_, eps_;
  std::vector<Tensor> sq_;
};

// Batch loss over head outputs and labels; writes d(loss)/d(head).
using LossFn = std::function<float(const Tensor& head, std::span<const int> labels, Tensor& grad)>;

// One shuffled pass in train mode. Trailing batches of a single sample are
// dropped (batch-norm needs two). Returns the mean batch loss.
double train_epoch(nn::Network<float>& net, const data::Dataset& ds, std::size_t batch_size, std::uint64_t seed,
                   const LossFn& loss, Optimizer& opt, const std::function<void(nn::Network<float>&)>& after_step = {},
                   nn::Mode mode = nn::Mode::kTrain);

// Mean loss over a dataset in eval mode, weighted by batch size.
double evaluate_loss(const nn::Network<float>& net, const data::Dataset& ds, std::size_t batch_size,
                     const LossFn& loss);

double accuracy(const nn::Network<float>& net, const data::Dataset& ds, std::size_t batch_size = 256);

struct ClassifierConfig {
  std::size_t epochs = 4;
  double lr = 0.1;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  std::size_t batch_size = 64;
  std::uint64_t seed = 0;
};

// Cross-entropy training of the base classifier with SGD. Returns per-epoch
// training loss.
std::vector<double> train_classifier(nn::Network<float>& net, const data::Dataset& train,
                                     const ClassifierConfig& cfg);

// Eval-mode forward over a dataset in batches.
template <typename Fn>
void for_each_batch(const nn::Network<float>& net, const Tensor& images, std::size_t batch_size, Fn&& fn) {
  const std::size_t n = images.dim(0);
  for (std::size_t b = 0; b < n; b += batch_size) {
    const std::size_t e = std::min(n, b + batch_size);
    fn(b, e, net.forward(images.slice_batch(b, e)));
  }
}

}  // namespace food::train
