#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "food/data.hpp"
#include "food/layers.hpp"

namespace food::nn {
template <typename T>
class Network;
}

namespace food::head {

inline constexpr double kVarianceFloor = 1e-6;

// log N(x; mu, diag(var)) =
//   -d/2 log(2 pi) - 1/2 sum_j log var_j - 1/2 sum_j (x_j - mu_j)^2 / var_j
double log_gaussian(std::span<const double> x, std::span<const double> mu, std::span<const double> var);

// Per-class mean and population diagonal variance, variance floored.
struct DiagGaussians {
  std::vector<std::vector<double>> mean;  // [C][d]
  std::vector<std::vector<double>> var;   // [C][d]

  std::size_t num_classes() const { return mean.size(); }
  std::size_t dim() const { return mean.empty() ? 0 : mean[0].size(); }
};

// rows: [n, d] row-major. Every class needs at least `min_per_class` rows.
DiagGaussians fit_diag_gaussians(std::span<const double> rows, std::size_t d, std::span<const int> labels,
                                 std::size_t num_classes, double floor = kVarianceFloor,
                                 std::size_t min_per_class = 1);

// Final classifier layer: output c is log N(f(x); mu_c, diag(exp(s_c))).
// Parameters are checkpointed as "mu.{c}" and "logvar.{c}".
template <typename T>
class GaussianHead final : public nn::Layer<T> {
 public:
  GaussianHead(std::size_t dim, std::size_t classes);

  std::string type() const override { return "gaussian_head"; }
  nn::json describe() const override { return {{"type", "gaussian_head"}, {"dim", dim_}, {"classes", classes_}}; }
  Shape output_shape(const Shape& in) const override;
  BasicTensor<T> forward(const BasicTensor<T>& x, nn::Mode mode, nn::Cache<T>* cache) const override;
  BasicTensor<T> backward(const BasicTensor<T>& g, const nn::Cache<T>& cache, std::span<BasicTensor<T>> grads,
                          bool need_input_grad) const override;
  std::vector<nn::Param<T>> params() override;
  std::unique_ptr<nn::Layer<T>> clone() const override { return std::make_unique<GaussianHead>(*this); }

  std::size_t dim() const { return dim_; }
  std::size_t classes() const { return classes_; }
  std::span<const T> mean(std::size_t c) const { return mu_.at(c).data(); }
  std::span<const T> log_var(std::size_t c) const { return logvar_.at(c).data(); }

  void set_class(std::size_t c, std::span<const double> mean, std::span<const double> var);
  // Raises every log-variance to at least log(floor).
  void clamp_variance(double floor = kVarianceFloor);

 private:
  std::size_t dim_, classes_;
  std::vector<BasicTensor<T>> mu_, logvar_;
};

// Head statistics from the penultimate representations [m, d] of labelled
// training samples. Every class needs at least two samples.
GaussianHead<float> init_from_data(const Tensor& penultimate, std::span<const int> labels, std::size_t num_classes);

// Replaces the network head with a data-initialized Gaussian head.
void install_gaussian_head(nn::Network<float>& net, const data::Dataset& train, std::size_t batch_size = 128);

// Mean cross-entropy of softmax(head_out) plus lambda * R_ML with
// R_ML = -(1/m) sum_i head_out[i, y_i]. Writes d(loss)/d(head_out) if asked.
template <typename T>
T head_loss(const BasicTensor<T>& head_out, std::span<const int> labels, double lambda,
            BasicTensor<T>* grad = nullptr);

// Softmax cross-entropy only (lambda = 0).
template <typename T>
T cross_entropy(const BasicTensor<T>& head_out, std::span<const int> labels, BasicTensor<T>* grad = nullptr) {
  return head_loss(head_out, labels, 0.0, grad);
}

struct HeadLossConfig {
  double lambda = 0.1;
  std::vector<double> lambda_grid{0.01, 0.1, 1.0};
  std::size_t epochs = 15;
  double lr = 1e-4;
  double rms_alpha = 0.99;
  double rms_eps = 1e-8;
  std::size_t batch_size = 64;
  // batch statistics in normalization layers while fine-tuning; off keeps
  // the running statistics the head was initialized under
  bool batchnorm_train = false;
  std::uint64_t seed = 0;

  void validate() const;
};

// Tracks validation losses; signals a stop on the first increase and
// remembers the best epoch. The first observation is epoch `first_epoch`.
class EarlyStopper {
 public:
  explicit EarlyStopper(std::size_t first_epoch = 1) : first_(first_epoch) {}

  // Returns true when training should stop.
  bool observe(double val_loss);
  std::size_t best_epoch() const { return best_epoch_; }
  double best_loss() const { return best_; }
  std::size_t epochs_seen() const { return seen_; }
  bool is_best_latest() const { return seen_ > 0 && best_epoch_ == first_ + seen_ - 1; }

 private:
  std::size_t first_;
  double prev_ = 0;
  double best_ = 0;
  std::size_t best_epoch_ = 0;
  std::size_t seen_ = 0;
};

struct FinetuneReport {
  double lambda = 0;
  std::vector<double> train_loss;  // eval-mode, index 0 = before fine-tuning
  std::vector<double> val_loss;    // full objective at `lambda`
  std::vector<double> val_ce;      // cross-entropy part
  std::size_t best_epoch = 0;
  bool early_stopped = false;
};

// Fine-tunes the whole network on the head loss with RMSprop for at most
// cfg.epochs epochs, stopping at the first validation-loss increase, and
// leaves `net` at its best-validation weights.
FinetuneReport finetune(nn::Network<float>& net, const data::Dataset& train, const data::Dataset& val,
                        const HeadLossConfig& cfg);

// Runs finetune() once per lambda in the grid from the same start and keeps
// the run with the lowest validation cross-entropy.
FinetuneReport finetune_select_lambda(nn::Network<float>& net, const data::Dataset& train, const data::Dataset& val,
                                      const HeadLossConfig& cfg, std::vector<FinetuneReport>* all = nullptr);

}  // namespace food::head
