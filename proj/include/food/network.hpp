#pragma once

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "food/layers.hpp"

namespace food::nn {

// Ordered layer stack. The last layer is the head; the layer before it
// produces the penultimate representation. Taps name the layers whose
// outputs are exported as internal representations.
template <typename T>
class Network {
 public:
  struct Output {
    BasicTensor<T> head;                 // [N, C]
    std::vector<BasicTensor<T>> taps;    // one per tap, batch-first
    BasicTensor<T> penultimate;          // input of the head
  };

  struct Tape {
    Mode mode = Mode::kEval;
    std::vector<Cache<T>> caches;
  };

  // Per-sample scalar score of one head row; writes d(score)/d(row).
  using RowScore = std::function<T(std::span<const T> row, std::span<T> grad_row)>;
  // Scalar loss of the whole head output; writes d(loss)/d(head).
  using BatchLoss = std::function<T(const BasicTensor<T>& head, BasicTensor<T>& grad_head)>;

  Network(Shape input_shape, std::size_t num_classes);
  Network(const Network& other);
  Network& operator=(const Network& other);
  Network(Network&&) noexcept = default;
  Network& operator=(Network&&) noexcept = default;

  // Appends a layer; a non-empty tap name exports its output.
  void add(std::unique_ptr<Layer<T>> layer, std::string tap = {});
  void replace_head(std::unique_ptr<Layer<T>> head);

  Output forward(const BasicTensor<T>& batch, Mode mode = Mode::kEval, Tape* tape = nullptr) const;

  // Reverse pass from d(loss)/d(head). Accumulates into `grads` (aligned with
  // trainable_params()) when non-null; returns d(loss)/d(input) when
  // `need_input_grad` is set.
  BasicTensor<T> backward(const BasicTensor<T>& grad_head, const Tape& tape, std::vector<BasicTensor<T>>* grads,
                          bool need_input_grad = true) const;

  // d(score)/d(input) per sample, eval mode.
  BasicTensor<T> input_gradient(const BasicTensor<T>& batch, const RowScore& score,
                                std::vector<T>* scores = nullptr) const;

  // Parameter gradients of a scalar batch loss.
  std::vector<BasicTensor<T>> backward_params(const BasicTensor<T>& batch, const BatchLoss& loss, Mode mode,
                                              T* loss_value = nullptr, Tape* tape_out = nullptr) const;

  void commit_running_stats(const Tape& tape);

  std::vector<Param<T>> trainable_params();
  std::vector<BasicTensor<T>> zero_grads();
  // Every parameter and buffer with its checkpoint name.
  std::vector<Param<T>> named_state();

  const Shape& input_shape() const { return input_shape_; }
  std::size_t num_classes() const { return num_classes_; }
  std::size_t num_layers() const { return layers_.size(); }
  std::size_t num_taps() const { return taps_.size(); }
  const std::vector<std::size_t>& tap_layers() const { return taps_; }
  const std::vector<std::string>& tap_names() const { return tap_names_; }
  Layer<T>& layer(std::size_t i) { return *layers_.at(i); }
  const Layer<T>& layer(std::size_t i) const { return *layers_.at(i); }
  Layer<T>& head() { return *layers_.back(); }
  const Layer<T>& head() const { return *layers_.back(); }
  std::vector<Shape> tap_shapes() const;
  Shape penultimate_shape() const;

  // Architecture descriptor, sufficient to rebuild the layer stack.
  json architecture() const;
  static Network from_architecture(const json& arch);

  // Same architecture and state in another precision.
  template <typename U>
  Network<U> cast() const;

  // Checks tap placement (taps must exclude the penultimate layer and head).
  void validate() const;

  void set_finite_checks(bool on) { finite_checks_ = on; }

 private:
  std::vector<BasicTensor<T>> zero_grads_const() const;
  std::string state_name(std::size_t layer, const std::string& local) const;

  Shape input_shape_;
  std::size_t num_classes_;
  std::vector<std::unique_ptr<Layer<T>>> layers_;
  std::vector<std::size_t> taps_;
  std::vector<std::string> tap_names_;
#ifdef NDEBUG
  bool finite_checks_ = false;
#else
  bool finite_checks_ = true;
#endif
};

template <typename T>
template <typename U>
Network<U> Network<T>::cast() const {
  Network<U> out = Network<U>::from_architecture(architecture());
  auto src = const_cast<Network*>(this)->named_state();
  auto dst = out.named_state();
  for (std::size_t i = 0; i < src.size(); ++i) *dst[i].value = src[i].value->template cast<U>();
  return out;
}

struct MiniResNetOptions {
  Shape input_shape{1, 16, 16};
  std::size_t num_classes = 4;
  std::size_t stem_channels = 16;
  std::vector<std::size_t> stage_channels{16, 32, 64};
  std::vector<std::size_t> stage_strides{1, 2, 2};
  std::size_t blocks_per_stage = 2;
  std::vector<double> norm_mean{0.0};
  std::vector<double> norm_std{1.0};
};

// normalize, stem conv-bn-relu (tap "stem"), residual stages (tap after each
// stage), global average pool, dense head. L = 1 + number of stages.
Network<float> build_miniresnet(const MiniResNetOptions& opts, std::uint64_t seed);

}  // namespace food::nn
