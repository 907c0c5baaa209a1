#include "food/network.hpp"

#include <sstream>

#include "food/gausshead.hpp"
#include "food/rng.hpp"

namespace food {

std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << ']';
  return os.str();
}

}  // namespace food

namespace food::nn {

template <typename T>
Network<T>::Network(Shape input_shape, std::size_t num_classes)
    : input_shape_(std::move(input_shape)), num_classes_(num_classes) {
  require(!input_shape_.empty() && shape_size(input_shape_) > 0, ErrorKind::kInvalidArgument, "empty input shape");
}

template <typename T>
Network<T>::Network(const Network& other)
    : input_shape_(other.input_shape_),
      num_classes_(other.num_classes_),
      taps_(other.taps_),
      tap_names_(other.tap_names_),
      finite_checks_(other.finite_checks_) {
  layers_.reserve(other.layers_.size());
  for (const auto& l : other.layers_) layers_.push_back(l->clone());
}

template <typename T>
Network<T>& Network<T>::operator=(const Network& other) {
  if (this != &other) {
    Network copy(other);
    *this = std::move(copy);
  }
  return *this;
}

template <typename T>
void Network<T>::add(std::unique_ptr<Layer<T>> layer, std::string tap) {
  if (!tap.empty()) {
    taps_.push_back(layers_.size());
    tap_names_.push_back(std::move(tap));
  }
  layers_.push_back(std::move(layer));
}

template <typename T>
void Network<T>::replace_head(std::unique_ptr<Layer<T>> head) {
  require(!layers_.empty(), ErrorKind::kInvalidArgument, "network has no head to replace");
  require(head->output_shape(penultimate_shape()) == Shape{num_classes_}, ErrorKind::kShape,
          "replacement head must map " + shape_str(penultimate_shape()) + " to " + std::to_string(num_classes_) +
              " outputs");
  layers_.back() = std::move(head);
}

template <typename T>
void Network<T>::validate() const {
  require(layers_.size() >= 2, ErrorKind::kInvalidArgument, "network needs at least a penultimate layer and a head");
  Shape s = input_shape_;
  for (const auto& l : layers_) s = l->output_shape(s);
  require(s == Shape{num_classes_}, ErrorKind::kShape,
          "head output " + shape_str(s) + " does not match " + std::to_string(num_classes_) + " classes");
  for (std::size_t t : taps_)
    require(t + 2 < layers_.size(), ErrorKind::kInvalidArgument,
            "tap on layer " + std::to_string(t) + " would export the penultimate layer or the head");
}

template <typename T>
std::vector<Shape> Network<T>::tap_shapes() const {
  std::vector<Shape> out;
  Shape s = input_shape_;
  for (std::size_t i = 0, t = 0; i < layers_.size(); ++i) {
    s = layers_[i]->output_shape(s);
    if (t < taps_.size() && taps_[t] == i) {
      out.push_back(s);
      ++t;
    }
  }
  return out;
}

template <typename T>
Shape Network<T>::penultimate_shape() const {
  Shape s = input_shape_;
  for (std::size_t i = 0; i + 1 < layers_.size(); ++i) s = layers_[i]->output_shape(s);
  return s;
}

template <typename T>
typename Network<T>::Output Network<T>::forward(const BasicTensor<T>& batch, Mode mode, Tape* tape) const {
  require(batch.rank() == input_shape_.size() + 1 && batch.sample_shape() == input_shape_, ErrorKind::kShape,
          "batch shape " + shape_str(batch.shape()) + " does not match network input " + shape_str(input_shape_));
  require(!layers_.empty(), ErrorKind::kInvalidArgument, "network has no layers");
  if (tape) {
    tape->mode = mode;
    tape->caches.assign(layers_.size(), Cache<T>{});
  }
  Output out;
  out.taps.reserve(taps_.size());
  BasicTensor<T> h = batch;
  std::size_t t = 0;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    if (i + 1 == layers_.size()) out.penultimate = h;
    h = layers_[i]->forward(h, mode, tape ? &tape->caches[i] : nullptr);
    if (finite_checks_ && !h.all_finite())
      fail(ErrorKind::kNumeric, "non-finite activation at layer " + std::to_string(i) + " (" + layers_[i]->type() + ")");
    if (t < taps_.size() && taps_[t] == i) {
      out.taps.push_back(h);
      ++t;
    }
  }
  out.head = std::move(h);
  return out;
}

template <typename T>
BasicTensor<T> Network<T>::backward(const BasicTensor<T>& grad_head, const Tape& tape,
                                    std::vector<BasicTensor<T>>* grads, bool need_input_grad) const {
  require(tape.caches.size() == layers_.size(), ErrorKind::kInvalidArgument, "tape does not match network");
  // Parameter-gradient offsets per layer.
  std::vector<std::size_t> offset(layers_.size() + 1, 0);
  for (std::size_t i = 0; i < layers_.size(); ++i) offset[i + 1] = offset[i] + layers_[i]->num_trainable();
  std::vector<BasicTensor<T>> scratch;
  std::span<BasicTensor<T>> slots;
  if (grads) {
    require(grads->size() == offset.back(), ErrorKind::kInvalidArgument, "gradient buffer does not match network");
    slots = *grads;
  } else {
    scratch = zero_grads_const();
    slots = scratch;
  }
  BasicTensor<T> g = grad_head;
  for (std::size_t i = layers_.size(); i-- > 0;) {
    const bool want_input = need_input_grad || i > 0;
    g = layers_[i]->backward(g, tape.caches[i], slots.subspan(offset[i], offset[i + 1] - offset[i]), want_input);
    if (finite_checks_ && !g.all_finite())
      fail(ErrorKind::kNumeric, "non-finite gradient at layer " + std::to_string(i) + " (" + layers_[i]->type() + ")");
  }
  return g;
}

template <typename T>
BasicTensor<T> Network<T>::input_gradient(const BasicTensor<T>& batch, const RowScore& score,
                                          std::vector<T>* scores) const {
  Tape tape;
  const Output out = forward(batch, Mode::kEval, &tape);
  const std::size_t N = out.head.dim(0), C = out.head.dim(1);
  BasicTensor<T> gh(out.head.shape());
  if (scores) scores->assign(N, T(0));
  for (std::size_t n = 0; n < N; ++n) {
    const T s = score(out.head.sample(n), gh.sample(n));
    if (scores) (*scores)[n] = s;
  }
  (void)C;
  return backward(gh, tape, nullptr, true);
}

template <typename T>
std::vector<BasicTensor<T>> Network<T>::backward_params(const BasicTensor<T>& batch, const BatchLoss& loss, Mode mode,
                                                        T* loss_value, Tape* tape_out) const {
  Tape local;
  Tape& tape = tape_out ? *tape_out : local;
  const Output out = forward(batch, mode, &tape);
  BasicTensor<T> gh(out.head.shape());
  const T l = loss(out.head, gh);
  if (loss_value) *loss_value = l;
  auto grads = zero_grads_const();
  backward(gh, tape, &grads, false);
  return grads;
}

template <typename T>
void Network<T>::commit_running_stats(const Tape& tape) {
  if (tape.mode != Mode::kTrain) return;
  for (std::size_t i = 0; i < layers_.size(); ++i) layers_[i]->commit(tape.caches.at(i));
}

template <typename T>
std::vector<Param<T>> Network<T>::trainable_params() {
  std::vector<Param<T>> out;
  for (std::size_t i = 0; i < layers_.size(); ++i)
    for (auto& p : layers_[i]->params())
      if (p.trainable) out.push_back({state_name(i, p.name), p.value, true});
  return out;
}

template <typename T>
std::vector<BasicTensor<T>> Network<T>::zero_grads() {
  return zero_grads_const();
}

template <typename T>
std::vector<BasicTensor<T>> Network<T>::zero_grads_const() const {
  std::vector<BasicTensor<T>> g;
  for (auto& p : const_cast<Network*>(this)->trainable_params()) g.emplace_back(p.value->shape());
  return g;
}

template <typename T>
std::vector<Param<T>> Network<T>::named_state() {
  std::vector<Param<T>> out;
  for (std::size_t i = 0; i < layers_.size(); ++i)
    for (auto& p : layers_[i]->params()) out.push_back({state_name(i, p.name), p.value, p.trainable});
  return out;
}

template <typename T>
std::string Network<T>::state_name(std::size_t layer, const std::string& local) const {
  if (layer + 1 == layers_.size()) return "head." + local;
  return "layers." + std::to_string(layer) + "." + local;
}

template <typename T>
json Network<T>::architecture() const {
  json layers = json::array();
  for (std::size_t i = 0, t = 0; i < layers_.size(); ++i) {
    json d = layers_[i]->describe();
    if (t < taps_.size() && taps_[t] == i) d["tap"] = tap_names_[t++];
    layers.push_back(std::move(d));
  }
  return {{"input_shape", input_shape_}, {"num_classes", num_classes_}, {"layers", std::move(layers)}};
}

template <typename T>
Network<T> Network<T>::from_architecture(const json& arch) {
  try {
    Network net(arch.at("input_shape").get<Shape>(), arch.at("num_classes").get<std::size_t>());
    for (const auto& d : arch.at("layers")) net.add(make_layer<T>(d), d.value("tap", std::string{}));
    net.validate();
    return net;
  } catch (const json::exception& e) {
    fail(ErrorKind::kFormat, std::string("malformed architecture descriptor: ") + e.what());
  }
}

template class Network<float>;
template class Network<double>;

Network<float> build_miniresnet(const MiniResNetOptions& o, std::uint64_t seed) {
  require(o.input_shape.size() == 3, ErrorKind::kInvalidArgument, "miniresnet expects [ch,h,w] input");
  require(o.stage_channels.size() == o.stage_strides.size() && !o.stage_channels.empty(),
          ErrorKind::kInvalidArgument, "miniresnet: stage channels/strides mismatch");
  Network<float> net(o.input_shape, o.num_classes);
  const std::size_t in_ch = o.input_shape[0];
  net.add(std::make_unique<Normalize<float>>(o.norm_mean, o.norm_std));
  net.add(std::make_unique<Conv2d<float>>(in_ch, o.stem_channels, 3, 1, 1, false));
  net.add(std::make_unique<BatchNorm2d<float>>(o.stem_channels));
  net.add(std::make_unique<ReLU<float>>(), "stem");
  std::size_t ch = o.stem_channels;
  for (std::size_t s = 0; s < o.stage_channels.size(); ++s) {
    for (std::size_t b = 0; b < o.blocks_per_stage; ++b) {
      const bool last = b + 1 == o.blocks_per_stage;
      net.add(std::make_unique<ResidualBlock<float>>(ch, o.stage_channels[s], b == 0 ? o.stage_strides[s] : 1),
              last ? "stage" + std::to_string(s + 1) : std::string{});
      ch = o.stage_channels[s];
    }
  }
  net.add(std::make_unique<GlobalAvgPool<float>>());
  net.add(std::make_unique<Dense<float>>(ch, o.num_classes));
  for (std::size_t i = 0; i < net.num_layers(); ++i) init_params(net.layer(i), derive_seed(seed, i));
  net.validate();
  return net;
}

}  // namespace food::nn
