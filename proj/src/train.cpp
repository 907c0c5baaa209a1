#include "food/train.hpp"

#include <cmath>
#include <numeric>

#include "food/gausshead.hpp"
#include "food/rng.hpp"

namespace food::train {

namespace {

void check_grads(const std::vector<nn::Param<float>>& params, const std::vector<Tensor>& grads) {
  require(params.size() == grads.size(), ErrorKind::kShape, "optimizer: parameter/gradient count mismatch");
  for (std::size_t i = 0; i < params.size(); ++i)
    require(params[i].value->size() == grads[i].size(), ErrorKind::kShape,
            "optimizer: gradient shape mismatch for " + params[i].name);
}

std::vector<Tensor> zeros_like(const std::vector<nn::Param<float>>& params) {
  std::vector<Tensor> out;
  out.reserve(params.size());
  for (const auto& p : params) out.emplace_back(p.value->shape(), 0.0f);
  return out;
}

}  // namespace

void Sgd::step(std::vector<nn::Param<float>>& params, const std::vector<Tensor>& grads) {
  check_grads(params, grads);
  if (velocity_.empty()) velocity_ = zeros_like(params);
  const auto lr = static_cast<float>(lr_), mom = static_cast<float>(momentum_), wd = static_cast<float>(wd_);
  for (std::size_t i = 0; i < params.size(); ++i) {
    float* p = params[i].value->ptr();
    float* v = velocity_[i].ptr();
    const float* g = grads[i].ptr();
    for (std::size_t j = 0; j < grads[i].size(); ++j) {
      const float gj = g[j] + wd * p[j];
      v[j] = mom * v[j] + gj;
      p[j] -= lr * v[j];
    }
  }
}

void RmsProp::step(std::vector<nn::Param<float>>& params, const std::vector<Tensor>& grads) {
  check_grads(params, grads);
  if (sq_.empty()) sq_ = zeros_like(params);
  const auto lr = static_cast<float>(lr_), a = static_cast<float>(alpha_), eps = static_cast<float>(eps_);
  for (std::size_t i = 0; i < params.size(); ++i) {
    float* p = params[i].value->ptr();
    float* s = sq_[i].ptr();
    const float* g = grads[i].ptr();
    for (std::size_t j = 0; j < grads[i].size(); ++j) {
      s[j] = a * s[j] + (1.0f - a) * g[j] * g[j];
      p[j] -= lr * g[j] / (std::sqrt(s[j]) + eps);
    }
  }
}

double train_epoch(nn::Network<float>& net, const data::Dataset& ds, std::size_t batch_size, std::uint64_t seed,
                   const LossFn& loss, Optimizer& opt, const std::function<void(nn::Network<float>&)>& after_step,
                   nn::Mode mode) {
  require(batch_size >= 2, ErrorKind::kInvalidArgument, "training batch size must be at least 2");
  require(ds.size() >= 2, ErrorKind::kInvalidArgument, "training set needs at least two samples");
  std::vector<std::size_t> order(ds.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(seed);
  rng.shuffle(order);

  double total = 0;
  std::size_t batches = 0;
  for (std::size_t b = 0; b < order.size(); b += batch_size) {
    const std::size_t e = std::min(order.size(), b + batch_size);
    if (e - b < 2) break;
    const std::span<const std::size_t> rows(order.data() + b, e - b);
    const Tensor x = ds.images.gather(rows);
    std::vector<int> y(rows.size());
    for (std::size_t i = 0; i < rows.size(); ++i) y[i] = ds.labels[rows[i]];

    nn::Network<float>::Tape tape;
    float lv = 0;
    const auto grads = net.backward_params(
        x, [&](const Tensor& h, Tensor& g) { return loss(h, y, g); }, mode, &lv, &tape);
    require(std::isfinite(lv), ErrorKind::kNumeric, "training loss is not finite");
    net.commit_running_stats(tape);
    auto params = net.trainable_params();
    opt.step(params, grads);
    if (after_step) after_step(net);
    total += lv;
    ++batches;
  }
  return batches ? total / static_cast<double>(batches) : 0.0;
}

double evaluate_loss(const nn::Network<float>& net, const data::Dataset& ds, std::size_t batch_size,
                     const LossFn& loss) {
  require(ds.size() > 0, ErrorKind::kInvalidArgument, "cannot evaluate on an empty dataset");
  double total = 0;
  for_each_batch(net, ds.images, batch_size, [&](std::size_t b, std::size_t e, const nn::Network<float>::Output& o) {
    Tensor g(o.head.shape());
    const std::span<const int> y(ds.labels.data() + b, e - b);
    total += static_cast<double>(loss(o.head, y, g)) * static_cast<double>(e - b);
  });
  return total / static_cast<double>(ds.size());
}

double accuracy(const nn::Network<float>& net, const data::Dataset& ds, std::size_t batch_size) {
  if (ds.size() == 0) return 0.0;
  std::size_t correct = 0;
  for_each_batch(net, ds.images, batch_size, [&](std::size_t b, std::size_t e, const nn::Network<float>::Output& o) {
    const std::size_t C = o.head.dim(1);
    for (std::size_t n = 0; n < e - b; ++n) {
      const auto row = o.head.sample(n);
      const auto arg = static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin());
      if (arg == ds.labels[b + n]) ++correct;
    }
    (void)C;
  });
  return static_cast<double>(correct) / static_cast<double>(ds.size());
}

std::vector<double> train_classifier(nn::Network<float>& net, const data::Dataset& train,
                                     const ClassifierConfig& cfg) {
  require(cfg.epochs >= 1 && cfg.lr > 0 && cfg.momentum >= 0 && cfg.weight_decay >= 0, ErrorKind::kConfig,
          "invalid classifier training settings");
  Sgd opt(cfg.lr, cfg.momentum, cfg.weight_decay);
  const LossFn ce = [](const Tensor& h, std::span<const int> y, Tensor& g) {
    return head::cross_entropy(h, y, &g);
  };
  std::vector<double> losses;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    // cosine schedule
    const double t = static_cast<double>(epoch) / static_cast<double>(cfg.epochs);
    opt.set_lr(cfg.lr * 0.5 * (1.0 + std::cos(3.14159265358979323846 * t)));
    losses.push_back(train_epoch(net, train, cfg.batch_size, derive_seed(cfg.seed, 1000 + epoch), ce, opt));
  }
  return losses;
}

}  // namespace food::train
