#include "food/gausshead.hpp"

#include <cmath>
#include <limits>
#include <numbers>

#include "food/network.hpp"
#include "food/rng.hpp"
#include "food/train.hpp"

namespace food::head {

namespace {
constexpr double kLog2Pi = 1.8378770664093454835606594728112;
}

double log_gaussian(std::span<const double> x, std::span<const double> mu, std::span<const double> var) {
  require(x.size() == mu.size() && x.size() == var.size(), ErrorKind::kShape, "log_gaussian: dimension mismatch");
  double logdet = 0, maha = 0;
  for (std::size_t j = 0; j < x.size(); ++j) {
    require(var[j] > 0, ErrorKind::kNumeric, "log_gaussian: non-positive variance");
    const double d = x[j] - mu[j];
    logdet += std::log(var[j]);
    maha += d * d / var[j];
  }
  return -0.5 * static_cast<double>(x.size()) * kLog2Pi - 0.5 * logdet - 0.5 * maha;
}

DiagGaussians fit_diag_gaussians(std::span<const double> rows, std::size_t d, std::span<const int> labels,
                                 std::size_t num_classes, double floor, std::size_t min_per_class) {
  require(d > 0 && rows.size() == labels.size() * d, ErrorKind::kShape, "fit_diag_gaussians: rows/labels mismatch");
  require(num_classes > 0, ErrorKind::kInvalidArgument, "fit_diag_gaussians: no classes");
  DiagGaussians g;
  g.mean.assign(num_classes, std::vector<double>(d, 0.0));
  g.var.assign(num_classes, std::vector<double>(d, 0.0));
  std::vector<std::size_t> count(num_classes, 0);
  // Welford
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const int y = labels[i];
    require(y >= 0 && static_cast<std::size_t>(y) < num_classes, ErrorKind::kInvalidArgument,
            "fit_diag_gaussians: label out of range");
    const auto c = static_cast<std::size_t>(y);
    const double k = static_cast<double>(++count[c]);
    for (std::size_t j = 0; j < d; ++j) {
      const double v = rows[i * d + j];
      const double delta = v - g.mean[c][j];
      g.mean[c][j] += delta / k;
      g.var[c][j] += delta * (v - g.mean[c][j]);
    }
  }
  for (std::size_t c = 0; c < num_classes; ++c) {
    require(count[c] >= min_per_class && count[c] > 0, ErrorKind::kInvalidArgument,
            "class " + std::to_string(c) + " has " + std::to_string(count[c]) + " samples, need at least " +
                std::to_string(std::max<std::size_t>(min_per_class, 1)));
    for (auto& v : g.var[c]) v = std::max(v / static_cast<double>(count[c]), floor);
  }
  return g;
}

template <typename T>
GaussianHead<T>::GaussianHead(std::size_t dim, std::size_t classes) : dim_(dim), classes_(classes) {
  require(dim > 0 && classes > 0, ErrorKind::kInvalidArgument, "gaussian head needs dim > 0 and classes > 0");
  for (std::size_t c = 0; c < classes; ++c) {
    mu_.emplace_back(Shape{dim}, T(0));
    logvar_.emplace_back(Shape{dim}, T(0));
  }
}

template <typename T>
Shape GaussianHead<T>::output_shape(const Shape& in) const {
  require(shape_size(in) == dim_, ErrorKind::kShape,
          "gaussian head expects " + std::to_string(dim_) + " features, got " + shape_str(in));
  return {classes_};
}

template <typename T>
BasicTensor<T> GaussianHead<T>::forward(const BasicTensor<T>& x, nn::Mode, nn::Cache<T>* cache) const {
  const std::size_t N = x.dim(0);
  require(x.sample_size() == dim_, ErrorKind::kShape, "gaussian head input has wrong width");
  BasicTensor<T> out(Shape{N, classes_});
  std::vector<double> inv(dim_);
  for (std::size_t c = 0; c < classes_; ++c) {
    const T* mu = mu_[c].ptr();
    const T* s = logvar_[c].ptr();
    double base = -0.5 * static_cast<double>(dim_) * kLog2Pi;
    for (std::size_t j = 0; j < dim_; ++j) {
      base -= 0.5 * static_cast<double>(s[j]);
      inv[j] = std::exp(-static_cast<double>(s[j]));
    }
    for (std::size_t n = 0; n < N; ++n) {
      const T* xr = x.ptr() + n * dim_;
      double m = 0;
      for (std::size_t j = 0; j < dim_; ++j) {
        const double d = static_cast<double>(xr[j]) - static_cast<double>(mu[j]);
        m += d * d * inv[j];
      }
      out[n * classes_ + c] = static_cast<T>(base - 0.5 * m);
    }
  }
  if (cache) cache->saved = {x.reshaped({N, dim_})};
  return out;
}

template <typename T>
BasicTensor<T> GaussianHead<T>::backward(const BasicTensor<T>& g, const nn::Cache<T>& cache,
                                         std::span<BasicTensor<T>> grads, bool need_input_grad) const {
  const BasicTensor<T>& x = cache.saved.at(0);
  const std::size_t N = x.dim(0);
  BasicTensor<T> dx;
  if (need_input_grad) dx = BasicTensor<T>(x.shape());
  std::vector<double> inv(dim_);
  for (std::size_t c = 0; c < classes_; ++c) {
    const T* mu = mu_[c].ptr();
    const T* s = logvar_[c].ptr();
    for (std::size_t j = 0; j < dim_; ++j) inv[j] = std::exp(-static_cast<double>(s[j]));
    T* dmu = grads.empty() ? nullptr : grads[c].ptr();
    T* ds = grads.empty() ? nullptr : grads[classes_ + c].ptr();
    for (std::size_t n = 0; n < N; ++n) {
      const double gc = static_cast<double>(g[n * classes_ + c]);
      if (gc == 0) continue;
      const T* xr = x.ptr() + n * dim_;
      for (std::size_t j = 0; j < dim_; ++j) {
        const double z = (static_cast<double>(xr[j]) - static_cast<double>(mu[j])) * inv[j];
        if (need_input_grad) dx[n * dim_ + j] -= static_cast<T>(gc * z);
        if (dmu) {
          dmu[j] += static_cast<T>(gc * z);
          ds[j] += static_cast<T>(gc * 0.5 * (z * (static_cast<double>(xr[j]) - static_cast<double>(mu[j])) - 1.0));
        }
      }
    }
  }
  return dx;
}

template <typename T>
std::vector<nn::Param<T>> GaussianHead<T>::params() {
  std::vector<nn::Param<T>> out;
  for (std::size_t c = 0; c < classes_; ++c) out.push_back({"mu." + std::to_string(c), &mu_[c], true});
  for (std::size_t c = 0; c < classes_; ++c) out.push_back({"logvar." + std::to_string(c), &logvar_[c], true});
  return out;
}

template <typename T>
void GaussianHead<T>::set_class(std::size_t c, std::span<const double> mean, std::span<const double> var) {
  require(c < classes_ && mean.size() == dim_ && var.size() == dim_, ErrorKind::kShape,
          "set_class: bad class index or dimension");
  for (std::size_t j = 0; j < dim_; ++j) {
    require(var[j] > 0, ErrorKind::kNumeric, "set_class: non-positive variance");
    mu_[c][j] = static_cast<T>(mean[j]);
    logvar_[c][j] = static_cast<T>(std::log(var[j]));
  }
}

template <typename T>
void GaussianHead<T>::clamp_variance(double floor) {
  const T lo = static_cast<T>(std::log(floor));
  for (auto& s : logvar_)
    for (auto& v : s.data()) v = std::max(v, lo);
}

template class GaussianHead<float>;
template class GaussianHead<double>;

GaussianHead<float> init_from_data(const Tensor& penultimate, std::span<const int> labels, std::size_t num_classes) {
  require(penultimate.rank() >= 1 && penultimate.dim(0) == labels.size(), ErrorKind::kShape,
          "init_from_data: representation count does not match labels");
  const std::size_t d = penultimate.sample_size();
  std::vector<double> rows(penultimate.size());
  for (std::size_t i = 0; i < rows.size(); ++i) rows[i] = penultimate[i];
  const DiagGaussians g = fit_diag_gaussians(rows, d, labels, num_classes, kVarianceFloor, 2);
  GaussianHead<float> head(d, num_classes);
  for (std::size_t c = 0; c < num_classes; ++c) head.set_class(c, g.mean[c], g.var[c]);
  head.clamp_variance();
  return head;
}

void install_gaussian_head(nn::Network<float>& net, const data::Dataset& train, std::size_t batch_size) {
  std::vector<Tensor> parts;
  train::for_each_batch(net, train.images, batch_size,
                        [&](std::size_t, std::size_t, const nn::Network<float>::Output& o) {
                          parts.push_back(o.penultimate);
                        });
  const Tensor pen = Tensor::concat_batch(parts);
  net.replace_head(std::make_unique<GaussianHead<float>>(init_from_data(pen, train.labels, net.num_classes())));
}

template <typename T>
T head_loss(const BasicTensor<T>& head_out, std::span<const int> labels, double lambda, BasicTensor<T>* grad) {
  require(head_out.rank() == 2 && head_out.dim(0) == labels.size() && !labels.empty(), ErrorKind::kShape,
          "head_loss: head output and labels disagree");
  const std::size_t m = head_out.dim(0), C = head_out.dim(1);
  if (grad && grad->shape() != head_out.shape()) *grad = BasicTensor<T>(head_out.shape());
  const double inv_m = 1.0 / static_cast<double>(m);
  double ce = 0, rml = 0;
  std::vector<double> p(C);
  for (std::size_t i = 0; i < m; ++i) {
    const int y = labels[i];
    require(y >= 0 && static_cast<std::size_t>(y) < C, ErrorKind::kInvalidArgument, "head_loss: label out of range");
    const T* row = head_out.ptr() + i * C;
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < C; ++c) mx = std::max(mx, static_cast<double>(row[c]));
    double z = 0;
    for (std::size_t c = 0; c < C; ++c) z += (p[c] = std::exp(static_cast<double>(row[c]) - mx));
    const double lse = mx + std::log(z);
    ce += lse - static_cast<double>(row[y]);
    rml -= static_cast<double>(row[y]);
    if (grad) {
      T* gr = grad->ptr() + i * C;
      for (std::size_t c = 0; c < C; ++c) {
        double v = p[c] / z;
        if (static_cast<int>(c) == y) v -= 1.0 + lambda;
        gr[c] = static_cast<T>(v * inv_m);
      }
    }
  }
  return static_cast<T>(ce * inv_m + lambda * rml * inv_m);
}

template float head_loss(const Tensor&, std::span<const int>, double, Tensor*);
template double head_loss(const Tensor64&, std::span<const int>, double, Tensor64*);

void HeadLossConfig::validate() const {
  require(lambda >= 0, ErrorKind::kConfig, "lambda must be non-negative");
  for (double l : lambda_grid) require(l >= 0, ErrorKind::kConfig, "lambda grid values must be non-negative");
  require(epochs >= 1, ErrorKind::kConfig, "fine-tune epochs must be at least 1");
  require(lr >= 0, ErrorKind::kConfig, "fine-tune learning rate must be non-negative");
  require(rms_alpha > 0 && rms_alpha < 1, ErrorKind::kConfig, "rmsprop alpha must lie in (0,1)");
  require(rms_eps > 0, ErrorKind::kConfig, "rmsprop eps must be positive");
  require(batch_size >= 2, ErrorKind::kConfig, "fine-tune batch size must be at least 2");
}

bool EarlyStopper::observe(double val_loss) {
  const std::size_t epoch = first_ + seen_;
  ++seen_;
  if (seen_ == 1) {
    prev_ = best_ = val_loss;
    best_epoch_ = epoch;
    return false;
  }
  const bool increased = val_loss > prev_;
  prev_ = val_loss;
  if (val_loss < best_) {
    best_ = val_loss;
    best_epoch_ = epoch;
  }
  return increased;
}

namespace {

void clamp_head(nn::Network<float>& net) {
  if (auto* h = dynamic_cast<GaussianHead<float>*>(&net.head())) h->clamp_variance();
}

}  // namespace

FinetuneReport finetune(nn::Network<float>& net, const data::Dataset& train, const data::Dataset& val,
                        const HeadLossConfig& cfg) {
  cfg.validate();
  require(dynamic_cast<GaussianHead<float>*>(&net.head()) != nullptr, ErrorKind::kInvalidArgument,
          "finetune requires a gaussian head");
  const double lambda = cfg.lambda;
  const train::LossFn objective = [lambda](const Tensor& h, std::span<const int> y, Tensor& g) {
    return head_loss(h, y, lambda, &g);
  };
  const train::LossFn ce = [](const Tensor& h, std::span<const int> y, Tensor& g) {
    return head_loss(h, y, 0.0, &g);
  };

  FinetuneReport rep;
  rep.lambda = lambda;
  const std::size_t eval_bs = 256;
  EarlyStopper stop(0);
  rep.train_loss.push_back(train::evaluate_loss(net, train, eval_bs, objective));
  rep.val_loss.push_back(train::evaluate_loss(net, val, eval_bs, objective));
  rep.val_ce.push_back(train::evaluate_loss(net, val, eval_bs, ce));
  stop.observe(rep.val_loss.back());
  nn::Network<float> best = net;

  train::RmsProp opt(cfg.lr, cfg.rms_alpha, cfg.rms_eps);
  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    train::train_epoch(net, train, cfg.batch_size, derive_seed(cfg.seed, epoch), objective, opt, clamp_head,
                       cfg.batchnorm_train ? nn::Mode::kTrain : nn::Mode::kEval);
    // same eval-mode pass as epoch 0 so the entries compare
    rep.train_loss.push_back(train::evaluate_loss(net, train, eval_bs, objective));
    rep.val_loss.push_back(train::evaluate_loss(net, val, eval_bs, objective));
    rep.val_ce.push_back(train::evaluate_loss(net, val, eval_bs, ce));
    require(std::isfinite(rep.val_loss.back()), ErrorKind::kNumeric,
            "fine-tune validation loss is not finite at epoch " + std::to_string(epoch));
    const bool halt = stop.observe(rep.val_loss.back());
    if (stop.is_best_latest()) best = net;
    if (halt) {
      rep.early_stopped = true;
      break;
    }
  }
  rep.best_epoch = stop.best_epoch();
  net = std::move(best);
  return rep;
}

FinetuneReport finetune_select_lambda(nn::Network<float>& net, const data::Dataset& train, const data::Dataset& val,
                                      const HeadLossConfig& cfg, std::vector<FinetuneReport>* all) {
  require(!cfg.lambda_grid.empty(), ErrorKind::kConfig, "lambda grid is empty");
  const nn::Network<float> start = net;
  FinetuneReport best_rep;
  double best_ce = std::numeric_limits<double>::infinity();
  bool have = false;
  for (double lambda : cfg.lambda_grid) {
    nn::Network<float> cand = start;
    HeadLossConfig c = cfg;
    c.lambda = lambda;
    FinetuneReport rep = finetune(cand, train, val, c);
    const double ce = rep.val_ce.at(rep.best_epoch);
    if (all) all->push_back(rep);
    if (!have || ce < best_ce) {
      have = true;
      best_ce = ce;
      best_rep = rep;
      net = std::move(cand);
    }
  }
  return best_rep;
}

}  // namespace food::head
