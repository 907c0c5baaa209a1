#include "food/layers.hpp"

#include <cmath>

#include "food/gausshead.hpp"
#include "food/kernels.hpp"
#include "food/rng.hpp"

namespace food::nn {

template <typename T>
std::size_t Layer<T>::num_trainable() const {
  std::size_t n = 0;
  for (const auto& p : const_cast<Layer*>(this)->params()) n += p.trainable ? 1 : 0;
  return n;
}

namespace {

void expect_rank(const Shape& s, std::size_t rank, const char* layer) {
  require(s.size() == rank, ErrorKind::kShape,
          std::string(layer) + " expects rank-" + std::to_string(rank) + " input, got " + shape_str(s));
}

template <typename T>
std::vector<Param<T>> prefixed(std::vector<Param<T>> ps, const std::string& prefix) {
  for (auto& p : ps) p.name = prefix + p.name;
  return ps;
}

}  // namespace

// ---------------------------------------------------------------------------
// Normalize

template <typename T>
Normalize<T>::Normalize(std::vector<double> mean, std::vector<double> stddev)
    : mean_(Shape{mean.size()}), std_(Shape{stddev.size()}) {
  require(mean.size() == stddev.size() && !mean.empty(), ErrorKind::kInvalidArgument, "normalize: bad channel stats");
  for (std::size_t c = 0; c < mean.size(); ++c) {
    require(stddev[c] > 0, ErrorKind::kInvalidArgument, "normalize: std must be positive");
    mean_[c] = static_cast<T>(mean[c]);
    std_[c] = static_cast<T>(stddev[c]);
  }
}

template <typename T>
json Normalize<T>::describe() const {
  return {{"type", "normalize"}, {"channels", mean_.size()}};
}

template <typename T>
BasicTensor<T> Normalize<T>::forward(const BasicTensor<T>& x, Mode, Cache<T>*) const {
  require(x.rank() >= 2 && x.dim(1) == mean_.size(), ErrorKind::kShape, "normalize: channel mismatch");
  BasicTensor<T> y(x.shape());
  const std::size_t N = x.dim(0), C = x.dim(1), P = x.sample_size() / C;
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t c = 0; c < C; ++c) {
      const T* src = x.ptr() + (n * C + c) * P;
      T* dst = y.ptr() + (n * C + c) * P;
      for (std::size_t p = 0; p < P; ++p) dst[p] = (src[p] - mean_[c]) / std_[c];
    }
  return y;
}

template <typename T>
BasicTensor<T> Normalize<T>::backward(const BasicTensor<T>& g, const Cache<T>&, std::span<BasicTensor<T>>,
                                      bool need_input_grad) const {
  if (!need_input_grad) return {};
  BasicTensor<T> dx(g.shape());
  const std::size_t N = g.dim(0), C = g.dim(1), P = g.sample_size() / C;
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t c = 0; c < C; ++c)
      for (std::size_t p = 0; p < P; ++p) dx[(n * C + c) * P + p] = g[(n * C + c) * P + p] / std_[c];
  return dx;
}

template <typename T>
std::vector<Param<T>> Normalize<T>::params() {
  return {{"mean", &mean_, false}, {"std", &std_, false}};
}

// ---------------------------------------------------------------------------
// Conv2d

template <typename T>
Conv2d<T>::Conv2d(std::size_t in_ch, std::size_t out_ch, std::size_t kernel, std::size_t stride, std::size_t pad,
                  bool bias)
    : in_(in_ch),
      out_(out_ch),
      k_(kernel),
      stride_(stride),
      pad_(pad),
      has_bias_(bias),
      weight_(Shape{out_ch, in_ch, kernel, kernel}),
      bias_(Shape{bias ? out_ch : 0}) {
  require(in_ch > 0 && out_ch > 0 && kernel > 0 && stride > 0, ErrorKind::kInvalidArgument, "conv2d: bad geometry");
}

template <typename T>
json Conv2d<T>::describe() const {
  return {{"type", "conv2d"}, {"in", in_},         {"out", out_},  {"kernel", k_},
          {"stride", stride_}, {"pad", pad_}, {"bias", has_bias_}};
}

template <typename T>
Shape Conv2d<T>::output_shape(const Shape& in) const {
  expect_rank(in, 3, "conv2d");
  require(in[0] == in_, ErrorKind::kShape,
          "conv2d: expected " + std::to_string(in_) + " channels, got " + shape_str(in));
  require(in[1] + 2 * pad_ >= k_ && in[2] + 2 * pad_ >= k_, ErrorKind::kShape, "conv2d: kernel larger than input");
  return {out_, (in[1] + 2 * pad_ - k_) / stride_ + 1, (in[2] + 2 * pad_ - k_) / stride_ + 1};
}

// Activations are im2col'ed over the whole batch: cols[K, N*P] with
// K = in*k*k and P = output pixels, so one GEMM covers the batch.
template <typename T>
BasicTensor<T> Conv2d<T>::forward(const BasicTensor<T>& x, Mode, Cache<T>* cache) const {
  expect_rank(x.shape(), 4, "conv2d");
  const Shape os = output_shape(x.sample_shape());
  const std::size_t N = x.dim(0), H = x.dim(2), W = x.dim(3);
  const std::size_t Ho = os[1], Wo = os[2], P = Ho * Wo, K = in_ * k_ * k_, NP = N * P;
  const long h = static_cast<long>(H), w = static_cast<long>(W), pad = static_cast<long>(pad_);

  BasicTensor<T> cols(Shape{K, NP});
  parallel_for(0, K, [&](std::size_t r0, std::size_t r1) {
    for (std::size_t r = r0; r < r1; ++r) {
      const std::size_t ci = r / (k_ * k_), ky = (r / k_) % k_, kx = r % k_;
      T* dst = cols.ptr() + r * NP;
      for (std::size_t n = 0; n < N; ++n) {
        const T* plane = x.ptr() + (n * in_ + ci) * H * W;
        for (std::size_t oy = 0; oy < Ho; ++oy) {
          const long iy = static_cast<long>(oy * stride_ + ky) - pad;
          for (std::size_t ox = 0; ox < Wo; ++ox) {
            const long ix = static_cast<long>(ox * stride_ + kx) - pad;
            *dst++ = (iy >= 0 && iy < h && ix >= 0 && ix < w) ? plane[iy * w + ix] : T(0);
          }
        }
      }
    }
  });

  BasicTensor<T> ym(Shape{out_, NP});
  kernels::gemm_nn(out_, NP, K, weight_.ptr(), cols.ptr(), ym.ptr(), false);

  BasicTensor<T> y(Shape{N, out_, Ho, Wo});
  for (std::size_t o = 0; o < out_; ++o) {
    const T b = has_bias_ ? bias_[o] : T(0);
    for (std::size_t n = 0; n < N; ++n) {
      const T* src = ym.ptr() + o * NP + n * P;
      T* dst = y.ptr() + (n * out_ + o) * P;
      for (std::size_t p = 0; p < P; ++p) dst[p] = src[p] + b;
    }
  }
  if (cache) {
    cache->saved = {std::move(cols)};
    cache->dims = {H, W};
  }
  return y;
}

template <typename T>
BasicTensor<T> Conv2d<T>::backward(const BasicTensor<T>& g, const Cache<T>& cache, std::span<BasicTensor<T>> grads,
                                   bool need_input_grad) const {
  const BasicTensor<T>& cols = cache.saved.at(0);
  const std::size_t N = g.dim(0), Ho = g.dim(2), Wo = g.dim(3), P = Ho * Wo, NP = N * P, K = in_ * k_ * k_;
  const std::size_t H = cache.dims.at(0), W = cache.dims.at(1);

  BasicTensor<T> gm(Shape{out_, NP});
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t o = 0; o < out_; ++o) std::copy_n(g.ptr() + (n * out_ + o) * P, P, gm.ptr() + o * NP + n * P);

  kernels::gemm_nt(out_, K, NP, gm.ptr(), cols.ptr(), grads[0].ptr(), true);
  if (has_bias_)
    for (std::size_t o = 0; o < out_; ++o) {
      T s = 0;
      for (std::size_t j = 0; j < NP; ++j) s += gm[o * NP + j];
      grads[1][o] += s;
    }
  if (!need_input_grad) return {};

  BasicTensor<T> dcols(Shape{K, NP});
  kernels::gemm_tn(K, NP, out_, weight_.ptr(), gm.ptr(), dcols.ptr(), false);

  const long h = static_cast<long>(H), w = static_cast<long>(W), pad = static_cast<long>(pad_);
  BasicTensor<T> dx(Shape{N, in_, H, W});
  parallel_for(0, N * in_, [&](std::size_t q0, std::size_t q1) {
    for (std::size_t q = q0; q < q1; ++q) {
      const std::size_t n = q / in_, ci = q % in_;
      T* plane = dx.ptr() + q * H * W;
      for (std::size_t ky = 0; ky < k_; ++ky)
        for (std::size_t kx = 0; kx < k_; ++kx) {
          const T* src = dcols.ptr() + ((ci * k_ + ky) * k_ + kx) * NP + n * P;
          for (std::size_t oy = 0; oy < Ho; ++oy) {
            const long iy = static_cast<long>(oy * stride_ + ky) - pad;
            if (iy < 0 || iy >= h) continue;
            for (std::size_t ox = 0; ox < Wo; ++ox) {
              const long ix = static_cast<long>(ox * stride_ + kx) - pad;
              if (ix >= 0 && ix < w) plane[iy * w + ix] += src[oy * Wo + ox];
            }
          }
        }
    }
  });
  return dx;
}

template <typename T>
std::vector<Param<T>> Conv2d<T>::params() {
  std::vector<Param<T>> p{{"weight", &weight_, true}};
  if (has_bias_) p.push_back({"bias", &bias_, true});
  return p;
}

// ---------------------------------------------------------------------------
// BatchNorm2d

template <typename T>
BatchNorm2d<T>::BatchNorm2d(std::size_t channels, double momentum, double eps)
    : ch_(channels),
      momentum_(momentum),
      eps_(eps),
      gamma_(Shape{channels}, T(1)),
      beta_(Shape{channels}, T(0)),
      running_mean_(Shape{channels}, T(0)),
      running_var_(Shape{channels}, T(1)) {}

template <typename T>
json BatchNorm2d<T>::describe() const {
  return {{"type", "batchnorm2d"}, {"channels", ch_}, {"momentum", momentum_}, {"eps", eps_}};
}

// saved: [xhat, inv_std, batch_mean, batch_var_unbiased] in train mode,
// [xhat, inv_std] in eval mode.
template <typename T>
BasicTensor<T> BatchNorm2d<T>::forward(const BasicTensor<T>& x, Mode mode, Cache<T>* cache) const {
  expect_rank(x.shape(), 4, "batchnorm2d");
  require(x.dim(1) == ch_, ErrorKind::kShape, "batchnorm2d: channel mismatch");
  const std::size_t N = x.dim(0), P = x.dim(2) * x.dim(3), M = N * P;
  BasicTensor<T> mean(Shape{ch_}), var(Shape{ch_}), inv_std(Shape{ch_});
  if (mode == Mode::kTrain) {
    require(M > 1, ErrorKind::kShape, "batchnorm2d: train mode needs more than one value per channel");
    for (std::size_t c = 0; c < ch_; ++c) {
      double s = 0;
      for (std::size_t n = 0; n < N; ++n) {
        const T* src = x.ptr() + (n * ch_ + c) * P;
        for (std::size_t p = 0; p < P; ++p) s += src[p];
      }
      const double mu = s / static_cast<double>(M);
      double ss = 0;
      for (std::size_t n = 0; n < N; ++n) {
        const T* src = x.ptr() + (n * ch_ + c) * P;
        for (std::size_t p = 0; p < P; ++p) ss += (src[p] - mu) * (src[p] - mu);
      }
      mean[c] = static_cast<T>(mu);
      var[c] = static_cast<T>(ss / static_cast<double>(M));
    }
  } else {
    mean = running_mean_;
    var = running_var_;
  }
  for (std::size_t c = 0; c < ch_; ++c) inv_std[c] = T(1) / std::sqrt(var[c] + static_cast<T>(eps_));

  BasicTensor<T> xhat(x.shape()), y(x.shape());
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t c = 0; c < ch_; ++c) {
      const std::size_t off = (n * ch_ + c) * P;
      for (std::size_t p = 0; p < P; ++p) {
        const T v = (x[off + p] - mean[c]) * inv_std[c];
        xhat[off + p] = v;
        y[off + p] = gamma_[c] * v + beta_[c];
      }
    }
  if (cache) {
    cache->saved = {std::move(xhat), inv_std};
    cache->dims = {mode == Mode::kTrain ? 1u : 0u};
    if (mode == Mode::kTrain) {
      BasicTensor<T> unbiased(Shape{ch_});
      for (std::size_t c = 0; c < ch_; ++c)
        unbiased[c] = var[c] * static_cast<T>(M) / static_cast<T>(M - 1);
      cache->saved.push_back(mean);
      cache->saved.push_back(std::move(unbiased));
    }
  }
  return y;
}

template <typename T>
BasicTensor<T> BatchNorm2d<T>::backward(const BasicTensor<T>& g, const Cache<T>& cache,
                                        std::span<BasicTensor<T>> grads, bool need_input_grad) const {
  const BasicTensor<T>& xhat = cache.saved.at(0);
  const BasicTensor<T>& inv_std = cache.saved.at(1);
  const bool train = cache.dims.at(0) == 1;
  const std::size_t N = g.dim(0), P = g.dim(2) * g.dim(3);
  const T M = static_cast<T>(N * P);

  BasicTensor<T> sum_g(Shape{ch_}), sum_gx(Shape{ch_});
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t c = 0; c < ch_; ++c) {
      const std::size_t off = (n * ch_ + c) * P;
      for (std::size_t p = 0; p < P; ++p) {
        sum_g[c] += g[off + p];
        sum_gx[c] += g[off + p] * xhat[off + p];
      }
    }
  for (std::size_t c = 0; c < ch_; ++c) {
    grads[0][c] += sum_gx[c];
    grads[1][c] += sum_g[c];
  }
  if (!need_input_grad) return {};

  BasicTensor<T> dx(g.shape());
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t c = 0; c < ch_; ++c) {
      const std::size_t off = (n * ch_ + c) * P;
      const T scale = gamma_[c] * inv_std[c];
      for (std::size_t p = 0; p < P; ++p) {
        if (train)
          dx[off + p] = scale / M * (M * g[off + p] - sum_g[c] - xhat[off + p] * sum_gx[c]);
        else
          dx[off + p] = scale * g[off + p];
      }
    }
  return dx;
}

template <typename T>
std::vector<Param<T>> BatchNorm2d<T>::params() {
  return {{"gamma", &gamma_, true},
          {"beta", &beta_, true},
          {"running_mean", &running_mean_, false},
          {"running_var", &running_var_, false}};
}

template <typename T>
void BatchNorm2d<T>::commit(const Cache<T>& cache) {
  if (cache.dims.empty() || cache.dims[0] != 1) return;
  const auto& mean = cache.saved.at(2);
  const auto& var = cache.saved.at(3);
  const T m = static_cast<T>(momentum_);
  for (std::size_t c = 0; c < ch_; ++c) {
    running_mean_[c] = (T(1) - m) * running_mean_[c] + m * mean[c];
    running_var_[c] = (T(1) - m) * running_var_[c] + m * var[c];
  }
}

// ---------------------------------------------------------------------------
// ReLU

template <typename T>
BasicTensor<T> ReLU<T>::forward(const BasicTensor<T>& x, Mode, Cache<T>* cache) const {
  BasicTensor<T> y(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = x[i] > T(0) ? x[i] : T(0);
  if (cache) cache->saved = {y};
  return y;
}

template <typename T>
BasicTensor<T> ReLU<T>::backward(const BasicTensor<T>& g, const Cache<T>& cache, std::span<BasicTensor<T>>,
                                 bool need_input_grad) const {
  if (!need_input_grad) return {};
  const auto& y = cache.saved.at(0);
  BasicTensor<T> dx(g.shape());
  for (std::size_t i = 0; i < g.size(); ++i) dx[i] = y[i] > T(0) ? g[i] : T(0);
  return dx;
}

// ---------------------------------------------------------------------------
// ResidualBlock

template <typename T>
ResidualBlock<T>::ResidualBlock(std::size_t in_ch, std::size_t out_ch, std::size_t stride)
    : in_(in_ch),
      out_(out_ch),
      stride_(stride),
      conv1_(in_ch, out_ch, 3, stride, 1, false),
      conv2_(out_ch, out_ch, 3, 1, 1, false),
      bn1_(out_ch),
      bn2_(out_ch) {
  if (in_ch != out_ch || stride != 1) {
    short_conv_.emplace(in_ch, out_ch, 1, stride, 0, false);
    short_bn_.emplace(out_ch);
  }
}

template <typename T>
json ResidualBlock<T>::describe() const {
  return {{"type", "residual"}, {"in", in_}, {"out", out_}, {"stride", stride_}};
}

// children: conv1, bn1, relu1, conv2, bn2, [short_conv, short_bn], relu_out
template <typename T>
BasicTensor<T> ResidualBlock<T>::forward(const BasicTensor<T>& x, Mode mode, Cache<T>* cache) const {
  const bool keep = cache != nullptr;
  std::vector<Cache<T>> ch(keep ? 8 : 0);
  auto slot = [&](std::size_t i) { return keep ? &ch[i] : nullptr; };
  ReLU<T> relu;

  auto h = conv1_.forward(x, mode, slot(0));
  h = bn1_.forward(h, mode, slot(1));
  h = relu.forward(h, mode, slot(2));
  h = conv2_.forward(h, mode, slot(3));
  h = bn2_.forward(h, mode, slot(4));
  if (short_conv_) {
    auto s = short_conv_->forward(x, mode, slot(5));
    s = short_bn_->forward(s, mode, slot(6));
    for (std::size_t i = 0; i < h.size(); ++i) h[i] += s[i];
  } else {
    for (std::size_t i = 0; i < h.size(); ++i) h[i] += x[i];
  }
  h = relu.forward(h, mode, slot(7));
  if (keep) cache->children = std::move(ch);
  return h;
}

template <typename T>
BasicTensor<T> ResidualBlock<T>::backward(const BasicTensor<T>& g, const Cache<T>& cache,
                                          std::span<BasicTensor<T>> grads, bool need_input_grad) const {
  const auto& ch = cache.children;
  ReLU<T> relu;
  // grads follow params(): conv1.w, bn1.{g,b}, conv2.w, bn2.{g,b}, [short_conv.w, short_bn.{g,b}]
  auto g_sum = relu.backward(g, ch[7], {}, true);
  auto h = bn2_.backward(g_sum, ch[4], grads.subspan(4, 2), true);
  h = conv2_.backward(h, ch[3], grads.subspan(3, 1), true);
  h = relu.backward(h, ch[2], {}, true);
  h = bn1_.backward(h, ch[1], grads.subspan(1, 2), true);
  h = conv1_.backward(h, ch[0], grads.subspan(0, 1), need_input_grad);
  if (short_conv_) {
    auto s = short_bn_->backward(g_sum, ch[6], grads.subspan(7, 2), true);
    s = short_conv_->backward(s, ch[5], grads.subspan(6, 1), need_input_grad);
    if (need_input_grad)
      for (std::size_t i = 0; i < h.size(); ++i) h[i] += s[i];
  } else if (need_input_grad) {
    for (std::size_t i = 0; i < h.size(); ++i) h[i] += g_sum[i];
  }
  return need_input_grad ? h : BasicTensor<T>{};
}

template <typename T>
std::vector<Param<T>> ResidualBlock<T>::params() {
  // Trainable slots come first, in a fixed order, so backward() can index
  // the gradient span directly; buffers follow.
  std::vector<Param<T>> all;
  auto add = [&all](auto& layer, const std::string& prefix) {
    for (auto& p : prefixed(layer.params(), prefix)) all.push_back(p);
  };
  add(conv1_, "conv1.");
  add(bn1_, "bn1.");
  add(conv2_, "conv2.");
  add(bn2_, "bn2.");
  if (short_conv_) {
    add(*short_conv_, "short_conv.");
    add(*short_bn_, "short_bn.");
  }
  std::stable_partition(all.begin(), all.end(), [](const Param<T>& p) { return p.trainable; });
  return all;
}

template <typename T>
void ResidualBlock<T>::commit(const Cache<T>& cache) {
  bn1_.commit(cache.children.at(1));
  bn2_.commit(cache.children.at(4));
  if (short_bn_) short_bn_->commit(cache.children.at(6));
}

// ---------------------------------------------------------------------------
// GlobalAvgPool

template <typename T>
BasicTensor<T> GlobalAvgPool<T>::forward(const BasicTensor<T>& x, Mode, Cache<T>* cache) const {
  expect_rank(x.shape(), 4, "global_avg_pool");
  const std::size_t N = x.dim(0), C = x.dim(1), P = x.dim(2) * x.dim(3);
  BasicTensor<T> y(Shape{N, C});
  for (std::size_t q = 0; q < N * C; ++q) {
    T s = 0;
    for (std::size_t p = 0; p < P; ++p) s += x[q * P + p];
    y[q] = s / static_cast<T>(P);
  }
  if (cache) cache->dims = {x.dim(2), x.dim(3)};
  return y;
}

template <typename T>
BasicTensor<T> GlobalAvgPool<T>::backward(const BasicTensor<T>& g, const Cache<T>& cache, std::span<BasicTensor<T>>,
                                          bool need_input_grad) const {
  if (!need_input_grad) return {};
  const std::size_t H = cache.dims.at(0), W = cache.dims.at(1), P = H * W;
  BasicTensor<T> dx(Shape{g.dim(0), g.dim(1), H, W});
  for (std::size_t q = 0; q < g.size(); ++q)
    for (std::size_t p = 0; p < P; ++p) dx[q * P + p] = g[q] / static_cast<T>(P);
  return dx;
}

// ---------------------------------------------------------------------------
// Dense

template <typename T>
Dense<T>::Dense(std::size_t in, std::size_t out)
    : in_(in), out_(out), weight_(Shape{out, in}), bias_(Shape{out}) {
  require(in > 0 && out > 0, ErrorKind::kInvalidArgument, "dense: zero width");
}

template <typename T>
json Dense<T>::describe() const {
  return {{"type", "dense"}, {"in", in_}, {"out", out_}};
}

template <typename T>
BasicTensor<T> Dense<T>::forward(const BasicTensor<T>& x, Mode, Cache<T>* cache) const {
  require(x.rank() >= 2 && x.sample_size() == in_, ErrorKind::kShape,
          "dense: expected " + std::to_string(in_) + " inputs per sample, got " + shape_str(x.shape()));
  const std::size_t N = x.dim(0);
  BasicTensor<T> y(Shape{N, out_});
  kernels::gemm_nt(N, out_, in_, x.ptr(), weight_.ptr(), y.ptr(), false);
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t o = 0; o < out_; ++o) y[n * out_ + o] += bias_[o];
  if (cache) cache->saved = {x};
  return y;
}

template <typename T>
BasicTensor<T> Dense<T>::backward(const BasicTensor<T>& g, const Cache<T>& cache, std::span<BasicTensor<T>> grads,
                                  bool need_input_grad) const {
  const auto& x = cache.saved.at(0);
  const std::size_t N = g.dim(0);
  kernels::gemm_tn(out_, in_, N, g.ptr(), x.ptr(), grads[0].ptr(), true);
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t o = 0; o < out_; ++o) grads[1][o] += g[n * out_ + o];
  if (!need_input_grad) return {};
  BasicTensor<T> dx(x.shape());
  kernels::gemm_nn(N, in_, out_, g.ptr(), weight_.ptr(), dx.ptr(), false);
  return dx;
}

template <typename T>
std::vector<Param<T>> Dense<T>::params() {
  return {{"weight", &weight_, true}, {"bias", &bias_, true}};
}

// ---------------------------------------------------------------------------
// factory / init

template <typename T>
std::unique_ptr<Layer<T>> make_layer(const json& d) {
  const std::string type = d.at("type").get<std::string>();
  if (type == "normalize") {
    const std::size_t c = d.at("channels").get<std::size_t>();
    return std::make_unique<Normalize<T>>(std::vector<double>(c, 0.0), std::vector<double>(c, 1.0));
  }
  if (type == "conv2d")
    return std::make_unique<Conv2d<T>>(d.at("in"), d.at("out"), d.at("kernel"), d.at("stride"), d.at("pad"),
                                       d.at("bias").get<bool>());
  if (type == "batchnorm2d")
    return std::make_unique<BatchNorm2d<T>>(d.at("channels"), d.value("momentum", 0.1), d.value("eps", 1e-5));
  if (type == "relu") return std::make_unique<ReLU<T>>();
  if (type == "residual") return std::make_unique<ResidualBlock<T>>(d.at("in"), d.at("out"), d.at("stride"));
  if (type == "global_avg_pool") return std::make_unique<GlobalAvgPool<T>>();
  if (type == "dense") return std::make_unique<Dense<T>>(d.at("in"), d.at("out"));
  if (type == "gaussian_head") return std::make_unique<head::GaussianHead<T>>(d.at("dim"), d.at("classes"));
  fail(ErrorKind::kFormat, "unknown layer type '" + type + "'");
}

template <typename T>
void init_params(Layer<T>& layer, std::uint64_t seed) {
  Rng rng(seed);
  for (auto& p : layer.params()) {
    if (!p.trainable) continue;
    const auto& name = p.name;
    const bool is_weight = name.size() >= 6 && name.compare(name.size() - 6, 6, "weight") == 0;
    if (is_weight && p.value->rank() >= 2) {
      const double fan_in = static_cast<double>(p.value->size() / p.value->dim(0));
      const double sd = std::sqrt(2.0 / fan_in);
      for (auto& v : p.value->data()) v = static_cast<T>(rng.normal(0.0, sd));
    }
  }
}

#define FOOD_INSTANTIATE_LAYERS(T)                                         \
  template class Layer<T>;                                                 \
  template class Normalize<T>;                                             \
  template class Conv2d<T>;                                                \
  template class BatchNorm2d<T>;                                           \
  template class ReLU<T>;                                                  \
  template class ResidualBlock<T>;                                         \
  template class GlobalAvgPool<T>;                                         \
  template class Dense<T>;                                                 \
  template std::unique_ptr<Layer<T>> make_layer<T>(const json&);           \
  template void init_params<T>(Layer<T>&, std::uint64_t);

FOOD_INSTANTIATE_LAYERS(float)
FOOD_INSTANTIATE_LAYERS(double)

}  // namespace food::nn
