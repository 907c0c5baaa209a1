#include "food/scoring.hpp"

#include <cmath>
#include <limits>

#include "food/train.hpp"

namespace food::scoring {

namespace {
constexpr double kLog2Pi = 1.8378770664093454835606594728112;

std::size_t argmax_first(auto row) {
  std::size_t best = 0;
  for (std::size_t c = 1; c < row.size(); ++c)
    if (row[c] > row[best]) best = c;
  return best;
}
}  // namespace

template <typename T>
double llr(std::span<const T> h) {
  require(h.size() >= 2, ErrorKind::kInvalidArgument, "llr needs at least two classes");
  const std::size_t p = argmax_first(h);
  // mean of the margins rather than max minus mean: a common offset in h
  // cancels before any rounding
  double margins = 0;
  for (std::size_t c = 0; c < h.size(); ++c)
    if (c != p) margins += static_cast<double>(h[p]) - static_cast<double>(h[c]);
  return margins / static_cast<double>(h.size() - 1);
}

template <typename T>
T llr_with_grad(std::span<const T> h, std::span<T> grad) {
  require(grad.size() == h.size(), ErrorKind::kShape, "llr gradient width mismatch");
  const double v = llr(h);
  const std::size_t p = argmax_first(h);
  const T w = static_cast<T>(-1.0 / static_cast<double>(h.size() - 1));
  for (std::size_t c = 0; c < h.size(); ++c) grad[c] = c == p ? T(1) : w;
  return static_cast<T>(v);
}

template <typename T>
double msp(std::span<const T> h) {
  require(h.size() >= 2, ErrorKind::kInvalidArgument, "msp needs at least two classes");
  const double mx = static_cast<double>(h[argmax_first(h)]);
  double z = 0;
  for (const T v : h) z += std::exp(static_cast<double>(v) - mx);
  return 1.0 / z;
}

template double llr<float>(std::span<const float>);
template double llr<double>(std::span<const double>);
template float llr_with_grad<float>(std::span<const float>, std::span<float>);
template double llr_with_grad<double>(std::span<const double>, std::span<double>);
template double msp<float>(std::span<const float>);
template double msp<double>(std::span<const double>);

std::string to_string(PoolKind k) { return k == PoolKind::kMax ? "max" : "average"; }
std::string to_string(PoolPolicy p) { return p == PoolPolicy::kMixed ? "mixed" : "average"; }

PoolKind parse_pool_kind(const std::string& s) {
  if (s == "max") return PoolKind::kMax;
  if (s == "average") return PoolKind::kAverage;
  fail(ErrorKind::kFormat, "unknown pooling kind '" + s + "'");
}

PoolPolicy parse_pool_policy(const std::string& s) {
  if (s == "mixed") return PoolPolicy::kMixed;
  if (s == "average") return PoolPolicy::kAverage;
  fail(ErrorKind::kConfig, "unknown pooling policy '" + s + "' (expected mixed or average)");
}

PoolKind pool_kind(std::size_t l, std::size_t L, PoolPolicy policy) {
  require(l >= 1 && l <= L, ErrorKind::kInvalidArgument, "layer index out of range");
  if (policy == PoolPolicy::kAverage) return PoolKind::kAverage;
  return l <= L / 2 ? PoolKind::kMax : PoolKind::kAverage;
}

template <typename T>
std::vector<double> spatial_pool(std::span<const T> rep, std::size_t channels, PoolKind kind) {
  require(channels > 0 && !rep.empty() && rep.size() % channels == 0, ErrorKind::kShape,
          "spatial_pool: empty spatial extent");
  const std::size_t hw = rep.size() / channels;
  std::vector<double> out(channels);
  for (std::size_t c = 0; c < channels; ++c) {
    const T* p = rep.data() + c * hw;
    if (kind == PoolKind::kMax) {
      T m = p[0];
      for (std::size_t i = 1; i < hw; ++i) m = std::max(m, p[i]);
      out[c] = static_cast<double>(m);
    } else {
      double s = 0;
      for (std::size_t i = 0; i < hw; ++i) s += static_cast<double>(p[i]);
      out[c] = s / static_cast<double>(hw);
    }
  }
  return out;
}

template std::vector<double> spatial_pool<float>(std::span<const float>, std::size_t, PoolKind);
template std::vector<double> spatial_pool<double>(std::span<const double>, std::size_t, PoolKind);

std::vector<double> spatial_pool(const Tensor& rep, PoolKind kind) {
  require(rep.rank() >= 1, ErrorKind::kShape, "spatial_pool: rank-0 representation");
  return spatial_pool(rep.data(), rep.dim(0), kind);
}

void PooledTaps::append(const PooledTaps& other) {
  if (widths.empty()) {
    *this = other;
    return;
  }
  require(widths == other.widths, ErrorKind::kShape, "pooled tap widths differ");
  for (std::size_t l = 0; l < widths.size(); ++l) rows[l].insert(rows[l].end(), other.rows[l].begin(), other.rows[l].end());
  count += other.count;
}

PooledTaps pool_taps(const std::vector<Tensor>& taps, const std::vector<PoolKind>& kinds) {
  require(taps.size() == kinds.size(), ErrorKind::kMismatch,
          "pooling descriptor covers " + std::to_string(kinds.size()) + " layers, network has " +
              std::to_string(taps.size()) + " taps");
  PooledTaps out;
  out.count = taps.empty() ? 0 : taps[0].dim(0);
  for (std::size_t l = 0; l < taps.size(); ++l) {
    const Tensor& t = taps[l];
    require(t.rank() >= 2, ErrorKind::kShape, "tap output must be batch-first with channels");
    const std::size_t ch = t.dim(1);
    out.widths.push_back(ch);
    std::vector<double> rows;
    rows.reserve(out.count * ch);
    for (std::size_t n = 0; n < out.count; ++n) {
      const auto v = spatial_pool(t.sample(n), ch, kinds[l]);
      rows.insert(rows.end(), v.begin(), v.end());
    }
    out.rows.push_back(std::move(rows));
  }
  return out;
}

void LayerGaussianStats::check_compatible(const std::vector<Shape>& tap_shapes) const {
  require(tap_shapes.size() == layers.size() && kinds.size() == layers.size(), ErrorKind::kMismatch,
          "stats cover " + std::to_string(layers.size()) + " layers, network has " + std::to_string(tap_shapes.size()) +
              " taps");
  for (std::size_t l = 0; l < layers.size(); ++l)
    require(!tap_shapes[l].empty() && tap_shapes[l][0] == layers[l].dim(), ErrorKind::kMismatch,
            "stats layer " + std::to_string(l + 1) + " width " + std::to_string(layers[l].dim()) +
                " does not match tap shape " + shape_str(tap_shapes[l]));
}

void LayerGaussianStats::store(ckpt::Checkpoint& ck, const std::string& prefix) const {
  ck.erase_prefix(prefix + ".");
  nlohmann::json kj = nlohmann::json::array();
  for (auto k : kinds) kj.push_back(to_string(k));
  ck.meta[prefix] = {{"policy", to_string(policy)},
                     {"kinds", kj},
                     {"layers", num_layers()},
                     {"classes", num_classes()}};
  for (std::size_t l = 0; l < layers.size(); ++l)
    for (std::size_t c = 0; c < layers[l].num_classes(); ++c) {
      const std::string base = prefix + ".layer" + std::to_string(l + 1) + ".class" + std::to_string(c);
      std::vector<double> lv(layers[l].var[c].size());
      for (std::size_t j = 0; j < lv.size(); ++j) lv[j] = std::log(layers[l].var[c][j]);
      ck.put(base + ".mu", layers[l].mean[c]);
      ck.put(base + ".logvar", lv);
    }
}

LayerGaussianStats LayerGaussianStats::restore(const ckpt::Checkpoint& ck, const std::string& prefix) {
  require(ck.meta.contains(prefix), ErrorKind::kMissingArtifact, "checkpoint has no '" + prefix + "' statistics");
  const auto& m = ck.meta.at(prefix);
  LayerGaussianStats s;
  s.policy = parse_pool_policy(m.at("policy").get<std::string>());
  for (const auto& k : m.at("kinds")) s.kinds.push_back(parse_pool_kind(k.get<std::string>()));
  const auto L = m.at("layers").get<std::size_t>();
  const auto C = m.at("classes").get<std::size_t>();
  require(s.kinds.size() == L, ErrorKind::kFormat, "pooling descriptor length mismatch");
  for (std::size_t l = 0; l < L; ++l) {
    head::DiagGaussians g;
    for (std::size_t c = 0; c < C; ++c) {
      const std::string base = prefix + ".layer" + std::to_string(l + 1) + ".class" + std::to_string(c);
      g.mean.push_back(ck.get_vec(base + ".mu"));
      auto v = ck.get_vec(base + ".logvar");
      for (auto& x : v) x = std::exp(x);
      g.var.push_back(std::move(v));
    }
    s.layers.push_back(std::move(g));
  }
  return s;
}

LayerGaussianStats fit_layer_stats(const PooledTaps& pooled, std::span<const int> labels, std::size_t num_classes,
                                   PoolPolicy policy) {
  require(pooled.count == labels.size(), ErrorKind::kShape, "pooled rows and labels disagree");
  const std::size_t L = pooled.num_layers();
  require(L >= 1, ErrorKind::kInvalidArgument, "network exports no taps");
  LayerGaussianStats s;
  s.policy = policy;
  for (std::size_t l = 1; l <= L; ++l) s.kinds.push_back(pool_kind(l, L, policy));
  for (std::size_t l = 0; l < L; ++l)
    s.layers.push_back(head::fit_diag_gaussians(pooled.rows[l], pooled.widths[l], labels, num_classes));
  return s;
}

LayerGaussianStats fit_layer_stats(const nn::Network<float>& net, const data::Dataset& train, PoolPolicy policy,
                                   std::size_t batch_size) {
  const std::size_t L = net.num_taps();
  std::vector<PoolKind> kinds;
  for (std::size_t l = 1; l <= L; ++l) kinds.push_back(pool_kind(l, L, policy));
  PooledTaps all;
  train::for_each_batch(net, train.images, batch_size,
                        [&](std::size_t, std::size_t, const nn::Network<float>::Output& o) {
                          all.append(pool_taps(o.taps, kinds));
                        });
  return fit_layer_stats(all, train.labels, train.num_classes, policy);
}

FeatureScorer::FeatureScorer(const LayerGaussianStats& stats) {
  for (const auto& g : stats.layers) {
    std::vector<Class> cls;
    for (std::size_t c = 0; c < g.num_classes(); ++c) {
      Class k;
      k.mean = g.mean[c];
      k.inv_var.resize(g.dim());
      double logdet = 0;
      for (std::size_t j = 0; j < g.dim(); ++j) {
        require(g.var[c][j] > 0, ErrorKind::kNumeric, "layer statistics contain a non-positive variance");
        k.inv_var[j] = 1.0 / g.var[c][j];
        logdet += std::log(g.var[c][j]);
      }
      k.constant = -0.5 * static_cast<double>(g.dim()) * kLog2Pi - 0.5 * logdet;
      cls.push_back(std::move(k));
    }
    layers_.push_back(std::move(cls));
  }
}

double FeatureScorer::layer_feature(std::size_t l, std::span<const double> v) const {
  double best = -std::numeric_limits<double>::infinity();
  for (const Class& k : layers_.at(l)) {
    require(v.size() == k.mean.size(), ErrorKind::kMismatch, "pooled width does not match layer statistics");
    double m = 0;
    for (std::size_t j = 0; j < v.size(); ++j) {
      const double d = v[j] - k.mean[j];
      m += d * d * k.inv_var[j];
    }
    best = std::max(best, k.constant - 0.5 * m);
  }
  return best;
}

std::vector<double> FeatureScorer::features(const PooledTaps& pooled) const {
  require(pooled.num_layers() == layers_.size(), ErrorKind::kMismatch, "pooled layer count does not match statistics");
  const std::size_t L = layers_.size();
  std::vector<double> out(pooled.count * L);
  for (std::size_t n = 0; n < pooled.count; ++n)
    for (std::size_t l = 0; l < L; ++l) out[n * L + l] = layer_feature(l, pooled.row(l, n));
  return out;
}

std::vector<double> layer_features(const LayerGaussianStats& stats, const std::vector<std::vector<double>>& pooled) {
  require(pooled.size() == stats.num_layers(), ErrorKind::kMismatch, "layer count mismatch");
  std::vector<double> out;
  for (std::size_t l = 0; l < pooled.size(); ++l) {
    double best = -std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < stats.layers[l].num_classes(); ++c)
      best = std::max(best, head::log_gaussian(pooled[l], stats.layers[l].mean[c], stats.layers[l].var[c]));
    out.push_back(best);
  }
  return out;
}

std::vector<ScoreVector> score_batch(const nn::Network<float>& net, const LayerGaussianStats& stats,
                                     const Tensor& batch) {
  stats.check_compatible(net.tap_shapes());
  const auto out = net.forward(batch);
  const PooledTaps pooled = pool_taps(out.taps, stats.kinds);
  const FeatureScorer scorer(stats);
  const auto feats = scorer.features(pooled);
  const std::size_t L = stats.num_layers();
  std::vector<ScoreVector> res(pooled.count);
  for (std::size_t n = 0; n < res.size(); ++n) {
    const auto row = out.head.sample(n);
    res[n].features.assign(feats.begin() + static_cast<std::ptrdiff_t>(n * L),
                           feats.begin() + static_cast<std::ptrdiff_t>((n + 1) * L));
    res[n].llr = llr(row);
    res[n].msp = msp(row);
    res[n].head.assign(row.begin(), row.end());
  }
  return res;
}

}  // namespace food::scoring
