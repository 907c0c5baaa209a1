#include "food/detector.hpp"

#include <cmath>
#include <limits>

namespace food::detector {

namespace {

double sigmoid(double z) {
  if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

// log(1 + exp(z)) without overflow
double softplus(double z) { return z > 0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z)); }

}  // namespace

double DetectorModel::logit(std::span<const double> f) const {
  require(f.size() == w.size(), ErrorKind::kShape,
          "detector expects " + std::to_string(w.size()) + " features, got " + std::to_string(f.size()));
  double z = b;
  for (std::size_t j = 0; j < w.size(); ++j) {
    const double x = standardize ? (f[j] - feat_mean[j]) / feat_scale[j] : f[j];
    z += w[j] * x;
  }
  return z;
}

double DetectorModel::score(std::span<const double> f) const { return sigmoid(logit(f)); }

double detector_score(const DetectorModel& m, std::span<const double> f) { return m.score(f); }

void DetectorModel::store(ckpt::Checkpoint& ck, const std::string& prefix) const {
  ck.put(prefix + ".w", w);
  ck.put(prefix + ".b", std::vector<double>{b});
  ck.put(prefix + ".featmean", feat_mean);
  ck.put(prefix + ".featscale", feat_scale);
  ck.meta[prefix] = {{"standardize", standardize}, {"width", w.size()}};
}

DetectorModel DetectorModel::restore(const ckpt::Checkpoint& ck, const std::string& prefix) {
  require(ck.has(prefix + ".w"), ErrorKind::kMissingArtifact, "checkpoint has no fitted detector '" + prefix + "'");
  DetectorModel m;
  m.w = ck.get_vec(prefix + ".w");
  const auto b = ck.get_vec(prefix + ".b");
  require(b.size() == 1, ErrorKind::kFormat, "detector bias must be a single value");
  m.b = b[0];
  m.feat_mean = ck.get_vec(prefix + ".featmean");
  m.feat_scale = ck.get_vec(prefix + ".featscale");
  if (ck.meta.contains(prefix)) m.standardize = ck.meta.at(prefix).value("standardize", true);
  require(m.feat_mean.size() == m.w.size() && m.feat_scale.size() == m.w.size(), ErrorKind::kFormat,
          "detector standardization width mismatch");
  return m;
}

void DetectorFitConfig::validate() const {
  require(l2 >= 0, ErrorKind::kConfig, "detector l2 must be non-negative");
  require(max_steps >= 1, ErrorKind::kConfig, "detector max_steps must be at least 1");
  require(grad_tol > 0, ErrorKind::kConfig, "detector grad_tol must be positive");
  require(lr > 0, ErrorKind::kConfig, "detector learning rate must be positive");
}

DetectorModel fit_detector(std::span<const double> in_rows, std::span<const double> ood_rows, std::size_t width,
                           const DetectorFitConfig& cfg, FitInfo* info) {
  cfg.validate();
  require(width >= 1 && in_rows.size() % width == 0 && ood_rows.size() % width == 0, ErrorKind::kShape,
          "detector rows do not match the feature width");
  const std::size_t n_in = in_rows.size() / width, n_ood = ood_rows.size() / width;
  require(n_in >= 10 && n_ood >= 10, ErrorKind::kInvalidArgument,
          "detector needs at least 10 rows per class (in " + std::to_string(n_in) + ", ood " +
              std::to_string(n_ood) + ")");
  const std::size_t n = n_in + n_ood;

  DetectorModel m;
  m.standardize = cfg.standardize;
  m.feat_mean.assign(width, 0.0);
  m.feat_scale.assign(width, 1.0);
  std::vector<double> X(n * width);
  std::vector<double> y(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double* src = i < n_in ? &in_rows[i * width] : &ood_rows[(i - n_in) * width];
    for (std::size_t j = 0; j < width; ++j) {
      require(std::isfinite(src[j]), ErrorKind::kNumeric, "detector feature is not finite");
      X[i * width + j] = src[j];
    }
    y[i] = i < n_in ? 1.0 : 0.0;
  }
  if (cfg.standardize) {
    for (std::size_t j = 0; j < width; ++j) {
      double mean = 0;
      for (std::size_t i = 0; i < n; ++i) mean += X[i * width + j];
      mean /= static_cast<double>(n);
      double var = 0;
      for (std::size_t i = 0; i < n; ++i) var += (X[i * width + j] - mean) * (X[i * width + j] - mean);
      var /= static_cast<double>(n);
      const double scale = var > 1e-24 ? std::sqrt(var) : 1.0;
      m.feat_mean[j] = mean;
      m.feat_scale[j] = scale;
      for (std::size_t i = 0; i < n; ++i) X[i * width + j] = (X[i * width + j] - mean) / scale;
    }
  }

  m.w.assign(width, 0.0);
  m.b = 0;
  std::vector<double> gw(width);
  FitInfo fi;
  const double inv_n = 1.0 / static_cast<double>(n);
  for (std::size_t step = 0; step < cfg.max_steps; ++step) {
    std::fill(gw.begin(), gw.end(), 0.0);
    double gb = 0, loss = 0;
    for (std::size_t i = 0; i < n; ++i) {
      const double* xi = &X[i * width];
      double z = m.b;
      for (std::size_t j = 0; j < width; ++j) z += m.w[j] * xi[j];
      const double r = sigmoid(z) - y[i];
      loss += softplus(z) - y[i] * z;
      for (std::size_t j = 0; j < width; ++j) gw[j] += r * xi[j];
      gb += r;
    }
    double norm2 = 0, wsq = 0;
    for (std::size_t j = 0; j < width; ++j) {
      gw[j] = gw[j] * inv_n + cfg.l2 * m.w[j];
      norm2 += gw[j] * gw[j];
      wsq += m.w[j] * m.w[j];
    }
    gb *= inv_n;
    norm2 += gb * gb;
    fi.final_loss = loss * inv_n + 0.5 * cfg.l2 * wsq;
    fi.grad_norm = std::sqrt(norm2);
    fi.steps = step;
    if (fi.grad_norm < cfg.grad_tol) {
      fi.converged = true;
      break;
    }
    for (std::size_t j = 0; j < width; ++j) m.w[j] -= cfg.lr * gw[j];
    m.b -= cfg.lr * gb;
    fi.steps = step + 1;
  }
  if (info) *info = fi;
  return m;
}

void cholesky(std::vector<double>& a, std::size_t d) {
  require(a.size() == d * d, ErrorKind::kShape, "cholesky: matrix is not d x d");
  for (std::size_t j = 0; j < d; ++j) {
    double s = a[j * d + j];
    for (std::size_t k = 0; k < j; ++k) s -= a[j * d + k] * a[j * d + k];
    if (!(s > 0)) fail(ErrorKind::kNumeric, "cholesky: matrix is not positive definite (pivot " + std::to_string(j) + ")");
    const double ljj = std::sqrt(s);
    a[j * d + j] = ljj;
    for (std::size_t i = j + 1; i < d; ++i) {
      double t = a[i * d + j];
      for (std::size_t k = 0; k < j; ++k) t -= a[i * d + k] * a[j * d + k];
      a[i * d + j] = t / ljj;
    }
    for (std::size_t k = j + 1; k < d; ++k) a[j * d + k] = 0.0;
  }
}

std::vector<double> spd_inverse(const std::vector<double>& a, std::size_t d) {
  std::vector<double> L = a;
  cholesky(L, d);
  // Solve L Y = I column by column, then L^T X = Y.
  std::vector<double> inv(d * d, 0.0);
  std::vector<double> col(d);
  for (std::size_t c = 0; c < d; ++c) {
    for (std::size_t i = 0; i < d; ++i) {
      double s = i == c ? 1.0 : 0.0;
      for (std::size_t k = 0; k < i; ++k) s -= L[i * d + k] * col[k];
      col[i] = s / L[i * d + i];
    }
    for (std::size_t ii = d; ii-- > 0;) {
      double s = col[ii];
      for (std::size_t k = ii + 1; k < d; ++k) s -= L[k * d + ii] * inv[k * d + c];
      inv[ii * d + c] = s / L[ii * d + ii];
    }
  }
  // symmetrize against rounding
  for (std::size_t i = 0; i < d; ++i)
    for (std::size_t j = i + 1; j < d; ++j) {
      const double v = 0.5 * (inv[i * d + j] + inv[j * d + i]);
      inv[i * d + j] = inv[j * d + i] = v;
    }
  return inv;
}

MdStarStats fit_mdstar(const scoring::PooledTaps& pooled, std::span<const int> labels, std::size_t C, double ridge) {
  require(pooled.count == labels.size() && pooled.count > 0, ErrorKind::kShape, "MD* fit: rows and labels disagree");
  require(ridge >= 0, ErrorKind::kInvalidArgument, "MD* ridge must be non-negative");
  MdStarStats s;
  s.ridge = ridge;
  std::vector<std::size_t> count(C, 0);
  for (int y : labels) {
    require(y >= 0 && static_cast<std::size_t>(y) < C, ErrorKind::kInvalidArgument, "MD* fit: label out of range");
    ++count[static_cast<std::size_t>(y)];
  }
  for (std::size_t c = 0; c < C; ++c)
    require(count[c] > 0, ErrorKind::kInvalidArgument, "MD* fit: class " + std::to_string(c) + " is empty");
  for (std::size_t l = 0; l < pooled.num_layers(); ++l) {
    const std::size_t d = pooled.widths[l];
    MdStarStats::Layer layer;
    layer.dim = d;
    layer.means.assign(C, std::vector<double>(d, 0.0));
    for (std::size_t n = 0; n < pooled.count; ++n) {
      const auto v = pooled.row(l, n);
      auto& mu = layer.means[static_cast<std::size_t>(labels[n])];
      for (std::size_t j = 0; j < d; ++j) mu[j] += v[j];
    }
    for (std::size_t c = 0; c < C; ++c)
      for (auto& x : layer.means[c]) x /= static_cast<double>(count[c]);
    std::vector<double> cov(d * d, 0.0), diff(d);
    for (std::size_t n = 0; n < pooled.count; ++n) {
      const auto v = pooled.row(l, n);
      const auto& mu = layer.means[static_cast<std::size_t>(labels[n])];
      for (std::size_t j = 0; j < d; ++j) diff[j] = v[j] - mu[j];
      for (std::size_t i = 0; i < d; ++i)
        for (std::size_t j = 0; j <= i; ++j) cov[i * d + j] += diff[i] * diff[j];
    }
    double trace = 0;
    for (std::size_t i = 0; i < d; ++i)
      for (std::size_t j = 0; j <= i; ++j) {
        const double v = cov[i * d + j] / static_cast<double>(pooled.count);
        cov[i * d + j] = cov[j * d + i] = v;
        if (i == j) trace += v;
      }
    double add = ridge * trace / static_cast<double>(d);
    if (!(add > 0)) add = 1e-12;  // all-constant layer
    for (std::size_t i = 0; i < d; ++i) cov[i * d + i] += add;
    layer.precision = spd_inverse(cov, d);
    s.layers.push_back(std::move(layer));
  }
  return s;
}

double mdstar_score(const MdStarStats& s, const std::vector<std::span<const double>>& pooled) {
  require(pooled.size() == s.layers.size(), ErrorKind::kMismatch, "MD* layer count mismatch");
  double total = 0;
  std::vector<double> diff;
  for (std::size_t l = 0; l < s.layers.size(); ++l) {
    const auto& L = s.layers[l];
    require(pooled[l].size() == L.dim, ErrorKind::kMismatch, "MD* pooled width mismatch");
    diff.resize(L.dim);
    double best = -std::numeric_limits<double>::infinity();
    for (const auto& mu : L.means) {
      for (std::size_t j = 0; j < L.dim; ++j) diff[j] = pooled[l][j] - mu[j];
      double q = 0;
      for (std::size_t i = 0; i < L.dim; ++i) {
        const double* row = &L.precision[i * L.dim];
        double t = 0;
        for (std::size_t j = 0; j < L.dim; ++j) t += row[j] * diff[j];
        q += diff[i] * t;
      }
      best = std::max(best, -q);
    }
    total += best;
  }
  return total;
}

std::vector<double> mdstar_scores(const MdStarStats& s, const scoring::PooledTaps& pooled) {
  std::vector<double> out(pooled.count);
  std::vector<std::span<const double>> rows(pooled.num_layers());
  for (std::size_t n = 0; n < pooled.count; ++n) {
    for (std::size_t l = 0; l < rows.size(); ++l) rows[l] = pooled.row(l, n);
    out[n] = mdstar_score(s, rows);
  }
  return out;
}

void MdStarStats::store(ckpt::Checkpoint& ck, const std::string& prefix) const {
  ck.erase_prefix(prefix + ".");
  ck.meta[prefix] = {{"layers", layers.size()},
                     {"classes", layers.empty() ? 0 : layers[0].means.size()},
                     {"ridge", ridge},
                     {"pooling", "average"}};
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const std::string base = prefix + ".layer" + std::to_string(l + 1);
    for (std::size_t c = 0; c < layers[l].means.size(); ++c)
      ck.put(base + ".class" + std::to_string(c) + ".mu", layers[l].means[c]);
    ck.put(base + ".precision",
           Tensor64(Shape{layers[l].dim, layers[l].dim}, std::vector<double>(layers[l].precision)));
  }
}

MdStarStats MdStarStats::restore(const ckpt::Checkpoint& ck, const std::string& prefix) {
  require(ck.meta.contains(prefix), ErrorKind::kMissingArtifact, "checkpoint has no '" + prefix + "' statistics");
  const auto& m = ck.meta.at(prefix);
  MdStarStats s;
  s.ridge = m.at("ridge").get<double>();
  const auto L = m.at("layers").get<std::size_t>();
  const auto C = m.at("classes").get<std::size_t>();
  for (std::size_t l = 0; l < L; ++l) {
    const std::string base = prefix + ".layer" + std::to_string(l + 1);
    MdStarStats::Layer layer;
    const auto& p = ck.at(base + ".precision").value;
    require(p.rank() == 2 && p.dim(0) == p.dim(1), ErrorKind::kFormat, "MD* precision must be square");
    layer.dim = p.dim(0);
    layer.precision = p.vec();
    for (std::size_t c = 0; c < C; ++c) layer.means.push_back(ck.get_vec(base + ".class" + std::to_string(c) + ".mu"));
    s.layers.push_back(std::move(layer));
  }
  return s;
}

}  // namespace food::detector
