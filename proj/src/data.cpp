#include "food/data.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "food/binio.hpp"
#include "food/rng.hpp"

namespace food::data {

using nlohmann::json;

Dataset Dataset::subset(std::span<const std::size_t> rows) const {
  Dataset out;
  out.images = images.gather(rows);
  out.labels.reserve(rows.size());
  for (auto r : rows) out.labels.push_back(labels.at(r));
  out.num_classes = num_classes;
  out.name = name;
  out.provenance = provenance;
  return out;
}

std::vector<std::size_t> Dataset::class_counts() const {
  std::vector<std::size_t> counts(num_classes, 0);
  for (int l : labels) ++counts.at(static_cast<std::size_t>(l));
  return counts;
}

void Dataset::validate() const {
  require(images.rank() == 4, ErrorKind::kShape, name + ": images must be [N,ch,h,w], got " + shape_str(images.shape()));
  require(images.dim(0) == labels.size(), ErrorKind::kShape,
          name + ": " + std::to_string(images.dim(0)) + " images but " + std::to_string(labels.size()) + " labels");
  for (float v : images.data())
    require(v >= 0.0f && v <= 1.0f, ErrorKind::kFormat, name + ": pixel value outside [0,1]");
  for (int l : labels)
    require(l >= 0 && static_cast<std::size_t>(l) < num_classes, ErrorKind::kFormat,
            name + ": label " + std::to_string(l) + " out of range");
}

OodMode parse_ood_mode(const std::string& s) {
  if (s == "center-blob") return OodMode::kCenterBlob;
  if (s == "ring") return OodMode::kRing;
  if (s == "uniform-noise") return OodMode::kUniformNoise;
  fail(ErrorKind::kConfig, "unknown ood_mode '" + s + "' (expected center-blob, ring, uniform-noise)");
}

std::string to_string(OodMode m) {
  switch (m) {
    case OodMode::kCenterBlob: return "center-blob";
    case OodMode::kRing: return "ring";
    case OodMode::kUniformNoise: return "uniform-noise";
  }
  return "?";
}

void SyntheticSpec::validate() const {
  require(height > 0 && width > 0 && channels > 0, ErrorKind::kConfig, "synthetic: empty image size");
  require(centers.size() >= 2, ErrorKind::kConfig, "synthetic: need at least two classes");
  for (std::size_t a = 0; a < centers.size(); ++a)
    for (std::size_t b = a + 1; b < centers.size(); ++b)
      require(centers[a].row != centers[b].row || centers[a].col != centers[b].col, ErrorKind::kConfig,
              "synthetic: class centers must be distinct");
  require(blob_sigma > 0, ErrorKind::kConfig, "synthetic: blob_sigma must be positive");
  require(noise_sigma >= 0, ErrorKind::kConfig, "synthetic: noise_sigma must be non-negative");
  require(train_per_class >= 2 && val_per_class >= 1 && test_per_class >= 1, ErrorKind::kConfig,
          "synthetic: per-class sample counts too small");
}

json SyntheticSpec::to_json() const {
  json c = json::array();
  for (const auto& p : centers) c.push_back({p.row, p.col});
  return {{"height", height},
          {"width", width},
          {"channels", channels},
          {"centers", c},
          {"blob_sigma", blob_sigma},
          {"noise_sigma", noise_sigma},
          {"train_per_class", train_per_class},
          {"val_per_class", val_per_class},
          {"test_per_class", test_per_class},
          {"ood_count", ood_count},
          {"ood_mode", data::to_string(ood_mode)},
          {"ood_center", {ood_center.row, ood_center.col}},
          {"ring_radius", ring_radius},
          {"seed", seed}};
}

SyntheticSpec SyntheticSpec::from_json(const json& j) {
  SyntheticSpec s;
  for (const auto& [k, v] : j.items()) {
    if (k == "height") s.height = v.get<std::size_t>();
    else if (k == "width") s.width = v.get<std::size_t>();
    else if (k == "channels") s.channels = v.get<std::size_t>();
    else if (k == "centers") {
      s.centers.clear();
      for (const auto& p : v) s.centers.push_back({p.at(0).get<double>(), p.at(1).get<double>()});
    } else if (k == "blob_sigma") s.blob_sigma = v.get<double>();
    else if (k == "noise_sigma") s.noise_sigma = v.get<double>();
    else if (k == "train_per_class") s.train_per_class = v.get<std::size_t>();
    else if (k == "val_per_class") s.val_per_class = v.get<std::size_t>();
    else if (k == "test_per_class") s.test_per_class = v.get<std::size_t>();
    else if (k == "ood_count") s.ood_count = v.get<std::size_t>();
    else if (k == "ood_mode") s.ood_mode = parse_ood_mode(v.get<std::string>());
    else if (k == "ood_center") s.ood_center = {v.at(0).get<double>(), v.at(1).get<double>()};
    else if (k == "ring_radius") s.ring_radius = v.get<double>();
    else if (k == "seed") s.seed = v.get<std::uint64_t>();
    else fail(ErrorKind::kConfig, "synthetic: unknown key '" + k + "'");
  }
  return s;
}

namespace {

// Renders one image; `profile(i, j)` is the noise-free intensity.
template <typename F>
void render(const SyntheticSpec& s, Rng& rng, float* dst, F profile) {
  for (std::size_t ch = 0; ch < s.channels; ++ch)
    for (std::size_t i = 0; i < s.height; ++i)
      for (std::size_t j = 0; j < s.width; ++j) {
        double v = profile(static_cast<double>(i), static_cast<double>(j));
        if (s.noise_sigma > 0) v += rng.normal(0.0, s.noise_sigma);
        *dst++ = static_cast<float>(std::clamp(v, 0.0, 1.0));
      }
}

double blob(double i, double j, const BlobCenter& c, double sigma) {
  const double d2 = (i - c.row) * (i - c.row) + (j - c.col) * (j - c.col);
  return std::exp(-d2 / (2.0 * sigma * sigma));
}

Dataset make_in_distribution(const SyntheticSpec& s, std::size_t per_class, std::uint64_t stream,
                             const std::string& name) {
  Rng rng(derive_seed(s.seed, stream));
  const std::size_t C = s.num_classes(), n = per_class * C, px = s.channels * s.height * s.width;
  Dataset ds;
  ds.images = Tensor(Shape{n, s.channels, s.height, s.width});
  ds.labels.resize(n);
  ds.num_classes = C;
  ds.name = name;
  // Classes interleaved: sample k has label k % C.
  for (std::size_t k = 0; k < n; ++k) {
    const std::size_t c = k % C;
    ds.labels[k] = static_cast<int>(c);
    render(s, rng, ds.images.ptr() + k * px, [&](double i, double j) { return blob(i, j, s.centers[c], s.blob_sigma); });
  }
  return ds;
}

}  // namespace

SyntheticSplits gen_synthetic(const SyntheticSpec& s) {
  s.validate();
  SyntheticSplits out;
  out.train = make_in_distribution(s, s.train_per_class, 1, "synthetic-train");
  out.val = make_in_distribution(s, s.val_per_class, 2, "synthetic-val");
  out.test_in = make_in_distribution(s, s.test_per_class, 3, "synthetic-test");

  Rng rng(derive_seed(s.seed, 4));
  const std::size_t px = s.channels * s.height * s.width;
  Dataset& ood = out.test_ood;
  ood.images = Tensor(Shape{s.ood_count, s.channels, s.height, s.width});
  ood.labels.assign(s.ood_count, 0);
  ood.num_classes = s.num_classes();
  ood.name = "synthetic-ood-" + to_string(s.ood_mode);
  for (std::size_t k = 0; k < s.ood_count; ++k) {
    float* dst = ood.images.ptr() + k * px;
    switch (s.ood_mode) {
      case OodMode::kCenterBlob:
        render(s, rng, dst, [&](double i, double j) { return blob(i, j, s.ood_center, s.blob_sigma); });
        break;
      case OodMode::kRing:
        render(s, rng, dst, [&](double i, double j) {
          const double r = std::hypot(i - s.ood_center.row, j - s.ood_center.col) - s.ring_radius;
          return std::exp(-r * r / (2.0 * s.blob_sigma * s.blob_sigma / 4.0));
        });
        break;
      case OodMode::kUniformNoise:
        for (std::size_t p = 0; p < px; ++p) dst[p] = static_cast<float>(rng.uniform());
        break;
    }
  }
  const json prov = {{"generator", "synthetic"}, {"spec", s.to_json()}};
  for (Dataset* d : {&out.train, &out.val, &out.test_in, &out.test_ood}) d->provenance = prov;
  return out;
}

std::vector<Dataset> split(const Dataset& ds, const std::vector<double>& fractions, std::uint64_t seed) {
  require(!fractions.empty(), ErrorKind::kInvalidArgument, "split: no fractions");
  double total = 0;
  for (double f : fractions) {
    require(f >= 0, ErrorKind::kInvalidArgument, "split: negative fraction");
    total += f;
  }
  require(std::abs(total - 1.0) < 1e-9, ErrorKind::kInvalidArgument, "split: fractions must sum to 1");

  const std::size_t K = fractions.size();
  std::vector<std::vector<std::size_t>> by_class(ds.num_classes);
  for (std::size_t i = 0; i < ds.size(); ++i) by_class.at(static_cast<std::size_t>(ds.labels[i])).push_back(i);

  Rng rng(seed);
  std::vector<std::vector<std::size_t>> parts(K);
  for (std::size_t c = 0; c < by_class.size(); ++c) {
    auto& idx = by_class[c];
    if (idx.empty()) continue;
    const std::size_t n = idx.size();
    // Largest remainder: floor of exact share, leftovers to the largest
    // fractional parts (ties to the lower split index).
    std::vector<std::size_t> count(K);
    std::vector<std::pair<double, std::size_t>> rem(K);
    std::size_t assigned = 0;
    for (std::size_t k = 0; k < K; ++k) {
      const double exact = fractions[k] * static_cast<double>(n);
      count[k] = static_cast<std::size_t>(std::floor(exact + 1e-9));
      rem[k] = {exact - static_cast<double>(count[k]), k};
      assigned += count[k];
    }
    std::stable_sort(rem.begin(), rem.end(), [](const auto& a, const auto& b) { return a.first > b.first; });
    for (std::size_t r = 0; assigned < n; ++r, ++assigned) ++count[rem[r % K].second];
    for (std::size_t k = 0; k < K; ++k)
      require(count[k] > 0 || fractions[k] == 0.0, ErrorKind::kInvalidArgument,
              "split: fraction " + std::to_string(fractions[k]) + " leaves class " + std::to_string(c) +
                  " empty in split " + std::to_string(k));

    rng.shuffle(idx);
    std::size_t pos = 0;
    for (std::size_t k = 0; k < K; ++k)
      for (std::size_t t = 0; t < count[k]; ++t) parts[k].push_back(idx[pos++]);
  }
  std::vector<Dataset> out;
  for (std::size_t k = 0; k < K; ++k) {
    std::sort(parts[k].begin(), parts[k].end());
    out.push_back(ds.subset(parts[k]));
    out.back().provenance["split"] = {{"fractions", fractions}, {"index", k}, {"seed", seed}};
  }
  return out;
}

// ---------------------------------------------------------------------------
// CIFAR-10 binary

namespace {
constexpr std::size_t kCifarSide = 32;
constexpr std::size_t kCifarPixels = 3 * kCifarSide * kCifarSide;
constexpr std::size_t kCifarRecord = 1 + kCifarPixels;
}  // namespace

Dataset load_cifar10_binary(const std::filesystem::path& path) {
  const auto bytes = binio::read_file(path);
  if (bytes.size() % kCifarRecord != 0) {
    const std::size_t off = bytes.size() - bytes.size() % kCifarRecord;
    fail(ErrorKind::kFormat, path.string() + ": truncated CIFAR-10 record at byte offset " + std::to_string(off) +
                                 " (file size " + std::to_string(bytes.size()) + " is not a multiple of 3073)");
  }
  const std::size_t n = bytes.size() / kCifarRecord;
  Dataset ds;
  ds.images = Tensor(Shape{n, 3, kCifarSide, kCifarSide});
  ds.labels.resize(n);
  ds.num_classes = 10;
  ds.name = path.filename().string();
  for (std::size_t r = 0; r < n; ++r) {
    const std::uint8_t* rec = bytes.data() + r * kCifarRecord;
    require(rec[0] <= 9, ErrorKind::kFormat,
            path.string() + ": label " + std::to_string(rec[0]) + " > 9 at byte offset " +
                std::to_string(r * kCifarRecord));
    ds.labels[r] = rec[0];
    float* dst = ds.images.ptr() + r * kCifarPixels;
    for (std::size_t p = 0; p < kCifarPixels; ++p) dst[p] = static_cast<float>(rec[1 + p]) / 255.0f;
  }
  ds.provenance = {{"loader", "cifar10-binary"}, {"path", path.string()}};
  return ds;
}

void save_cifar10_binary(const Dataset& ds, const std::filesystem::path& path) {
  require(ds.sample_shape() == Shape{3, kCifarSide, kCifarSide}, ErrorKind::kShape,
          "CIFAR-10 records are 3x32x32");
  binio::Writer w;
  for (std::size_t r = 0; r < ds.size(); ++r) {
    require(ds.labels[r] >= 0 && ds.labels[r] <= 9, ErrorKind::kFormat, "CIFAR-10 label out of range");
    w.u8(static_cast<std::uint8_t>(ds.labels[r]));
    for (float v : ds.images.sample(r)) w.u8(static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f)));
  }
  w.save(path);
}

// ---------------------------------------------------------------------------
// IDX

Dataset load_idx(const std::filesystem::path& images, const std::filesystem::path& labels) {
  binio::Reader ri(binio::read_file(images), images.string());
  binio::Reader rl(binio::read_file(labels), labels.string());
  const std::uint32_t mi = ri.u32_be("image magic");
  require(mi == 0x00000803, ErrorKind::kFormat, images.string() + ": bad magic for IDX images");
  const std::uint32_t ml = rl.u32_be("label magic");
  require(ml == 0x00000801, ErrorKind::kFormat, labels.string() + ": bad magic for IDX labels");
  const std::uint32_t n = ri.u32_be("image count"), rows = ri.u32_be("rows"), cols = ri.u32_be("cols");
  const std::uint32_t nl = rl.u32_be("label count");
  require(n == nl, ErrorKind::kFormat,
          "IDX dimension mismatch: " + std::to_string(n) + " images vs " + std::to_string(nl) + " labels");
  const std::size_t px = static_cast<std::size_t>(rows) * cols;
  const std::uint8_t* pix = ri.take(px * n, "image payload");
  const std::uint8_t* lab = rl.take(n, "label payload");
  Dataset ds;
  ds.images = Tensor(Shape{n, 1, rows, cols});
  ds.labels.resize(n);
  int max_label = 0;
  for (std::size_t i = 0; i < n; ++i) {
    ds.labels[i] = lab[i];
    max_label = std::max(max_label, ds.labels[i]);
  }
  for (std::size_t i = 0; i < px * n; ++i) ds.images[i] = static_cast<float>(pix[i]) / 255.0f;
  ds.num_classes = static_cast<std::size_t>(max_label) + 1;
  ds.name = images.filename().string();
  ds.provenance = {{"loader", "idx"}, {"images", images.string()}, {"labels", labels.string()}};
  return ds;
}

void save_idx(const Dataset& ds, const std::filesystem::path& images, const std::filesystem::path& labels) {
  require(ds.images.rank() == 4 && ds.images.dim(1) == 1, ErrorKind::kShape, "IDX stores single-channel images");
  binio::Writer wi, wl;
  wi.u32_be(0x00000803);
  wi.u32_be(static_cast<std::uint32_t>(ds.size()));
  wi.u32_be(static_cast<std::uint32_t>(ds.images.dim(2)));
  wi.u32_be(static_cast<std::uint32_t>(ds.images.dim(3)));
  for (float v : ds.images.data()) wi.u8(static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f)));
  wl.u32_be(0x00000801);
  wl.u32_be(static_cast<std::uint32_t>(ds.size()));
  for (int l : ds.labels) wl.u8(static_cast<std::uint8_t>(l));
  wi.save(images);
  wl.save(labels);
}

// ---------------------------------------------------------------------------
// native

namespace {
constexpr char kDataMagic[8] = {'F', 'O', 'O', 'D', 'D', 'A', 'T', 'A'};
constexpr std::uint32_t kDataVersion = 1;
}  // namespace

void save_dataset(const Dataset& ds, const std::filesystem::path& path) {
  binio::Writer w;
  w.bytes(kDataMagic, 8);
  w.u32(kDataVersion);
  w.u32(static_cast<std::uint32_t>(ds.images.rank()));
  for (auto d : ds.images.shape()) w.u32(static_cast<std::uint32_t>(d));
  for (float v : ds.images.data()) w.f32(v);
  w.u32(static_cast<std::uint32_t>(ds.labels.size()));
  for (int l : ds.labels) w.i32(l);
  json meta = {{"name", ds.name}, {"num_classes", ds.num_classes}, {"provenance", ds.provenance}};
  const std::string blob = meta.dump();
  w.u32(static_cast<std::uint32_t>(blob.size()));
  w.str(blob);
  w.save(path);
}

Dataset load_dataset(const std::filesystem::path& path) {
  binio::Reader r(binio::read_file(path, ErrorKind::kMissingArtifact), path.string());
  require(r.str(8, "magic") == std::string(kDataMagic, 8), ErrorKind::kFormat, path.string() + ": bad magic");
  const std::uint32_t version = r.u32("version");
  require(version == kDataVersion, ErrorKind::kFormat,
          path.string() + ": unsupported dataset version " + std::to_string(version));
  const std::uint32_t rank = r.u32("rank");
  require(rank == 4, ErrorKind::kFormat, path.string() + ": dataset rank must be 4");
  Shape shape(rank);
  for (auto& d : shape) d = r.u32("dims");
  const std::size_t n = shape_size(shape);
  r.need(n * 4, "pixel payload");
  std::vector<float> px(n);
  for (auto& v : px) v = r.f32("pixel payload");
  const std::uint32_t nl = r.u32("label count");
  require(nl == shape[0], ErrorKind::kFormat, path.string() + ": label count does not match image count");
  Dataset ds;
  ds.images = Tensor(shape, std::move(px));
  ds.labels.resize(nl);
  r.need(std::size_t{nl} * 4, "label payload");
  for (auto& l : ds.labels) l = r.i32("label payload");
  const std::uint32_t jl = r.u32("metadata length");
  json meta;
  try {
    meta = json::parse(r.str(jl, "metadata"));
  } catch (const json::exception& e) {
    fail(ErrorKind::kFormat, path.string() + ": malformed metadata: " + e.what());
  }
  ds.name = meta.value("name", std::string{});
  ds.num_classes = meta.value("num_classes", std::size_t{0});
  ds.provenance = meta.value("provenance", json::object());
  ds.validate();
  return ds;
}

void channel_stats(const Dataset& ds, std::vector<double>& mean, std::vector<double>& stddev) {
  const std::size_t N = ds.images.dim(0), C = ds.images.dim(1), P = ds.images.dim(2) * ds.images.dim(3);
  mean.assign(C, 0.0);
  stddev.assign(C, 0.0);
  for (std::size_t c = 0; c < C; ++c) {
    double s = 0, ss = 0;
    for (std::size_t n = 0; n < N; ++n)
      for (std::size_t p = 0; p < P; ++p) s += ds.images[(n * C + c) * P + p];
    const double m = s / static_cast<double>(N * P);
    for (std::size_t n = 0; n < N; ++n)
      for (std::size_t p = 0; p < P; ++p) {
        const double d = ds.images[(n * C + c) * P + p] - m;
        ss += d * d;
      }
    mean[c] = m;
    stddev[c] = std::max(std::sqrt(ss / static_cast<double>(N * P)), 1e-6);
  }
}

}  // namespace food::data
