#include "food/oodgen.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "food/scoring.hpp"
#include "food/train.hpp"

namespace food::oodgen {

ThresReading parse_thres_reading(const std::string& s) {
  if (s == "lower") return ThresReading::kLower;
  if (s == "upper") return ThresReading::kUpper;
  fail(ErrorKind::kConfig, "unknown thres reading '" + s + "' (expected lower or upper)");
}

std::string to_string(ThresReading r) { return r == ThresReading::kLower ? "lower" : "upper"; }

StepScale parse_step_scale(const std::string& s) {
  if (s == "raw") return StepScale::kRaw;
  if (s == "mean_abs") return StepScale::kMeanAbs;
  if (s == "sign") return StepScale::kSign;
  fail(ErrorKind::kConfig, "unknown step scale '" + s + "' (expected raw, mean_abs or sign)");
}

std::string to_string(StepScale s) {
  switch (s) {
    case StepScale::kRaw: return "raw";
    case StepScale::kMeanAbs: return "mean_abs";
    case StepScale::kSign: return "sign";
  }
  return "raw";
}

double compute_thres(std::span<const double> llr_values, double percentile, ThresReading reading) {
  require(llr_values.size() >= 20, ErrorKind::kInvalidArgument,
          "compute_thres needs at least 20 values, got " + std::to_string(llr_values.size()));
  require(percentile > 0 && percentile < 100, ErrorKind::kInvalidArgument, "percentile must lie in (0, 100)");
  std::vector<double> v(llr_values.begin(), llr_values.end());
  for (double x : v) require(std::isfinite(x), ErrorKind::kNumeric, "compute_thres: non-finite LLR value");
  std::sort(v.begin(), v.end());
  const double q = reading == ThresReading::kLower ? 100.0 - percentile : percentile;
  const double n = static_cast<double>(v.size());
  // the epsilon absorbs representation error in q/100*n (e.g. 0.05*100)
  auto rank = static_cast<std::size_t>(std::ceil(q * n / 100.0 - 1e-9));
  rank = std::clamp<std::size_t>(rank, 1, v.size());
  return v[rank - 1];
}

void CraftConfig::validate() const {
  require(epsilon > 0 && std::isfinite(epsilon), ErrorKind::kConfig, "craft epsilon must be positive");
  require(max_iter >= 1, ErrorKind::kConfig, "craft max_iter must be at least 1");
  require(clip_lo < clip_hi, ErrorKind::kConfig, "craft clip_lo must be below clip_hi");
  require(std::isfinite(thres), ErrorKind::kConfig, "craft thres must be finite");
  require(batch_size >= 1, ErrorKind::kConfig, "craft batch size must be at least 1");
}

double CraftReport::reached_fraction() const {
  if (reached.empty()) return 0.0;
  return static_cast<double>(std::count(reached.begin(), reached.end(), true)) / static_cast<double>(reached.size());
}

std::size_t CraftReport::failures() const {
  return static_cast<std::size_t>(std::count(status.begin(), status.end(), SampleStatus::kNonFinite));
}

void CraftReport::append(const CraftReport& o) {
  iterations.insert(iterations.end(), o.iterations.begin(), o.iterations.end());
  initial_llr.insert(initial_llr.end(), o.initial_llr.begin(), o.initial_llr.end());
  final_llr.insert(final_llr.end(), o.final_llr.begin(), o.final_llr.end());
  reached.insert(reached.end(), o.reached.begin(), o.reached.end());
  status.insert(status.end(), o.status.begin(), o.status.end());
}

nlohmann::json CraftReport::to_json() const {
  nlohmann::json samples = nlohmann::json::array();
  for (std::size_t i = 0; i < size(); ++i)
    samples.push_back({{"iterations", iterations[i]},
                       {"initial_llr", initial_llr[i]},
                       {"final_llr", final_llr[i]},
                       {"reached", static_cast<bool>(reached[i])},
                       {"status", status[i] == SampleStatus::kOk ? "ok" : "non-finite gradient"}});
  return {{"count", size()}, {"reached_fraction", reached_fraction()}, {"failures", failures()}, {"samples", samples}};
}

template <typename T>
CraftResult<T> craft(const nn::Network<T>& net, const BasicTensor<T>& x, const CraftConfig& cfg) {
  cfg.validate();
  const std::size_t N = x.rank() == 0 ? 0 : x.dim(0);
  CraftResult<T> res{x, {}};
  CraftReport& rep = res.report;
  rep.iterations.assign(N, 0);
  rep.initial_llr.assign(N, 0.0);
  rep.final_llr.assign(N, 0.0);
  rep.reached.assign(N, false);
  rep.status.assign(N, SampleStatus::kOk);
  if (N == 0) return res;

  const T lo = static_cast<T>(cfg.clip_lo), hi = static_cast<T>(cfg.clip_hi);
  for (auto& v : res.x_art.data()) v = std::clamp(v, lo, hi);

  const T eps = static_cast<T>(cfg.epsilon);
  const auto score = [](std::span<const T> row, std::span<T> g) { return scoring::llr_with_grad<T>(row, g); };
  std::vector<std::size_t> active(N);
  for (std::size_t i = 0; i < N; ++i) active[i] = i;

  // Pass k evaluates LLR and its gradient at the point reached after k
  // steps; k = 0 records the initial value, k >= 1 doubles as the stop check.
  for (std::size_t k = 0; k <= cfg.max_iter && !active.empty(); ++k) {
    const BasicTensor<T> xb = res.x_art.gather(active);
    std::vector<T> vals;
    BasicTensor<T> grad;
    if (k < cfg.max_iter) {
      grad = net.input_gradient(xb, score, &vals);
    } else {
      const auto out = net.forward(xb);
      vals.resize(active.size());
      for (std::size_t i = 0; i < active.size(); ++i) vals[i] = static_cast<T>(scoring::llr(out.head.sample(i)));
    }
    std::vector<std::size_t> next;
    for (std::size_t i = 0; i < active.size(); ++i) {
      const std::size_t s = active[i];
      const double v = static_cast<double>(vals[i]);
      if (k == 0) rep.initial_llr[s] = v;
      rep.final_llr[s] = v;
      if (k >= 1 && v <= cfg.thres) {
        rep.reached[s] = true;
        continue;
      }
      if (k == cfg.max_iter) continue;
      const auto g = grad.sample(i);
      bool finite = std::isfinite(v);
      for (const T gv : g) finite = finite && std::isfinite(gv);
      if (!finite) {
        rep.status[s] = SampleStatus::kNonFinite;
        continue;
      }
      auto xs = res.x_art.sample(s);
      if (cfg.step == StepScale::kSign) {
        for (std::size_t j = 0; j < xs.size(); ++j) {
          const T sg = g[j] > 0 ? T(1) : (g[j] < 0 ? T(-1) : T(0));
          xs[j] = std::clamp(static_cast<T>(xs[j] - eps * sg), lo, hi);
        }
      } else {
        T scale = eps;
        if (cfg.step == StepScale::kMeanAbs) {
          double m = 0;
          for (const T gv : g) m += std::abs(static_cast<double>(gv));
          m /= static_cast<double>(g.size());
          // a flat gradient leaves the sample where it is
          scale = m > 0 ? static_cast<T>(cfg.epsilon / m) : T(0);
        }
        for (std::size_t j = 0; j < xs.size(); ++j) xs[j] = std::clamp(static_cast<T>(xs[j] - scale * g[j]), lo, hi);
      }
      rep.iterations[s] = k + 1;
      next.push_back(s);
    }
    active = std::move(next);
  }
  return res;
}

template CraftResult<float> craft(const nn::Network<float>&, const Tensor&, const CraftConfig&);
template CraftResult<double> craft(const nn::Network<double>&, const Tensor64&, const CraftConfig&);

CraftedSet craft_batch(const nn::Network<float>& net, const data::Dataset& val, const CraftConfig& cfg) {
  cfg.validate();
  CraftedSet out;
  out.ood.num_classes = val.num_classes;
  out.ood.name = val.name + "-crafted";
  out.ood.provenance = {{"source", val.name},
                        {"epsilon", cfg.epsilon},
                        {"step", to_string(cfg.step)},
                        {"max_iter", cfg.max_iter},
                        {"thres", cfg.thres}};
  if (val.size() == 0) {
    out.ood.images = Tensor(Shape{0});
    return out;
  }
  std::vector<Tensor> parts;
  for (std::size_t b = 0; b < val.size(); b += cfg.batch_size) {
    const std::size_t e = std::min(val.size(), b + cfg.batch_size);
    auto r = craft(net, val.images.slice_batch(b, e), cfg);
    parts.push_back(std::move(r.x_art));
    out.report.append(r.report);
  }
  out.ood.images = Tensor::concat_batch(parts);
  out.ood.labels = val.labels;
  return out;
}

std::vector<double> dataset_llr(const nn::Network<float>& net, const data::Dataset& ds, std::size_t batch_size) {
  std::vector<double> v;
  v.reserve(ds.size());
  train::for_each_batch(net, ds.images, batch_size, [&](std::size_t b, std::size_t e, const nn::Network<float>::Output& o) {
    for (std::size_t n = 0; n < e - b; ++n) v.push_back(scoring::llr(o.head.sample(n)));
  });
  return v;
}

std::vector<HistogramBin> llr_histogram(std::span<const double> before, std::span<const double> after,
                                        std::size_t bins) {
  require(bins >= 1, ErrorKind::kInvalidArgument, "histogram needs at least one bin");
  if (before.empty() && after.empty()) return {};
  double lo = std::numeric_limits<double>::infinity(), hi = -lo;
  for (auto s : {before, after})
    for (double v : s) {
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
  if (hi <= lo) hi = lo + 1.0;
  const double w = (hi - lo) / static_cast<double>(bins);
  std::vector<HistogramBin> h(bins);
  for (std::size_t i = 0; i < bins; ++i) {
    h[i].lo = lo + w * static_cast<double>(i);
    h[i].hi = i + 1 == bins ? hi : lo + w * static_cast<double>(i + 1);
  }
  const auto bin = [&](double v) {
    const auto i = static_cast<std::size_t>((v - lo) / w);
    return std::min(i, bins - 1);
  };
  for (double v : before) ++h[bin(v)].before;
  for (double v : after) ++h[bin(v)].after;
  return h;
}

std::string histogram_csv(const std::vector<HistogramBin>& h, double thres,
                          const std::vector<std::pair<std::string, std::string>>& tags) {
  std::ostringstream os;
  os.precision(17);
  os << "bin_lo,bin_hi,count_before,count_after,thres";
  for (const auto& t : tags) os << ',' << t.first;
  os << '\n';
  for (const auto& b : h) {
    os << b.lo << ',' << b.hi << ',' << b.before << ',' << b.after << ',' << thres;
    for (const auto& t : tags) os << ',' << t.second;
    os << '\n';
  }
  return os.str();
}

}  // namespace food::oodgen
