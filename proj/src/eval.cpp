#include "food/eval.hpp"

#include <algorithm>
#include <cstdio>
#include <sstream>

namespace food::eval {

namespace {

void check_sides(std::span<const double> pos, std::span<const double> neg, const char* what) {
  require(!pos.empty() && !neg.empty(), ErrorKind::kInvalidArgument, std::string(what) + ": empty score set");
  for (auto s : {pos, neg})
    for (double v : s) require(!std::isnan(v), ErrorKind::kNumeric, std::string(what) + ": NaN score");
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

std::string tag_header(const CsvTags& tags) {
  std::string s;
  for (const auto& t : tags) s += ',' + t.first;
  return s;
}

std::string tag_values(const CsvTags& tags) {
  std::string s;
  for (const auto& t : tags) s += ',' + t.second;
  return s;
}

}  // namespace

double auroc(std::span<const double> pos, std::span<const double> neg) {
  check_sides(pos, neg, "auroc");
  std::vector<double> n(neg.begin(), neg.end());
  std::sort(n.begin(), n.end());
  // counts are integers, so 2*wins + ties is exact
  unsigned long long twice = 0;
  for (double p : pos) {
    const auto lo = std::lower_bound(n.begin(), n.end(), p);
    const auto hi = std::upper_bound(lo, n.end(), p);
    twice += 2ULL * static_cast<unsigned long long>(lo - n.begin()) + static_cast<unsigned long long>(hi - lo);
  }
  return static_cast<double>(twice) / (2.0 * static_cast<double>(pos.size()) * static_cast<double>(neg.size()));
}

double tnr_at_tpr95(std::span<const double> pos, std::span<const double> neg) {
  check_sides(pos, neg, "tnr_at_tpr95");
  require(pos.size() >= 20, ErrorKind::kInvalidArgument, "tnr_at_tpr95 needs at least 20 positives");
  std::vector<double> p(pos.begin(), pos.end());
  std::sort(p.begin(), p.end(), std::greater<>());
  const std::size_t k = (95 * p.size() + 99) / 100;  // ceil(0.95 P)
  const double t = p[k - 1];
  const auto below = std::count_if(neg.begin(), neg.end(), [t](double v) { return v < t; });
  return static_cast<double>(below) / static_cast<double>(neg.size());
}

double detection_accuracy(std::span<const double> pos, std::span<const double> neg) {
  check_sides(pos, neg, "detection_accuracy");
  struct Item {
    double v;
    bool positive;
  };
  std::vector<Item> all;
  all.reserve(pos.size() + neg.size());
  for (double v : pos) all.push_back({v, true});
  for (double v : neg) all.push_back({v, false});
  std::sort(all.begin(), all.end(), [](const Item& a, const Item& b) { return a.v < b.v; });
  const double P = static_cast<double>(pos.size()), N = static_cast<double>(neg.size());
  // Threshold below everything: every sample is called positive.
  std::size_t fn = 0, tn = 0;
  double best = 0.5;
  for (std::size_t i = 0; i < all.size();) {
    std::size_t j = i;
    while (j < all.size() && all[j].v == all[i].v) {
      if (all[j].positive)
        ++fn;
      else
        ++tn;
      ++j;
    }
    const double acc = 0.5 * (P - static_cast<double>(fn)) / P + 0.5 * static_cast<double>(tn) / N;
    best = std::max(best, acc);
    i = j;
  }
  return best;
}

MetricRow compute_row(const std::string& method, const std::string& in, const std::string& out, const ScoredSet& s) {
  MetricRow r;
  r.method = method;
  r.dataset_in = in;
  r.dataset_out = out;
  r.tnr95 = tnr_at_tpr95(s);
  r.auroc = auroc(s);
  r.det_acc = detection_accuracy(s);
  return r;
}

std::string metrics_csv(const std::vector<MetricRow>& rows, const CsvTags& tags) {
  std::ostringstream os;
  os << "method,dataset_in,dataset_out,tnr95,auroc,det_acc,mean_latency_us" << tag_header(tags) << '\n';
  for (const auto& r : rows)
    os << r.method << ',' << r.dataset_in << ',' << r.dataset_out << ',' << fmt(r.tnr95) << ',' << fmt(r.auroc) << ','
       << fmt(r.det_acc) << ',' << (std::isnan(r.mean_latency_us) ? std::string() : fmt(r.mean_latency_us))
       << tag_values(tags) << '\n';
  return os.str();
}

nlohmann::json metrics_json(const std::vector<MetricRow>& rows) {
  nlohmann::json j = nlohmann::json::array();
  for (const auto& r : rows)
    j.push_back({{"method", r.method},
                 {"dataset_in", r.dataset_in},
                 {"dataset_out", r.dataset_out},
                 {"tnr95", r.tnr95},
                 {"auroc", r.auroc},
                 {"det_acc", r.det_acc},
                 {"det_acc_weighting", "balanced"},
                 {"mean_latency_us", r.mean_latency_us}});
  return j;
}

LatencyStats summarize_latency(std::string method, std::vector<double> xs) {
  require(xs.size() >= 2, ErrorKind::kInvalidArgument, "latency summary needs at least two repeats");
  LatencyStats s;
  s.method = std::move(method);
  double sum = 0;
  for (double x : xs) sum += x;
  s.mean_us = sum / static_cast<double>(xs.size());
  double ss = 0;
  for (double x : xs) ss += (x - s.mean_us) * (x - s.mean_us);
  s.std_us = std::sqrt(ss / static_cast<double>(xs.size() - 1));
  s.samples_us = xs;
  std::sort(xs.begin(), xs.end());
  const auto rank = [&](double q) {
    auto k = static_cast<std::size_t>(std::ceil(q * static_cast<double>(xs.size()) - 1e-9));
    return xs[std::clamp<std::size_t>(k, 1, xs.size()) - 1];
  };
  s.p50_us = rank(0.5);
  s.p99_us = rank(0.99);
  return s;
}

void BenchConfig::validate() const {
  require(batch >= 1, ErrorKind::kConfig, "bench batch must be at least 1");
  require(warmup >= 3, ErrorKind::kConfig, "bench warmup must be at least 3");
  require(repeats >= 5, ErrorKind::kConfig, "bench repeats must be at least 5, got " + std::to_string(repeats));
  require(max_batch >= batch, ErrorKind::kConfig, "bench max_batch must be at least batch");
}

const LatencyStats& LatencyReport::at(const std::string& method) const {
  for (const auto& m : methods)
    if (m.method == method) return m;
  fail(ErrorKind::kInvalidArgument, "no latency entry for method '" + method + "'");
}

double LatencyReport::ratio(const std::string& a, const std::string& b) const { return at(a).p50_us / at(b).p50_us; }

std::string LatencyReport::to_csv(const CsvTags& tags) const {
  std::ostringstream os;
  os << "method,batch,repeats,warmup,mean_us,std_us,p50_us,p99_us" << tag_header(tags) << '\n';
  for (const auto& m : methods)
    os << m.method << ',' << batch << ',' << repeats << ',' << warmup << ',' << fmt(m.mean_us) << ',' << fmt(m.std_us)
       << ',' << fmt(m.p50_us) << ',' << fmt(m.p99_us) << tag_values(tags) << '\n';
  return os.str();
}

nlohmann::json LatencyReport::to_json() const {
  nlohmann::json ms = nlohmann::json::array();
  for (const auto& m : methods)
    ms.push_back({{"method", m.method},
                  {"mean_us", m.mean_us},
                  {"std_us", m.std_us},
                  {"p50_us", m.p50_us},
                  {"p99_us", m.p99_us},
                  {"samples_us", m.samples_us}});
  return {{"batch", batch},
          {"repeats", repeats},
          {"warmup", warmup},
          {"batch_enlarged", batch_enlarged},
          {"clock", "steady_clock"},
          {"threads", 1},
          {"methods", ms}};
}

}  // namespace food::eval
