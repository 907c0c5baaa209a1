#pragma once

#include <chrono>
#include <cmath>
#include <functional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "food/error.hpp"
#include "food/parallel.hpp"
#include "json.hpp"

namespace food::eval {

// In-distribution scores are the positive class; higher means more
// in-distribution.
struct ScoredSet {
  std::vector<double> pos;
  std::vector<double> neg;
};

// Mann-Whitney: (#pos > neg + 0.5 #ties) / (P N).
double auroc(std::span<const double> pos, std::span<const double> neg);
inline double auroc(const ScoredSet& s) { return auroc(s.pos, s.neg); }

// t = largest value with #{pos >= t} >= ceil(0.95 P), i.e. the k-th largest
// positive; returns #{neg < t} / N. Needs at least 20 positives.
double tnr_at_tpr95(std::span<const double> pos, std::span<const double> neg);
inline double tnr_at_tpr95(const ScoredSet& s) { return tnr_at_tpr95(s.pos, s.neg); }

// Best 0.5 TPR + 0.5 TNR over thresholds at every midpoint between adjacent
// distinct scores and beyond both ends; a sample is called positive when its
// score exceeds the threshold.
double detection_accuracy(std::span<const double> pos, std::span<const double> neg);
inline double detection_accuracy(const ScoredSet& s) { return detection_accuracy(s.pos, s.neg); }

struct MetricRow {
  std::string method;
  std::string dataset_in;
  std::string dataset_out;
  double tnr95 = 0;
  double auroc = 0;
  double det_acc = 0;
  double mean_latency_us = 0;
};

// Extra constant columns appended to every CSV row, e.g. {"seed", "7"}.
using CsvTags = std::vector<std::pair<std::string, std::string>>;

MetricRow compute_row(const std::string& method, const std::string& in, const std::string& out, const ScoredSet& s);
std::string metrics_csv(const std::vector<MetricRow>& rows, const CsvTags& tags = {});
nlohmann::json metrics_json(const std::vector<MetricRow>& rows);

struct LatencyStats {
  std::string method;
  double mean_us = 0;
  double std_us = 0;
  double p50_us = 0;
  double p99_us = 0;
  std::vector<double> samples_us;  // per-sample time of each repeat
};

// Sample standard deviation; percentiles by nearest rank.
LatencyStats summarize_latency(std::string method, std::vector<double> per_sample_us);

struct BenchConfig {
  std::size_t batch = 64;
  std::size_t warmup = 3;
  std::size_t repeats = 20;
  // batches timed under this many microseconds are doubled
  double min_batch_us = 200.0;
  std::size_t max_batch = 4096;

  void validate() const;
};

struct LatencyReport {
  std::size_t batch = 0;
  std::size_t repeats = 0;
  std::size_t warmup = 0;
  bool batch_enlarged = false;
  std::vector<LatencyStats> methods;

  const LatencyStats& at(const std::string& method) const;
  // Ratio of medians.
  double ratio(const std::string& a, const std::string& b) const;
  std::string to_csv(const CsvTags& tags = {}) const;
  nlohmann::json to_json() const;
};

template <typename Shared>
struct BenchMethod {
  std::string name;
  std::function<void(const Shared&)> post;  // detection work after the forward pass
};

// Every repeat times one shared forward pass and then each method's
// post-processing on its output; a method's time is forward + its own post.
// Runs with a single worker thread.
template <typename Shared>
LatencyReport bench_latency(const std::function<Shared(std::size_t batch)>& forward,
                            const std::vector<BenchMethod<Shared>>& methods, BenchConfig cfg) {
  cfg.validate();
  require(!methods.empty(), ErrorKind::kInvalidArgument, "bench needs at least one method");
  ScopedWorkers single(1);
  using clock = std::chrono::steady_clock;
  const auto us = [](clock::duration d) { return std::chrono::duration<double, std::micro>(d).count(); };

  LatencyReport rep;
  rep.warmup = cfg.warmup;
  rep.repeats = cfg.repeats;
  std::size_t batch = cfg.batch;
  for (;;) {
    double fastest = 0;
    for (std::size_t w = 0; w < cfg.warmup; ++w) {
      const auto t0 = clock::now();
      const Shared s = forward(batch);
      const double t = us(clock::now() - t0);
      for (const auto& m : methods) m.post(s);
      fastest = w == 0 ? t : std::min(fastest, t);
    }
    if (fastest >= cfg.min_batch_us || batch * 2 > cfg.max_batch) break;
    batch *= 2;
    rep.batch_enlarged = true;
  }
  rep.batch = batch;

  std::vector<std::vector<double>> per(methods.size());
  for (std::size_t r = 0; r < cfg.repeats; ++r) {
    const auto t0 = clock::now();
    const Shared s = forward(batch);
    const double tf = us(clock::now() - t0);
    for (std::size_t i = 0; i < methods.size(); ++i) {
      const auto t1 = clock::now();
      methods[i].post(s);
      const double tp = us(clock::now() - t1);
      per[i].push_back((tf + tp) / static_cast<double>(batch));
    }
  }
  for (std::size_t i = 0; i < methods.size(); ++i)
    rep.methods.push_back(summarize_latency(methods[i].name, std::move(per[i])));
  return rep;
}

}  // namespace food::eval
