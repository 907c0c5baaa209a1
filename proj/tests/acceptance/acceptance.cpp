// Acceptance suite: one PASS/FAIL line per criterion. Exit status is the
// number of failed criteria (capped at 1 for ctest).
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <ctime>
#include <fstream>
#include <iostream>
#include <sstream>

#include "food/eval.hpp"
#include "food/pipeline.hpp"
#include "helpers.hpp"

using namespace food;
using namespace food::nn;

namespace {

int failures = 0;

struct Timer {
  std::chrono::steady_clock::time_point wall = std::chrono::steady_clock::now();
  std::clock_t cpu = std::clock();
  double wall_s() const { return std::chrono::duration<double>(std::chrono::steady_clock::now() - wall).count(); }
  double cpu_s() const { return static_cast<double>(std::clock() - cpu) / CLOCKS_PER_SEC; }
};

void report(int id, bool ok, const std::string& what, const std::string& detail, double seconds) {
  if (!ok) ++failures;
  char t[32];
  std::snprintf(t, sizeof t, "%.1fs", seconds);
  std::cout << (ok ? "PASS" : "FAIL") << " [" << id << "] " << what << ": " << detail << " (" << t << ")"
            << std::endl;
}

std::string num(double v, int prec = 4) {
  std::ostringstream os;
  os.precision(prec);
  os << v;
  return os.str();
}

// ---- 1. numerical core ----

Network<double> gradcheck_net(std::uint64_t seed) {
  const bool proj = seed % 2 == 0;
  const std::size_t C = 3;
  Network<double> net(Shape{2, 5, 5}, C);
  net.add(std::make_unique<Normalize<double>>(std::vector<double>{0.3, 0.6}, std::vector<double>{1.0, 1.0}));
  net.add(std::make_unique<Conv2d<double>>(2, 3, 3, 1, 1, seed % 3 == 0));
  net.add(std::make_unique<BatchNorm2d<double>>(3));
  net.add(std::make_unique<ReLU<double>>(), "stem");
  net.add(std::make_unique<ResidualBlock<double>>(3, proj ? 4 : 3, proj ? 2 : 1), "stage1");
  net.add(std::make_unique<GlobalAvgPool<double>>());
  if (proj)
    net.add(std::make_unique<head::GaussianHead<double>>(4, C));
  else
    net.add(std::make_unique<Dense<double>>(3, C));
  net.validate();
  Rng rng(seed);
  testutil::randomize(net, rng);
  return net;
}

void criterion_numerical_core() {
  const Timer t;
  const double h = 1e-5;
  double worst = 0;
  std::size_t elements = 0, kinks = 0, cases = 0;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    Network<double> net = gradcheck_net(seed);
    Rng rng(derive_seed(seed, 1));
    const Tensor64 x = testutil::random_tensor<double>(Shape{3, 2, 5, 5}, rng, 0.0, 1.0);
    const std::size_t C = net.num_classes();
    std::vector<double> a(3 * C);
    for (auto& v : a) v = rng.uniform(-1, 1);

    const Tensor64 gx = net.input_gradient(x, [&](std::span<const double> row, std::span<double> g) {
      double s = 0;
      for (std::size_t c = 0; c < C; ++c) {
        g[c] = a[c];
        s += a[c] * row[c];
      }
      return s;
    });
    std::vector<double> ana, fd;
    for (std::size_t i = 0; i < x.size(); ++i) {
      const std::size_t n = i / x.sample_size();
      const auto d = testutil::central_diff(
          [&](double step) {
            Tensor64 xs = x;
            xs[i] += step;
            const auto hd = net.forward(xs).head;
            double s = 0;
            for (std::size_t c = 0; c < C; ++c) s += a[c] * hd[n * C + c];
            return s;
          },
          h);
      ++elements;
      if (d.kink) {
        ++kinks;
        continue;
      }
      ana.push_back(gx[i]);
      fd.push_back(d.value);
    }
    worst = std::max(worst, testutil::rel_error(ana, fd));
    ++cases;

    const Mode mode = seed % 2 == 0 ? Mode::kTrain : Mode::kEval;
    const auto grads = net.backward_params(
        x,
        [&](const Tensor64& head, Tensor64& g) {
          double s = 0;
          for (std::size_t i = 0; i < head.size(); ++i) {
            g[i] = a[i];
            s += a[i] * head[i];
          }
          return s;
        },
        mode);
    auto params = net.trainable_params();
    for (std::size_t p = 0; p < params.size(); ++p) {
      std::vector<double> pa, pf;
      for (std::size_t i = 0; i < params[p].value->size(); ++i) {
        double& w = (*params[p].value)[i];
        const double w0 = w;
        const auto d = testutil::central_diff(
            [&](double step) {
              w = w0 + step;
              const auto out = net.forward(x, mode).head;
              w = w0;
              double s = 0;
              for (std::size_t k = 0; k < out.size(); ++k) s += a[k] * out[k];
              return s;
            },
            h);
        ++elements;
        if (d.kink) {
          ++kinks;
          continue;
        }
        pa.push_back(grads[p][i]);
        pf.push_back(d.value);
      }
      worst = std::max(worst, testutil::rel_error(pa, pf));
    }
  }

  // log density against the textbook formula, written out independently
  Rng rng(11);
  double worst_lg = 0;
  for (int t = 0; t < 1000; ++t) {
    const std::size_t d = 1 + rng.below(32);
    std::vector<double> x(d), mu(d), var(d);
    double ref = 0;
    for (std::size_t k = 0; k < d; ++k) {
      x[k] = rng.normal(0, 3);
      mu[k] = rng.normal(0, 3);
      var[k] = std::exp(rng.uniform(-4, 4));
      ref += -0.5 * std::log(2 * M_PI * var[k]) - (x[k] - mu[k]) * (x[k] - mu[k]) / (2 * var[k]);
    }
    const double got = head::log_gaussian(x, mu, var);
    worst_lg = std::max(worst_lg, std::abs(got - ref) / std::max(1.0, std::abs(ref)));
  }

  const double secs = t.wall_s();
  const bool ok = cases >= 100 && worst <= 1e-4 && kinks * 100 <= elements && worst_lg <= 1e-9 && secs < 60;
  report(1, ok, "numerical core",
         std::to_string(cases) + " seeded cases, worst gradient rel error " + num(worst, 3) + " (" +
             std::to_string(kinks) + "/" + std::to_string(elements) + " elements at ReLU kinks skipped), log_gaussian " +
             num(worst_lg, 3),
         secs);
}

// ---- 2. metric oracles ----

double brute_auroc(const std::vector<double>& pos, const std::vector<double>& neg) {
  double s = 0;
  for (double p : pos)
    for (double n : neg) s += p > n ? 1.0 : (p == n ? 0.5 : 0.0);
  return s / static_cast<double>(pos.size() * neg.size());
}

double brute_tnr95(const std::vector<double>& pos, const std::vector<double>& neg) {
  double best = -INFINITY;
  for (double t : pos) {
    const auto kept = std::count_if(pos.begin(), pos.end(), [t](double v) { return v >= t; });
    if (static_cast<double>(kept) >= 0.95 * static_cast<double>(pos.size()) - 1e-12) best = std::max(best, t);
  }
  const auto below = std::count_if(neg.begin(), neg.end(), [best](double v) { return v < best; });
  return static_cast<double>(below) / static_cast<double>(neg.size());
}

double brute_det_acc(const std::vector<double>& pos, const std::vector<double>& neg) {
  std::vector<double> all = pos;
  all.insert(all.end(), neg.begin(), neg.end());
  std::sort(all.begin(), all.end());
  all.erase(std::unique(all.begin(), all.end()), all.end());
  std::vector<double> cuts{all.front() - 1, all.back() + 1};
  for (std::size_t i = 0; i + 1 < all.size(); ++i) cuts.push_back(0.5 * (all[i] + all[i + 1]));
  double best = 0;
  for (double t : cuts) {
    const auto tp = std::count_if(pos.begin(), pos.end(), [t](double v) { return v > t; });
    const auto tn = std::count_if(neg.begin(), neg.end(), [t](double v) { return v <= t; });
    best = std::max(best, 0.5 * static_cast<double>(tp) / static_cast<double>(pos.size()) +
                              0.5 * static_cast<double>(tn) / static_cast<double>(neg.size()));
  }
  return best;
}

void criterion_metric_oracles() {
  const Timer t;
  Rng rng(2);
  int mismatches = 0;
  for (int k = 0; k < 1000; ++k) {
    const bool coarse = k % 2 == 0;
    const std::size_t np = 20 + rng.below(100), nn = 1 + rng.below(200 - np);
    const double shift = rng.uniform(-1, 2);
    std::vector<double> pos(np), neg(nn);
    for (auto& v : pos) v = coarse ? std::floor(rng.uniform(0, 8)) + std::round(shift) : rng.normal(shift, 1);
    for (auto& v : neg) v = coarse ? std::floor(rng.uniform(0, 8)) : rng.normal(0, 1);
    if (eval::auroc(pos, neg) != brute_auroc(pos, neg)) ++mismatches;
    if (eval::tnr_at_tpr95(pos, neg) != brute_tnr95(pos, neg)) ++mismatches;
    if (eval::detection_accuracy(pos, neg) != brute_det_acc(pos, neg)) ++mismatches;
  }
  const double secs = t.wall_s();
  report(2, mismatches == 0 && secs < 60, "metric oracles",
         "1000 random sets (size <= 200, half with ties), " + std::to_string(mismatches) + " mismatches", secs);
}

// ---- 3 to 7. default synthetic task at seed 7 ----

double food_auroc(const std::vector<eval::MetricRow>& rows, const std::string& method) {
  for (const auto& r : rows)
    if (r.method == method) return r.auroc;
  throw Error(ErrorKind::kInvalidArgument, "no row for " + method);
}

void criteria_pipeline(const std::filesystem::path& config) {
  using namespace food::pipeline;
  const Timer total;
  const RunConfig cfg = RunConfig::load(config, 7);
  const Splits s = load_data(cfg);
  TrainOutcome tr = run_train(cfg, s);
  run_finetune(cfg, s, tr.net);
  const nn::Network<float>& net = tr.net;

  const Timer craft_t;
  const CraftOutcome c = run_craft(cfg.craft, net, s.val);
  const double craft_cpu = craft_t.cpu_s();
  const double reached = c.crafted.report.reached_fraction();
  report(3, reached >= 0.95 && craft_cpu < 300, "crafting efficacy",
         "reached " + num(100 * reached) + "% of " + std::to_string(c.crafted.report.size()) + " at epsilon " +
             num(cfg.craft.epsilon) + " (" + oodgen::to_string(cfg.craft.step) + " step), max_iter " +
             std::to_string(cfg.craft.max_iter) + ", craft cpu " + num(craft_cpu, 3) + "s",
         craft_t.wall_s());

  const Fitted fitted = fit_statistics(cfg, net, s.train);
  const auto evaluate = [&](const CraftOutcome& co) {
    const FoodModel m = fit_food(cfg, net, fitted, s.val, co.crafted.ood, co.thres);
    return run_eval(m, s.test_in, s.test_ood);
  };
  const Timer eval_t;
  const auto rows = evaluate(c);
  const double food = food_auroc(rows, "FOOD"), msp = food_auroc(rows, "MSP"), md = food_auroc(rows, "MD*");
  const double pipeline_cpu = total.cpu_s();
  report(4, food >= 0.95 && food >= msp && food >= md && pipeline_cpu < 600, "detection quality",
         "AUROC FOOD " + num(food) + ", MSP " + num(msp) + ", MD* " + num(md) + ", pipeline cpu " +
             num(pipeline_cpu, 3) + "s",
         total.wall_s());

  const double s1 = food_auroc(rows, "Stage 1 - LLR"), s4 = food_auroc(rows, "Stage 4 - FOOD - Mixed Pooling");
  report(5, s4 >= s1 - 0.01, "ablation ordering", "stage 4 AUROC " + num(s4) + " vs stage 1 " + num(s1),
         eval_t.wall_s());

  const Timer grid_t;
  std::string detail;
  double worst_spread = 0;
  const auto sweep = [&](const std::string& name, const std::vector<double>& values, auto apply) {
    double lo = INFINITY, hi = -INFINITY;
    detail += name + " {";
    for (std::size_t i = 0; i < values.size(); ++i) {
      CraftSettings cs = cfg.craft;
      apply(cs, values[i]);
      const double a = food_auroc(evaluate(run_craft(cs, net, s.val)), "FOOD");
      lo = std::min(lo, a);
      hi = std::max(hi, a);
      detail += (i ? ", " : "") + num(values[i]) + ": " + num(a);
    }
    const double spread = 100 * (hi - lo);
    worst_spread = std::max(worst_spread, spread);
    detail += "} spread " + num(spread, 3) + " pts; ";
  };
  sweep("epsilon", {0.04, 0.02, 0.01, 0.005, 0.0025}, [](CraftSettings& cs, double v) { cs.epsilon = v; });
  sweep("thres percentile", {90, 92.5, 95, 97.5, 99}, [](CraftSettings& cs, double v) { cs.thres_percentile = v; });
  report(6, worst_spread <= 3.0, "sensitivity", detail.substr(0, detail.size() - 2), grid_t.wall_s());

  const Timer bench_t;
  const FoodModel m = fit_food(cfg, net, fitted, s.val, c.crafted.ood, c.thres);
  const eval::LatencyReport lat = run_bench(m, s.test_in, cfg.bench);
  const double food_msp = lat.ratio("FOOD", "MSP"), md_food = lat.ratio("MD*", "FOOD");
  report(7, food_msp <= 1.2 && md_food > 1.0 && lat.repeats >= 20 && lat.batch >= 64, "latency overhead",
         "median per-sample FOOD/MSP " + num(food_msp) + ", MD*/FOOD " + num(md_food) + " (batch " +
             std::to_string(lat.batch) + ", " + std::to_string(lat.repeats) + " repeats, 1 thread)",
         bench_t.wall_s());
}

// ---- 8. CLI determinism ----

std::string slurp(const std::filesystem::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

void criterion_determinism(const std::string& cli, const std::filesystem::path& config) {
  const Timer t;
  testutil::TempDir dir("acceptance");
  std::string why;
  std::string csv[2];
  for (int run = 0; run < 2 && why.empty(); ++run) {
    const auto out = dir / ("run" + std::to_string(run));
    for (const char* stage : {"train", "finetune", "craft", "fit-detector", "eval"}) {
      const std::string cmd = "\"" + cli + "\" " + stage + " --config \"" + config.string() + "\" --out \"" +
                              out.string() + "\" --seed 7 >> \"" + (dir / "cli.log").string() + "\" 2>&1";
      if (const int rc = std::system(cmd.c_str()); rc != 0) {
        why = std::string(stage) + " exited with status " + std::to_string(rc);
        break;
      }
    }
    csv[run] = slurp(out / pipeline::names::kMetricsCsv);
  }
  const bool ok = why.empty() && !csv[0].empty() && csv[0] == csv[1];
  report(8, ok, "determinism",
         why.empty() ? "two CLI runs at seed 7, metrics.csv " + std::string(csv[0] == csv[1] ? "identical" : "differs") +
                           " (" + std::to_string(csv[0].size()) + " bytes)"
                     : why,
         t.wall_s());
}

}  // namespace

int main(int argc, char** argv) {
  if (argc < 2) {
    std::cerr << "usage: food_acceptance <path to food cli> [config]\n";
    return 2;
  }
  const std::string cli = argv[1];
  const std::filesystem::path config =
      argc > 2 ? std::filesystem::path(argv[2]) : std::filesystem::path(FOOD_SOURCE_DIR) / "configs" / "default.json";

  const auto guarded = [](int id, auto&& f) {
    try {
      f();
    } catch (const std::exception& e) {
      report(id, false, "criterion", std::string("error: ") + e.what(), 0);
    }
  };
  guarded(1, criterion_numerical_core);
  guarded(2, criterion_metric_oracles);
  guarded(3, [&] { criteria_pipeline(config); });
  guarded(8, [&] { criterion_determinism(cli, config); });
  std::cout << (failures == 0 ? "all criteria passed" : std::to_string(failures) + " criteria failed") << std::endl;
  return failures == 0 ? 0 : 1;
}
