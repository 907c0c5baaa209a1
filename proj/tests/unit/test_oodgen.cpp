#include <cmath>
#include <numeric>

#include "doctest.h"
#include "food/oodgen.hpp"
#include "food/scoring.hpp"
#include "food/train.hpp"
#include "helpers.hpp"

using namespace food;
using namespace food::oodgen;

namespace {

// f(x) = w x into a head with classes N(0,1) and N(4,1); for w = 1 and x in
// [0, 2], LLR(x) = 8 - 4x.
nn::Network<double> toy_net(double w = 1.0) {
  nn::Network<double> net(Shape{1}, 2);
  net.add(std::make_unique<nn::Dense<double>>(1, 1));
  auto h = std::make_unique<head::GaussianHead<double>>(1, 2);
  h->set_class(0, std::vector<double>{0}, std::vector<double>{1});
  h->set_class(1, std::vector<double>{4}, std::vector<double>{1});
  net.add(std::move(h));
  auto& d = dynamic_cast<nn::Dense<double>&>(net.layer(0));
  d.weight()[0] = w;
  d.bias()[0] = 0;
  return net;
}

CraftConfig toy_cfg(double eps, double thres, StepScale step = StepScale::kRaw) {
  CraftConfig c;
  c.epsilon = eps;
  c.thres = thres;
  c.step = step;
  return c;
}

std::vector<double> iota_values(int lo, int hi) {
  std::vector<double> v;
  for (int i = lo; i <= hi; ++i) v.push_back(i);
  return v;
}

}  // namespace

TEST_CASE("thres nearest-rank examples") {
  CHECK(compute_thres(iota_values(1, 100)) == 5);
  CHECK(compute_thres(iota_values(1, 20)) == 1);
  CHECK(compute_thres(std::vector<double>(30, 2.5)) == 2.5);
  CHECK_THROWS_AS(compute_thres(iota_values(1, 19)), Error);

  std::vector<double> shuffled = iota_values(1, 100);
  std::reverse(shuffled.begin(), shuffled.end());
  CHECK(compute_thres(shuffled) == 5);
  CHECK(compute_thres(iota_values(1, 100), 95, ThresReading::kUpper) == 95);
  CHECK(compute_thres(iota_values(1, 100), 90) == 10);
  CHECK(compute_thres(iota_values(1, 100), 97.5) == 3);
  CHECK(parse_thres_reading(to_string(ThresReading::kUpper)) == ThresReading::kUpper);
}

TEST_CASE("toy craft: one large step reaches the threshold") {
  const auto net = toy_net();
  const auto r = craft(net, Tensor64(Shape{1, 1}, {0.0}), toy_cfg(0.25, 4.5));
  CHECK(r.x_art[0] == doctest::Approx(1.0));
  CHECK(r.report.iterations[0] == 1);
  CHECK(r.report.reached[0]);
  CHECK(r.report.initial_llr[0] == doctest::Approx(8.0));
  CHECK(r.report.final_llr[0] == doctest::Approx(4.0));
}

TEST_CASE("toy craft: small steps run out of iterations") {
  const auto net = toy_net();
  const auto r = craft(net, Tensor64(Shape{1, 1}, {0.0}), toy_cfg(0.01, 4.5));
  CHECK(r.x_art[0] == doctest::Approx(0.4));
  CHECK(r.report.final_llr[0] == doctest::Approx(6.4));
  CHECK_FALSE(r.report.reached[0]);
  CHECK(r.report.iterations[0] == 10);
}

TEST_CASE("toy craft: step scalings") {
  const auto net = toy_net();
  // |g| = 4 here, so both scalings move x by epsilon per step
  for (const auto step : {StepScale::kMeanAbs, StepScale::kSign}) {
    const auto r = craft(net, Tensor64(Shape{1, 1}, {0.0}), toy_cfg(0.25, 4.5, step));
    CHECK(r.x_art[0] == doctest::Approx(1.0));
    CHECK(r.report.iterations[0] == 4);
    CHECK(r.report.reached[0]);
  }
  CHECK(parse_step_scale("mean_abs") == StepScale::kMeanAbs);
  CHECK(to_string(StepScale::kSign) == "sign");
  CHECK_THROWS_AS(parse_step_scale("adam"), Error);
}

TEST_CASE("toy craft: samples stop independently and stay in range") {
  const auto net = toy_net();
  const Tensor64 x(Shape{3, 1}, {0.0, 0.9, 0.5});
  const auto r = craft(net, x, toy_cfg(0.25, 4.5));
  CHECK(r.x_art[1] == 1.0);  // clipped
  CHECK(r.report.iterations == std::vector<std::size_t>{1, 1, 1});
  CHECK(r.report.reached_fraction() == 1.0);

  const auto far = craft(net, x, toy_cfg(0.05, 4.5));
  for (double v : far.x_art.data()) CHECK((v >= 0.0 && v <= 1.0));
  CHECK(far.report.iterations[2] < far.report.iterations[0]);
}

TEST_CASE("flat score leaves samples in place") {
  const auto net = toy_net(0.0);  // LLR is 8 everywhere
  const Tensor64 x(Shape{2, 1}, {0.3, 1.7});
  auto cfg = toy_cfg(0.1, 4.5);
  for (const auto step : {StepScale::kRaw, StepScale::kMeanAbs, StepScale::kSign}) {
    cfg.step = step;
    const auto r = craft(net, x, cfg);
    CHECK(r.x_art[0] == 0.3);
    CHECK(r.x_art[1] == 1.0);
    CHECK(r.report.iterations == std::vector<std::size_t>{10, 10});
    CHECK_FALSE(r.report.reached[0]);
  }
  cfg.thres = 9;
  const auto below = craft(net, x, cfg);
  CHECK(below.report.iterations == std::vector<std::size_t>{1, 1});
  CHECK(below.report.reached[0]);
}

TEST_CASE("max_iter one and config errors") {
  const auto net = toy_net();
  auto cfg = toy_cfg(0.01, -100);
  cfg.max_iter = 1;
  const auto r = craft(net, Tensor64(Shape{3, 1}, {0.0, 0.2, 0.4}), cfg);
  CHECK(r.report.iterations == std::vector<std::size_t>{1, 1, 1});

  CHECK_THROWS_AS(craft(net, Tensor64(Shape{1, 1}, {0.0}), toy_cfg(0.0, 1)), Error);
  cfg.max_iter = 0;
  CHECK_THROWS_AS(cfg.validate(), Error);
  cfg = toy_cfg(0.1, 1);
  cfg.clip_lo = 1;
  CHECK_THROWS_AS(cfg.validate(), Error);
}

TEST_CASE("craft over datasets") {
  data::SyntheticSpec spec;
  spec.train_per_class = 30;
  spec.val_per_class = 15;
  spec.test_per_class = 4;
  spec.ood_count = 8;
  spec.seed = 21;
  const auto s = data::gen_synthetic(spec);
  nn::MiniResNetOptions o;
  o.stem_channels = 4;
  o.stage_channels = {4, 8};
  o.stage_strides = {2, 2};
  o.blocks_per_stage = 1;
  nn::Network<float> net = nn::build_miniresnet(o, 5);
  train::ClassifierConfig cc;
  cc.epochs = 2;
  train::train_classifier(net, s.train, cc);
  head::install_gaussian_head(net, s.train);

  const auto llr = dataset_llr(net, s.val);
  CraftConfig cfg;
  cfg.step = StepScale::kMeanAbs;
  cfg.thres = compute_thres(llr);
  cfg.batch_size = 16;

  SUBCASE("empty set") {
    data::Dataset empty;
    empty.images = Tensor(Shape{0, 1, 16, 16});
    empty.num_classes = 4;
    const auto c = craft_batch(net, empty, cfg);
    CHECK(c.ood.size() == 0);
    CHECK(c.report.size() == 0);
  }
  SUBCASE("labels kept, range held, llr lowered on average") {
    const auto c = craft_batch(net, s.val, cfg);
    REQUIRE(c.ood.size() == s.val.size());
    CHECK(c.ood.labels == s.val.labels);
    CHECK_NOTHROW(c.ood.validate());
    for (std::size_t i = 0; i < c.report.size(); ++i) {
      CHECK(c.report.iterations[i] >= 1);
      CHECK(c.report.iterations[i] <= cfg.max_iter);
      CHECK(c.report.reached[i] == (c.report.final_llr[i] <= cfg.thres));
    }
    const auto mean = [](const std::vector<double>& v) {
      return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
    };
    CHECK(c.report.size() >= 50);
    CHECK(mean(c.report.final_llr) < mean(c.report.initial_llr));
    // crafted images are stored as they are scored
    const auto again = dataset_llr(net, c.ood);
    for (std::size_t i = 0; i < again.size(); ++i)
      CHECK(again[i] == doctest::Approx(c.report.final_llr[i]).epsilon(1e-4));
  }
  SUBCASE("max_iter one") {
    cfg.max_iter = 1;
    const auto c = craft_batch(net, s.val, cfg);
    for (auto it : c.report.iterations) CHECK(it == 1);
  }
}

TEST_CASE("histogram bins cover both sets") {
  const std::vector<double> before{1, 2, 3, 4, 5}, after{-5, -1, 0};
  const auto h = llr_histogram(before, after, 5);
  REQUIRE(h.size() == 5);
  CHECK(h.front().lo == -5);
  CHECK(h.back().hi == 5);
  std::size_t nb = 0, na = 0;
  for (const auto& b : h) nb += b.before, na += b.after;
  CHECK(nb == 5);
  CHECK(na == 3);
  const std::string csv = histogram_csv(h, 0.5, {{"seed", "7"}});
  CHECK(csv.rfind("bin_lo,bin_hi,count_before,count_after,thres,seed\n", 0) == 0);
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 6);
}
