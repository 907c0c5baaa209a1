#include <cmath>
#include <numbers>

#include "doctest.h"
#include "food/gausshead.hpp"
#include "food/network.hpp"
#include "helpers.hpp"

using namespace food;
using namespace food::head;

namespace {

data::SyntheticSplits small_synthetic(std::uint64_t seed) {
  data::SyntheticSpec spec;
  spec.train_per_class = 24;
  spec.val_per_class = 12;
  spec.test_per_class = 4;
  spec.ood_count = 8;
  spec.seed = seed;
  return data::gen_synthetic(spec);
}

nn::Network<float> small_net(std::uint64_t seed) {
  nn::MiniResNetOptions o;
  o.stem_channels = 4;
  o.stage_channels = {4, 8};
  o.stage_strides = {2, 2};
  o.blocks_per_stage = 1;
  return nn::build_miniresnet(o, seed);
}

}  // namespace

TEST_CASE("log_gaussian closed forms") {
  const std::vector<double> zero2{0, 0}, one2{1, 1};
  CHECK(log_gaussian(zero2, zero2, one2) == doctest::Approx(-1.837877).epsilon(1e-6));
  CHECK(log_gaussian(std::vector<double>{2}, std::vector<double>{0}, std::vector<double>{4}) ==
        doctest::Approx(-2.112086).epsilon(1e-6));
  CHECK_THROWS_AS(log_gaussian(zero2, zero2, std::vector<double>{1, 0}), Error);
  CHECK_THROWS_AS(log_gaussian(zero2, zero2, std::vector<double>{-1, 1}), Error);
}

TEST_CASE("density integrates to one by Simpson quadrature") {
  for (const auto [mu, var] : {std::pair{0.0, 1.0}, std::pair{3.0, 0.25}, std::pair{-2.0, 9.0}}) {
    const double s = std::sqrt(var);
    const double a = mu - 8 * s, b = mu + 8 * s;
    const int n = 2000;
    const double h = (b - a) / n;
    double sum = 0;
    for (int i = 0; i <= n; ++i) {
      const double w = (i == 0 || i == n) ? 1 : (i % 2 ? 4 : 2);
      sum += w * std::exp(log_gaussian(std::vector<double>{a + i * h}, std::vector<double>{mu}, std::vector<double>{var}));
    }
    CHECK(sum * h / 3 == doctest::Approx(1.0).epsilon(1e-4));
  }
}

TEST_CASE("init_from_data: hand example and variance floor") {
  const Tensor pen(Shape{4, 1}, {0.f, 2.f, 5.f, 5.f});
  const std::vector<int> labels{0, 0, 1, 1};
  const GaussianHead<float> h = init_from_data(pen, labels, 2);
  CHECK(h.mean(0)[0] == doctest::Approx(1.0));
  CHECK(h.log_var(0)[0] == doctest::Approx(0.0));
  CHECK(h.mean(1)[0] == doctest::Approx(5.0));
  CHECK(std::exp(static_cast<double>(h.log_var(1)[0])) == doctest::Approx(1e-6).epsilon(1e-4));

  CHECK_THROWS_AS(init_from_data(pen, std::vector<int>{0, 0, 0, 1}, 2), Error);  // one sample in class 1
  CHECK_THROWS_AS(init_from_data(pen, std::vector<int>{0, 0, 0, 0}, 2), Error);
}

TEST_CASE("init_from_data matches a two-pass oracle") {
  Rng rng(11);
  const std::size_t m = 60, d = 5, C = 3;
  const Tensor pen = testutil::random_tensor<float>(Shape{m, d}, rng, -3, 3);
  std::vector<int> labels(m);
  for (std::size_t i = 0; i < m; ++i) labels[i] = static_cast<int>(i % C);
  const GaussianHead<float> h = init_from_data(pen, labels, C);
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t j = 0; j < d; ++j) {
      double mean = 0, n = 0;
      for (std::size_t i = 0; i < m; ++i)
        if (labels[i] == static_cast<int>(c)) mean += pen[i * d + j], n += 1;
      mean /= n;
      double var = 0;
      for (std::size_t i = 0; i < m; ++i)
        if (labels[i] == static_cast<int>(c)) var += (pen[i * d + j] - mean) * (pen[i * d + j] - mean);
      var /= n;
      CHECK(h.mean(c)[j] == doctest::Approx(mean).epsilon(1e-6));
      CHECK(std::exp(static_cast<double>(h.log_var(c)[j])) == doctest::Approx(var).epsilon(1e-6));
    }
}

TEST_CASE("head forward equals log_gaussian per class") {
  Rng rng(5);
  GaussianHead<double> h(3, 2);
  const std::vector<double> mu0{0.1, -0.2, 0.3}, var0{0.5, 1.0, 2.0}, mu1{1, 1, 1}, var1{1, 1, 1};
  h.set_class(0, mu0, var0);
  h.set_class(1, mu1, var1);
  const Tensor64 x = testutil::random_tensor<double>(Shape{4, 3}, rng);
  const Tensor64 out = h.forward(x, nn::Mode::kEval, nullptr);
  for (std::size_t n = 0; n < 4; ++n) {
    const std::span<const double> row(x.data().data() + n * 3, 3);
    CHECK(out[n * 2 + 0] == doctest::Approx(log_gaussian(row, mu0, var0)).epsilon(1e-12));
    CHECK(out[n * 2 + 1] == doctest::Approx(log_gaussian(row, mu1, var1)).epsilon(1e-12));
  }
}

TEST_CASE("head_loss examples") {
  const Tensor64 zero(Shape{1, 2}, {0.0, 0.0});
  const std::vector<int> y{0};
  CHECK(head_loss(zero, y, 0.0) == doctest::Approx(std::log(2.0)));
  CHECK(head_loss(zero, y, 1.0) == doctest::Approx(0.693147).epsilon(1e-6));
  CHECK_THROWS_AS(head_loss(zero, std::vector<int>{2}, 0.0), Error);
  CHECK_THROWS_AS(head_loss(zero, std::vector<int>{-1}, 0.0), Error);

  // lowering the correct-class log-likelihood raises the loss for lambda > 0
  double prev = -1e300;
  for (double v = 0; v >= -20; v -= 2) {
    const Tensor64 h(Shape{1, 2}, {v, v});
    const double l = head_loss(h, y, 0.5);
    CHECK(l > prev);
    prev = l;
  }
}

TEST_CASE("head_loss gradient matches central differences") {
  Rng rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    const Tensor64 h = testutil::random_tensor<double>(Shape{5, 4}, rng, -6, 2);
    std::vector<int> y(5);
    for (auto& v : y) v = static_cast<int>(rng.below(4));
    const double lambda = rng.uniform(0, 1);
    Tensor64 g;
    head_loss(h, y, lambda, &g);
    std::vector<double> ana, num;
    for (std::size_t i = 0; i < h.size(); ++i) {
      Tensor64 hp = h, hm = h;
      hp[i] += 1e-6;
      hm[i] -= 1e-6;
      ana.push_back(g[i]);
      num.push_back((head_loss(hp, y, lambda) - head_loss(hm, y, lambda)) / 2e-6);
    }
    CHECK(testutil::rel_error(ana, num) < 1e-6);
  }
}

TEST_CASE("argmax of head equals argmax of softmax, and shifts cancel") {
  Rng rng(9);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<double> row(5);
    for (auto& v : row) v = rng.uniform(-50, 5);
    double mx = *std::max_element(row.begin(), row.end());
    std::vector<double> p(row.size());
    double z = 0;
    for (std::size_t c = 0; c < row.size(); ++c) z += p[c] = std::exp(row[c] - mx);
    for (auto& v : p) v /= z;
    CHECK(std::max_element(row.begin(), row.end()) - row.begin() == std::max_element(p.begin(), p.end()) - p.begin());

    const double k = rng.uniform(-100, 100);
    const Tensor64 a(Shape{1, 5}, row);
    Tensor64 b = a;
    for (auto& v : b.data()) v += k;
    const std::vector<int> y{static_cast<int>(trial % 5)};
    // cross-entropy is shift invariant; the likelihood term moves by exactly -lambda k
    CHECK(head_loss(b, y, 0.0) == doctest::Approx(head_loss(a, y, 0.0)).epsilon(1e-9));
    CHECK(head_loss(b, y, 1.0) - head_loss(a, y, 1.0) == doctest::Approx(-k).epsilon(1e-9));
  }
}

TEST_CASE("early stopping on the first validation increase") {
  EarlyStopper s;
  CHECK_FALSE(s.observe(1.0));
  CHECK_FALSE(s.observe(0.9));
  CHECK(s.observe(0.95));
  CHECK(s.best_epoch() == 2);
  CHECK(s.best_loss() == 0.9);

  EarlyStopper flat;
  CHECK_FALSE(flat.observe(1.0));
  CHECK_FALSE(flat.observe(1.0));
  CHECK(flat.best_epoch() == 1);
}

TEST_CASE("head config validation") {
  HeadLossConfig c;
  CHECK_NOTHROW(c.validate());
  c.lambda = -0.1;
  CHECK_THROWS_AS(c.validate(), Error);
}

TEST_CASE("head-only classification separates the synthetic classes") {
  const auto s = small_synthetic(2);
  // raw pixels as the representation
  const std::size_t d = s.train.images.sample_size();
  Tensor pen(Shape{s.train.size(), d}, s.train.images.vec());
  const GaussianHead<float> h = init_from_data(pen, s.train.labels, s.train.num_classes);
  const Tensor out = h.forward(pen, nn::Mode::kEval, nullptr);
  std::size_t correct = 0;
  const std::size_t C = s.train.num_classes;
  for (std::size_t n = 0; n < s.train.size(); ++n) {
    const float* r = out.data().data() + n * C;
    correct += static_cast<std::size_t>(std::max_element(r, r + C) - r) == static_cast<std::size_t>(s.train.labels[n]);
  }
  CHECK(correct == s.train.size());
}

TEST_CASE("fine-tuning with zero learning rate leaves parameters unchanged") {
  const auto s = small_synthetic(4);
  nn::Network<float> net = small_net(1);
  install_gaussian_head(net, s.train);
  HeadLossConfig c;
  c.lambda = 0;
  c.lr = 0;
  c.epochs = 2;
  c.batchnorm_train = false;
  const auto before = net.named_state();
  std::vector<std::vector<float>> copy;
  for (const auto& p : before) copy.push_back(p.value->vec());
  finetune(net, s.train, s.val, c);
  const auto after = net.named_state();
  REQUIRE(after.size() == copy.size());
  for (std::size_t i = 0; i < copy.size(); ++i) CHECK_MESSAGE(after[i].value->vec() == copy[i], after[i].name);
}

TEST_CASE("fine-tuning lowers the training loss on separable data") {
  const auto s = small_synthetic(6);
  // untrained features: a head fitted to a trained base sits at its
  // likelihood optimum already and the first RMSprop steps overshoot it
  nn::Network<float> net = small_net(2);
  install_gaussian_head(net, s.train);
  HeadLossConfig c;
  c.lambda = 0.1;
  c.epochs = 3;
  c.batchnorm_train = false;
  const FinetuneReport r = finetune(net, s.train, s.val, c);
  REQUIRE(r.train_loss.size() >= 2);
  CHECK(r.train_loss[1] < r.train_loss[0]);
  CHECK(r.best_epoch < r.val_loss.size());
}
