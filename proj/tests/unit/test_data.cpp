#include <fstream>

#include "doctest.h"
#include "food/data.hpp"
#include "helpers.hpp"

using namespace food;
using namespace food::data;

namespace {

void write_bytes(const std::filesystem::path& p, const std::vector<std::uint8_t>& b) {
  std::ofstream os(p, std::ios::binary);
  os.write(reinterpret_cast<const char*>(b.data()), static_cast<std::streamsize>(b.size()));
}

std::vector<std::uint8_t> read_bytes(const std::filesystem::path& p) {
  std::ifstream is(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(is), {}};
}

void be32(std::vector<std::uint8_t>& b, std::uint32_t v) {
  for (int s = 24; s >= 0; s -= 8) b.push_back(static_cast<std::uint8_t>(v >> s));
}

template <typename F>
std::string error_text(F&& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.what();
  }
  return {};
}

Dataset labelled(std::size_t per_class, std::size_t classes) {
  Dataset d;
  d.num_classes = classes;
  d.images = Tensor(Shape{per_class * classes, 1, 1, 1});
  for (std::size_t i = 0; i < per_class * classes; ++i) {
    d.labels.push_back(static_cast<int>(i % classes));
    d.images[i] = static_cast<float>(i) / static_cast<float>(per_class * classes);
  }
  return d;
}

}  // namespace

TEST_CASE("noiseless synthetic blob peaks at its center") {
  SyntheticSpec s;
  s.noise_sigma = 0;
  s.train_per_class = 2;
  s.val_per_class = 1;
  s.test_per_class = 1;
  s.ood_count = 2;
  const auto d = gen_synthetic(s);
  CHECK_NOTHROW(d.train.validate());
  for (std::size_t n = 0; n < d.train.size(); ++n) {
    const auto& c = s.centers[static_cast<std::size_t>(d.train.labels[n])];
    const auto img = d.train.images.sample(n);
    CHECK(img[static_cast<std::size_t>(c.row) * s.width + static_cast<std::size_t>(c.col)] == 1.0f);
    // four pixels along the row, towards the image middle
    const auto col = static_cast<std::size_t>(c.col < 8 ? c.col + 4 : c.col - 4);
    CHECK(img[static_cast<std::size_t>(c.row) * s.width + col] == doctest::Approx(std::exp(-16.0 / 8.0)).epsilon(1e-6));
  }
  const auto ood = d.test_ood.images.sample(0);
  CHECK(ood[8 * s.width + 8] == 1.0f);
}

TEST_CASE("synthetic data is deterministic under a seed") {
  SyntheticSpec s;
  s.train_per_class = 5;
  s.val_per_class = 3;
  s.test_per_class = 3;
  s.ood_count = 6;
  for (const auto mode : {OodMode::kCenterBlob, OodMode::kRing, OodMode::kUniformNoise}) {
    s.ood_mode = mode;
    const auto a = gen_synthetic(s), b = gen_synthetic(s);
    CHECK(a.train.images == b.train.images);
    CHECK(a.train.labels == b.train.labels);
    CHECK(a.test_ood.images == b.test_ood.images);
    CHECK_NOTHROW(a.test_ood.validate());
    s.seed += 1;
    CHECK_FALSE(gen_synthetic(s).train.images == a.train.images);
  }
  const auto d = gen_synthetic(s);
  CHECK(d.train.class_counts() == std::vector<std::size_t>(4, 5));
  CHECK(d.val.class_counts() == std::vector<std::size_t>(4, 3));
  CHECK(d.test_ood.size() == 6);
}

TEST_CASE("synthetic spec validation and json") {
  SyntheticSpec s;
  s.centers = {{4, 4}, {4, 4}};
  CHECK_THROWS_AS(s.validate(), Error);
  s = SyntheticSpec{};
  s.blob_sigma = 0;
  CHECK_THROWS_AS(s.validate(), Error);
  s = SyntheticSpec{};
  s.ood_mode = OodMode::kRing;
  s.seed = 99;
  const SyntheticSpec r = SyntheticSpec::from_json(s.to_json());
  CHECK(r.to_json() == s.to_json());
  CHECK_THROWS_AS(SyntheticSpec::from_json({{"bogus", 1}}), Error);
  CHECK_THROWS_AS(parse_ood_mode("stripes"), Error);
}

TEST_CASE("CIFAR-10 binary records") {
  testutil::TempDir dir("cifar");
  std::vector<std::uint8_t> rec(3073, 255);
  rec[0] = 3;
  write_bytes(dir / "one.bin", rec);
  const Dataset d = load_cifar10_binary(dir / "one.bin");
  CHECK(d.size() == 1);
  CHECK(d.labels[0] == 3);
  CHECK(d.sample_shape() == Shape{3, 32, 32});
  for (float v : d.images.data()) CHECK(v == 1.0f);

  // two-record fixture: byte layout survives a round trip
  std::vector<std::uint8_t> two(2 * 3073);
  for (std::size_t i = 0; i < two.size(); ++i) two[i] = static_cast<std::uint8_t>((i * 7) % 256);
  two[0] = 0;
  two[3073] = 9;
  write_bytes(dir / "two.bin", two);
  const Dataset t = load_cifar10_binary(dir / "two.bin");
  CHECK(t.labels == std::vector<int>{0, 9});
  CHECK(t.images[1024] == doctest::Approx(two[1 + 1024] / 255.0));  // first green pixel
  save_cifar10_binary(t, dir / "again.bin");
  CHECK(read_bytes(dir / "again.bin") == two);

  rec.pop_back();
  write_bytes(dir / "short.bin", rec);
  const std::string msg = error_text([&] { load_cifar10_binary(dir / "short.bin"); });
  CHECK(msg.find("byte offset 0") != std::string::npos);
  two[3073] = 10;
  write_bytes(dir / "label.bin", two);
  CHECK_THROWS_AS(load_cifar10_binary(dir / "label.bin"), Error);
}

TEST_CASE("IDX files") {
  testutil::TempDir dir("idx");
  std::vector<std::uint8_t> img, lab;
  be32(img, 0x803);
  be32(img, 2);
  be32(img, 2);
  be32(img, 3);
  for (int i = 0; i < 12; ++i) img.push_back(static_cast<std::uint8_t>(i == 0 ? 255 : i * 20));
  be32(lab, 0x801);
  be32(lab, 2);
  lab.push_back(1);
  lab.push_back(7);
  write_bytes(dir / "img", img);
  write_bytes(dir / "lab", lab);
  const Dataset d = load_idx(dir / "img", dir / "lab");
  CHECK(d.sample_shape() == Shape{1, 2, 3});
  CHECK(d.labels == std::vector<int>{1, 7});
  CHECK(d.images[0] == 1.0f);
  CHECK_NOTHROW(d.validate());
  save_idx(d, dir / "img2", dir / "lab2");
  CHECK(read_bytes(dir / "img2") == img);
  CHECK(read_bytes(dir / "lab2") == lab);

  auto bad = img;
  bad[3] = 0x02;
  write_bytes(dir / "bad", bad);
  CHECK(error_text([&] { load_idx(dir / "bad", dir / "lab"); }).find("bad magic") != std::string::npos);
  auto more = lab;
  more[7] = 3;
  more.push_back(0);
  write_bytes(dir / "more", more);
  CHECK(error_text([&] { load_idx(dir / "img", dir / "more"); }).find("mismatch") != std::string::npos);
}

TEST_CASE("native dataset format") {
  testutil::TempDir dir("native");
  SyntheticSpec s;
  s.train_per_class = 3;
  s.val_per_class = 1;
  s.test_per_class = 1;
  s.ood_count = 2;
  Dataset d = gen_synthetic(s).train;
  d.provenance["note"] = "x";
  save_dataset(d, dir / "d.fooddata");
  const Dataset r = load_dataset(dir / "d.fooddata");
  CHECK(r.images == d.images);
  CHECK(r.labels == d.labels);
  CHECK(r.num_classes == d.num_classes);
  CHECK(r.provenance.at("note") == "x");

  auto bytes = read_bytes(dir / "d.fooddata");
  bytes[0] = 'X';
  write_bytes(dir / "magic", bytes);
  CHECK(error_text([&] { load_dataset(dir / "magic"); }).find("bad magic") != std::string::npos);
  bytes = read_bytes(dir / "d.fooddata");
  bytes.resize(bytes.size() / 2);
  write_bytes(dir / "half", bytes);
  CHECK_THROWS_AS(load_dataset(dir / "half"), Error);
  try {
    load_dataset(dir / "missing");
    CHECK(false);
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::kMissingArtifact);
  }
}

TEST_CASE("stratified splits") {
  const Dataset d = labelled(10, 3);
  const auto halves = split(d, {0.5, 0.5}, 1);
  REQUIRE(halves.size() == 2);
  for (const auto& h : halves) CHECK(h.class_counts() == std::vector<std::size_t>{5, 5, 5});
  std::vector<float> seen;
  for (const auto& h : halves)
    for (float v : h.images.data()) seen.push_back(v);
  std::sort(seen.begin(), seen.end());
  CHECK(std::adjacent_find(seen.begin(), seen.end()) == seen.end());
  CHECK(seen.size() == d.size());

  const auto same = split(d, {1.0}, 1);
  CHECK(same[0].images == d.images);
  CHECK(same[0].labels == d.labels);

  CHECK(split(d, {0.5, 0.5}, 1)[0].images == halves[0].images);

  for (const auto& f : {std::vector<double>{0.3, 0.7}, std::vector<double>{0.25, 0.25, 0.5}}) {
    const auto parts = split(labelled(13, 4), f, 5);
    for (std::size_t k = 0; k < f.size(); ++k)
      for (std::size_t c : parts[k].class_counts()) CHECK(std::abs(static_cast<double>(c) - f[k] * 13) <= 1.0);
  }
  CHECK_THROWS_AS(split(labelled(2, 2), {0.9, 0.1}, 1), Error);
  CHECK_THROWS_AS(split(d, {0.5, 0.4}, 1), Error);
}
