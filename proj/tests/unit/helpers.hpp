#pragma once

#include <cmath>
#include <filesystem>
#include <string>
#include <vector>

#include "food/gausshead.hpp"
#include "food/network.hpp"
#include "food/rng.hpp"

namespace testutil {

using food::BasicTensor;
using food::Shape;

template <typename T>
BasicTensor<T> random_tensor(Shape s, food::Rng& rng, double lo = -1.0, double hi = 1.0) {
  BasicTensor<T> t(std::move(s));
  for (auto& v : t.data()) v = static_cast<T>(rng.uniform(lo, hi));
  return t;
}

// Overwrites every parameter and buffer with random values; variances and
// standard deviations stay positive.
template <typename T>
void randomize(food::nn::Network<T>& net, food::Rng& rng) {
  for (auto& p : net.named_state()) {
    const bool positive = p.name.find("running_var") != std::string::npos || p.name.ends_with(".std");
    const bool logvar = p.name.find("logvar") != std::string::npos;
    for (auto& v : p.value->data()) {
      if (positive)
        v = static_cast<T>(rng.uniform(0.5, 1.5));
      else if (logvar)
        v = static_cast<T>(rng.uniform(-0.5, 0.5));
      else
        v = static_cast<T>(rng.uniform(-0.6, 0.6));
    }
  }
}

// ||a - b|| / max(||a||, ||b||, floor). The floor keeps gradients that are
// zero by construction (a bias ahead of batch norm) from comparing
// finite-difference roundoff.
inline double rel_error(const std::vector<double>& a, const std::vector<double>& b, double floor = 1e-5) {
  double d = 0, na = 0, nb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    d += (a[i] - b[i]) * (a[i] - b[i]);
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  return std::sqrt(d) / std::max({std::sqrt(na), std::sqrt(nb), floor});
}

// Central difference of f at step h, flagged as a kink when the estimate at
// h/10 disagrees (the interval crosses a ReLU boundary).
struct FiniteDiff {
  double value = 0;
  bool kink = false;
};

template <typename F>
FiniteDiff central_diff(F&& f_at, double h) {
  const double d1 = (f_at(h) - f_at(-h)) / (2 * h);
  const double d2 = (f_at(h / 10) - f_at(-h / 10)) / (2 * h / 10);
  const bool kink = std::abs(d1 - d2) > 1e-5 * std::max({std::abs(d1), std::abs(d2), 1e-3});
  return {d1, kink};
}

struct TempDir {
  std::filesystem::path path;
  explicit TempDir(const std::string& tag) {
    path = std::filesystem::temp_directory_path() /
           ("food_test_" + tag + "_" + std::to_string(reinterpret_cast<std::uintptr_t>(this)));
    std::filesystem::remove_all(path);
    std::filesystem::create_directories(path);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path, ec);
  }
  std::filesystem::path operator/(const std::string& name) const { return path / name; }
};

}  // namespace testutil
