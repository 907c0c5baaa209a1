#pragma once

#include <span>
#include <string>
#include <vector>

#include "food/checkpoint.hpp"
#include "food/scoring.hpp"

namespace food::detector {

// Logistic output neuron over [F(x,1..L), LLR(x)].
struct DetectorModel {
  std::vector<double> w;
  double b = 0;
  std::vector<double> feat_mean;
  std::vector<double> feat_scale;
  bool standardize = true;

  std::size_t width() const { return w.size(); }
  double logit(std::span<const double> features) const;
  // sigmoid(logit); higher means more in-distribution.
  double score(std::span<const double> features) const;

  // "{prefix}.w", "{prefix}.b", "{prefix}.featmean", "{prefix}.featscale"
  void store(ckpt::Checkpoint& ck, const std::string& prefix = "detector") const;
  static DetectorModel restore(const ckpt::Checkpoint& ck, const std::string& prefix = "detector");
};

struct DetectorFitConfig {
  double l2 = 1e-4;
  std::size_t max_steps = 5000;
  double grad_tol = 1e-6;
  double lr = 1.0;
  bool standardize = true;

  void validate() const;
};

struct FitInfo {
  std::size_t steps = 0;
  double final_loss = 0;
  double grad_norm = 0;
  bool converged = false;
};

// Rows are row-major [n, width]. In-distribution rows get label 1, OOD rows
// label 0. Gradient descent on the mean logistic loss plus l2/2 |w|^2 (the
// bias is not penalized), starting from zero.
DetectorModel fit_detector(std::span<const double> in_rows, std::span<const double> ood_rows, std::size_t width,
                           const DetectorFitConfig& cfg = {}, FitInfo* info = nullptr);

double detector_score(const DetectorModel& m, std::span<const double> features);

template <typename T>
double msp_score(std::span<const T> head_out) {
  return scoring::msp(head_out);
}

// In-place Cholesky factor L (lower) of a symmetric positive-definite [d, d]
// matrix; fails on a non-positive pivot.
void cholesky(std::vector<double>& a, std::size_t d);
// Inverse of an SPD matrix through its Cholesky factor.
std::vector<double> spd_inverse(const std::vector<double>& a, std::size_t d);

// Per-layer class means with one shared covariance per layer over
// average-pooled taps. The stored precision is the inverse of
// S + ridge * trace(S)/d * I.
struct MdStarStats {
  struct Layer {
    std::size_t dim = 0;
    std::vector<std::vector<double>> means;  // [C][d]
    std::vector<double> precision;           // [d, d]
  };
  std::vector<Layer> layers;
  double ridge = 1e-4;

  void store(ckpt::Checkpoint& ck, const std::string& prefix = "mdstar") const;
  static MdStarStats restore(const ckpt::Checkpoint& ck, const std::string& prefix = "mdstar");
};

MdStarStats fit_mdstar(const scoring::PooledTaps& avg_pooled, std::span<const int> labels, std::size_t num_classes,
                       double ridge = 1e-4);

// sum_l max_c -(v_l - mu_c)^T P_l (v_l - mu_c)
double mdstar_score(const MdStarStats& s, const std::vector<std::span<const double>>& pooled);
std::vector<double> mdstar_scores(const MdStarStats& s, const scoring::PooledTaps& avg_pooled);

}  // namespace food::detector
