#pragma once

#include <algorithm>
#include <cstddef>

#include "food/parallel.hpp"

// Row-major matrix kernels for the convolution and dense layers. Each output
// element is reduced in a fixed order regardless of worker count.
namespace food::kernels {

inline constexpr std::size_t kColumnBlock = 256;

// C[M,N] (+)= A[M,K] * B[K,N]
template <typename T>
void gemm_nn(std::size_t M, std::size_t N, std::size_t K, const T* A, const T* B, T* C, bool accumulate) {
  const std::size_t blocks = (N + kColumnBlock - 1) / kColumnBlock;
  parallel_for(0, blocks, [&](std::size_t b0, std::size_t b1) {
    for (std::size_t b = b0; b < b1; ++b) {
      const std::size_t j0 = b * kColumnBlock;
      const std::size_t jn = std::min(N, j0 + kColumnBlock) - j0;
      for (std::size_t i = 0; i < M; ++i) {
        T* c = C + i * N + j0;
        if (!accumulate) std::fill_n(c, jn, T(0));
        const T* a = A + i * K;
        for (std::size_t k = 0; k < K; ++k) {
          const T av = a[k];
          const T* brow = B + k * N + j0;
          for (std::size_t j = 0; j < jn; ++j) c[j] += av * brow[j];
        }
      }
    }
  });
}

// C[M,N] (+)= A^T * B with A stored [K,M], B stored [K,N]
template <typename T>
void gemm_tn(std::size_t M, std::size_t N, std::size_t K, const T* A, const T* B, T* C, bool accumulate) {
  const std::size_t blocks = (N + kColumnBlock - 1) / kColumnBlock;
  parallel_for(0, blocks, [&](std::size_t b0, std::size_t b1) {
    for (std::size_t b = b0; b < b1; ++b) {
      const std::size_t j0 = b * kColumnBlock;
      const std::size_t jn = std::min(N, j0 + kColumnBlock) - j0;
      for (std::size_t i = 0; i < M; ++i) {
        T* c = C + i * N + j0;
        if (!accumulate) std::fill_n(c, jn, T(0));
        for (std::size_t k = 0; k < K; ++k) {
          const T av = A[k * M + i];
          const T* brow = B + k * N + j0;
          for (std::size_t j = 0; j < jn; ++j) c[j] += av * brow[j];
        }
      }
    }
  });
}

template <typename T>
T dot(const T* a, const T* b, std::size_t n) {
  T acc[8] = {};
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8)
    for (std::size_t l = 0; l < 8; ++l) acc[l] += a[i + l] * b[i + l];
  T s = ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7]));
  for (; i < n; ++i) s += a[i] * b[i];
  return s;
}

// C[M,N] (+)= A[M,K] * B^T with B stored [N,K]
template <typename T>
void gemm_nt(std::size_t M, std::size_t N, std::size_t K, const T* A, const T* B, T* C, bool accumulate) {
  parallel_for(0, M * N, [&](std::size_t e0, std::size_t e1) {
    for (std::size_t e = e0; e < e1; ++e) {
      const std::size_t i = e / N, j = e % N;
      const T v = dot(A + i * K, B + j * K, K);
      C[e] = accumulate ? C[e] + v : v;
    }
  }, 4);
}

}  // namespace food::kernels
