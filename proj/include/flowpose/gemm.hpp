#pragma once

#include <algorithm>
#include <cstddef>
#include <vector>

#if defined(__AVX512F__)
#include <immintrin.h>
#endif

#include "flowpose/parallel.hpp"

namespace flowpose::detail {

// C(MxN) += A(MxK) * B(KxN), row-major, leading dimensions equal to column
// counts. Every C element is produced by one code path chosen from its
// position alone and its k-sum runs in ascending order, so results do not
// depend on the worker count.

inline constexpr std::size_t kGemmMR = 6;
inline constexpr std::size_t kGemmNR = 16;

inline void gemm_scalar(std::size_t i0, std::size_t i1, std::size_t j0, std::size_t j1, std::size_t N,
                        std::size_t K, const double* A, const double* B, double* C) {
  for (std::size_t i = i0; i < i1; ++i)
    for (std::size_t j = j0; j < j1; ++j) {
      double acc = C[i * N + j];
      for (std::size_t k = 0; k < K; ++k) acc += A[i * K + k] * B[k * N + j];
      C[i * N + j] = acc;
    }
}

#if defined(__AVX512F__)

// 6x16 register tile; `panel` holds B[:, j:j+16] packed as K rows of 16.
inline void gemm_tile_6x16(std::size_t N, std::size_t K, const double* A, const double* panel, double* C) {
  __m512d c00 = _mm512_loadu_pd(C), c01 = _mm512_loadu_pd(C + 8);
  __m512d c10 = _mm512_loadu_pd(C + N), c11 = _mm512_loadu_pd(C + N + 8);
  __m512d c20 = _mm512_loadu_pd(C + 2 * N), c21 = _mm512_loadu_pd(C + 2 * N + 8);
  __m512d c30 = _mm512_loadu_pd(C + 3 * N), c31 = _mm512_loadu_pd(C + 3 * N + 8);
  __m512d c40 = _mm512_loadu_pd(C + 4 * N), c41 = _mm512_loadu_pd(C + 4 * N + 8);
  __m512d c50 = _mm512_loadu_pd(C + 5 * N), c51 = _mm512_loadu_pd(C + 5 * N + 8);
  for (std::size_t k = 0; k < K; ++k) {
    const __m512d b0 = _mm512_loadu_pd(panel + k * 16);
    const __m512d b1 = _mm512_loadu_pd(panel + k * 16 + 8);
    __m512d a = _mm512_set1_pd(A[k]);
    c00 = _mm512_fmadd_pd(a, b0, c00);
    c01 = _mm512_fmadd_pd(a, b1, c01);
    a = _mm512_set1_pd(A[K + k]);
    c10 = _mm512_fmadd_pd(a, b0, c10);
    c11 = _mm512_fmadd_pd(a, b1, c11);
    a = _mm512_set1_pd(A[2 * K + k]);
    c20 = _mm512_fmadd_pd(a, b0, c20);
    c21 = _mm512_fmadd_pd(a, b1, c21);
    a = _mm512_set1_pd(A[3 * K + k]);
    c30 = _mm512_fmadd_pd(a, b0, c30);
    c31 = _mm512_fmadd_pd(a, b1, c31);
    a = _mm512_set1_pd(A[4 * K + k]);
    c40 = _mm512_fmadd_pd(a, b0, c40);
    c41 = _mm512_fmadd_pd(a, b1, c41);
    a = _mm512_set1_pd(A[5 * K + k]);
    c50 = _mm512_fmadd_pd(a, b0, c50);
    c51 = _mm512_fmadd_pd(a, b1, c51);
  }
  _mm512_storeu_pd(C, c00);
  _mm512_storeu_pd(C + 8, c01);
  _mm512_storeu_pd(C + N, c10);
  _mm512_storeu_pd(C + N + 8, c11);
  _mm512_storeu_pd(C + 2 * N, c20);
  _mm512_storeu_pd(C + 2 * N + 8, c21);
  _mm512_storeu_pd(C + 3 * N, c30);
  _mm512_storeu_pd(C + 3 * N + 8, c31);
  _mm512_storeu_pd(C + 4 * N, c40);
  _mm512_storeu_pd(C + 4 * N + 8, c41);
  _mm512_storeu_pd(C + 5 * N, c50);
  _mm512_storeu_pd(C + 5 * N + 8, c51);
}

inline void gemm_tile_1x16(std::size_t K, const double* A, const double* panel, double* C) {
  __m512d c0 = _mm512_loadu_pd(C), c1 = _mm512_loadu_pd(C + 8);
  for (std::size_t k = 0; k < K; ++k) {
    const __m512d a = _mm512_set1_pd(A[k]);
    c0 = _mm512_fmadd_pd(a, _mm512_loadu_pd(panel + k * 16), c0);
    c1 = _mm512_fmadd_pd(a, _mm512_loadu_pd(panel + k * 16 + 8), c1);
  }
  _mm512_storeu_pd(C, c0);
  _mm512_storeu_pd(C + 8, c1);
}

// Rows [i0, i1) with i0, i1 multiples of 6 (or i1 == M for the tail).
inline void gemm_rows(std::size_t i0, std::size_t i1, std::size_t N, std::size_t K, const double* A,
                      const double* B, double* C) {
  const std::size_t full_i = i0 + (i1 - i0) / kGemmMR * kGemmMR;
  const std::size_t full_j = N / kGemmNR * kGemmNR;
  std::vector<double> panel(K * kGemmNR);
  for (std::size_t j = 0; j < full_j; j += kGemmNR) {
    for (std::size_t k = 0; k < K; ++k) std::copy_n(B + k * N + j, kGemmNR, panel.data() + k * kGemmNR);
    for (std::size_t i = i0; i < full_i; i += kGemmMR)
      gemm_tile_6x16(N, K, A + i * K, panel.data(), C + i * N + j);
    for (std::size_t i = full_i; i < i1; ++i) gemm_tile_1x16(K, A + i * K, panel.data(), C + i * N + j);
  }
  gemm_scalar(i0, i1, full_j, N, N, K, A, B, C);
}

#else

inline void gemm_rows(std::size_t i0, std::size_t i1, std::size_t N, std::size_t K, const double* A,
                      const double* B, double* C) {
  constexpr std::size_t NR = 8;
  const std::size_t full_j = N / NR * NR;
  for (std::size_t i = i0; i < i1; ++i) {
    for (std::size_t j = 0; j < full_j; j += NR) {
      double acc[NR];
      for (std::size_t c = 0; c < NR; ++c) acc[c] = C[i * N + j + c];
      for (std::size_t k = 0; k < K; ++k) {
        const double a = A[i * K + k];
        const double* b = B + k * N + j;
        for (std::size_t c = 0; c < NR; ++c) acc[c] += a * b[c];
      }
      for (std::size_t c = 0; c < NR; ++c) C[i * N + j + c] = acc[c];
    }
  }
  gemm_scalar(i0, i1, full_j, N, N, K, A, B, C);
}

#endif

inline void gemm_acc(std::size_t M, std::size_t N, std::size_t K, const double* A, const double* B, double* C) {
  const std::size_t blocks = (M + kGemmMR - 1) / kGemmMR;
  if (M * N * K < (1u << 20) || thread_count() == 1) {
    gemm_rows(0, M, N, K, A, B, C);
    return;
  }
  parallel_for(blocks, 2, [&](std::size_t b0, std::size_t b1) {
    gemm_rows(b0 * kGemmMR, std::min(M, b1 * kGemmMR), N, K, A, B, C);
  });
}

/// out(cols x rows) = in(rows x cols)^T
inline void transpose(std::size_t rows, std::size_t cols, const double* in, double* out) {
  constexpr std::size_t T = 16;
  for (std::size_t r0 = 0; r0 < rows; r0 += T)
    for (std::size_t c0 = 0; c0 < cols; c0 += T)
      for (std::size_t r = r0; r < std::min(rows, r0 + T); ++r)
        for (std::size_t c = c0; c < std::min(cols, c0 + T); ++c) out[c * rows + r] = in[r * cols + c];
}

}  // namespace flowpose::detail
