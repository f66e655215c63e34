#pragma once

#include <cblas.h>

#include <cstddef>

namespace physiofuse::detail {

/// C[m×n] (+)= op(A) · op(B), all row-major. op(A) is m×k, op(B) is k×n.
inline void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k,
                 const float* a, const float* b, float* c, bool accumulate) {
  if (m == 0 || n == 0) return;
  cblas_sgemm(CblasRowMajor, trans_a ? CblasTrans : CblasNoTrans, trans_b ? CblasTrans : CblasNoTrans,
              static_cast<int>(m), static_cast<int>(n), static_cast<int>(k), 1.0f, a,
              static_cast<int>(trans_a ? m : k), b, static_cast<int>(trans_b ? k : n),
              accumulate ? 1.0f : 0.0f, c, static_cast<int>(n));
}

inline void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k,
                 const double* a, const double* b, double* c, bool accumulate) {
  if (m == 0 || n == 0) return;
  cblas_dgemm(CblasRowMajor, trans_a ? CblasTrans : CblasNoTrans, trans_b ? CblasTrans : CblasNoTrans,
              static_cast<int>(m), static_cast<int>(n), static_cast<int>(k), 1.0, a,
              static_cast<int>(trans_a ? m : k), b, static_cast<int>(trans_b ? k : n),
              accumulate ? 1.0 : 0.0, c, static_cast<int>(n));
}

}  // namespace physiofuse::detail
