#pragma once

#include <cblas.h>

#include <cstddef>

// Row-major GEMM kernels (accumulating into C) used by matmul and the fused
// recurrent cell.

namespace iftpp::ad::detail {

inline int dim(std::size_t n) { return static_cast<int>(n); }

// C[n x m] += A[n x k] * B[k x m]
inline void gemm_nn(const double* a, const double* b, double* c, std::size_t n,
                    std::size_t k, std::size_t m) {
  if (n == 0 || m == 0 || k == 0) return;
  cblas_dgemm(CblasRowMajor, CblasNoTrans, CblasNoTrans, dim(n), dim(m), dim(k), 1.0, a, dim(k),
              b, dim(m), 1.0, c, dim(m));
}

// C[n x m] += A[n x k] * B^T where B is [m x k]
inline void gemm_nt(const double* a, const double* b, double* c, std::size_t n,
                    std::size_t k, std::size_t m) {
  if (n == 0 || m == 0 || k == 0) return;
  cblas_dgemm(CblasRowMajor, CblasNoTrans, CblasTrans, dim(n), dim(m), dim(k), 1.0, a, dim(k), b,
              dim(k), 1.0, c, dim(m));
}

// C[n x m] += A^T * B where A is [k x n] and B is [k x m]
inline void gemm_tn(const double* a, const double* b, double* c, std::size_t n,
                    std::size_t k, std::size_t m) {
  if (n == 0 || m == 0 || k == 0) return;
  cblas_dgemm(CblasRowMajor, CblasTrans, CblasNoTrans, dim(n), dim(m), dim(k), 1.0, a, dim(n), b,
              dim(m), 1.0, c, dim(m));
}

}  // namespace iftpp::ad::detail
