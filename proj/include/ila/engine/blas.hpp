#pragma once

#include <cblas.h>

#include <type_traits>

namespace ila::engine {

/// Row-major C = alpha * op(A) * op(B) + beta * C.
template <class T>
void gemm(bool trans_a, bool trans_b, int m, int n, int k, T alpha,
          const T* a, int lda, const T* b, int ldb, T beta, T* c, int ldc) {
  const auto ta = trans_a ? CblasTrans : CblasNoTrans;
  const auto tb = trans_b ? CblasTrans : CblasNoTrans;
  if constexpr (std::is_same_v<T, float>) {
    cblas_sgemm(CblasRowMajor, ta, tb, m, n, k, alpha, a, lda, b, ldb, beta, c,
                ldc);
  } else if constexpr (std::is_same_v<T, double>) {
    cblas_dgemm(CblasRowMajor, ta, tb, m, n, k, alpha, a, lda, b, ldb, beta, c,
                ldc);
  } else {
    // Plain loops for extended precision (finite-difference reference only).
    for (int i = 0; i < m; ++i) {
      T* crow = c + static_cast<long>(i) * ldc;
      for (int j = 0; j < n; ++j) crow[j] = beta == T{0} ? T{0} : beta * crow[j];
      for (int p = 0; p < k; ++p) {
        const T av = alpha * (trans_a ? a[static_cast<long>(p) * lda + i]
                                      : a[static_cast<long>(i) * lda + p]);
        if (av == T{0}) continue;
        if (trans_b) {
          for (int j = 0; j < n; ++j) crow[j] += av * b[static_cast<long>(j) * ldb + p];
        } else {
          const T* brow = b + static_cast<long>(p) * ldb;
          for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
      }
    }
  }
}

/// Pin the BLAS backend to one thread; parallelism happens across image
/// chunks instead, which keeps results independent of the worker count.
inline void blas_single_thread() { openblas_set_num_threads(1); }

}  // namespace ila::engine
