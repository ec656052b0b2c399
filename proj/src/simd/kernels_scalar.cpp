#include "dualobs/simd/kernels.hpp"

namespace dualobs::simd::scalar {
namespace {

template <class T>
void gemm_impl(int m, int n, int k, const T* a, int lda, const T* b, int ldb, T* c, int ldc,
               bool accumulate) {
  for (int i = 0; i < m; ++i) {
    T* crow = c + static_cast<long>(i) * ldc;
    if (!accumulate) {
      for (int j = 0; j < n; ++j) crow[j] = T(0);
    }
    const T* arow = a + static_cast<long>(i) * lda;
    for (int p = 0; p < k; ++p) {
      const T av = arow[p];
      const T* brow = b + static_cast<long>(p) * ldb;
      for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

template <class T>
void axpy_impl(int n, T alpha, const T* x, T* y) {
  for (int i = 0; i < n; ++i) y[i] += alpha * x[i];
}

template <class T>
T dot_impl(int n, const T* x, const T* y) {
  T s = T(0);
  for (int i = 0; i < n; ++i) s += x[i] * y[i];
  return s;
}

}  // namespace

void gemm_f32(int m, int n, int k, const float* a, int lda, const float* b, int ldb, float* c,
              int ldc, bool accumulate) {
  gemm_impl(m, n, k, a, lda, b, ldb, c, ldc, accumulate);
}
void gemm_f64(int m, int n, int k, const double* a, int lda, const double* b, int ldb, double* c,
              int ldc, bool accumulate) {
  gemm_impl(m, n, k, a, lda, b, ldb, c, ldc, accumulate);
}
void axpy_f32(int n, float alpha, const float* x, float* y) { axpy_impl(n, alpha, x, y); }
void axpy_f64(int n, double alpha, const double* x, double* y) { axpy_impl(n, alpha, x, y); }
float dot_f32(int n, const float* x, const float* y) { return dot_impl(n, x, y); }
double dot_f64(int n, const double* x, const double* y) { return dot_impl(n, x, y); }

}  // namespace dualobs::simd::scalar
