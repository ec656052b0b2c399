// Compiled with -mavx2 -mfma. Only reached through dispatch after a CPUID check.
//
// Every output element is produced by the same sequence of fused multiply-adds
// (in increasing k) whether it lands in a vector block or in the scalar tail, so
// a row's result does not depend on where the row sits in the matrix.

#include <immintrin.h>

#include <cmath>

#include "dualobs/simd/kernels.hpp"

namespace dualobs::simd::avx2 {
namespace {

template <class T>
struct Vec;

template <>
struct Vec<float> {
  using Reg = __m256;
  static constexpr int kLanes = 8;
  static Reg zero() { return _mm256_setzero_ps(); }
  static Reg load(const float* p) { return _mm256_loadu_ps(p); }
  static void store(float* p, Reg v) { _mm256_storeu_ps(p, v); }
  static Reg splat(float x) { return _mm256_set1_ps(x); }
  static Reg fmadd(Reg a, Reg b, Reg c) { return _mm256_fmadd_ps(a, b, c); }
  static float hsum(Reg v) {
    __m128 lo = _mm256_castps256_ps128(v);
    __m128 hi = _mm256_extractf128_ps(v, 1);
    lo = _mm_add_ps(lo, hi);
    __m128 sh = _mm_movehdup_ps(lo);
    __m128 s = _mm_add_ps(lo, sh);
    sh = _mm_movehl_ps(sh, s);
    s = _mm_add_ss(s, sh);
    return _mm_cvtss_f32(s);
  }
};

template <>
struct Vec<double> {
  using Reg = __m256d;
  static constexpr int kLanes = 4;
  static Reg zero() { return _mm256_setzero_pd(); }
  static Reg load(const double* p) { return _mm256_loadu_pd(p); }
  static void store(double* p, Reg v) { _mm256_storeu_pd(p, v); }
  static Reg splat(double x) { return _mm256_set1_pd(x); }
  static Reg fmadd(Reg a, Reg b, Reg c) { return _mm256_fmadd_pd(a, b, c); }
  static double hsum(Reg v) {
    __m128d lo = _mm256_castpd256_pd128(v);
    __m128d hi = _mm256_extractf128_pd(v, 1);
    lo = _mm_add_pd(lo, hi);
    __m128d h = _mm_unpackhi_pd(lo, lo);
    return _mm_cvtsd_f64(_mm_add_sd(lo, h));
  }
};

template <class T, int R>
void gemm_rows(int i0, int n, int k, const T* a, int lda, const T* b, int ldb, T* c, int ldc,
               bool accumulate) {
  using V = Vec<T>;
  constexpr int W = V::kLanes;
  const T* arow[R];
  T* crow[R];
  for (int r = 0; r < R; ++r) {
    arow[r] = a + static_cast<long>(i0 + r) * lda;
    crow[r] = c + static_cast<long>(i0 + r) * ldc;
  }
  int j = 0;
  for (; j + 2 * W <= n; j += 2 * W) {
    typename V::Reg acc0[R], acc1[R];
    for (int r = 0; r < R; ++r) {
      acc0[r] = accumulate ? V::load(crow[r] + j) : V::zero();
      acc1[r] = accumulate ? V::load(crow[r] + j + W) : V::zero();
    }
    const T* bp = b + j;
    for (int p = 0; p < k; ++p, bp += ldb) {
      const auto b0 = V::load(bp);
      const auto b1 = V::load(bp + W);
      for (int r = 0; r < R; ++r) {
        const auto av = V::splat(arow[r][p]);
        acc0[r] = V::fmadd(av, b0, acc0[r]);
        acc1[r] = V::fmadd(av, b1, acc1[r]);
      }
    }
    for (int r = 0; r < R; ++r) {
      V::store(crow[r] + j, acc0[r]);
      V::store(crow[r] + j + W, acc1[r]);
    }
  }
  for (; j + W <= n; j += W) {
    typename V::Reg acc[R];
    for (int r = 0; r < R; ++r) acc[r] = accumulate ? V::load(crow[r] + j) : V::zero();
    const T* bp = b + j;
    for (int p = 0; p < k; ++p, bp += ldb) {
      const auto b0 = V::load(bp);
      for (int r = 0; r < R; ++r) acc[r] = V::fmadd(V::splat(arow[r][p]), b0, acc[r]);
    }
    for (int r = 0; r < R; ++r) V::store(crow[r] + j, acc[r]);
  }
  for (; j < n; ++j) {
    for (int r = 0; r < R; ++r) {
      T s = accumulate ? crow[r][j] : T(0);
      for (int p = 0; p < k; ++p) s = std::fma(arow[r][p], b[static_cast<long>(p) * ldb + j], s);
      crow[r][j] = s;
    }
  }
}

template <class T>
void gemm_impl(int m, int n, int k, const T* a, int lda, const T* b, int ldb, T* c, int ldc,
               bool accumulate) {
  int i = 0;
  for (; i + 4 <= m; i += 4) gemm_rows<T, 4>(i, n, k, a, lda, b, ldb, c, ldc, accumulate);
  for (; i < m; ++i) gemm_rows<T, 1>(i, n, k, a, lda, b, ldb, c, ldc, accumulate);
}

template <class T>
void axpy_impl(int n, T alpha, const T* x, T* y) {
  using V = Vec<T>;
  constexpr int W = V::kLanes;
  const auto av = V::splat(alpha);
  int i = 0;
  for (; i + W <= n; i += W) V::store(y + i, V::fmadd(av, V::load(x + i), V::load(y + i)));
  for (; i < n; ++i) y[i] = std::fma(alpha, x[i], y[i]);
}

template <class T>
T dot_impl(int n, const T* x, const T* y) {
  using V = Vec<T>;
  constexpr int W = V::kLanes;
  auto acc0 = V::zero();
  auto acc1 = V::zero();
  int i = 0;
  for (; i + 2 * W <= n; i += 2 * W) {
    acc0 = V::fmadd(V::load(x + i), V::load(y + i), acc0);
    acc1 = V::fmadd(V::load(x + i + W), V::load(y + i + W), acc1);
  }
  for (; i + W <= n; i += W) acc0 = V::fmadd(V::load(x + i), V::load(y + i), acc0);
  T s = V::hsum(acc0) + V::hsum(acc1);
  for (; i < n; ++i) s = std::fma(x[i], y[i], s);
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

}  // namespace dualobs::simd::avx2
