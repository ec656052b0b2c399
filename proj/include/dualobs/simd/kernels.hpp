#pragma once

// Dense linear-algebra kernels used by the neural model.
//
// Every kernel has a portable scalar reference implementation and an
// AVX2+FMA implementation. The variant is chosen once at startup from CPUID
// and can be overridden (tests force both to compare them).

#include <string_view>

namespace dualobs::simd {

enum class Isa { kScalar, kAvx2 };

/// Best instruction set the running CPU supports.
Isa detected_isa();

/// Variant currently used by the dispatching entry points below.
Isa active_isa();

/// Selects a variant. Throws std::runtime_error if the CPU lacks it.
void set_active_isa(Isa isa);

std::string_view isa_name(Isa isa);

// All matrices are row-major with explicit leading dimensions.
// When `accumulate` is false C is overwritten, otherwise C += result.

/// C[m x n] = A[m x k] * B[k x n]
void gemm(int m, int n, int k, const float* a, int lda, const float* b, int ldb, float* c,
          int ldc, bool accumulate);
void gemm(int m, int n, int k, const double* a, int lda, const double* b, int ldb, double* c,
          int ldc, bool accumulate);

/// C[m x n] = A[m x k] * B[n x k]^T
void gemm_nt(int m, int n, int k, const float* a, int lda, const float* b, int ldb, float* c,
             int ldc, bool accumulate);
void gemm_nt(int m, int n, int k, const double* a, int lda, const double* b, int ldb, double* c,
             int ldc, bool accumulate);

/// C[m x n] = A[k x m]^T * B[k x n]
void gemm_tn(int m, int n, int k, const float* a, int lda, const float* b, int ldb, float* c,
             int ldc, bool accumulate);
void gemm_tn(int m, int n, int k, const double* a, int lda, const double* b, int ldb, double* c,
             int ldc, bool accumulate);

/// y += alpha * x
void axpy(int n, float alpha, const float* x, float* y);
void axpy(int n, double alpha, const double* x, double* y);

/// sum_i x[i] * y[i]
float dot(int n, const float* x, const float* y);
double dot(int n, const double* x, const double* y);

// Direct access to each variant, for equivalence tests and benchmarks.
namespace scalar {
void gemm_f32(int m, int n, int k, const float* a, int lda, const float* b, int ldb, float* c,
              int ldc, bool accumulate);
void gemm_f64(int m, int n, int k, const double* a, int lda, const double* b, int ldb, double* c,
              int ldc, bool accumulate);
void axpy_f32(int n, float alpha, const float* x, float* y);
void axpy_f64(int n, double alpha, const double* x, double* y);
float dot_f32(int n, const float* x, const float* y);
double dot_f64(int n, const double* x, const double* y);
}  // namespace scalar

namespace avx2 {
void gemm_f32(int m, int n, int k, const float* a, int lda, const float* b, int ldb, float* c,
              int ldc, bool accumulate);
void gemm_f64(int m, int n, int k, const double* a, int lda, const double* b, int ldb, double* c,
              int ldc, bool accumulate);
void axpy_f32(int n, float alpha, const float* x, float* y);
void axpy_f64(int n, double alpha, const double* x, double* y);
float dot_f32(int n, const float* x, const float* y);
double dot_f64(int n, const double* x, const double* y);
}  // namespace avx2

}  // namespace dualobs::simd
