#include <cstdlib>
#include <stdexcept>
#include <string>
#include <vector>

#include "dualobs/simd/kernels.hpp"

namespace dualobs::simd {
namespace {

struct Table {
  decltype(&scalar::gemm_f32) gemm_f32;
  decltype(&scalar::gemm_f64) gemm_f64;
  decltype(&scalar::axpy_f32) axpy_f32;
  decltype(&scalar::axpy_f64) axpy_f64;
  decltype(&scalar::dot_f32) dot_f32;
  decltype(&scalar::dot_f64) dot_f64;
};

constexpr Table kScalarTable{scalar::gemm_f32, scalar::gemm_f64, scalar::axpy_f32,
                             scalar::axpy_f64,  scalar::dot_f32,  scalar::dot_f64};
constexpr Table kAvx2Table{avx2::gemm_f32, avx2::gemm_f64, avx2::axpy_f32,
                           avx2::axpy_f64, avx2::dot_f32,  avx2::dot_f64};

bool cpu_has_avx2() {
#if defined(__x86_64__) || defined(__i386__)
  __builtin_cpu_init();
  return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
  return false;
#endif
}

Isa initial_isa() {
  Isa isa = cpu_has_avx2() ? Isa::kAvx2 : Isa::kScalar;
  if (const char* env = std::getenv("DUALOBS_ISA")) {
    const std::string want(env);
    if (want == "scalar") isa = Isa::kScalar;
  }
  return isa;
}

struct State {
  Isa isa = initial_isa();
  const Table* table = isa == Isa::kAvx2 ? &kAvx2Table : &kScalarTable;
};

State& state() {
  static State s;
  return s;
}

template <class T>
std::vector<T>& scratch(int which) {
  thread_local std::vector<T> buffers[2];
  return buffers[which];
}

template <class T>
const T* transposed(int rows, int cols, const T* src, int ld, int which) {
  auto& buf = scratch<T>(which);
  buf.resize(static_cast<std::size_t>(rows) * cols);
  for (int r = 0; r < rows; ++r) {
    const T* s = src + static_cast<long>(r) * ld;
    for (int c = 0; c < cols; ++c) buf[static_cast<std::size_t>(c) * rows + r] = s[c];
  }
  return buf.data();
}

}  // namespace

Isa detected_isa() { return cpu_has_avx2() ? Isa::kAvx2 : Isa::kScalar; }

Isa active_isa() { return state().isa; }

void set_active_isa(Isa isa) {
  if (isa == Isa::kAvx2 && !cpu_has_avx2()) {
    throw std::runtime_error("AVX2/FMA kernels requested but not supported by this CPU");
  }
  state().isa = isa;
  state().table = isa == Isa::kAvx2 ? &kAvx2Table : &kScalarTable;
}

std::string_view isa_name(Isa isa) { return isa == Isa::kAvx2 ? "avx2" : "scalar"; }

void gemm(int m, int n, int k, const float* a, int lda, const float* b, int ldb, float* c,
          int ldc, bool accumulate) {
  state().table->gemm_f32(m, n, k, a, lda, b, ldb, c, ldc, accumulate);
}
void gemm(int m, int n, int k, const double* a, int lda, const double* b, int ldb, double* c,
          int ldc, bool accumulate) {
  state().table->gemm_f64(m, n, k, a, lda, b, ldb, c, ldc, accumulate);
}

void gemm_nt(int m, int n, int k, const float* a, int lda, const float* b, int ldb, float* c,
             int ldc, bool accumulate) {
  const float* bt = transposed(n, k, b, ldb, 0);
  state().table->gemm_f32(m, n, k, a, lda, bt, n, c, ldc, accumulate);
}
void gemm_nt(int m, int n, int k, const double* a, int lda, const double* b, int ldb, double* c,
             int ldc, bool accumulate) {
  const double* bt = transposed(n, k, b, ldb, 0);
  state().table->gemm_f64(m, n, k, a, lda, bt, n, c, ldc, accumulate);
}

void gemm_tn(int m, int n, int k, const float* a, int lda, const float* b, int ldb, float* c,
             int ldc, bool accumulate) {
  const float* at = transposed(k, m, a, lda, 1);
  state().table->gemm_f32(m, n, k, at, k, b, ldb, c, ldc, accumulate);
}
void gemm_tn(int m, int n, int k, const double* a, int lda, const double* b, int ldb, double* c,
             int ldc, bool accumulate) {
  const double* at = transposed(k, m, a, lda, 1);
  state().table->gemm_f64(m, n, k, at, k, b, ldb, c, ldc, accumulate);
}

void axpy(int n, float alpha, const float* x, float* y) { state().table->axpy_f32(n, alpha, x, y); }
void axpy(int n, double alpha, const double* x, double* y) {
  state().table->axpy_f64(n, alpha, x, y);
}
float dot(int n, const float* x, const float* y) { return state().table->dot_f32(n, x, y); }
double dot(int n, const double* x, const double* y) { return state().table->dot_f64(n, x, y); }

}  // namespace dualobs::simd
