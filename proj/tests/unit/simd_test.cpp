#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "dualobs/core/rng.hpp"
#include "dualobs/simd/kernels.hpp"

namespace dualobs::simd {
namespace {

template <class T>
std::vector<T> random_vec(Rng& rng, std::size_t n) {
  std::vector<T> v(n);
  for (auto& x : v) x = static_cast<T>(rng.uniform(-1.0, 1.0));
  return v;
}

// Naive long-double product used as the reference for both variants.
template <class T>
std::vector<long double> reference_gemm(int m, int n, int k, const std::vector<T>& a,
                                        const std::vector<T>& b) {
  std::vector<long double> c(static_cast<std::size_t>(m) * n, 0.0L);
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j)
      for (int p = 0; p < k; ++p)
        c[i * n + j] += static_cast<long double>(a[i * k + p]) * b[p * n + j];
  return c;
}

class GemmShapes : public ::testing::TestWithParam<std::tuple<int, int, int>> {};

TEST_P(GemmShapes, BothVariantsMatchReference) {
  if (detected_isa() != Isa::kAvx2) GTEST_SKIP() << "no AVX2 on this CPU";
  const auto [m, n, k] = GetParam();
  Rng rng(7 + m * 31 + n * 7 + k);
  const auto a = random_vec<double>(rng, static_cast<std::size_t>(m) * k);
  const auto b = random_vec<double>(rng, static_cast<std::size_t>(k) * n);
  const auto ref = reference_gemm(m, n, k, a, b);
  std::vector<double> cs(static_cast<std::size_t>(m) * n), cv(cs.size());
  scalar::gemm_f64(m, n, k, a.data(), k, b.data(), n, cs.data(), n, false);
  avx2::gemm_f64(m, n, k, a.data(), k, b.data(), n, cv.data(), n, false);
  for (std::size_t i = 0; i < cs.size(); ++i) {
    EXPECT_NEAR(cs[i], static_cast<double>(ref[i]), 1e-12 * k);
    EXPECT_NEAR(cv[i], static_cast<double>(ref[i]), 1e-12 * k);
  }

  std::vector<float> af(a.begin(), a.end()), bf(b.begin(), b.end());
  std::vector<float> fs(cs.size()), fv(cs.size());
  scalar::gemm_f32(m, n, k, af.data(), k, bf.data(), n, fs.data(), n, false);
  avx2::gemm_f32(m, n, k, af.data(), k, bf.data(), n, fv.data(), n, false);
  for (std::size_t i = 0; i < fs.size(); ++i) EXPECT_NEAR(fs[i], fv[i], 2e-6f * k);
}

INSTANTIATE_TEST_SUITE_P(Shapes, GemmShapes,
                         ::testing::Values(std::make_tuple(1, 1, 1), std::make_tuple(3, 5, 7),
                                           std::make_tuple(4, 16, 3), std::make_tuple(9, 17, 33),
                                           std::make_tuple(13, 128, 128),
                                           std::make_tuple(5, 129, 2), std::make_tuple(64, 8, 1)));

TEST(Gemm, AccumulateAddsToOutput) {
  for (Isa isa : {Isa::kScalar, detected_isa()}) {
    set_active_isa(isa);
    const std::vector<double> a = {1, 2, 3, 4};
    const std::vector<double> b = {5, 6, 7, 8};
    std::vector<double> c = {1, 1, 1, 1};
    gemm(2, 2, 2, a.data(), 2, b.data(), 2, c.data(), 2, true);
    EXPECT_EQ(c, (std::vector<double>{20, 23, 44, 51}));
  }
  set_active_isa(detected_isa());
}

TEST(Gemm, TransposedVariantsAgreeWithPlain) {
  Rng rng(3);
  const int m = 6, n = 5, k = 11;
  const auto a = random_vec<double>(rng, m * k);
  const auto b = random_vec<double>(rng, k * n);
  std::vector<double> bt(n * k), at(k * m);
  for (int p = 0; p < k; ++p)
    for (int j = 0; j < n; ++j) bt[j * k + p] = b[p * n + j];
  for (int i = 0; i < m; ++i)
    for (int p = 0; p < k; ++p) at[p * m + i] = a[i * k + p];
  std::vector<double> c0(m * n), c1(m * n), c2(m * n);
  gemm(m, n, k, a.data(), k, b.data(), n, c0.data(), n, false);
  gemm_nt(m, n, k, a.data(), k, bt.data(), k, c1.data(), n, false);
  gemm_tn(m, n, k, at.data(), m, b.data(), n, c2.data(), n, false);
  EXPECT_EQ(c0, c1);
  EXPECT_EQ(c0, c2);
}

// A row's result must not depend on its position in the matrix: the
// permutation-equivariance guarantees of the model rest on this.
TEST(Gemm, RowResultIndependentOfRowPosition) {
  for (Isa isa : {Isa::kScalar, detected_isa()}) {
    set_active_isa(isa);
    Rng rng(11);
    const int m = 7, n = 37, k = 19;
    const auto a = random_vec<float>(rng, m * k);
    const auto b = random_vec<float>(rng, k * n);
    std::vector<float> full(m * n);
    gemm(m, n, k, a.data(), k, b.data(), n, full.data(), n, false);
    for (int i = 0; i < m; ++i) {
      std::vector<float> single(n);
      gemm(1, n, k, a.data() + i * k, k, b.data(), n, single.data(), n, false);
      for (int j = 0; j < n; ++j) ASSERT_EQ(single[j], full[i * n + j]) << isa_name(isa);
    }
  }
  set_active_isa(detected_isa());
}

TEST(Vector, AxpyAndDotMatchAcrossVariants) {
  if (detected_isa() != Isa::kAvx2) GTEST_SKIP() << "no AVX2 on this CPU";
  Rng rng(5);
  for (int n : {0, 1, 7, 8, 9, 31, 100}) {
    const auto x = random_vec<double>(rng, n);
    auto y0 = random_vec<double>(rng, n);
    auto y1 = y0;
    scalar::axpy_f64(n, 0.37, x.data(), y0.data());
    avx2::axpy_f64(n, 0.37, x.data(), y1.data());
    for (int i = 0; i < n; ++i) EXPECT_NEAR(y0[i], y1[i], 1e-15);
    EXPECT_NEAR(scalar::dot_f64(n, x.data(), y0.data()), avx2::dot_f64(n, x.data(), y0.data()),
                1e-12);
    std::vector<float> xf(x.begin(), x.end()), yf(y0.begin(), y0.end());
    EXPECT_NEAR(scalar::dot_f32(n, xf.data(), yf.data()), avx2::dot_f32(n, xf.data(), yf.data()),
                1e-4);
  }
}

TEST(Dispatch, ForcingScalarIsHonoured) {
  set_active_isa(Isa::kScalar);
  EXPECT_EQ(active_isa(), Isa::kScalar);
  set_active_isa(detected_isa());
  EXPECT_EQ(active_isa(), detected_isa());
}

}  // namespace
}  // namespace dualobs::simd
