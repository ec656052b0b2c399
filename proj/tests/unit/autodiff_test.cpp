#include <gtest/gtest.h>

#include <cmath>

#include "../support/gradcheck.hpp"
#include "dualobs/core/autodiff.hpp"
#include "dualobs/core/rng.hpp"

namespace dualobs {
namespace {

using G = Graph<double>;

Matrix<double> random_matrix(Rng& rng, int r, int c, double scale = 1.0) {
  Matrix<double> m(r, c);
  for (auto& v : m.storage()) v = rng.uniform(-scale, scale);
  return m;
}

struct Fixture {
  Rng rng{42};
  Parameter<double> a{"a", random_matrix(rng, 5, 4)};
  Parameter<double> b{"b", random_matrix(rng, 4, 3)};
  Parameter<double> c{"c", random_matrix(rng, 1, 3)};
  Parameter<double> d{"d", random_matrix(rng, 5, 3)};
  Matrix<double> w = random_matrix(rng, 5, 3);
  std::vector<Parameter<double>*> all() { return {&a, &b, &c, &d}; }
};

void expect_gradients_match(Fixture& f, const std::function<Var(G&)>& body) {
  auto loss = [&](bool grad) {
    G g(grad);
    Var out = body(g);
    Var l = g.weighted_sum(out, f.w);
    if (grad) g.backward(l);
    return g.scalar(l);
  };
  for (const auto& e : testing::check_gradients(f.all(), loss)) {
    EXPECT_LT(e.rel_error, 1e-7) << e.name;
  }
}

TEST(Autodiff, AffineAndActivations) {
  Fixture f;
  expect_gradients_match(f, [&](G& g) {
    Var y = g.affine(g.param(f.a), g.param(f.b), g.param(f.c));
    return g.add(g.swish(y), g.mul(g.tanh(g.param(f.d)), g.sigmoid(y)));
  });
}

TEST(Autodiff, MatmulVariants) {
  Fixture f;
  expect_gradients_match(f, [&](G& g) {
    Var ab = g.matmul(g.param(f.a), g.param(f.b));
    Var dbt = g.matmul_nt(g.param(f.d), g.param(f.b));  // 5x4
    Var z = g.matmul(dbt, g.param(f.b));                 // 5x3
    return g.sub(g.add_row(ab, g.param(f.c)), g.scale(z, 0.3));
  });
}

TEST(Autodiff, StructuralOps) {
  Fixture f;
  expect_gradients_match(f, [&](G& g) {
    Var ab = g.matmul(g.param(f.a), g.param(f.b));
    Var cat = g.concat_cols({ab, g.param(f.d)});           // 5x6
    Var left = g.slice_cols(cat, 1, 4);                     // 5x3
    Var gathered = g.gather_rows(left, {4, 0, 0, 2});       // 4x3
    Var scattered = g.scatter_add_rows(gathered, {1, 1, 3, 0}, 5);
    Var stacked = g.concat_rows(std::vector<Var>{g.param(f.c), scattered});  // 6x3
    Var back = g.gather_rows(stacked, {0, 1, 2, 3, 4});
    return g.add(back, g.one_minus(g.relu(g.param(f.d))));
  });
}

TEST(Autodiff, WeightedSoftmax) {
  Fixture f;
  const std::vector<double> mult = {1.0, 2.0, 3.0};
  expect_gradients_match(f, [&](G& g) {
    Var s = g.matmul(g.param(f.a), g.param(f.b));
    return g.mul(g.softmax_rows(s, mult), g.param(f.d));
  });
}

TEST(Autodiff, PoolingAndLosses) {
  Fixture f;
  Matrix<double> target = random_matrix(f.rng, 5, 3);
  auto loss = [&](bool grad) {
    G g(grad);
    Var ab = g.matmul(g.param(f.a), g.param(f.b));
    std::vector<Var> parts = {ab, g.param(f.d), g.scale(g.param(f.d), -0.5)};
    Var pooled = g.add(g.mean_of(parts), g.max_of(parts));
    Var l = g.add(g.mse(pooled, target), g.scale(g.sum_squares(g.param(f.c)), 0.1));
    if (grad) g.backward(l);
    return g.scalar(l);
  };
  for (const auto& e : testing::check_gradients(f.all(), loss)) EXPECT_LT(e.rel_error, 1e-7) << e.name;
}

TEST(Autodiff, FourierFeatures) {
  Rng rng(9);
  Parameter<double> omega{"omega", random_matrix(rng, 1, 3)};
  for (auto& v : omega.value.storage()) v = std::abs(v);
  Matrix<double> coords = random_matrix(rng, 4, 3);
  Matrix<double> w = random_matrix(rng, 4, 20);
  auto loss = [&](bool grad) {
    G g(grad);
    Var l = g.weighted_sum(g.fourier(coords, g.param(omega), 20), w);
    if (grad) g.backward(l);
    return g.scalar(l);
  };
  for (const auto& e : testing::check_gradients({&omega}, loss)) EXPECT_LT(e.rel_error, 1e-7);
}

TEST(Autodiff, FourierLayoutIsCoordinateMajor) {
  G g(false);
  Parameter<double> omega{"omega", Matrix<double>(1, 2, std::vector<double>{0.5, 2.0})};
  Matrix<double> coords(1, 2, std::vector<double>{0.3, 0.7});
  const auto& e = g.value(g.fourier(coords, g.param(omega), 10));
  ASSERT_EQ(G::fourier_harmonics(2, 10), 3);
  // Coordinate 0: cos k=0..2, sin k=0..2; coordinate 1: cos k=0..2, sin k=0 (cropped).
  const double b0 = 0.5 * 0.3, b1 = 2.0 * 0.7;
  const double expected[10] = {1,           std::cos(b0), std::cos(2 * b0), 0, std::sin(b0),
                               std::sin(2 * b0), 1,        std::cos(b1),     std::cos(2 * b1), 0};
  for (int i = 0; i < 10; ++i) EXPECT_NEAR(e(0, i), expected[i], 1e-15) << i;
}

TEST(Autodiff, ParamsAccumulateAcrossGraphs) {
  Parameter<double> p{"p", Matrix<double>(1, 1, 2.0)};
  p.zero_grad();
  for (int i = 0; i < 3; ++i) {
    G g;
    g.backward(g.sum_squares(g.param(p)));
  }
  EXPECT_DOUBLE_EQ(p.grad(0, 0), 12.0);
}

TEST(Autodiff, NoGradGraphRefusesBackward) {
  Parameter<double> p{"p", Matrix<double>(1, 1, 2.0)};
  G g(false);
  Var l = g.sum_squares(g.param(p));
  EXPECT_FALSE(g.requires_grad(l));
  EXPECT_THROW(g.backward(l), std::logic_error);
}

TEST(Autodiff, ShapeMismatchThrows) {
  G g;
  Var a = g.constant(Matrix<double>(2, 3));
  Var b = g.constant(Matrix<double>(2, 2));
  EXPECT_THROW(g.matmul(a, b), ShapeError);
  EXPECT_THROW(g.add(a, b), ShapeError);
}

}  // namespace
}  // namespace dualobs
