#include <gtest/gtest.h>

#include <cmath>

#include "../support/gradcheck.hpp"
#include "../support/model_fixtures.hpp"
#include "dualobs/model/system1.hpp"

namespace dualobs::model {
namespace {

using testing::random_matrix;
using testing::random_topology;

// Scalar re-implementation of Linear -> act -> Linear for one input row.
std::vector<double> mlp_oracle(const Mlp2<double>& m, const std::vector<double>& x) {
  auto lin = [](const Linear<double>& l, const std::vector<double>& in) {
    const auto& W = l.w->value;
    std::vector<double> out(static_cast<std::size_t>(W.cols()));
    for (int o = 0; o < W.cols(); ++o) {
      double s = l.b->value(0, o);
      for (int i = 0; i < W.rows(); ++i) s += in[static_cast<std::size_t>(i)] * W(i, o);
      out[static_cast<std::size_t>(o)] = s;
    }
    return out;
  };
  auto h = lin(m.l0, x);
  for (auto& v : h) v = m.act == Activation::kRelu ? std::max(0.0, v) : v / (1.0 + std::exp(-v));
  return lin(m.l1, h);
}

struct Model {
  ParamStore<double> store;
  System1<double> s1;
  explicit Model(int width = 8, int layers = 2, std::uint64_t seed = 3) : s1(store, width, layers) {
    Rng rng(seed);
    s1.init(rng);
  }
};

TEST(System1, EncoderMatchesScalarOracle) {
  Model m;
  Rng rng(1);
  auto topo = random_topology<double>(rng, 7);
  auto values = random_matrix<double>(rng, 7, 1);
  Graph<double> g(false);
  auto z = m.s1.encode(g, values, topo);
  const auto& N = g.value(z.nodes);
  const auto& E = g.value(z.edges);
  for (int i = 0; i < 7; ++i) {
    auto ref = mlp_oracle(m.s1.f_node(), {values(i, 0), topo.positions(i, 0), topo.positions(i, 1)});
    for (int c = 0; c < N.cols(); ++c) EXPECT_NEAR(N(i, c), ref[static_cast<std::size_t>(c)], 1e-6);
  }
  for (std::size_t k = 0; k < topo.edges.size(); ++k) {
    const auto [i, j] = topo.edges[k];
    const double dx = topo.positions(i, 0) - topo.positions(j, 0);
    const double dy = topo.positions(i, 1) - topo.positions(j, 1);
    auto ref = mlp_oracle(m.s1.f_edge(), {dx, dy, std::hypot(dx, dy)});
    for (int c = 0; c < E.cols(); ++c)
      EXPECT_NEAR(E(static_cast<int>(k), c), ref[static_cast<std::size_t>(c)], 1e-6);
  }
}

TEST(System1, ZeroWeightsGiveZeroEmbeddings) {
  Model m;
  for (auto* p : m.store.all()) p->value.fill(0.0);
  Rng rng(2);
  auto topo = random_topology<double>(rng, 6);
  Graph<double> g(false);
  auto z = m.s1.encode(g, random_matrix<double>(rng, 6, 1), topo);
  for (double v : g.value(z.nodes).storage()) EXPECT_EQ(v, 0.0);
  for (double v : g.value(z.edges).storage()) EXPECT_EQ(v, 0.0);
}

TEST(System1, EdgeEmbeddingsIgnoreTranslation) {
  Model m;
  Rng rng(3);
  auto topo = random_topology<double>(rng, 6);
  auto shifted = topo;
  for (int i = 0; i < 6; ++i) {
    shifted.positions(i, 0) += 0.25;
    shifted.positions(i, 1) -= 0.5;
  }
  auto values = random_matrix<double>(rng, 6, 1);
  Graph<double> g(false);
  auto a = m.s1.encode(g, values, topo);
  auto b = m.s1.encode(g, values, shifted);
  const auto& ea = g.value(a.edges);
  const auto& eb = g.value(b.edges);
  for (std::size_t k = 0; k < ea.size(); ++k) EXPECT_NEAR(ea.storage()[k], eb.storage()[k], 1e-12);
}

TEST(System1, EncodeRejectsShapeMismatch) {
  Model m;
  Rng rng(4);
  auto topo = random_topology<double>(rng, 5);
  Graph<double> g(false);
  EXPECT_THROW(m.s1.encode(g, Matrix<double>(4, 1), topo), ShapeError);
  topo.edges.push_back({0, 9});
  EXPECT_THROW(m.s1.encode(g, Matrix<double>(5, 1), topo), ShapeError);
}

TEST(System1, ZeroProcessorIsIdentityForAnyRolloutLength) {
  Model m;
  m.s1.zero_processor();
  Rng rng(5);
  auto topo = random_topology<double>(rng, 8);
  Graph<double> g(false);
  auto z0 = m.s1.encode(g, random_matrix<double>(rng, 8, 1), topo);
  auto seq = m.s1.rollout(g, z0, 5, topo);
  ASSERT_EQ(seq.size(), 6u);
  for (const auto& z : seq) {
    EXPECT_EQ(g.value(z.nodes), g.value(z0.nodes));
    EXPECT_EQ(g.value(z.edges), g.value(z0.edges));
  }
}

TEST(System1, RolloutComposesSteps) {
  Model m;
  Rng rng(6);
  auto topo = random_topology<double>(rng, 8);
  Graph<double> g(false);
  auto z0 = m.s1.encode(g, random_matrix<double>(rng, 8, 1), topo);
  EXPECT_EQ(m.s1.rollout(g, z0, 0, topo).size(), 1u);
  auto seq = m.s1.rollout(g, z0, 2, topo);
  auto twice = m.s1.step(g, m.s1.step(g, z0, topo), topo);
  EXPECT_EQ(g.value(seq[2].nodes), g.value(twice.nodes));
  EXPECT_EQ(g.value(seq[2].edges), g.value(twice.edges));
  EXPECT_THROW(m.s1.rollout(g, z0, -1, topo), std::invalid_argument);
}

TEST(System1, PermutationEquivarianceIsExact) {
  ParamStore<float> store;
  System1<float> s1(store, 32, 3);
  Rng rng(7);
  s1.init(rng);
  auto topo = random_topology<float>(rng, 23);
  auto values = random_matrix<float>(rng, 23, 1);
  const auto perm = testing::random_permutation(rng, 23);
  const auto eperm = testing::random_permutation(rng, static_cast<int>(topo.edges.size()));
  auto ptopo = testing::permute_topology(topo, perm, eperm);
  Matrix<float> pvalues(23, 1);
  for (int i = 0; i < 23; ++i) pvalues(perm[i], 0) = values(i, 0);

  Graph<float> g(false);
  auto a = s1.rollout(g, s1.encode(g, values, topo), 3, topo);
  auto b = s1.rollout(g, s1.encode(g, pvalues, ptopo), 3, ptopo);
  for (std::size_t n = 0; n < a.size(); ++n) {
    const auto& na = g.value(a[n].nodes);
    const auto& nb = g.value(b[n].nodes);
    for (int i = 0; i < 23; ++i)
      for (int c = 0; c < na.cols(); ++c) ASSERT_EQ(na(i, c), nb(perm[i], c)) << "anchor " << n;
    const auto& ea = g.value(a[n].edges);
    const auto& eb = g.value(b[n].edges);
    for (std::size_t k = 0; k < topo.edges.size(); ++k)
      for (int c = 0; c < ea.cols(); ++c) ASSERT_EQ(ea(static_cast<int>(k), c), eb(eperm[k], c));
    const auto& oa = g.value(s1.observe(g, a[n].nodes));
    const auto& ob = g.value(s1.observe(g, b[n].nodes));
    for (int i = 0; i < 23; ++i) ASSERT_EQ(oa(i, 0), ob(perm[i], 0));
  }
}

TEST(System1, SingleNodeStepMatchesClosedForm) {
  Model m(6, 1);
  GraphTopology<double> topo;
  topo.positions = Matrix<double>(1, 2);
  topo.positions(0, 0) = 0.3;
  topo.positions(0, 1) = 0.6;
  Rng rng(8);
  Graph<double> g(false);
  LatentGraph z{g.constant(random_matrix<double>(rng, 1, 6)), g.constant(Matrix<double>(0, 6))};
  auto out = m.s1.step(g, z, topo);
  // No edges: z' = z + W1 relu(z Wz + b0) + b1 (the message sum is zero).
  const auto& L = m.s1.layer(0);
  const auto& zin = g.value(z.nodes);
  std::vector<double> hidden(6);
  for (int o = 0; o < 6; ++o) {
    double s = L.node_b0->value(0, o);
    for (int i = 0; i < 6; ++i) s += zin(0, i) * L.node_wz->value(i, o);
    hidden[static_cast<std::size_t>(o)] = std::max(0.0, s);
  }
  for (int o = 0; o < 6; ++o) {
    double s = L.node_out.b->value(0, o);
    for (int i = 0; i < 6; ++i) s += hidden[static_cast<std::size_t>(i)] * L.node_out.w->value(i, o);
    EXPECT_NEAR(g.value(out.nodes)(0, o), zin(0, o) + s, 1e-6);
  }
}

TEST(System1, ObserveMatchesSwishOracleAndBias) {
  Model m;
  Rng rng(9);
  auto z = random_matrix<double>(rng, 4, 8);
  Graph<double> g(false);
  const auto& out = g.value(m.s1.observe(g, g.constant(z)));
  for (int i = 0; i < 4; ++i) {
    std::vector<double> row(z.row(i).begin(), z.row(i).end());
    EXPECT_NEAR(out(i, 0), mlp_oracle(m.s1.h1(), row)[0], 1e-6);
  }
  m.s1.h1().l1.w->value.fill(0.0);
  m.s1.h1().l1.b->value(0, 0) = 0.75;
  Graph<double> g2(false);
  for (double v : g2.value(m.s1.observe(g2, g2.constant(z))).storage()) EXPECT_EQ(v, 0.75);
}

TEST(System1, RolloutNeverReadsObservationHead) {
  // Physical values come only from observe(): perturbing h1 cannot change
  // any anchor embedding.
  Model m;
  Rng rng(10);
  auto topo = random_topology<double>(rng, 8);
  auto values = random_matrix<double>(rng, 8, 1);
  Graph<double> g(false);
  auto a = m.s1.rollout(g, m.s1.encode(g, values, topo), 4, topo);
  for (auto* p : {m.s1.h1().l0.w, m.s1.h1().l0.b, m.s1.h1().l1.w, m.s1.h1().l1.b})
    for (auto& v : p->value.storage()) v += 1.0;
  Graph<double> g2(false);
  auto b = m.s1.rollout(g2, m.s1.encode(g2, values, topo), 4, topo);
  for (std::size_t n = 0; n < a.size(); ++n) {
    EXPECT_EQ(g.value(a[n].nodes), g2.value(b[n].nodes));
    EXPECT_EQ(g.value(a[n].edges), g2.value(b[n].edges));
  }
}

TEST(System1, RolloutCounter) {
  Model m;
  Rng rng(11);
  auto topo = random_topology<double>(rng, 5);
  Graph<double> g(false);
  auto z0 = m.s1.encode(g, random_matrix<double>(rng, 5, 1), topo);
  m.s1.reset_rollout_calls();
  m.s1.rollout(g, z0, 3, topo);
  m.s1.step(g, z0, topo);
  EXPECT_EQ(m.s1.rollout_calls(), 1);
}

TEST(System1Gradients, EveryBlockMatchesFiniteDifferences) {
  Model m(6, 2, 12);
  Rng rng(12);
  auto topo = random_topology<double>(rng, 9);
  auto values = random_matrix<double>(rng, 9, 1);
  auto target = random_matrix<double>(rng, 9, 1);
  auto loss = [&](bool grad) {
    Graph<double> g(grad);
    auto seq = m.s1.rollout(g, m.s1.encode(g, values, topo), 2, topo);
    Var l = g.constant(Matrix<double>(1, 1));
    for (const auto& z : seq) l = g.add(l, g.mse(m.s1.observe(g, z.nodes), target));
    if (grad) g.backward(l);
    return g.scalar(l);
  };
  const auto errs = testing::check_gradients(m.store.all(), loss);
  ASSERT_EQ(errs.size(), m.store.all().size());
  for (const auto& e : errs) {
    EXPECT_LT(e.rel_error, 1e-4) << e.name;
    EXPECT_GT(e.analytic_norm, 0.0) << e.name;
  }
}

TEST(EdgeFeatures, OffsetAndNorm) {
  GraphTopology<double> topo;
  topo.positions = Matrix<double>(2, 2, std::vector<double>{0.0, 0.0, 0.3, 0.4});
  topo.edges = {{0, 1}, {1, 0}};
  auto f = edge_features(topo);
  EXPECT_DOUBLE_EQ(f(0, 0), -0.3);
  EXPECT_DOUBLE_EQ(f(0, 1), -0.4);
  EXPECT_DOUBLE_EQ(f(0, 2), 0.5);
  EXPECT_DOUBLE_EQ(f(1, 0), 0.3);
}

}  // namespace
}  // namespace dualobs::model
