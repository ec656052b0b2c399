#include <gtest/gtest.h>

#include <cmath>

#include "../support/gradcheck.hpp"
#include "../support/model_fixtures.hpp"
#include "dualobs/model/observer.hpp"

namespace dualobs::model {
namespace {

using testing::random_matrix;

template <class T>
struct Rig {
  ParamStore<T> store;
  Observer<T> obs;
  Matrix<T> positions;
  std::vector<Matrix<T>> anchors;
  std::vector<T> times;

  Rig(int width, int heads, int nodes, int q, Aggregator agg = Aggregator::kGru, std::uint64_t seed = 1)
      : obs(store, width, heads, 2, agg) {
    Rng rng(seed);
    obs.init(rng);
    positions = random_matrix<T>(rng, nodes, 2, 1.0);
    for (auto& v : positions.storage()) v = std::abs(v);
    for (int n = 0; n <= q; ++n) {
      anchors.push_back(random_matrix<T>(rng, nodes, width));
      times.push_back(static_cast<T>(n) / static_cast<T>(q + 1));
    }
  }

  Matrix<T> run(const std::vector<Matrix<T>>& zs, const Matrix<T>& pos, const Matrix<T>& queries) const {
    Graph<T> g(false);
    std::vector<Var> vars;
    for (const auto& z : zs) vars.push_back(g.constant(z));
    return g.value(obs.evaluate(g, obs.prepare(g, vars, pos, times), queries));
  }
  Matrix<T> run(const Matrix<T>& queries) const { return run(anchors, positions, queries); }
};

Matrix<double> queries(Rng& rng, int n) {
  Matrix<double> q(n, 3);
  for (auto& v : q.storage()) v = rng.uniform();
  return q;
}

TEST(PositionalEncoding, OriginGivesCosOneSinZero) {
  ParamStore<double> store;
  Observer<double> obs(store, 128, 4, 2, Aggregator::kGru);
  Rng rng(2);
  obs.init(rng);
  Graph<double> g(false);
  const auto& e = g.value(obs.positional_encode(g, Matrix<double>(1, 3)));
  ASSERT_EQ(e.cols(), 128);
  const int K = Graph<double>::fourier_harmonics(3, 128);
  EXPECT_EQ(K, 22);
  int col = 0;
  for (int d = 0; d < 3; ++d) {
    for (int k = 0; k < K && col < 128; ++k) EXPECT_EQ(e(0, col++), 1.0);
    for (int k = 0; k < K && col < 128; ++k) EXPECT_EQ(e(0, col++), 0.0);
  }
}

TEST(PositionalEncoding, ZeroFrequencyIsConstant) {
  ParamStore<double> store;
  Observer<double> obs(store, 16, 2, 1, Aggregator::kGru);
  obs.omega().value.fill(0.0);
  Rng rng(3);
  Graph<double> g(false);
  const auto& e = g.value(obs.positional_encode(g, queries(rng, 5)));
  for (int r = 1; r < 5; ++r)
    for (int c = 0; c < 16; ++c) EXPECT_EQ(e(r, c), e(0, c));
}

TEST(PositionalEncoding, MatchesEnumeratedHarmonics) {
  ParamStore<double> store;
  Observer<double> obs(store, 128, 4, 2, Aggregator::kGru);
  obs.omega().value = Matrix<double>(1, 3, std::vector<double>{0.7, 1.3, 0.2});
  const std::vector<double> x{0.31, 0.82, 0.45};
  std::vector<double> expected;
  for (int d = 0; d < 3; ++d) {
    for (int k = 0; k < 22; ++k) expected.push_back(std::cos(k * obs.omega().value(0, d) * x[d]));
    for (int k = 0; k < 22; ++k) expected.push_back(std::sin(k * obs.omega().value(0, d) * x[d]));
  }
  expected.resize(128);
  Graph<double> g(false);
  const auto& e = g.value(obs.positional_encode(g, Matrix<double>(1, 3, x)));
  for (int c = 0; c < 128; ++c) EXPECT_NEAR(e(0, c), expected[static_cast<std::size_t>(c)], 1e-7) << c;
}

TEST(Observer, PermutingAnchorNodesIsExact) {
  for (auto agg : {Aggregator::kGru, Aggregator::kMeanPool, Aggregator::kMaxPool, Aggregator::kSingleAttention}) {
    Rig<float> s(32, 4, 19, 3, agg);
    Rng rng(4);
    const auto perm = testing::random_permutation(rng, 19);
    Matrix<float> pos(19, 2);
    std::vector<Matrix<float>> zs(s.anchors.size(), Matrix<float>(19, 32));
    for (int i = 0; i < 19; ++i) {
      pos(perm[i], 0) = s.positions(i, 0);
      pos(perm[i], 1) = s.positions(i, 1);
      for (std::size_t n = 0; n < zs.size(); ++n)
        for (int c = 0; c < 32; ++c) zs[n](perm[i], c) = s.anchors[n](i, c);
    }
    auto q = cast<float>(queries(rng, 9));
    EXPECT_EQ(s.run(q), s.run(zs, pos, q)) << aggregator_name(agg);
  }
}

TEST(Observer, DuplicatingAnchorNodesIsExact) {
  Rig<float> s(32, 4, 11, 2);
  Matrix<float> pos(22, 2);
  std::vector<Matrix<float>> zs(s.anchors.size(), Matrix<float>(22, 32));
  for (int r = 0; r < 22; ++r) {
    const int i = r % 11;
    pos(r, 0) = s.positions(i, 0);
    pos(r, 1) = s.positions(i, 1);
    for (std::size_t n = 0; n < zs.size(); ++n)
      for (int c = 0; c < 32; ++c) zs[n](r, c) = s.anchors[n](i, c);
  }
  Rng rng(5);
  auto q = cast<float>(queries(rng, 7));
  EXPECT_EQ(s.run(q), s.run(zs, pos, q));
}

// Scalar re-implementation of the attention block for one query and a single key.
std::vector<double> single_key_block(const Observer<double>& obs, const ParamStore<double>& store,
                                     const std::vector<double>& qe, const std::vector<double>& key) {
  auto lin = [&](const std::string& name, const std::vector<double>& x) {
    const auto& W = store.find(name + ".W")->value;
    const auto& b = store.find(name + ".b")->value;
    std::vector<double> y(static_cast<std::size_t>(W.cols()));
    for (int o = 0; o < W.cols(); ++o) {
      double s = b(0, o);
      for (int i = 0; i < W.rows(); ++i) s += x[static_cast<std::size_t>(i)] * W(i, o);
      y[static_cast<std::size_t>(o)] = s;
    }
    return y;
  };
  // One key: every head's softmax weight is 1, so the heads read V directly.
  auto v = lin("obs.attn.v", key);
  auto a = lin("obs.attn.o", v);
  std::vector<double> q2(qe.size());
  for (std::size_t c = 0; c < qe.size(); ++c) q2[c] = qe[c] + a[c];
  auto m = lin("obs.attn.mlp", q2);
  for (std::size_t c = 0; c < q2.size(); ++c) q2[c] += std::max(0.0, m[c]);
  (void)obs;
  return q2;
}

TEST(Observer, SingleKeyAttentionMatchesClosedForm) {
  Rig<double> s(16, 4, 1, 0);
  Rng rng(6);
  auto q = queries(rng, 3);
  Graph<double> g(false);
  auto prepared = s.obs.prepare(g, {g.constant(s.anchors[0])}, s.positions, s.times);
  Var qe = s.obs.positional_encode(g, q);
  const auto& out = g.value(s.obs.cross_attend(g, qe, prepared.blocks[0]));
  Matrix<double> key_coords(1, 3, std::vector<double>{s.positions(0, 0), s.positions(0, 1), s.times[0]});
  const auto& pe = g.value(s.obs.positional_encode(g, key_coords));
  std::vector<double> key(16);
  for (int c = 0; c < 16; ++c) key[static_cast<std::size_t>(c)] = s.anchors[0](0, c) + pe(0, c);
  for (int r = 0; r < 3; ++r) {
    const auto& QE = g.value(qe);
    std::vector<double> qrow(QE.row(r).begin(), QE.row(r).end());
    auto ref = single_key_block(s.obs, s.store, qrow, key);
    for (int c = 0; c < 16; ++c) EXPECT_NEAR(out(r, c), ref[static_cast<std::size_t>(c)], 1e-6);
  }
}

TEST(Observer, BaseCaseIsOneRecurrentStep) {
  Rig<double> s(16, 2, 5, 0);
  Rng rng(7);
  auto q = queries(rng, 4);
  Graph<double> g(false);
  auto prepared = s.obs.prepare(g, {g.constant(s.anchors[0])}, s.positions, s.times);
  Var x = s.obs.cross_attend(g, s.obs.positional_encode(g, q), prepared.blocks[0]);
  Var h0 = g.constant(Matrix<double>(4, 16));
  Var h = s.obs.gru_cell(g, 1, s.obs.gru_cell(g, 0, x, h0), h0);
  EXPECT_EQ(g.value(s.obs.decode(g, h)), s.run(q));
}

TEST(Observer, GruCellMatchesScalarOracle) {
  Rig<double> s(8, 2, 3, 0);
  Rng rng(8);
  auto x = random_matrix<double>(rng, 1, 8);
  auto h = random_matrix<double>(rng, 1, 8);
  Graph<double> g(false);
  const auto& out = g.value(s.obs.gru_cell(g, 0, g.constant(x), g.constant(h)));
  const auto& Wi = s.store.find("obs.gru0.ih.W")->value;
  const auto& bi = s.store.find("obs.gru0.ih.b")->value;
  const auto& Wh = s.store.find("obs.gru0.hh.W")->value;
  const auto& bh = s.store.find("obs.gru0.hh.b")->value;
  auto gate = [&](int col, bool hidden) {
    double acc = hidden ? bh(0, col) : bi(0, col);
    for (int i = 0; i < 8; ++i) acc += hidden ? h(0, i) * Wh(i, col) : x(0, i) * Wi(i, col);
    return acc;
  };
  auto sig = [](double v) { return 1.0 / (1.0 + std::exp(-v)); };
  for (int c = 0; c < 8; ++c) {
    const double r = sig(gate(c, false) + gate(c, true));
    const double z = sig(gate(8 + c, false) + gate(8 + c, true));
    const double n = std::tanh(gate(16 + c, false) + r * gate(16 + c, true));
    EXPECT_NEAR(out(0, c), (1 - z) * n + z * h(0, c), 1e-12);
  }
}

TEST(Observer, ZeroDecoderGivesBias) {
  Rig<double> s(16, 2, 5, 2);
  s.obs.decoder_out().w->value.fill(0.0);
  s.obs.decoder_out().b->value(0, 0) = -0.4;
  Rng rng(9);
  const auto out = s.run(queries(rng, 6));
  for (double v : out.storage()) EXPECT_EQ(v, -0.4);
}

TEST(Observer, PoolingVariantsMatchTheirDefinitions) {
  for (auto agg : {Aggregator::kMeanPool, Aggregator::kMaxPool}) {
    Rig<double> s(16, 2, 6, 3, agg);
    Rng rng(10);
    auto q = queries(rng, 5);
    Graph<double> g(false);
    std::vector<Var> vars;
    for (const auto& z : s.anchors) vars.push_back(g.constant(z));
    auto prepared = s.obs.prepare(g, vars, s.positions, s.times);
    Var qe = s.obs.positional_encode(g, q);
    std::vector<Matrix<double>> outs;
    for (const auto& b : prepared.blocks) outs.push_back(g.value(s.obs.cross_attend(g, qe, b)));
    Matrix<double> pooled(5, 16);
    for (std::size_t k = 0; k < pooled.size(); ++k) {
      double acc = agg == Aggregator::kMeanPool ? 0.0 : -INFINITY;
      for (const auto& o : outs)
        acc = agg == Aggregator::kMeanPool ? acc + o.storage()[k] : std::max(acc, o.storage()[k]);
      pooled.storage()[k] = agg == Aggregator::kMeanPool ? acc / static_cast<double>(outs.size()) : acc;
    }
    const auto& ref = g.value(s.obs.decode(g, g.constant(pooled)));
    const auto got = s.run(q);
    for (int r = 0; r < 5; ++r) EXPECT_NEAR(got(r, 0), ref(r, 0), 1e-12) << aggregator_name(agg);
  }
}

TEST(Observer, QueriesDoNotInteract) {
  Rig<float> s(32, 4, 9, 2);
  Rng rng(11);
  auto q = cast<float>(queries(rng, 13));
  const auto all = s.run(q);
  for (int r : {0, 6, 12}) {
    Matrix<float> one(1, 3, std::vector<float>(q.row(r).begin(), q.row(r).end()));
    EXPECT_EQ(s.run(one)(0, 0), all(r, 0));
  }
}

TEST(Observer, ReboundAnchorsGiveIdenticalOutput) {
  Rig<float> s(32, 4, 9, 3);
  Rng rng(12);
  auto q = cast<float>(queries(rng, 8));
  Graph<float> g(false);
  std::vector<Var> vars;
  for (const auto& z : s.anchors) vars.push_back(g.constant(z));
  auto prepared = s.obs.prepare(g, vars, s.positions, s.times);
  Graph<float> chunk(false);
  auto rebound = Observer<float>::rebind(g, chunk, prepared);
  EXPECT_EQ(chunk.value(s.obs.evaluate(chunk, rebound, q)), s.run(q));
}

TEST(Observer, ContinuousInQuery) {
  Rig<double> s(32, 4, 12, 3);
  Rng rng(13);
  auto q = queries(rng, 6);
  const auto base = s.run(q);
  double prev = INFINITY;
  for (double delta : {1e-2, 1e-4, 1e-6}) {
    auto moved = q;
    for (int r = 0; r < 6; ++r) moved(r, 0) += delta;
    const auto out = s.run(moved);
    double worst = 0.0;
    for (int r = 0; r < 6; ++r) worst = std::max(worst, std::abs(out(r, 0) - base(r, 0)));
    EXPECT_LT(worst, prev);
    EXPECT_LT(worst / delta, 1e3);  // finite Lipschitz estimate
    prev = worst;
  }
  EXPECT_LT(prev, 1e-4);
}

TEST(Observer, RejectsBadInput) {
  ParamStore<double> store;
  EXPECT_THROW(Observer<double>(store, 30, 4, 2, Aggregator::kGru), std::invalid_argument);
  EXPECT_THROW(parse_aggregator("sum"), std::invalid_argument);
  Rig<double> s(16, 2, 4, 1);
  Graph<double> g(false);
  EXPECT_THROW(s.obs.prepare(g, {}, s.positions, {}), std::invalid_argument);
  EXPECT_THROW(s.obs.prepare(g, {g.constant(Matrix<double>(0, 16))}, Matrix<double>(0, 2), {0.0}),
               std::invalid_argument);
}

TEST(ObserverGradients, FullPipelineIncludingFrequencies) {
  for (auto agg : {Aggregator::kGru, Aggregator::kMeanPool, Aggregator::kMaxPool, Aggregator::kSingleAttention}) {
    Rig<double> s(8, 2, 6, 2, agg, 14);
    Rng rng(14);
    auto q = queries(rng, 5);
    auto target = random_matrix<double>(rng, 5, 1);
    auto loss = [&](bool grad) {
      Graph<double> g(grad);
      std::vector<Var> vars;
      for (const auto& z : s.anchors) vars.push_back(g.constant(z));
      Var l = g.mse(s.obs.evaluate(g, s.obs.prepare(g, vars, s.positions, s.times), q), target);
      if (grad) g.backward(l);
      return g.scalar(l);
    };
    for (const auto& e : testing::check_gradients(s.store.all(), loss, 1e-5)) {
      if (e.name == "obs.attn.k.b") {
        // Softmax ignores a shift shared by all logits of a query.
        EXPECT_LT(e.analytic_norm, 1e-9);
        EXPECT_LT(e.numeric_norm, 1e-9);
        continue;
      }
      EXPECT_LT(e.rel_error, 1e-4) << aggregator_name(agg) << " " << e.name;
      EXPECT_GT(e.analytic_norm, 0.0) << aggregator_name(agg) << " " << e.name;
    }
  }
}

TEST(QueryGradientNorms, MatchDirectionalDifferences) {
  Rig<double> s(16, 2, 7, 2);
  Rng rng(15);
  auto q = queries(rng, 1);
  const auto norms = s.obs.query_gradient_norms(s.anchors, s.positions, s.times, q);
  ASSERT_EQ(norms.rows(), 3);
  ASSERT_EQ(norms.cols(), 7);
  const double eps = 1e-5;
  for (int n = 0; n < 3; ++n) {
    for (int i = 0; i < 7; i += 3) {
      // Sum of squared directional derivatives along the coordinate axes of z[n]_i.
      double acc = 0.0;
      for (int c = 0; c < 16; ++c) {
        auto up = s.anchors, down = s.anchors;
        up[static_cast<std::size_t>(n)](i, c) += eps;
        down[static_cast<std::size_t>(n)](i, c) -= eps;
        const double d = (s.run(up, s.positions, q)(0, 0) - s.run(down, s.positions, q)(0, 0)) / (2 * eps);
        acc += d * d;
      }
      EXPECT_NEAR(norms(n, i), acc, 1e-3 * std::max(acc, 1e-12)) << n << "," << i;
    }
  }
}

TEST(QueryGradientNorms, ZeroedAttentionPathGivesZero) {
  Rig<double> s(16, 2, 5, 1);
  for (const char* name : {"obs.attn.k.W", "obs.attn.k.b", "obs.attn.v.W", "obs.attn.v.b"})
    s.store.find(name)->value.fill(0.0);
  Rng rng(16);
  const auto norms = s.obs.query_gradient_norms(s.anchors, s.positions, s.times, queries(rng, 1));
  for (double v : norms.storage()) EXPECT_EQ(v, 0.0);
}

}  // namespace
}  // namespace dualobs::model
