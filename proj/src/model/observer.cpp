#include "dualobs/model/observer.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace dualobs::model {
namespace {

// Strict weak order on rows: lexicographic by value, ties between equal
// values with different bit patterns (signed zeros) broken by the bits.
template <class T>
bool row_less(std::span<const T> a, std::span<const T> b) {
  for (std::size_t c = 0; c < a.size(); ++c) {
    if (a[c] < b[c]) return true;
    if (b[c] < a[c]) return false;
  }
  for (std::size_t c = 0; c < a.size(); ++c) {
    const bool sa = std::signbit(a[c]), sb = std::signbit(b[c]);
    if (sa != sb) return sa;
  }
  return false;
}

template <class T>
bool row_identical(std::span<const T> a, std::span<const T> b) {
  return !row_less(a, b) && !row_less(b, a);
}

}  // namespace

std::string aggregator_name(Aggregator a) {
  switch (a) {
    case Aggregator::kGru: return "gru";
    case Aggregator::kMeanPool: return "mean";
    case Aggregator::kMaxPool: return "max";
    case Aggregator::kSingleAttention: return "single";
  }
  return "?";
}

Aggregator parse_aggregator(const std::string& s) {
  if (s == "gru") return Aggregator::kGru;
  if (s == "mean") return Aggregator::kMeanPool;
  if (s == "max") return Aggregator::kMaxPool;
  if (s == "single") return Aggregator::kSingleAttention;
  throw std::invalid_argument("unknown aggregator '" + s + "' (gru, mean, max, single)");
}

template <class T>
Observer<T>::Observer(ParamStore<T>& store, int width, int heads, int gru_layers, Aggregator aggregator)
    : width_(width), heads_(heads), aggregator_(aggregator) {
  if (heads < 1 || width % heads != 0) throw std::invalid_argument("Observer: heads must divide width");
  if (width % 2 != 0) throw std::invalid_argument("Observer: width must be even");
  omega_ = &store.create("obs.omega", 1, 3);
  wq_ = Linear<T>(store, "obs.attn.q", width, width);
  wk_ = Linear<T>(store, "obs.attn.k", width, width);
  wv_ = Linear<T>(store, "obs.attn.v", width, width);
  wo_ = Linear<T>(store, "obs.attn.o", width, width);
  mlp_ = Linear<T>(store, "obs.attn.mlp", width, width);
  if (aggregator == Aggregator::kGru) {
    if (gru_layers < 1) throw std::invalid_argument("Observer: at least one GRU layer");
    for (int l = 0; l < gru_layers; ++l) {
      const std::string p = "obs.gru" + std::to_string(l);
      gru_.push_back({Linear<T>(store, p + ".ih", width, 3 * width), Linear<T>(store, p + ".hh", width, 3 * width)});
    }
  }
  dec_ = Mlp2<T>(store, "obs.decoder", width, width, 1, Activation::kSwish);
}

template <class T>
void Observer<T>::init(Rng& rng) {
  for (auto& v : omega_->value.storage()) v = static_cast<T>(rng.uniform());
  for (auto* l : {&wq_, &wk_, &wv_, &wo_, &mlp_}) l->init(width_, rng);
  for (auto& layer : gru_) {
    layer.input.init(width_, rng);
    layer.hidden.init(width_, rng);
  }
  dec_.init(rng);
}

template <class T>
Var Observer<T>::positional_encode(Graph<T>& g, const Matrix<T>& coords) const {
  if (coords.cols() != 3) throw ShapeError("positional_encode: coordinates must be rows x 3");
  return g.fourier(coords, g.param(*omega_), width_);
}

template <class T>
KeyBlock<T> Observer<T>::make_block(Graph<T>& g, Var key_input) const {
  const Matrix<T>& K = g.value(key_input);
  const int n = K.rows();
  if (n == 0) throw std::invalid_argument("cross-attention over an empty anchor");
  std::vector<int> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return row_less<T>(K.row(a), K.row(b)); });
  std::vector<int> group(static_cast<std::size_t>(n));
  KeyBlock<T> block;
  int groups = 0;
  for (int r = 0; r < n; ++r) {
    const int row = order[static_cast<std::size_t>(r)];
    if (r == 0 || !row_identical<T>(K.row(order[static_cast<std::size_t>(r - 1)]), K.row(row))) {
      ++groups;
      block.multiplicity.push_back(T(0));
    }
    group[static_cast<std::size_t>(row)] = groups - 1;
    block.multiplicity.back() += T(1);
  }
  Var canon = g.merge_rows(key_input, std::move(group), groups);
  Var kp = wk_(g, canon);
  Var vp = wv_(g, canon);
  const int d = width_ / heads_;
  for (int h = 0; h < heads_; ++h) {
    block.keys.push_back(g.slice_cols(kp, h * d, (h + 1) * d));
    block.values.push_back(g.slice_cols(vp, h * d, (h + 1) * d));
  }
  return block;
}

template <class T>
PreparedAnchors<T> Observer<T>::prepare(Graph<T>& g, const std::vector<Var>& anchor_nodes,
                                        const Matrix<T>& positions, const std::vector<T>& anchor_times) const {
  if (anchor_nodes.empty()) throw std::invalid_argument("observer: empty anchor sequence");
  if (anchor_nodes.size() != anchor_times.size()) throw ShapeError("observer: one time per anchor");
  std::vector<Var> key_inputs;
  for (std::size_t n = 0; n < anchor_nodes.size(); ++n) {
    const Matrix<T>& z = g.value(anchor_nodes[n]);
    if (z.rows() != positions.rows() || z.cols() != width_) throw ShapeError("observer: anchor shape");
    Matrix<T> coords(positions.rows(), 3);
    for (int i = 0; i < positions.rows(); ++i) {
      coords(i, 0) = positions(i, 0);
      coords(i, 1) = positions(i, 1);
      coords(i, 2) = anchor_times[n];
    }
    key_inputs.push_back(g.add(anchor_nodes[n], positional_encode(g, coords)));
  }
  PreparedAnchors<T> out;
  if (aggregator_ == Aggregator::kSingleAttention) {
    out.blocks.push_back(make_block(g, g.concat_rows(key_inputs)));
  } else {
    for (Var k : key_inputs) out.blocks.push_back(make_block(g, k));
  }
  return out;
}

template <class T>
Var Observer<T>::cross_attend(Graph<T>& g, Var query_embed, const KeyBlock<T>& block) const {
  const int d = width_ / heads_;
  const T scale = T(1) / std::sqrt(static_cast<T>(d));
  Var qp = wq_(g, query_embed);
  std::vector<Var> heads;
  for (int h = 0; h < heads_; ++h) {
    Var qh = g.slice_cols(qp, h * d, (h + 1) * d);
    Var scores = g.scale(g.matmul_nt(qh, block.keys[static_cast<std::size_t>(h)]), scale);
    Var p = g.softmax_rows(scores, block.multiplicity);
    heads.push_back(g.matmul(p, block.values[static_cast<std::size_t>(h)]));
  }
  Var q2 = g.add(query_embed, wo_(g, g.concat_cols(heads)));
  return g.add(q2, g.relu(mlp_(g, q2)));
}

template <class T>
Var Observer<T>::gru_cell(Graph<T>& g, int layer, Var x, Var h) const {
  const auto& L = gru_.at(static_cast<std::size_t>(layer));
  const int w = width_;
  Var gi = L.input(g, x);
  Var gh = L.hidden(g, h);
  Var r = g.sigmoid(g.add(g.slice_cols(gi, 0, w), g.slice_cols(gh, 0, w)));
  Var z = g.sigmoid(g.add(g.slice_cols(gi, w, 2 * w), g.slice_cols(gh, w, 2 * w)));
  Var n = g.tanh(g.add(g.slice_cols(gi, 2 * w, 3 * w), g.mul(r, g.slice_cols(gh, 2 * w, 3 * w))));
  return g.add(g.mul(g.one_minus(z), n), g.mul(z, h));
}

template <class T>
Var Observer<T>::decode(Graph<T>& g, Var h) const {
  return dec_(g, h);
}

template <class T>
Var Observer<T>::evaluate(Graph<T>& g, const PreparedAnchors<T>& anchors, const Matrix<T>& queries) const {
  if (anchors.blocks.empty()) throw std::invalid_argument("observer: empty anchor sequence");
  Var q = positional_encode(g, queries);
  switch (aggregator_) {
    case Aggregator::kSingleAttention:
      return decode(g, cross_attend(g, q, anchors.blocks.front()));
    case Aggregator::kMeanPool:
    case Aggregator::kMaxPool: {
      std::vector<Var> per_anchor;
      for (const auto& b : anchors.blocks) per_anchor.push_back(cross_attend(g, q, b));
      return decode(g, aggregator_ == Aggregator::kMeanPool ? g.mean_of(per_anchor) : g.max_of(per_anchor));
    }
    case Aggregator::kGru: {
      std::vector<Var> h(gru_.size(), g.constant(Matrix<T>(queries.rows(), width_)));
      for (const auto& b : anchors.blocks) {
        Var x = cross_attend(g, q, b);
        for (std::size_t l = 0; l < gru_.size(); ++l) {
          h[l] = gru_cell(g, static_cast<int>(l), x, h[l]);
          x = h[l];
        }
      }
      return decode(g, h.back());
    }
  }
  throw std::logic_error("unreachable");
}

template <class T>
Matrix<T> Observer<T>::query_gradient_norms(const std::vector<Matrix<T>>& anchor_nodes, const Matrix<T>& positions,
                                            const std::vector<T>& anchor_times, const Matrix<T>& query) const {
  if (query.rows() != 1) throw ShapeError("query_gradient_norms: one query at a time");
  Graph<T> g(true);
  std::vector<Var> leaves;
  for (const auto& z : anchor_nodes) leaves.push_back(g.leaf(z));
  Var out = evaluate(g, prepare(g, leaves, positions, anchor_times), query);
  g.backward(out);
  Matrix<T> norms(static_cast<int>(leaves.size()), positions.rows());
  for (std::size_t n = 0; n < leaves.size(); ++n) {
    const auto& gr = g.grad(leaves[n]);
    if (gr.empty()) continue;
    for (int i = 0; i < gr.rows(); ++i) {
      T s = T(0);
      for (T v : gr.row(i)) s += v * v;
      norms(static_cast<int>(n), i) = s;
    }
  }
  return norms;
}

template <class T>
PreparedAnchors<T> Observer<T>::rebind(const Graph<T>& from, Graph<T>& to, const PreparedAnchors<T>& p) {
  PreparedAnchors<T> out;
  for (const auto& b : p.blocks) {
    KeyBlock<T> nb;
    nb.multiplicity = b.multiplicity;
    for (Var k : b.keys) nb.keys.push_back(to.constant(from.value(k)));
    for (Var v : b.values) nb.values.push_back(to.constant(from.value(v)));
    out.blocks.push_back(std::move(nb));
  }
  return out;
}

template class Observer<float>;
template class Observer<double>;

}  // namespace dualobs::model
