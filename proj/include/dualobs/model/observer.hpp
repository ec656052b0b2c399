#pragma once

// State observer: maps the anchor sequence and a batch of normalized query
// coordinates (x, y, t) to field values. Rows of a query batch never
// interact.

#include <string>
#include <vector>

#include "dualobs/model/layers.hpp"

namespace dualobs::model {

enum class Aggregator {
  kGru,              // recurrent accumulation over anchors (default)
  kMeanPool,         // mean of the per-anchor attention outputs
  kMaxPool,          // elementwise max of the per-anchor attention outputs
  kSingleAttention,  // one attention over every (anchor, node) pair
};

std::string aggregator_name(Aggregator a);
Aggregator parse_aggregator(const std::string& s);

/// Keys and values of one attention block, in canonical form: rows sorted
/// and exact duplicates merged with a multiplicity, so the result of an
/// attention read does not depend on node order or repetition.
template <class T>
struct KeyBlock {
  std::vector<Var> keys;    // per head, U x (width / heads)
  std::vector<Var> values;  // per head
  std::vector<T> multiplicity;
};

template <class T>
struct PreparedAnchors {
  std::vector<KeyBlock<T>> blocks;  // one per anchor, or a single one for kSingleAttention
};

template <class T>
struct GruLayer {
  Linear<T> input;   // in -> 3 width, gate order (r, z, n)
  Linear<T> hidden;  // width -> 3 width
};

template <class T>
class Observer {
 public:
  Observer(ParamStore<T>& store, int width, int heads, int gru_layers, Aggregator aggregator);

  void init(Rng& rng);

  int width() const { return width_; }
  int heads() const { return heads_; }
  Aggregator aggregator() const { return aggregator_; }
  Parameter<T>& omega() const { return *omega_; }

  /// Fourier features of coordinates (rows x 3) with the learned frequencies.
  Var positional_encode(Graph<T>& g, const Matrix<T>& coords) const;

  /// Builds canonical key/value blocks. `anchor_nodes[n]` is the node
  /// embedding of anchor n, located at `positions` (nodes x 2) and time
  /// `anchor_times[n]` (normalized).
  PreparedAnchors<T> prepare(Graph<T>& g, const std::vector<Var>& anchor_nodes,
                             const Matrix<T>& positions, const std::vector<T>& anchor_times) const;

  /// Attention block: q2 = Q + MHA(Q, K, V); out = q2 + relu(W q2 + b).
  Var cross_attend(Graph<T>& g, Var query_embed, const KeyBlock<T>& block) const;

  Var gru_cell(Graph<T>& g, int layer, Var x, Var h) const;
  Var decode(Graph<T>& g, Var h) const;

  /// Field estimate for each query row, rows x 1.
  Var evaluate(Graph<T>& g, const PreparedAnchors<T>& anchors, const Matrix<T>& queries) const;

  /// Squared norm of the gradient of the estimate at one query with respect
  /// to every anchor node embedding: result(n, i) = |d s / d z[n]_i|^2.
  Matrix<T> query_gradient_norms(const std::vector<Matrix<T>>& anchor_nodes, const Matrix<T>& positions,
                                 const std::vector<T>& anchor_times, const Matrix<T>& query) const;

  /// Copies prepared blocks from one graph into another as constants.
  static PreparedAnchors<T> rebind(const Graph<T>& from, Graph<T>& to, const PreparedAnchors<T>& p);

  const Linear<T>& decoder_out() const { return dec_.l1; }

 private:
  KeyBlock<T> make_block(Graph<T>& g, Var key_input) const;

  int width_, heads_;
  Aggregator aggregator_;
  Parameter<T>* omega_;
  Linear<T> wq_, wk_, wv_, wo_, mlp_;
  std::vector<GruLayer<T>> gru_;
  Mlp2<T> dec_;
};

}  // namespace dualobs::model
