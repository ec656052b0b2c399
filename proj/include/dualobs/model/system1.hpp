#pragma once

// Latent dynamics over the sparse node set: encoder, residual
// message-passing processor applied auto-regressively, and the per-node
// observation head.

#include <atomic>
#include <utility>
#include <vector>

#include "dualobs/model/layers.hpp"

namespace dualobs::model {

/// Graph structure shared by every anchor of one trajectory.
template <class T>
struct GraphTopology {
  Matrix<T> positions;                    // nodes x 2, normalized
  std::vector<std::pair<int, int>> edges; // (i, j): message from j into i, both directions present

  int nodes() const { return positions.rows(); }
  std::vector<int> receivers() const;
  std::vector<int> senders() const;
  void validate() const;
};

/// One anchor state: node and edge embeddings inside a graph.
struct LatentGraph {
  Var nodes;  // nodes x width
  Var edges;  // |E| x width
};

template <class T>
struct ProcessorLayer {
  // g_edge(z_i, z_j, e): the first linear layer on [z_i | z_j | e] is kept as
  // three blocks so node-side products are computed once per node.
  Parameter<T>* edge_wi = nullptr;
  Parameter<T>* edge_wj = nullptr;
  Parameter<T>* edge_we = nullptr;
  Parameter<T>* edge_b0 = nullptr;
  Linear<T> edge_out;
  // g_node(z, sum of messages), first layer split the same way.
  Parameter<T>* node_wz = nullptr;
  Parameter<T>* node_wm = nullptr;
  Parameter<T>* node_b0 = nullptr;
  Linear<T> node_out;
};

template <class T>
class System1 {
 public:
  System1(ParamStore<T>& store, int width, int layers);

  void init(Rng& rng);
  /// Sets every processor parameter to zero (each layer becomes the identity).
  void zero_processor();

  int width() const { return width_; }
  int layers() const { return static_cast<int>(layers_.size()); }

  /// z_i = f_node(s_i, x_i), e_ij = f_edge(x_i - x_j, |x_i - x_j|).
  LatentGraph encode(Graph<T>& g, const Matrix<T>& values, const GraphTopology<T>& topo) const;
  /// All processor layers once: one latent time step.
  LatentGraph step(Graph<T>& g, const LatentGraph& z, const GraphTopology<T>& topo) const;
  /// [z0, step(z0), ..., step^q(z0)].
  std::vector<LatentGraph> rollout(Graph<T>& g, const LatentGraph& z0, int q,
                                   const GraphTopology<T>& topo) const;
  /// Per-node scalar read-out h1(z_i), nodes x 1.
  Var observe(Graph<T>& g, Var node_embed) const;

  long rollout_calls() const { return rollout_calls_.load(); }
  void reset_rollout_calls() { rollout_calls_ = 0; }

  const Mlp2<T>& f_node() const { return f_node_; }
  const Mlp2<T>& f_edge() const { return f_edge_; }
  const Mlp2<T>& h1() const { return h1_; }
  const ProcessorLayer<T>& layer(int l) const { return layers_.at(static_cast<std::size_t>(l)); }

 private:
  int width_;
  Mlp2<T> f_node_, f_edge_, h1_;
  std::vector<ProcessorLayer<T>> layers_;
  mutable std::atomic<long> rollout_calls_{0};
};

/// Edge features (x_i - x_j, |x_i - x_j|), |E| x 3.
template <class T>
Matrix<T> edge_features(const GraphTopology<T>& topo);

}  // namespace dualobs::model
