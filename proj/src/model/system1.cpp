#include "dualobs/model/system1.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace dualobs::model {

template <class T>
std::vector<int> GraphTopology<T>::receivers() const {
  std::vector<int> r;
  r.reserve(edges.size());
  for (const auto& e : edges) r.push_back(e.first);
  return r;
}

template <class T>
std::vector<int> GraphTopology<T>::senders() const {
  std::vector<int> s;
  s.reserve(edges.size());
  for (const auto& e : edges) s.push_back(e.second);
  return s;
}

template <class T>
void GraphTopology<T>::validate() const {
  if (positions.cols() != 2) throw ShapeError("topology: positions must be nodes x 2");
  for (const auto& [i, j] : edges)
    if (i < 0 || j < 0 || i >= nodes() || j >= nodes() || i == j)
      throw ShapeError("topology: bad edge (" + std::to_string(i) + ", " + std::to_string(j) + ")");
}

template <class T>
Matrix<T> edge_features(const GraphTopology<T>& topo) {
  Matrix<T> f(static_cast<int>(topo.edges.size()), 3);
  for (std::size_t k = 0; k < topo.edges.size(); ++k) {
    const auto [i, j] = topo.edges[k];
    const T dx = topo.positions(i, 0) - topo.positions(j, 0);
    const T dy = topo.positions(i, 1) - topo.positions(j, 1);
    const int r = static_cast<int>(k);
    f(r, 0) = dx;
    f(r, 1) = dy;
    f(r, 2) = std::sqrt(dx * dx + dy * dy);
  }
  return f;
}

template <class T>
System1<T>::System1(ParamStore<T>& store, int width, int layers) : width_(width) {
  if (layers < 1) throw std::invalid_argument("System1: at least one processor layer");
  f_node_ = Mlp2<T>(store, "s1.f_node", 3, width, width, Activation::kRelu);
  f_edge_ = Mlp2<T>(store, "s1.f_edge", 3, width, width, Activation::kRelu);
  for (int l = 0; l < layers; ++l) {
    const std::string p = "s1.layer" + std::to_string(l);
    ProcessorLayer<T> L;
    L.edge_wi = &store.create(p + ".g_edge.0.Wi", width, width);
    L.edge_wj = &store.create(p + ".g_edge.0.Wj", width, width);
    L.edge_we = &store.create(p + ".g_edge.0.We", width, width);
    L.edge_b0 = &store.create(p + ".g_edge.0.b", 1, width);
    L.edge_out = Linear<T>(store, p + ".g_edge.1", width, width);
    L.node_wz = &store.create(p + ".g_node.0.Wz", width, width);
    L.node_wm = &store.create(p + ".g_node.0.Wm", width, width);
    L.node_b0 = &store.create(p + ".g_node.0.b", 1, width);
    L.node_out = Linear<T>(store, p + ".g_node.1", width, width);
    layers_.push_back(L);
  }
  h1_ = Mlp2<T>(store, "s1.h1", width, width, 1, Activation::kSwish);
}

template <class T>
void System1<T>::init(Rng& rng) {
  f_node_.init(rng);
  f_edge_.init(rng);
  for (auto& L : layers_) {
    for (auto* p : {L.edge_wi, L.edge_wj, L.edge_we, L.edge_b0}) init_uniform(*p, 3 * width_, rng);
    L.edge_out.init(width_, rng);
    for (auto* p : {L.node_wz, L.node_wm, L.node_b0}) init_uniform(*p, 2 * width_, rng);
    L.node_out.init(width_, rng);
  }
  h1_.init(rng);
}

template <class T>
void System1<T>::zero_processor() {
  for (auto& L : layers_) {
    for (auto* p : {L.edge_wi, L.edge_wj, L.edge_we, L.edge_b0, L.edge_out.w, L.edge_out.b, L.node_wz,
                    L.node_wm, L.node_b0, L.node_out.w, L.node_out.b})
      p->value.fill(T(0));
  }
}

template <class T>
LatentGraph System1<T>::encode(Graph<T>& g, const Matrix<T>& values, const GraphTopology<T>& topo) const {
  topo.validate();
  if (values.rows() != topo.nodes() || values.cols() != 1)
    throw ShapeError("encode: values are " + shape_string(values.rows(), values.cols()) + ", expected " +
                     shape_string(topo.nodes(), 1));
  Matrix<T> node_in(topo.nodes(), 3);
  for (int i = 0; i < topo.nodes(); ++i) {
    node_in(i, 0) = values(i, 0);
    node_in(i, 1) = topo.positions(i, 0);
    node_in(i, 2) = topo.positions(i, 1);
  }
  LatentGraph z;
  z.nodes = f_node_(g, g.constant(std::move(node_in)));
  z.edges = f_edge_(g, g.constant(edge_features(topo)));
  return z;
}

template <class T>
LatentGraph System1<T>::step(Graph<T>& g, const LatentGraph& z, const GraphTopology<T>& topo) const {
  const std::vector<int> recv = topo.receivers();
  const std::vector<int> send = topo.senders();
  LatentGraph cur = z;
  for (const auto& L : layers_) {
    // e' = e + g_edge(z_i, z_j, e)
    Var zi = g.gather_rows(g.matmul(cur.nodes, g.param(*L.edge_wi)), recv);
    Var zj = g.gather_rows(g.matmul(cur.nodes, g.param(*L.edge_wj)), send);
    Var pre = g.add(g.add(zi, zj), g.affine(cur.edges, g.param(*L.edge_we), g.param(*L.edge_b0)));
    Var e_new = g.add(cur.edges, L.edge_out(g, g.relu(pre)));
    // z' = z + g_node(z, sum_j e'_ij)
    Var msg = g.scatter_add_rows(e_new, recv, topo.nodes());
    Var npre = g.add(g.affine(cur.nodes, g.param(*L.node_wz), g.param(*L.node_b0)),
                     g.matmul(msg, g.param(*L.node_wm)));
    Var z_new = g.add(cur.nodes, L.node_out(g, g.relu(npre)));
    cur = {z_new, e_new};
  }
  return cur;
}

template <class T>
std::vector<LatentGraph> System1<T>::rollout(Graph<T>& g, const LatentGraph& z0, int q,
                                             const GraphTopology<T>& topo) const {
  if (q < 0) throw std::invalid_argument("rollout: q must be >= 0");
  ++rollout_calls_;
  std::vector<LatentGraph> out{z0};
  for (int n = 0; n < q; ++n) out.push_back(step(g, out.back(), topo));
  return out;
}

template <class T>
Var System1<T>::observe(Graph<T>& g, Var node_embed) const {
  return h1_(g, node_embed);
}

template struct GraphTopology<float>;
template struct GraphTopology<double>;
template Matrix<float> edge_features(const GraphTopology<float>&);
template Matrix<double> edge_features(const GraphTopology<double>&);
template class System1<float>;
template class System1<double>;

}  // namespace dualobs::model
