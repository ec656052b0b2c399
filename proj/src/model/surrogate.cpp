#include "dualobs/model/surrogate.hpp"

#include <fstream>
#include <set>
#include <stdexcept>

#include "dualobs/geometry/delaunay.hpp"

namespace dualobs::model {

using nlohmann::json;

void ModelConfig::validate() const {
  if (width < 2 || width % 2 != 0) throw std::invalid_argument("model.width must be even and >= 2");
  if (layers < 1) throw std::invalid_argument("model.layers must be >= 1");
  if (heads < 1 || width % heads != 0) throw std::invalid_argument("model.heads must divide model.width");
  if (gru_layers < 1) throw std::invalid_argument("model.gru_layers must be >= 1");
}

json ModelConfig::to_json() const {
  return {{"width", width},
          {"layers", layers},
          {"heads", heads},
          {"gru_layers", gru_layers},
          {"aggregator", aggregator_name(aggregator)}};
}

ModelConfig ModelConfig::from_json(const json& j) {
  static const std::set<std::string> known{"width", "layers", "heads", "gru_layers", "aggregator"};
  if (!j.is_object()) throw std::invalid_argument("model config must be an object");
  for (const auto& [k, v] : j.items())
    if (!known.count(k)) throw std::invalid_argument("unknown model config key '" + k + "'");
  ModelConfig c;
  if (j.contains("width")) c.width = j.at("width").get<int>();
  if (j.contains("layers")) c.layers = j.at("layers").get<int>();
  if (j.contains("heads")) c.heads = j.at("heads").get<int>();
  if (j.contains("gru_layers")) c.gru_layers = j.at("gru_layers").get<int>();
  if (j.contains("aggregator")) c.aggregator = parse_aggregator(j.at("aggregator").get<std::string>());
  c.validate();
  return c;
}

template <class T>
Surrogate<T>::Surrogate(const ModelConfig& config, std::uint64_t seed)
    : config_((config.validate(), config)),
      s1_(store_, config.width, config.layers),
      obs_(store_, config.width, config.heads, config.gru_layers, config.aggregator) {
  Rng rng(seed);
  s1_.init(rng);
  obs_.init(rng);
}

template <class T>
TrajectoryAnchors<T> Surrogate<T>::anchors(Graph<T>& g, const Matrix<T>& ic_values, const GraphTopology<T>& topo,
                                           int q, T anchor_dt) const {
  TrajectoryAnchors<T> out;
  out.states = s1_.rollout(g, s1_.encode(g, ic_values, topo), q, topo);
  std::vector<Var> nodes;
  std::vector<T> times;
  for (int n = 0; n <= q; ++n) {
    nodes.push_back(out.states[static_cast<std::size_t>(n)].nodes);
    times.push_back(static_cast<T>(n) * anchor_dt);
  }
  out.prepared = obs_.prepare(g, nodes, topo.positions, times);
  return out;
}

template <class T>
Var Surrogate<T>::predict(Graph<T>& g, const TrajectoryAnchors<T>& a, const Matrix<T>& queries) const {
  return obs_.evaluate(g, a.prepared, queries);
}

template <class T>
std::vector<T> Surrogate<T>::infer(const Matrix<T>& ic_values, const GraphTopology<T>& topo, int q, T anchor_dt,
                                   const Matrix<T>& queries, int chunk) const {
  if (chunk < 1) throw std::invalid_argument("infer: chunk must be >= 1");
  Graph<T> g(false);
  const auto a = anchors(g, ic_values, topo, q, anchor_dt);
  std::vector<T> out;
  out.reserve(static_cast<std::size_t>(queries.rows()));
  for (int r0 = 0; r0 < queries.rows(); r0 += chunk) {
    const int r1 = std::min(queries.rows(), r0 + chunk);
    Matrix<T> part(r1 - r0, 3);
    std::copy(queries.row(r0).data(), queries.row(r0).data() + part.size(), part.data());
    // A fresh graph per chunk keeps memory bounded; anchors enter as constants.
    Graph<T> cg(false);
    const auto rebound = Observer<T>::rebind(g, cg, a.prepared);
    const auto& v = cg.value(obs_.evaluate(cg, rebound, part));
    out.insert(out.end(), v.storage().begin(), v.storage().end());
  }
  return out;
}

template <class T>
TensorMap Surrogate<T>::to_tensors() const {
  TensorMap m;
  for (const auto* p : store_.all()) {
    std::vector<float> v(p->value.storage().begin(), p->value.storage().end());
    m.emplace(p->name, Tensor::floats({p->value.rows(), p->value.cols()}, std::move(v)));
  }
  return m;
}

template <class T>
void Surrogate<T>::load_tensors(const TensorMap& tensors) {
  const auto params = store_.all();
  if (tensors.size() != params.size())
    throw FormatError("checkpoint has " + std::to_string(tensors.size()) + " blocks, model expects " +
                      std::to_string(params.size()));
  for (auto* p : params) {
    const Tensor& t = require_tensor(tensors, p->name, Tensor::DType::kFloat32, 2, "checkpoint");
    if (t.dim(0) != p->value.rows() || t.dim(1) != p->value.cols())
      throw FormatError("checkpoint block " + p->name + " has the wrong shape");
    std::copy(t.f32.begin(), t.f32.end(), p->value.storage().begin());
  }
}

template <class T>
GraphTopology<T> make_topology(const Matrix<T>& positions) {
  std::vector<geometry::Point2> pts;
  for (int i = 0; i < positions.rows(); ++i) pts.push_back({positions(i, 0), positions(i, 1)});
  GraphTopology<T> topo;
  topo.positions = positions;
  topo.edges = geometry::delaunay_edges(pts);
  return topo;
}

template <class T>
void save_checkpoint(const std::filesystem::path& dir, const Surrogate<T>& model, const json& meta) {
  std::filesystem::create_directories(dir);
  write_tensors(dir / "model.bin", model.to_tensors());
  json j = {{"model", model.config().to_json()}, {"meta", meta}};
  std::ofstream out(dir / "checkpoint.json", std::ios::binary);
  out << j.dump(2) << "\n";
  if (!out) throw std::runtime_error("cannot write " + (dir / "checkpoint.json").string());
}

Checkpoint read_checkpoint(const std::filesystem::path& dir) {
  std::ifstream in(dir / "checkpoint.json");
  if (!in) throw std::runtime_error("no checkpoint.json in " + dir.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw FormatError(dir.string() + "/checkpoint.json: " + e.what());
  }
  Checkpoint c;
  c.config = ModelConfig::from_json(j.at("model"));
  c.meta = j.value("meta", json::object());
  c.tensors = read_tensors(dir / "model.bin");
  return c;
}

template class Surrogate<float>;
template class Surrogate<double>;
template GraphTopology<float> make_topology(const Matrix<float>&);
template GraphTopology<double> make_topology(const Matrix<double>&);
template void save_checkpoint(const std::filesystem::path&, const Surrogate<float>&, const json&);
template void save_checkpoint(const std::filesystem::path&, const Surrogate<double>&, const json&);

}  // namespace dualobs::model
