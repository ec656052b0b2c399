#pragma once

// Full model: System 1 (latent anchor rollout) feeding the System 2 observer.

#include <cstdint>
#include <filesystem>
#include <vector>

#include <nlohmann/json.hpp>

#include "dualobs/core/tensor_io.hpp"
#include "dualobs/model/observer.hpp"
#include "dualobs/model/system1.hpp"

namespace dualobs::model {

struct ModelConfig {
  int width = 128;
  int layers = 8;
  int heads = 4;
  int gru_layers = 2;
  Aggregator aggregator = Aggregator::kGru;

  void validate() const;
  nlohmann::json to_json() const;
  /// Missing keys keep their defaults; unknown keys are rejected.
  static ModelConfig from_json(const nlohmann::json& j);
};

template <class T>
struct TrajectoryAnchors {
  std::vector<LatentGraph> states;  // anchors 0..q
  PreparedAnchors<T> prepared;
};

template <class T>
class Surrogate {
 public:
  Surrogate(const ModelConfig& config, std::uint64_t seed);

  Surrogate(const Surrogate&) = delete;
  Surrogate& operator=(const Surrogate&) = delete;

  const ModelConfig& config() const { return config_; }
  ParamStore<T>& params() { return store_; }
  const ParamStore<T>& params() const { return store_; }
  System1<T>& system1() { return s1_; }
  const System1<T>& system1() const { return s1_; }
  const Observer<T>& observer() const { return obs_; }

  /// Encodes the IC values at the topology nodes, rolls the latent state
  /// q steps (anchor n sits at normalized time n * anchor_dt) and prepares
  /// the observer keys. The rollout happens here and nowhere else.
  TrajectoryAnchors<T> anchors(Graph<T>& g, const Matrix<T>& ic_values, const GraphTopology<T>& topo, int q,
                               T anchor_dt) const;

  /// Estimates at queries (rows x 3: x, y, t), rows x 1.
  Var predict(Graph<T>& g, const TrajectoryAnchors<T>& a, const Matrix<T>& queries) const;

  /// Inference without gradients; queries are evaluated in chunks that
  /// share one rollout.
  std::vector<T> infer(const Matrix<T>& ic_values, const GraphTopology<T>& topo, int q, T anchor_dt,
                       const Matrix<T>& queries, int chunk = 2048) const;

  TensorMap to_tensors() const;
  void load_tensors(const TensorMap& tensors);

 private:
  ModelConfig config_;
  ParamStore<T> store_;
  System1<T> s1_;
  Observer<T> obs_;
};

/// Builds the graph topology on a set of normalized node positions.
template <class T>
GraphTopology<T> make_topology(const Matrix<T>& positions);

/// Checkpoint directory: model.bin (one float32 tensor per parameter block)
/// and checkpoint.json (model config plus caller metadata).
template <class T>
void save_checkpoint(const std::filesystem::path& dir, const Surrogate<T>& model, const nlohmann::json& meta);

struct Checkpoint {
  ModelConfig config;
  TensorMap tensors;
  nlohmann::json meta;
};
Checkpoint read_checkpoint(const std::filesystem::path& dir);

}  // namespace dualobs::model
