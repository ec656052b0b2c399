#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "dualobs/core/rng.hpp"
#include "dualobs/model/surrogate.hpp"
#include "dualobs/pde/dataset.hpp"

namespace dualobs::train {

struct TrainConfig {
  double lr = 1e-3;
  int epochs = 4500;
  std::vector<int> milestones{2500, 3000, 3500, 4000};
  double decay = 0.5;
  double grad_clip = 1.0;
  double weight_decay = 0.01;
  int batch = 16;
  int delta_factor = 3;  // anchor interval in units of the data interval
  double ic_keep = 0.75;
  int n_queries = 1024;  // per optimization step, split evenly across the batch
  double w_continuous = 1.0;
  double w_dynamics = 1.0;
  std::uint64_t seed = 0;
  int val_trajectories = 8;
  int val_queries = 2048;  // per validation trajectory, drawn from Ext-X at every frame < T
  int val_every = 1;

  void validate() const;
  nlohmann::json to_json() const;
  static TrainConfig from_json(const nlohmann::json& j);
};

/// Learning rate during epoch `epoch` (0-based): halved once per milestone
/// already passed.
double learning_rate(const TrainConfig& c, int epoch);

/// Anchor layout for a trajectory with training horizon T frames, data
/// interval `stride` frames and anchor interval delta = k * stride.
struct AnchorPlan {
  int horizon_frames = 0;  // T (or 2T for extrapolation)
  int train_frames = 0;    // T: normalizes time, t = frame / T
  int delta_frames = 0;
  int q = 0;               // floor(horizon / delta)

  static AnchorPlan make(int train_frames, int stride, int k, int horizon_frames = -1);
  float anchor_dt() const { return static_cast<float>(delta_frames) / static_cast<float>(train_frames); }
  int anchor_frame(int n) const { return n * delta_frames; }
  float time_of(int frame) const { return static_cast<float>(frame) / static_cast<float>(train_frames); }
  bool is_anchor_frame(int frame) const { return frame % delta_frames == 0; }
};

/// Uniform subset of round(keep * n) indices (at least 3), sorted.
std::vector<int> subsample_ic(int n, double keep, Rng& rng);

/// Loss-weighted query sampler over the |X| x |T| observations of one trajectory.
class QuerySampler {
 public:
  explicit QuerySampler(std::size_t size) : w_(size, 1.0) {}

  /// n distinct indices drawn with probability proportional to W
  /// (successive sampling without replacement).
  std::vector<int> sample(int n, Rng& rng) const;
  /// W[sampled] = 0, then W += loss everywhere.
  void update(const std::vector<int>& sampled, double loss);

  const std::vector<double>& weights() const { return w_; }
  std::vector<double>& weights() { return w_; }

 private:
  std::vector<double> w_;
};

class NonFiniteLoss : public std::runtime_error {
 public:
  NonFiniteLoss(int epoch, int step, const std::string& term)
      : std::runtime_error("non-finite " + term + " at epoch " + std::to_string(epoch) + ", step " +
                           std::to_string(step)),
        epoch(epoch), step(step), term(term) {}
  int epoch, step;
  std::string term;
};

struct EpochMetrics {
  int epoch = 0;
  double lr = 0.0;
  double l_continuous = 0.0;  // mean over optimization steps
  double l_dynamics = 0.0;
  double grad_norm = 0.0;      // largest pre-clip norm in the epoch
  double val_ext_x = -1.0;     // -1 when not evaluated this epoch
  long off_anchor_queries = 0; // training queries whose time is not an anchor time
};

struct TrainResult {
  std::vector<EpochMetrics> history;
  int best_epoch = -1;
  double best_val = 0.0;
};

/// Per-trajectory loss pieces of one optimization step.
struct StepLoss {
  double continuous = 0.0;
  double dynamics = 0.0;
  long off_anchor = 0;
};

/// Builds the graph of one training trajectory and back-propagates
/// `scale` times its loss. Exposed for tests.
StepLoss trajectory_loss(const model::Surrogate<float>& model, const pde::SparseDataset& ds,
                         const pde::SparseTrajectory& traj, const AnchorPlan& plan, const TrainConfig& cfg,
                         const std::vector<int>& ic_nodes, const std::vector<int>& queries, float scale);

/// Mean squared error at the fixed validation subset (Ext-X points).
double validation_ext_x(const model::Surrogate<float>& model, const pde::SparseDataset& ds, const TrainConfig& cfg);

using EpochCallback = std::function<void(const EpochMetrics&)>;

/// Trains in place. When `out` is set, writes metrics.csv, best/ and
/// final/ checkpoints there.
TrainResult train(model::Surrogate<float>& model, const pde::SparseDataset& ds, const TrainConfig& cfg,
                  const std::optional<std::filesystem::path>& out = std::nullopt,
                  const EpochCallback& on_epoch = {});

/// The metrics table, one row per epoch. Contains no timing data so equal
/// runs give equal files.
std::string metrics_csv(const std::vector<EpochMetrics>& history);

}  // namespace dualobs::train
