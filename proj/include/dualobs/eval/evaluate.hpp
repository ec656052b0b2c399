#pragma once

// Region-tagged evaluation of dense estimates against the reference
// solution, non-learned references, and runtime measurements.

#include <array>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "dualobs/model/surrogate.hpp"
#include "dualobs/pde/dataset.hpp"
#include "dualobs/train/trainer.hpp"

namespace dualobs::eval {

/// Reported MSE values are multiplied by this.
inline constexpr double kReportScale = 1e3;

/// One dense estimate per frame, each resolution x resolution in (y, x) order.
using FieldEstimate = std::vector<Matrix<float>>;

class NotApplicable : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Squared-error sums split by space (In-X = observed node) and time (In-T =
/// frame on the sampled grid, frame % stride == 0).
class RegionAccumulator {
 public:
  RegionAccumulator(std::vector<bool> in_x, int stride, int frames);

  void add(int frame, int flat, double prediction, double truth);
  void add_field(int frame, const Matrix<float>& prediction, const Matrix<float>& truth);

  /// MSE of a region, nullopt when it holds no points.
  std::optional<double> mse(int ext_x, int ext_t) const;  // -1 marginalizes
  long count(int ext_x, int ext_t) const;
  std::vector<double> per_frame_mse() const;

 private:
  std::vector<bool> in_x_;
  int stride_;
  std::array<std::array<double, 2>, 2> sum_{};
  std::array<std::array<long, 2>, 2> n_{};
  std::vector<double> frame_sum_;
  std::vector<long> frame_n_;
};

struct EvalReport {
  std::string method;
  std::string split;
  int horizon_frames = 0;
  int trajectories = 0;
  nlohmann::json regions;  // key -> MSE x 1e-3, or null when the region is empty
  nlohmann::json counts;   // key -> points
  std::vector<double> per_frame;  // MSE x 1e-3
  nlohmann::json config;
  long rollout_calls = -1;  // model evaluations only

  nlohmann::json to_json() const;
  std::string per_frame_csv() const;
};

/// Region keys written to reports, in order.
const std::vector<std::string>& region_keys();

/// Produces the dense estimate of trajectory `index` over `frames` frames.
using Estimator = std::function<FieldEstimate(const pde::SparseTrajectory& traj, int frames)>;

EvalReport evaluate(const std::string& method, const pde::SparseDataset& ds, const std::string& split,
                    int horizon_frames, const Estimator& estimator);

/// Model estimate: encodes the sparse IC, rolls the anchors once and
/// queries every grid node at every frame. t = frame / T.
FieldEstimate model_estimate(const model::Surrogate<float>& m, const pde::SparseDataset& ds,
                             const pde::SparseTrajectory& traj, int delta_factor, int frames);

EvalReport evaluate_model(const model::Surrogate<float>& m, const pde::SparseDataset& ds, const std::string& split,
                          int delta_factor, int horizon_frames);

/// Spatial interpolation (Clough-Tocher cubic on the periodic square) of the
/// sparse ground truth at every frame.
FieldEstimate time_oracle(const pde::SparseDataset& ds, const pde::SparseTrajectory& traj, int frames);

/// Exact field on the sampled frames, cubic Lagrange in time through the
/// four nearest sampled frames elsewhere. Throws NotApplicable for stride 1.
FieldEstimate spatial_oracle(const pde::SparseDataset& ds, const pde::SparseTrajectory& traj, int frames);

/// Value of the periodic-nearest observed node at the nearest sampled frame.
FieldEstimate nearest_neighbor(const pde::SparseDataset& ds, const pde::SparseTrajectory& traj, int frames);

/// Cubic Lagrange weights for x given four distinct nodes.
std::array<double, 4> lagrange_weights(const std::array<double, 4>& nodes, double x);

struct TimingStats {
  double min = 0, mean = 0, max = 0;  // seconds
  nlohmann::json to_json() const { return {{"min", min}, {"mean", mean}, {"max", max}}; }
};

struct RuntimeProfile {
  std::vector<int> query_counts;
  std::vector<TimingStats> by_queries;           // full pipeline at t = 1
  std::vector<double> times;                     // requested t values
  std::vector<double> marginal_cost;             // seconds per extra query, per t
  std::vector<int> time_point_counts;            // number of distinct requested times
  std::vector<TimingStats> by_time_points;       // fixed total query count
  std::vector<long> rollout_steps_by_time_points;  // anchors rolled per evaluation
  int repetitions = 0;

  nlohmann::json to_json() const;
  /// Largest relative deviation of marginal_cost from its mean.
  double marginal_spread() const;
};

RuntimeProfile runtime_profile(const model::Surrogate<float>& m, const pde::SparseDataset& ds, int delta_factor,
                               const std::vector<int>& query_counts, const std::vector<double>& times,
                               const std::vector<int>& time_point_counts, int repetitions);

/// Per-node MSE over frames for one trajectory as "x,y,in_x,mse" rows.
std::string error_map_csv(const pde::SparseDataset& ds, const pde::SparseTrajectory& traj,
                          const FieldEstimate& estimate);

}  // namespace dualobs::eval
