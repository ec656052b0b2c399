#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "dualobs/core/matrix.hpp"
#include "dualobs/pde/navier.hpp"

namespace dualobs::pde {

/// Fixed set of observed grid nodes shared by every split, plus the
/// temporal subsampling of the training view.
struct SparseMask {
  int resolution = 0;
  std::vector<int> indices;  // flat iy * resolution + ix, strictly increasing
  double keep_ratio = 0.25;
  int temporal_stride = 1;
  std::uint64_t rng_seed = 0;

  /// Uniform draw without replacement of round(keep_ratio * resolution^2) nodes.
  static SparseMask sample(int resolution, double keep_ratio, int temporal_stride,
                           std::uint64_t seed);

  int size() const { return static_cast<int>(indices.size()); }
  /// Normalized (x, y) = (ix, iy) / resolution for each kept node, |X| x 2.
  Matrix<double> positions() const;
  std::vector<bool> membership() const;  // per flat grid index
  void validate() const;
};

class MaskError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct SparseTrajectory {
  std::uint64_t ic_seed = 0;
  int substeps = 0;
  Matrix<float> values;  // |T| x |X|: values at kept frames 0, s, 2s, ... and kept nodes
  std::vector<Matrix<float>> dense;  // val/test only: every simulated frame, (y, x)

  bool has_dense() const { return !dense.empty(); }
};

struct SplitCounts {
  int train = 256;
  int val = 64;
  int test = 64;
};

struct DatasetConfig {
  GridSpec grid{64, 1.0, 20};  // frames = training horizon T
  int sim_frames = 40;         // frames simulated for val/test (extrapolation reference)
  double nu = kDefaultViscosity;
  double ic_tau = 7.0;
  double ic_gamma = 2.5;
  double keep_ratio = 0.25;
  int temporal_stride = 1;
  SplitCounts counts;
  std::uint64_t seed = 0;

  void validate() const;
};

struct SparseDataset {
  DatasetConfig config;
  SparseMask mask;
  std::vector<SparseTrajectory> train, val, test;

  /// Frame indices in the sparse view: 0, stride, ..., < T.
  std::vector<int> kept_frames() const;
  const std::vector<SparseTrajectory>& split(const std::string& name) const;
};

/// Gathers the sparse view of each trajectory; dense references are kept
/// only for the evaluation splits. Values are rounded to float32 once, so
/// the sparse tensor equals the stored dense tensor at the mask.
SparseDataset make_sparse_dataset(const DatasetConfig& config, const SparseMask& mask,
                                  const std::vector<DenseTrajectory>& train,
                                  const std::vector<DenseTrajectory>& val,
                                  const std::vector<DenseTrajectory>& test);

/// Seed of trajectory `index` in split `split` (0 train, 1 val, 2 test).
std::uint64_t trajectory_seed(std::uint64_t master, int split, int index);

/// Simulates a trajectory with automatically chosen substeps, doubling them
/// when the flow outgrows the initial CFL estimate.
DenseTrajectory simulate_from_seed(std::uint64_t ic_seed, const DatasetConfig& config,
                                   int frames, int* substeps_used = nullptr);

/// Runs the full pipeline: mask, initial conditions, simulations, masking.
SparseDataset generate_dataset(const DatasetConfig& config);

void save_dataset(const SparseDataset& ds, const std::filesystem::path& dir);
SparseDataset load_dataset(const std::filesystem::path& dir);

inline constexpr int kDatasetSchemaVersion = 1;

}  // namespace dualobs::pde
