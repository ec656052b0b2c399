#pragma once

// Run configuration shared by every subcommand: one JSON document whose
// sections mirror the module configs. Unknown keys are rejected anywhere.
// Values come from defaults, then the file, then command-line flags.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "dualobs/model/surrogate.hpp"
#include "dualobs/pde/dataset.hpp"
#include "dualobs/theory/bounds.hpp"
#include "dualobs/train/trainer.hpp"

namespace dualobs::cli {

/// Environment variable naming the root that relative output paths live under.
inline constexpr const char* kOutputRootEnv = "DUALOBS_OUTPUT_ROOT";

class SchemaError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct EvalOptions {
  std::string split = "test";
  std::string horizon = "1x";  // "1x", "2x" or a frame count
  bool error_maps = false;
};

struct OracleOptions {
  std::string kind = "time";  // time, spatial, nn
  std::string split = "test";
  std::string horizon = "1x";
};

struct ProfileOptions {
  std::vector<int> query_counts{256, 1024, 4096};
  std::vector<double> times{0.1, 0.5, 1.0};
  std::vector<int> time_point_counts{1, 4, 16};
  int repetitions = 5;
};

struct BoundsOptions {
  theory::RolloutSuiteConfig rollout;
  theory::ObserverSuiteConfig observer;
  theory::RegimeConfig regimes;
};

struct RunConfig {
  std::uint64_t seed = 0;
  pde::DatasetConfig dataset;
  model::ModelConfig model;
  train::TrainConfig train;
  EvalOptions eval;
  OracleOptions oracle;
  ProfileOptions profile;
  BoundsOptions bounds;

  /// Applies `j` over the current values; throws SchemaError on unknown
  /// keys, wrong types or values the modules reject.
  void merge(const nlohmann::json& j);
  void validate() const;
  nlohmann::json to_json() const;
};

RunConfig load_run_config(const std::optional<std::filesystem::path>& file);

/// Frames covered by a horizon spec relative to the training horizon T.
int parse_horizon(const std::string& spec, int train_frames);

/// Output directory: `out` if absolute; otherwise under $DUALOBS_OUTPUT_ROOT
/// (or the working directory). Defaults to `fallback` when `out` is empty.
std::filesystem::path resolve_output(const std::string& out, const std::string& fallback);

/// Input path as given, or under the output root if it only exists there.
std::filesystem::path resolve_input(const std::string& path);

}  // namespace dualobs::cli
