#include "dualobs/pde/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <nlohmann/json.hpp>

#include "dualobs/core/rng.hpp"
#include "dualobs/core/tensor_io.hpp"

namespace dualobs::pde {
namespace {

using nlohmann::json;
namespace fs = std::filesystem;

constexpr const char* kSplitNames[3] = {"train", "val", "test"};

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

json config_to_json(const DatasetConfig& c) {
  return {{"resolution", c.grid.resolution},
          {"dt_star", c.grid.dt_star},
          {"frames", c.grid.frames},
          {"sim_frames", c.sim_frames},
          {"nu", c.nu},
          {"ic_tau", c.ic_tau},
          {"ic_gamma", c.ic_gamma},
          {"keep_ratio", c.keep_ratio},
          {"temporal_stride", c.temporal_stride},
          {"counts", {{"train", c.counts.train}, {"val", c.counts.val}, {"test", c.counts.test}}},
          {"seed", c.seed}};
}

DatasetConfig config_from_json(const json& j) {
  DatasetConfig c;
  c.grid.resolution = j.at("resolution").get<int>();
  c.grid.dt_star = j.at("dt_star").get<double>();
  c.grid.frames = j.at("frames").get<int>();
  c.sim_frames = j.at("sim_frames").get<int>();
  c.nu = j.at("nu").get<double>();
  c.ic_tau = j.at("ic_tau").get<double>();
  c.ic_gamma = j.at("ic_gamma").get<double>();
  c.keep_ratio = j.at("keep_ratio").get<double>();
  c.temporal_stride = j.at("temporal_stride").get<int>();
  c.counts.train = j.at("counts").at("train").get<int>();
  c.counts.val = j.at("counts").at("val").get<int>();
  c.counts.test = j.at("counts").at("test").get<int>();
  c.seed = j.at("seed").get<std::uint64_t>();
  return c;
}

Matrix<float> to_float(const Field& f) { return cast<float>(f); }

void write_text(const fs::path& p, const std::string& s) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + p.string());
  out << s;
}

}  // namespace

// ---- mask ---------------------------------------------------------------------

SparseMask SparseMask::sample(int resolution, double keep_ratio, int temporal_stride,
                              std::uint64_t seed) {
  SparseMask m;
  m.resolution = resolution;
  m.keep_ratio = keep_ratio;
  m.temporal_stride = temporal_stride;
  m.rng_seed = seed;
  if (!(keep_ratio > 0.0 && keep_ratio <= 1.0)) throw MaskError("keep_ratio must be in (0, 1]");
  const int total = resolution * resolution;
  const int count = static_cast<int>(std::lround(keep_ratio * total));
  Rng rng(seed);
  m.indices = rng.choose(total, count);
  std::sort(m.indices.begin(), m.indices.end());
  m.validate();
  return m;
}

Matrix<double> SparseMask::positions() const {
  Matrix<double> p(size(), 2);
  for (int i = 0; i < size(); ++i) {
    p(i, 0) = static_cast<double>(indices[i] % resolution) / resolution;
    p(i, 1) = static_cast<double>(indices[i] / resolution) / resolution;
  }
  return p;
}

std::vector<bool> SparseMask::membership() const {
  std::vector<bool> in(static_cast<std::size_t>(resolution) * resolution, false);
  for (int i : indices) in[static_cast<std::size_t>(i)] = true;
  return in;
}

void SparseMask::validate() const {
  if (resolution <= 0) throw MaskError("mask resolution must be positive");
  if (temporal_stride < 1) throw MaskError("temporal_stride must be >= 1");
  if (!(keep_ratio > 0.0 && keep_ratio <= 1.0)) throw MaskError("keep_ratio must be in (0, 1]");
  const int total = resolution * resolution;
  if (static_cast<int>(indices.size()) != static_cast<int>(std::lround(keep_ratio * total)))
    throw MaskError("mask size does not equal round(keep_ratio * resolution^2)");
  for (std::size_t i = 0; i < indices.size(); ++i) {
    if (indices[i] < 0 || indices[i] >= total) throw MaskError("mask index off the grid");
    if (i > 0 && indices[i] <= indices[i - 1]) throw MaskError("mask indices must be unique and sorted");
  }
}

// ---- config -------------------------------------------------------------------

void DatasetConfig::validate() const {
  grid.validate();
  if (sim_frames < grid.frames) throw std::invalid_argument("sim_frames must be >= frames");
  if (!(nu > 0.0)) throw std::invalid_argument("nu must be > 0");
  if (!(keep_ratio > 0.0 && keep_ratio <= 1.0)) throw std::invalid_argument("keep_ratio must be in (0, 1]");
  if (temporal_stride < 1) throw std::invalid_argument("temporal_stride must be >= 1");
  if (grid.frames % temporal_stride != 0)
    throw std::invalid_argument("temporal_stride must divide frames");
  if (counts.train < 0 || counts.val < 0 || counts.test < 0)
    throw std::invalid_argument("split counts must be >= 0");
  if (std::lround(keep_ratio * grid.resolution * grid.resolution) < 3)
    throw std::invalid_argument("mask must keep at least 3 nodes");
}

std::vector<int> SparseDataset::kept_frames() const {
  std::vector<int> f;
  for (int t = 0; t < config.grid.frames; t += config.temporal_stride) f.push_back(t);
  return f;
}

const std::vector<SparseTrajectory>& SparseDataset::split(const std::string& name) const {
  if (name == "train") return train;
  if (name == "val") return val;
  if (name == "test") return test;
  throw std::invalid_argument("unknown split '" + name + "'");
}

// ---- construction -------------------------------------------------------------

std::uint64_t trajectory_seed(std::uint64_t master, int split, int index) {
  return splitmix64(splitmix64(master) ^ splitmix64(static_cast<std::uint64_t>(split) << 32 |
                                                    static_cast<std::uint32_t>(index)));
}

SparseDataset make_sparse_dataset(const DatasetConfig& config, const SparseMask& mask,
                                  const std::vector<DenseTrajectory>& train,
                                  const std::vector<DenseTrajectory>& val,
                                  const std::vector<DenseTrajectory>& test) {
  config.validate();
  mask.validate();
  if (mask.resolution != config.grid.resolution)
    throw MaskError("mask resolution " + std::to_string(mask.resolution) +
                    " does not match grid resolution " + std::to_string(config.grid.resolution));
  if (mask.temporal_stride != config.temporal_stride)
    throw MaskError("mask temporal stride does not match dataset config");

  SparseDataset ds;
  ds.config = config;
  ds.mask = mask;
  const auto frames = ds.kept_frames();
  auto convert = [&](const DenseTrajectory& d, bool keep_dense) {
    if (d.grid.resolution != config.grid.resolution)
      throw MaskError("trajectory resolution does not match the mask");
    const int need = keep_dense ? config.sim_frames : config.grid.frames;
    if (static_cast<int>(d.frames.size()) < need)
      throw std::invalid_argument("trajectory has " + std::to_string(d.frames.size()) +
                                  " frames, need " + std::to_string(need));
    SparseTrajectory s;
    s.ic_seed = d.ic_seed;
    std::vector<Matrix<float>> dense;
    for (int t = 0; t < need; ++t) dense.push_back(to_float(d.frames[static_cast<std::size_t>(t)]));
    s.values = Matrix<float>(static_cast<int>(frames.size()), mask.size());
    for (std::size_t r = 0; r < frames.size(); ++r) {
      const auto& f = dense[static_cast<std::size_t>(frames[r])];
      for (int i = 0; i < mask.size(); ++i) s.values(static_cast<int>(r), i) = f.data()[mask.indices[i]];
    }
    if (keep_dense) s.dense = std::move(dense);
    return s;
  };
  for (const auto& d : train) ds.train.push_back(convert(d, false));
  for (const auto& d : val) ds.val.push_back(convert(d, true));
  for (const auto& d : test) ds.test.push_back(convert(d, true));
  return ds;
}

DenseTrajectory simulate_from_seed(std::uint64_t ic_seed, const DatasetConfig& config, int frames,
                                   int* substeps_used) {
  GridSpec grid = config.grid;
  grid.frames = frames;
  const Field ic = sample_initial_condition(ic_seed, grid, config.ic_tau, config.ic_gamma);
  const Field force = default_forcing(grid);
  int substeps = suggest_substeps(ic, config.nu, grid);
  for (int attempt = 0; attempt < 8; ++attempt) {
    try {
      auto traj = simulate_navier(ic, config.nu, force, grid, substeps);
      traj.ic_seed = ic_seed;
      if (substeps_used) *substeps_used = substeps;
      return traj;
    } catch (const StepSizeError&) {
      substeps *= 2;
    }
  }
  throw std::runtime_error("simulation for seed " + std::to_string(ic_seed) +
                           " did not find a stable step size");
}

SparseDataset generate_dataset(const DatasetConfig& config) {
  config.validate();
  const SparseMask mask = SparseMask::sample(config.grid.resolution, config.keep_ratio,
                                             config.temporal_stride, trajectory_seed(config.seed, 3, 0));
  std::vector<DenseTrajectory> splits[3];
  std::vector<int> substeps[3];
  const int counts[3] = {config.counts.train, config.counts.val, config.counts.test};
  for (int s = 0; s < 3; ++s) {
    const int frames = s == 0 ? config.grid.frames : config.sim_frames;
    for (int k = 0; k < counts[s]; ++k) {
      int used = 0;
      splits[s].push_back(simulate_from_seed(trajectory_seed(config.seed, s, k), config, frames, &used));
      substeps[s].push_back(used);
    }
  }
  SparseDataset ds = make_sparse_dataset(config, mask, splits[0], splits[1], splits[2]);
  for (std::size_t k = 0; k < ds.train.size(); ++k) ds.train[k].substeps = substeps[0][k];
  for (std::size_t k = 0; k < ds.val.size(); ++k) ds.val[k].substeps = substeps[1][k];
  for (std::size_t k = 0; k < ds.test.size(); ++k) ds.test[k].substeps = substeps[2][k];
  return ds;
}

// ---- serialization ------------------------------------------------------------

void save_dataset(const SparseDataset& ds, const fs::path& dir) {
  fs::create_directories(dir);
  json manifest;
  manifest["schema_version"] = kDatasetSchemaVersion;
  manifest["config"] = config_to_json(ds.config);
  manifest["solver"] = {{"method", "pseudo-spectral vorticity, RK4, 2/3-rule dealiasing"},
                        {"fft", "FFTW3 r2c/c2r, FFTW_ESTIMATE plans"},
                        {"precision", "float64 integration, float32 storage, round-to-nearest"},
                        {"forcing", kDefaultForcingId},
                        {"max_cfl", kMaxCfl}};
  manifest["mask"] = {{"keep_ratio", ds.mask.keep_ratio},
                      {"temporal_stride", ds.mask.temporal_stride},
                      {"rng_seed", ds.mask.rng_seed},
                      {"count", ds.mask.size()},
                      {"file", "mask.bin"}};
  const std::vector<SparseTrajectory>* splits[3] = {&ds.train, &ds.val, &ds.test};
  const int frames = static_cast<int>(ds.kept_frames().size());
  for (int s = 0; s < 3; ++s) {
    const auto& items = *splits[s];
    std::vector<std::uint64_t> seeds;
    std::vector<int> subs;
    TensorMap tensors;
    std::vector<float> sparse;
    std::vector<float> dense;
    const bool with_dense = s > 0;
    for (const auto& it : items) {
      seeds.push_back(it.ic_seed);
      subs.push_back(it.substeps);
      sparse.insert(sparse.end(), it.values.storage().begin(), it.values.storage().end());
      if (with_dense) {
        if (static_cast<int>(it.dense.size()) != ds.config.sim_frames)
          throw std::invalid_argument(std::string(kSplitNames[s]) + " item lacks its dense reference");
        for (const auto& f : it.dense) dense.insert(dense.end(), f.storage().begin(), f.storage().end());
      } else if (it.has_dense()) {
        throw std::invalid_argument("train split must not store dense fields");
      }
    }
    const auto k = static_cast<std::int64_t>(items.size());
    tensors["sparse"] = Tensor::floats({k, frames, ds.mask.size()}, std::move(sparse));
    if (with_dense) {
      const std::int64_t r = ds.config.grid.resolution;
      tensors["dense"] = Tensor::floats({k, ds.config.sim_frames, r, r}, std::move(dense));
    }
    const std::string file = std::string(kSplitNames[s]) + ".bin";
    write_tensors(dir / file, tensors);
    manifest["splits"][kSplitNames[s]] = {
        {"count", items.size()}, {"file", file}, {"dense", with_dense}, {"ic_seeds", seeds}, {"substeps", subs}};
  }
  TensorMap mask;
  mask["index"] = Tensor::ints({ds.mask.size()}, std::vector<std::int32_t>(ds.mask.indices.begin(), ds.mask.indices.end()));
  write_tensors(dir / "mask.bin", mask);
  write_text(dir / "manifest.json", manifest.dump(2) + "\n");
}

SparseDataset load_dataset(const fs::path& dir) {
  std::ifstream in(dir / "manifest.json");
  if (!in) throw std::runtime_error("no manifest.json in " + dir.string());
  json manifest;
  try {
    manifest = json::parse(in);
  } catch (const json::exception& e) {
    throw FormatError(dir.string() + "/manifest.json: " + e.what());
  }
  if (manifest.value("schema_version", -1) != kDatasetSchemaVersion)
    throw FormatError(dir.string() + ": unsupported dataset schema version");
  SparseDataset ds;
  ds.config = config_from_json(manifest.at("config"));
  ds.config.validate();

  const auto mask_tensors = read_tensors(dir / "mask.bin");
  const auto& idx = require_tensor(mask_tensors, "index", Tensor::DType::kInt32, 1, "mask.bin");
  ds.mask.resolution = ds.config.grid.resolution;
  ds.mask.indices.assign(idx.i32.begin(), idx.i32.end());
  ds.mask.keep_ratio = manifest.at("mask").at("keep_ratio").get<double>();
  ds.mask.temporal_stride = manifest.at("mask").at("temporal_stride").get<int>();
  ds.mask.rng_seed = manifest.at("mask").at("rng_seed").get<std::uint64_t>();
  ds.mask.validate();

  const int frames = static_cast<int>(ds.kept_frames().size());
  std::vector<SparseTrajectory>* splits[3] = {&ds.train, &ds.val, &ds.test};
  for (int s = 0; s < 3; ++s) {
    const auto& meta = manifest.at("splits").at(kSplitNames[s]);
    const auto seeds = meta.at("ic_seeds").get<std::vector<std::uint64_t>>();
    const auto subs = meta.at("substeps").get<std::vector<int>>();
    const std::string file = meta.at("file").get<std::string>();
    const auto tensors = read_tensors(dir / file);
    const auto& sparse = require_tensor(tensors, "sparse", Tensor::DType::kFloat32, 3, file);
    const auto k = static_cast<std::int64_t>(seeds.size());
    if (sparse.dim(0) != k || sparse.dim(1) != frames || sparse.dim(2) != ds.mask.size())
      throw FormatError(file + ": sparse tensor shape does not match the manifest");
    const Tensor* dense = nullptr;
    if (meta.at("dense").get<bool>()) {
      dense = &require_tensor(tensors, "dense", Tensor::DType::kFloat32, 4, file);
      const int r = ds.config.grid.resolution;
      if (dense->dim(0) != k || dense->dim(1) != ds.config.sim_frames || dense->dim(2) != r ||
          dense->dim(3) != r)
        throw FormatError(file + ": dense tensor shape does not match the manifest");
    }
    const std::size_t per = static_cast<std::size_t>(frames) * ds.mask.size();
    for (std::int64_t i = 0; i < k; ++i) {
      SparseTrajectory t;
      t.ic_seed = seeds[static_cast<std::size_t>(i)];
      t.substeps = subs.at(static_cast<std::size_t>(i));
      auto begin = sparse.f32.begin() + static_cast<std::ptrdiff_t>(per * i);
      t.values = Matrix<float>(frames, ds.mask.size(), std::vector<float>(begin, begin + static_cast<std::ptrdiff_t>(per)));
      if (dense) {
        const int r = ds.config.grid.resolution;
        const std::size_t fsz = static_cast<std::size_t>(r) * r;
        for (int f = 0; f < ds.config.sim_frames; ++f) {
          auto fb = dense->f32.begin() +
                    static_cast<std::ptrdiff_t>((static_cast<std::size_t>(i) * ds.config.sim_frames + f) * fsz);
          t.dense.emplace_back(r, r, std::vector<float>(fb, fb + static_cast<std::ptrdiff_t>(fsz)));
        }
      }
      splits[s]->push_back(std::move(t));
    }
  }
  return ds;
}

}  // namespace dualobs::pde
