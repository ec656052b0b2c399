#include "run_config.hpp"

#include <cstdlib>
#include <fstream>

namespace dualobs::cli {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

void reject_unknown(const json& j, const json& allowed, const std::string& where) {
  if (!j.is_object()) throw SchemaError(where + " must be an object");
  for (const auto& [k, v] : j.items())
    if (!allowed.contains(k)) throw SchemaError("unknown key '" + where + "." + k + "'");
}

template <class F>
void get(const json& j, const char* key, F& field) {
  if (j.contains(key)) field = j.at(key).get<F>();
}

json dataset_json(const pde::DatasetConfig& c) {
  return {{"resolution", c.grid.resolution}, {"dt_star", c.grid.dt_star},
          {"frames", c.grid.frames},         {"sim_frames", c.sim_frames},
          {"nu", c.nu},                      {"ic_tau", c.ic_tau},
          {"ic_gamma", c.ic_gamma},          {"keep_ratio", c.keep_ratio},
          {"temporal_stride", c.temporal_stride}, {"train", c.counts.train},
          {"val", c.counts.val},             {"test", c.counts.test}};
}

void merge_dataset(pde::DatasetConfig& c, const json& j) {
  reject_unknown(j, dataset_json(c), "dataset");
  get(j, "resolution", c.grid.resolution);
  get(j, "dt_star", c.grid.dt_star);
  get(j, "frames", c.grid.frames);
  get(j, "sim_frames", c.sim_frames);
  get(j, "nu", c.nu);
  get(j, "ic_tau", c.ic_tau);
  get(j, "ic_gamma", c.ic_gamma);
  get(j, "keep_ratio", c.keep_ratio);
  get(j, "temporal_stride", c.temporal_stride);
  get(j, "train", c.counts.train);
  get(j, "val", c.counts.val);
  get(j, "test", c.counts.test);
}

json bounds_json(const BoundsOptions& b) {
  return {{"rollout",
           {{"systems", b.rollout.systems}, {"n_max", b.rollout.n_max}, {"ics", b.rollout.ics},
            {"L_min", b.rollout.L_min}, {"L_max", b.rollout.L_max}}},
          {"observer",
           {{"systems", b.observer.systems}, {"noise_draws", b.observer.noise_draws},
            {"times", b.observer.times}, {"t_max", b.observer.t_max}, {"noise_level", b.observer.noise_level}}},
          {"regimes",
           {{"large_values", b.regimes.large_values}, {"small_values", b.regimes.small_values},
            {"horizons", b.regimes.horizons}, {"delta", b.regimes.delta}}}};
}

void merge_bounds(BoundsOptions& b, const json& j) {
  const json allowed = bounds_json(b);
  reject_unknown(j, allowed, "bounds");
  if (j.contains("rollout")) {
    const json& p = j.at("rollout");
    reject_unknown(p, allowed.at("rollout"), "bounds.rollout");
    get(p, "systems", b.rollout.systems);
    get(p, "n_max", b.rollout.n_max);
    get(p, "ics", b.rollout.ics);
    get(p, "L_min", b.rollout.L_min);
    get(p, "L_max", b.rollout.L_max);
  }
  if (j.contains("observer")) {
    const json& p = j.at("observer");
    reject_unknown(p, allowed.at("observer"), "bounds.observer");
    get(p, "systems", b.observer.systems);
    get(p, "noise_draws", b.observer.noise_draws);
    get(p, "times", b.observer.times);
    get(p, "t_max", b.observer.t_max);
    get(p, "noise_level", b.observer.noise_level);
  }
  if (j.contains("regimes")) {
    const json& p = j.at("regimes");
    reject_unknown(p, allowed.at("regimes"), "bounds.regimes");
    get(p, "large_values", b.regimes.large_values);
    get(p, "small_values", b.regimes.small_values);
    get(p, "horizons", b.regimes.horizons);
    get(p, "delta", b.regimes.delta);
  }
}

}  // namespace

json RunConfig::to_json() const {
  json t = train.to_json();
  t.erase("seed");  // the global seed drives training
  return {{"seed", seed},
          {"dataset", dataset_json(dataset)},
          {"model", model.to_json()},
          {"train", t},
          {"eval", {{"split", eval.split}, {"horizon", eval.horizon}, {"error_maps", eval.error_maps}}},
          {"oracle", {{"kind", oracle.kind}, {"split", oracle.split}, {"horizon", oracle.horizon}}},
          {"profile",
           {{"query_counts", profile.query_counts},
            {"times", profile.times},
            {"time_point_counts", profile.time_point_counts},
            {"repetitions", profile.repetitions}}},
          {"bounds", bounds_json(bounds)}};
}

void RunConfig::merge(const json& j) {
  try {
    const json allowed = to_json();
    reject_unknown(j, allowed, "config");
    get(j, "seed", seed);
    if (j.contains("dataset")) merge_dataset(dataset, j.at("dataset"));
    if (j.contains("model")) {
      json m = model.to_json();
      m.update(j.at("model"));
      model = model::ModelConfig::from_json(m);
    }
    if (j.contains("train")) {
      reject_unknown(j.at("train"), allowed.at("train"), "train");
      json t = train.to_json();
      t.update(j.at("train"));
      train = train::TrainConfig::from_json(t);
    }
    if (j.contains("eval")) {
      const json& e = j.at("eval");
      reject_unknown(e, allowed.at("eval"), "eval");
      get(e, "split", eval.split);
      get(e, "horizon", eval.horizon);
      get(e, "error_maps", eval.error_maps);
    }
    if (j.contains("oracle")) {
      const json& o = j.at("oracle");
      reject_unknown(o, allowed.at("oracle"), "oracle");
      get(o, "kind", oracle.kind);
      get(o, "split", oracle.split);
      get(o, "horizon", oracle.horizon);
    }
    if (j.contains("profile")) {
      const json& p = j.at("profile");
      reject_unknown(p, allowed.at("profile"), "profile");
      get(p, "query_counts", profile.query_counts);
      get(p, "times", profile.times);
      get(p, "time_point_counts", profile.time_point_counts);
      get(p, "repetitions", profile.repetitions);
    }
    if (j.contains("bounds")) merge_bounds(bounds, j.at("bounds"));
  } catch (const json::exception& e) {
    throw SchemaError(std::string("config: ") + e.what());
  } catch (const SchemaError&) {
    throw;
  } catch (const std::invalid_argument& e) {
    throw SchemaError(e.what());
  }
  validate();
}

void RunConfig::validate() const {
  try {
    pde::DatasetConfig d = dataset;
    d.seed = seed;
    d.validate();
    model.validate();
    train::TrainConfig t = train;
    t.seed = seed;
    t.validate();
  } catch (const std::invalid_argument& e) {
    throw SchemaError(e.what());
  }
  for (const auto* s : {&eval.split, &oracle.split})
    if (*s != "train" && *s != "val" && *s != "test") throw SchemaError("unknown split '" + *s + "'");
  if (oracle.kind != "time" && oracle.kind != "spatial" && oracle.kind != "nn")
    throw SchemaError("oracle.kind must be time, spatial or nn");
  parse_horizon(eval.horizon, 1);
  parse_horizon(oracle.horizon, 1);
  if (profile.query_counts.size() < 2) throw SchemaError("profile.query_counts needs two or more entries");
  for (int q : profile.query_counts)
    if (q < 1) throw SchemaError("profile.query_counts must be positive");
  for (double t : profile.times)
    if (!(t >= 0.0)) throw SchemaError("profile.times must be >= 0");
  for (int n : profile.time_point_counts)
    if (n < 1) throw SchemaError("profile.time_point_counts must be positive");
  if (profile.repetitions < 1) throw SchemaError("profile.repetitions must be >= 1");
  const auto& p1 = bounds.rollout;
  if (p1.systems < 1 || p1.n_max < 1 || p1.ics < 1 || !(p1.L_min > 0) || !(p1.L_max >= p1.L_min))
    throw SchemaError("bounds.rollout: counts must be >= 1 and 0 < L_min <= L_max");
  const auto& p2 = bounds.observer;
  if (p2.systems < 1 || p2.noise_draws < 1 || p2.times < 1 || !(p2.t_max >= 0) || !(p2.noise_level >= 0))
    throw SchemaError("bounds.observer: counts must be >= 1, t_max and noise_level >= 0");
  if (bounds.regimes.horizons.empty() || !(bounds.regimes.delta > 0))
    throw SchemaError("bounds.regimes: need horizons and delta > 0");
}

RunConfig load_run_config(const std::optional<fs::path>& file) {
  RunConfig c;
  if (!file) return c;
  std::ifstream in(*file);
  if (!in) throw SchemaError("cannot read config " + file->string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw SchemaError(file->string() + ": " + e.what());
  }
  c.merge(j);
  return c;
}

int parse_horizon(const std::string& spec, int train_frames) {
  if (spec == "1x") return train_frames;
  if (spec == "2x") return 2 * train_frames;
  std::size_t pos = 0;
  int frames = 0;
  try {
    frames = std::stoi(spec, &pos);
  } catch (const std::exception&) {
    pos = 0;
  }
  if (pos != spec.size() || pos == 0 || frames < 1)
    throw SchemaError("horizon must be 1x, 2x or a positive frame count, got '" + spec + "'");
  return frames;
}

namespace {
fs::path output_root() {
  const char* env = std::getenv(kOutputRootEnv);
  return env && *env ? fs::path(env) : fs::current_path();
}
}  // namespace

fs::path resolve_output(const std::string& out, const std::string& fallback) {
  const fs::path p = out.empty() ? fs::path(fallback) : fs::path(out);
  return p.is_absolute() ? p : output_root() / p;
}

fs::path resolve_input(const std::string& path) {
  const fs::path p(path);
  if (p.is_absolute() || fs::exists(p)) return p;
  const fs::path under = output_root() / p;
  return fs::exists(under) ? under : p;
}

}  // namespace dualobs::cli
