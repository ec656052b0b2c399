#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>

#include "dualobs/eval/evaluate.hpp"
#include "dualobs/theory/bounds.hpp"
#include "plot.hpp"
#include "run_config.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace dualobs::cli {
namespace {

struct Common {
  std::optional<std::uint64_t> seed;
  std::string config;
  std::string out;
};

void add_common(CLI::App* app, Common& c) {
  app->add_option("--seed", c.seed, "Global seed");
  app->add_option("--config", c.config, "JSON run configuration");
  app->add_option("--out", c.out, "Output directory (relative paths go under $" + std::string(kOutputRootEnv) + ")");
}

template <class T>
void override(const std::optional<T>& flag, T& field) {
  if (flag) field = *flag;
}

RunConfig resolve_config(const Common& c) {
  RunConfig cfg = load_run_config(c.config.empty() ? std::nullopt : std::optional<fs::path>(c.config));
  override(c.seed, cfg.seed);
  return cfg;
}

void write_file(const fs::path& p, const std::string& text) {
  fs::create_directories(p.parent_path());
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + p.string());
  out << text;
}

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + p.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

pde::SparseDataset load_data(const std::string& path) {
  if (path.empty()) throw SchemaError("--data is required");
  return pde::load_dataset(resolve_input(path));
}

/// A checkpoint directory, or a training output holding best/ and final/.
fs::path checkpoint_dir(const std::string& path) {
  const fs::path p = resolve_input(path);
  if (fs::exists(p / "checkpoint.json")) return p;
  for (const char* sub : {"best", "final"})
    if (fs::exists(p / sub / "checkpoint.json")) return p / sub;
  throw std::runtime_error("no checkpoint found at " + p.string());
}

int delta_factor_of(const model::Checkpoint& ck, int fallback) {
  if (ck.meta.contains("train") && ck.meta.at("train").contains("delta_factor"))
    return ck.meta.at("train").at("delta_factor").get<int>();
  return fallback;
}

void write_report(const fs::path& dir, const eval::EvalReport& r) {
  write_file(dir / "report.json", r.to_json().dump(2) + "\n");
  write_file(dir / "per_frame.csv", r.per_frame_csv());
}

void print_regions(const eval::EvalReport& r) {
  std::printf("%s on %s (%d trajectories, %d frames), MSE x 1e-3:\n", r.method.c_str(), r.split.c_str(),
              r.trajectories, r.horizon_frames);
  for (const auto& k : eval::region_keys()) {
    const json& v = r.regions.at(k);
    if (v.is_null()) std::printf("  %-12s -\n", k.c_str());
    else std::printf("  %-12s %.6g\n", k.c_str(), v.get<double>());
  }
}

// ---- commands ---------------------------------------------------------------

struct GenDataFlags {
  std::optional<int> resolution, frames, sim_frames, stride, train, val, test;
  std::optional<double> keep;
};

int cmd_gen_data(const Common& c, const GenDataFlags& f) {
  RunConfig cfg = resolve_config(c);
  auto& d = cfg.dataset;
  override(f.resolution, d.grid.resolution);
  override(f.frames, d.grid.frames);
  override(f.sim_frames, d.sim_frames);
  override(f.stride, d.temporal_stride);
  override(f.keep, d.keep_ratio);
  override(f.train, d.counts.train);
  override(f.val, d.counts.val);
  override(f.test, d.counts.test);
  cfg.validate();
  d.seed = cfg.seed;

  const fs::path out = resolve_output(c.out, "dataset");
  const pde::SparseDataset ds = pde::generate_dataset(d);
  pde::save_dataset(ds, out);
  std::printf("dataset %s\n  grid %dx%d, T = %d frames (%d simulated for val/test), stride %d\n", out.c_str(),
              d.grid.resolution, d.grid.resolution, d.grid.frames, d.sim_frames, d.temporal_stride);
  std::printf("  observed nodes %d of %d (keep %.3g), trajectories train %zu / val %zu / test %zu, seed %llu\n",
              ds.mask.size(), d.grid.resolution * d.grid.resolution, d.keep_ratio, ds.train.size(),
              ds.val.size(), ds.test.size(), static_cast<unsigned long long>(d.seed));
  return 0;
}

struct TrainFlags {
  std::string data;
  std::optional<int> epochs, batch, layers, width, heads, delta_factor, queries, val_queries;
  std::optional<double> lr;
  std::optional<std::string> aggregator;
};

int cmd_train(const Common& c, const TrainFlags& f) {
  RunConfig cfg = resolve_config(c);
  override(f.epochs, cfg.train.epochs);
  override(f.batch, cfg.train.batch);
  override(f.delta_factor, cfg.train.delta_factor);
  override(f.queries, cfg.train.n_queries);
  override(f.val_queries, cfg.train.val_queries);
  override(f.lr, cfg.train.lr);
  override(f.layers, cfg.model.layers);
  override(f.width, cfg.model.width);
  override(f.heads, cfg.model.heads);
  if (f.aggregator) {
    try {
      cfg.model.aggregator = model::parse_aggregator(*f.aggregator);
    } catch (const std::invalid_argument& e) {
      throw SchemaError(e.what());
    }
  }
  cfg.train.seed = cfg.seed;
  cfg.validate();

  const pde::SparseDataset ds = load_data(f.data);
  const fs::path out = resolve_output(c.out, "train");
  fs::create_directories(out);
  write_file(out / "run_config.json", cfg.to_json().dump(2) + "\n");

  model::Surrogate<float> m(cfg.model, cfg.seed);
  const auto result = train::train(m, ds, cfg.train, out, [](const train::EpochMetrics& e) {
    std::printf("epoch %5d  lr %.3g  l_cont %.5f  l_dyn %.5f  |g| %.3f", e.epoch, e.lr, e.l_continuous,
                e.l_dynamics, e.grad_norm);
    if (e.val_ext_x >= 0) std::printf("  val_ext_x %.5f", e.val_ext_x);
    std::printf("\n");
    std::fflush(stdout);
  });
  std::printf("checkpoints in %s (best epoch %d, val_ext_x %.5f)\n", out.c_str(), result.best_epoch,
              result.best_val);
  return 0;
}

struct EvalFlags {
  std::string checkpoint, data;
  std::optional<std::string> split, horizon;
  bool error_maps = false;
};

int cmd_eval(const Common& c, const EvalFlags& f) {
  RunConfig cfg = resolve_config(c);
  override(f.split, cfg.eval.split);
  override(f.horizon, cfg.eval.horizon);
  if (f.error_maps) cfg.eval.error_maps = true;
  cfg.validate();

  const pde::SparseDataset ds = load_data(f.data);
  const fs::path ckdir = checkpoint_dir(f.checkpoint);
  const model::Checkpoint ck = model::read_checkpoint(ckdir);
  model::Surrogate<float> m(ck.config, 0);
  m.load_tensors(ck.tensors);
  const int k = delta_factor_of(ck, cfg.train.delta_factor);
  const int horizon = parse_horizon(cfg.eval.horizon, ds.config.grid.frames);

  eval::EvalReport r = eval::evaluate_model(m, ds, cfg.eval.split, k, horizon);
  r.config["checkpoint"] = fs::absolute(ckdir).lexically_normal().string();
  const fs::path out = resolve_output(c.out, "eval");
  write_report(out, r);
  if (cfg.eval.error_maps) {
    const auto& traj = ds.split(cfg.eval.split).front();
    const auto est = eval::model_estimate(m, ds, traj, k, horizon);
    write_file(out / "error_map.csv", eval::error_map_csv(ds, traj, est));
  }
  print_regions(r);
  return 0;
}

struct OracleFlags {
  std::string data;
  std::optional<std::string> kind, split, horizon;
};

int cmd_oracle(const Common& c, const OracleFlags& f) {
  RunConfig cfg = resolve_config(c);
  override(f.kind, cfg.oracle.kind);
  override(f.split, cfg.oracle.split);
  override(f.horizon, cfg.oracle.horizon);
  cfg.validate();

  const pde::SparseDataset ds = load_data(f.data);
  const int horizon = parse_horizon(cfg.oracle.horizon, ds.config.grid.frames);
  eval::Estimator est;
  std::string method;
  if (cfg.oracle.kind == "time") {
    method = "time_oracle";
    est = [&](const pde::SparseTrajectory& t, int n) { return eval::time_oracle(ds, t, n); };
  } else if (cfg.oracle.kind == "spatial") {
    method = "spatial_oracle";
    est = [&](const pde::SparseTrajectory& t, int n) { return eval::spatial_oracle(ds, t, n); };
  } else {
    method = "nearest_neighbor";
    est = [&](const pde::SparseTrajectory& t, int n) { return eval::nearest_neighbor(ds, t, n); };
  }
  const eval::EvalReport r = eval::evaluate(method, ds, cfg.oracle.split, horizon, est);
  write_report(resolve_output(c.out, "oracle-" + cfg.oracle.kind), r);
  print_regions(r);
  return 0;
}

struct BoundsFlags {
  std::optional<int> systems;
  std::optional<double> noise;
};

int cmd_bounds(const Common& c, const BoundsFlags& f) {
  RunConfig cfg = resolve_config(c);
  if (f.systems) cfg.bounds.rollout.systems = cfg.bounds.observer.systems = *f.systems;
  override(f.noise, cfg.bounds.observer.noise_level);
  cfg.bounds.rollout.seed = cfg.seed;
  cfg.bounds.observer.seed = cfg.seed;
  cfg.validate();

  const theory::RolloutSuiteSummary p1 = theory::run_rollout_suite(cfg.bounds.rollout);
  const theory::RegimeReport reg = theory::compare_regimes(cfg.bounds.regimes);
  const theory::ObserverSuiteSummary p2 = theory::run_observer_suite(cfg.bounds.observer);
  const bool ok = p1.passed() && reg.passed() && p2.passed();

  const fs::path out = resolve_output(c.out, "bounds");
  const json report = {{"rollout", p1.to_json()}, {"regimes", reg.to_json()}, {"observer", p2.to_json()}, {"passed", ok}};
  write_file(out / "bounds.json", report.dump(2) + "\n");
  write_file(out / "rollout_curves.csv", p1.curves_csv());
  write_file(out / "regimes.csv", reg.csv());
  write_file(out / "observer_curves.csv", p2.curves_csv());
  write_file(out / "observer_alpha.csv", p2.alpha_csv());

  std::printf("latent vs re-projecting rollout: %d systems, L in [%.3g, %.3g], %d checks, violations %d / %d\n",
              p1.config.systems, p1.L_lo, p1.L_hi, p1.checks, p1.violations_latent, p1.violations_reproject);
  std::printf("regimes: min K2/K1 (large) %.4g, max |K1|/delta (small) %.3g\n", reg.min_ratio_large,
              reg.max_k1_over_delta_small);
  std::printf("observer reconstruction: %d trials, %d checks, violations %d, noise-free error %.3g, "
              "alpha non-monotone %d\n",
              p2.trials, p2.checks, p2.violations, p2.max_exact_error, p2.non_monotone);
  std::printf("%s\n", ok ? "all bounds hold" : "BOUND CHECK FAILED");
  return ok ? 0 : 1;
}

struct ProfileFlags {
  std::string checkpoint, data;
  std::optional<int> repetitions;
};

int cmd_profile(const Common& c, const ProfileFlags& f) {
  RunConfig cfg = resolve_config(c);
  override(f.repetitions, cfg.profile.repetitions);
  cfg.validate();

  const pde::SparseDataset ds = load_data(f.data);
  std::optional<model::Checkpoint> ck;
  if (!f.checkpoint.empty()) ck = model::read_checkpoint(checkpoint_dir(f.checkpoint));
  // Cost does not depend on the weights, so a fresh model is profiled when
  // no checkpoint is given.
  model::Surrogate<float> m(ck ? ck->config : cfg.model, cfg.seed);
  if (ck) m.load_tensors(ck->tensors);
  const int k = ck ? delta_factor_of(*ck, cfg.train.delta_factor) : cfg.train.delta_factor;

  const eval::RuntimeProfile p = eval::runtime_profile(m, ds, k, cfg.profile.query_counts, cfg.profile.times,
                                                       cfg.profile.time_point_counts, cfg.profile.repetitions);
  const fs::path out = resolve_output(c.out, "profile");
  json j = p.to_json();
  j["model"] = m.config().to_json();
  j["delta_factor"] = k;
  write_file(out / "profile.json", j.dump(2) + "\n");
  write_file(out / "runtime.csv", series_csv(runtime_series(j)));
  write_file(out / "rollout.csv", series_csv(rollout_series(j)));

  for (std::size_t i = 0; i < p.times.size(); ++i)
    std::printf("t = %.3g: %.4g us per additional query\n", p.times[i], 1e6 * p.marginal_cost[i]);
  std::printf("marginal cost spread %.1f%%\n", 100.0 * p.marginal_spread());
  for (std::size_t i = 0; i < p.time_point_counts.size(); ++i)
    std::printf("%d time points: %ld rollout steps\n", p.time_point_counts[i], p.rollout_steps_by_time_points[i]);
  return 0;
}

int cmd_plot(const Common& c, const std::vector<std::string>& inputs) {
  resolve_config(c);
  if (inputs.empty()) throw SchemaError("plot needs input files (report.json, profile.json, metrics.csv)");
  const fs::path out = resolve_output(c.out, "plots");
  std::vector<json> reports;
  int written = 0;
  for (const auto& in : inputs) {
    const fs::path p = resolve_input(in);
    if (p.extension() == ".csv") {
      const auto series = metrics_series(read_file(p));
      const std::string name = "loss_" + p.parent_path().filename().string();
      write_file(out / (name + ".csv"), series_csv(series));
      write_file(out / (name + ".svg"),
                 line_chart_svg(series, {"training curves (" + p.parent_path().filename().string() + ")", "epoch",
                                         "MSE", false, true}));
      ++written;
      continue;
    }
    json j;
    try {
      j = json::parse(read_file(p));
    } catch (const json::exception& e) {
      throw SchemaError(p.string() + ": " + e.what());
    }
    if (j.contains("regions")) {
      reports.push_back(j);
    } else if (j.contains("by_queries")) {
      const auto rt = runtime_series(j), ro = rollout_series(j);
      write_file(out / "runtime.csv", series_csv(rt));
      write_file(out / "runtime.svg",
                 line_chart_svg(rt, {"inference time vs spatial queries", "queries", "seconds", false, false}));
      write_file(out / "rollout.csv", series_csv(ro));
      write_file(out / "rollout.svg",
                 line_chart_svg(ro, {"rollout vs requested time points", "time points", "", false, false}));
      written += 2;
    } else {
      throw SchemaError(p.string() + ": not an evaluation report or runtime profile");
    }
  }
  if (!reports.empty()) {
    write_file(out / "regions.csv", region_table_csv(reports));
    write_file(out / "regions.svg", region_table_svg(reports));
    const auto pf = per_frame_series(reports);
    write_file(out / "per_frame.csv", series_csv(pf));
    write_file(out / "per_frame.svg", line_chart_svg(pf, {"MSE x 1e-3 per frame", "frame", "MSE x 1e-3", false, true}));
    written += 2;
  }
  std::printf("%d figures in %s\n", written, out.c_str());
  return 0;
}

}  // namespace
}  // namespace dualobs::cli

int main(int argc, char** argv) {
  using namespace dualobs::cli;
  CLI::App app{"Sparse-to-dense physics surrogate: data, training, evaluation and bound checks"};
  app.require_subcommand(1);

  Common common;
  int code = 0;

  GenDataFlags gd;
  auto* gen = app.add_subcommand("gen-data", "Simulate and mask a Navier-Stokes dataset");
  add_common(gen, common);
  gen->add_option("--resolution", gd.resolution);
  gen->add_option("--frames", gd.frames, "Training horizon T in frames");
  gen->add_option("--sim-frames", gd.sim_frames, "Frames simulated for val/test");
  gen->add_option("--keep", gd.keep, "Fraction of grid nodes observed");
  gen->add_option("--stride", gd.stride, "Temporal subsampling of the training view");
  gen->add_option("--train", gd.train);
  gen->add_option("--val", gd.val);
  gen->add_option("--test", gd.test);

  TrainFlags tr;
  auto* train = app.add_subcommand("train", "Train a model on a dataset");
  add_common(train, common);
  train->add_option("--data", tr.data)->required();
  train->add_option("--epochs", tr.epochs);
  train->add_option("--batch", tr.batch);
  train->add_option("--lr", tr.lr);
  train->add_option("--layers", tr.layers);
  train->add_option("--width", tr.width);
  train->add_option("--heads", tr.heads);
  train->add_option("--aggregator", tr.aggregator, "gru, mean, max or single");
  train->add_option("--delta-factor", tr.delta_factor, "Anchor interval in data intervals (k)");
  train->add_option("--queries", tr.queries, "Queries per optimization step");
  train->add_option("--val-queries", tr.val_queries);

  EvalFlags ev;
  auto* evalc = app.add_subcommand("eval", "Evaluate a checkpoint by region");
  add_common(evalc, common);
  evalc->add_option("--checkpoint", ev.checkpoint)->required();
  evalc->add_option("--data", ev.data)->required();
  evalc->add_option("--split", ev.split);
  evalc->add_option("--horizon", ev.horizon, "1x, 2x or a frame count");
  evalc->add_flag("--error-maps", ev.error_maps, "Also write the per-node error map of the first trajectory");

  OracleFlags orf;
  auto* oracle = app.add_subcommand("oracle", "Evaluate a non-learned reference");
  add_common(oracle, common);
  oracle->add_option("--data", orf.data)->required();
  oracle->add_option("--kind", orf.kind, "time, spatial or nn");
  oracle->add_option("--split", orf.split);
  oracle->add_option("--horizon", orf.horizon);

  BoundsFlags bf;
  auto* bounds = app.add_subcommand("bounds-check", "Check both error bounds on synthetic systems");
  add_common(bounds, common);
  bounds->add_option("--systems", bf.systems, "Random systems per check");
  bounds->add_option("--noise", bf.noise, "Anchor noise norm for the observer check");

  ProfileFlags pf;
  auto* profile = app.add_subcommand("profile", "Measure inference cost vs queries and time points");
  add_common(profile, common);
  profile->add_option("--checkpoint", pf.checkpoint);
  profile->add_option("--data", pf.data)->required();
  profile->add_option("--repetitions", pf.repetitions);

  std::vector<std::string> plot_inputs;
  auto* plot = app.add_subcommand("plot", "Figures and CSV tables from reports, profiles and metrics.csv");
  add_common(plot, common);
  plot->add_option("inputs", plot_inputs)->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen->parsed()) code = cmd_gen_data(common, gd);
    else if (train->parsed()) code = cmd_train(common, tr);
    else if (evalc->parsed()) code = cmd_eval(common, ev);
    else if (oracle->parsed()) code = cmd_oracle(common, orf);
    else if (bounds->parsed()) code = cmd_bounds(common, bf);
    else if (profile->parsed()) code = cmd_profile(common, pf);
    else if (plot->parsed()) code = cmd_plot(common, plot_inputs);
  } catch (const SchemaError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return code;
}
