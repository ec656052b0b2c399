#include "dualobs/eval/evaluate.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <iomanip>
#include <sstream>

#include "dualobs/geometry/clough_tocher.hpp"

namespace dualobs::eval {

using nlohmann::json;

RegionAccumulator::RegionAccumulator(std::vector<bool> in_x, int stride, int frames)
    : in_x_(std::move(in_x)), stride_(stride), frame_sum_(static_cast<std::size_t>(frames), 0.0),
      frame_n_(static_cast<std::size_t>(frames), 0) {
  if (stride < 1) throw std::invalid_argument("RegionAccumulator: stride must be >= 1");
}

void RegionAccumulator::add(int frame, int flat, double prediction, double truth) {
  const double d = prediction - truth;
  const int ex = in_x_.at(static_cast<std::size_t>(flat)) ? 0 : 1;
  const int et = frame % stride_ == 0 ? 0 : 1;
  sum_[ex][et] += d * d;
  ++n_[ex][et];
  frame_sum_.at(static_cast<std::size_t>(frame)) += d * d;
  ++frame_n_[static_cast<std::size_t>(frame)];
}

void RegionAccumulator::add_field(int frame, const Matrix<float>& prediction, const Matrix<float>& truth) {
  if (!prediction.same_shape(truth) || prediction.size() != in_x_.size())
    throw ShapeError("RegionAccumulator: field shape mismatch");
  for (std::size_t k = 0; k < prediction.size(); ++k)
    add(frame, static_cast<int>(k), prediction.storage()[k], truth.storage()[k]);
}

long RegionAccumulator::count(int ext_x, int ext_t) const {
  long n = 0;
  for (int x = 0; x < 2; ++x)
    for (int t = 0; t < 2; ++t)
      if ((ext_x < 0 || ext_x == x) && (ext_t < 0 || ext_t == t)) n += n_[x][t];
  return n;
}

std::optional<double> RegionAccumulator::mse(int ext_x, int ext_t) const {
  double s = 0.0;
  for (int x = 0; x < 2; ++x)
    for (int t = 0; t < 2; ++t)
      if ((ext_x < 0 || ext_x == x) && (ext_t < 0 || ext_t == t)) s += sum_[x][t];
  const long n = count(ext_x, ext_t);
  if (n == 0) return std::nullopt;
  return s / static_cast<double>(n);
}

std::vector<double> RegionAccumulator::per_frame_mse() const {
  std::vector<double> out;
  for (std::size_t f = 0; f < frame_sum_.size(); ++f)
    out.push_back(frame_n_[f] ? frame_sum_[f] / static_cast<double>(frame_n_[f]) : 0.0);
  return out;
}

const std::vector<std::string>& region_keys() {
  static const std::vector<std::string> keys{"in_x_in_t", "in_x_ext_t", "ext_x_in_t", "ext_x_ext_t", "in_x",
                                             "ext_x",     "in_t",       "ext_t",      "all"};
  return keys;
}

namespace {

constexpr std::array<std::array<int, 2>, 9> kRegionSelectors{
    {{0, 0}, {0, 1}, {1, 0}, {1, 1}, {0, -1}, {1, -1}, {-1, 0}, {-1, 1}, {-1, -1}}};

const pde::SparseTrajectory& require_dense(const pde::SparseTrajectory& traj, const std::string& split, int frames) {
  if (!traj.has_dense())
    throw std::invalid_argument("split '" + split + "' has no dense reference to evaluate against");
  if (static_cast<int>(traj.dense.size()) < frames)
    throw std::invalid_argument("split '" + split + "' has a dense reference of " +
                                std::to_string(traj.dense.size()) + " frames, need " + std::to_string(frames));
  return traj;
}

std::vector<geometry::Point2> mask_points(const pde::SparseMask& mask) {
  const auto p = mask.positions();
  std::vector<geometry::Point2> out;
  for (int i = 0; i < p.rows(); ++i) out.push_back({p(i, 0), p(i, 1)});
  return out;
}

std::vector<geometry::Point2> grid_points(int res) {
  std::vector<geometry::Point2> out;
  for (int iy = 0; iy < res; ++iy)
    for (int ix = 0; ix < res; ++ix)
      out.push_back({static_cast<double>(ix) / res, static_cast<double>(iy) / res});
  return out;
}

std::vector<int> sampled_frames(int stride, int frames) {
  std::vector<int> out;
  for (int f = 0; f < frames; f += stride) out.push_back(f);
  return out;
}

}  // namespace

json EvalReport::to_json() const {
  return {{"method", method},
          {"split", split},
          {"horizon_frames", horizon_frames},
          {"trajectories", trajectories},
          {"unit", "mse x 1e-3"},
          {"regions", regions},
          {"counts", counts},
          {"per_frame", per_frame},
          {"rollout_calls", rollout_calls},
          {"config", config}};
}

std::string EvalReport::per_frame_csv() const {
  std::ostringstream os;
  os << "frame,mse_e3\n" << std::setprecision(9);
  for (std::size_t f = 0; f < per_frame.size(); ++f) os << f << ',' << per_frame[f] << '\n';
  return os.str();
}

EvalReport evaluate(const std::string& method, const pde::SparseDataset& ds, const std::string& split,
                    int horizon_frames, const Estimator& estimator) {
  const auto& trajs = ds.split(split);
  if (trajs.empty()) throw std::invalid_argument("split '" + split + "' is empty");
  RegionAccumulator acc(ds.mask.membership(), ds.config.temporal_stride, horizon_frames);
  for (const auto& traj : trajs) {
    require_dense(traj, split, horizon_frames);
    const FieldEstimate est = estimator(traj, horizon_frames);
    if (static_cast<int>(est.size()) != horizon_frames) throw ShapeError("estimator returned the wrong frame count");
    for (int f = 0; f < horizon_frames; ++f)
      acc.add_field(f, est[static_cast<std::size_t>(f)], traj.dense[static_cast<std::size_t>(f)]);
  }
  EvalReport r;
  r.method = method;
  r.split = split;
  r.horizon_frames = horizon_frames;
  r.trajectories = static_cast<int>(trajs.size());
  r.regions = json::object();
  r.counts = json::object();
  for (std::size_t k = 0; k < kRegionSelectors.size(); ++k) {
    const auto [x, t] = kRegionSelectors[k];
    const auto m = acc.mse(x, t);
    r.regions[region_keys()[k]] = m ? json(*m * kReportScale) : json(nullptr);
    r.counts[region_keys()[k]] = acc.count(x, t);
  }
  for (double v : acc.per_frame_mse()) r.per_frame.push_back(v * kReportScale);
  r.config = {{"resolution", ds.config.grid.resolution},
              {"train_frames", ds.config.grid.frames},
              {"temporal_stride", ds.config.temporal_stride},
              {"keep_ratio", ds.config.keep_ratio},
              {"observed_nodes", ds.mask.size()}};
  return r;
}

FieldEstimate model_estimate(const model::Surrogate<float>& m, const pde::SparseDataset& ds,
                             const pde::SparseTrajectory& traj, int delta_factor, int frames) {
  const int res = ds.config.grid.resolution;
  const auto plan =
      train::AnchorPlan::make(ds.config.grid.frames, ds.config.temporal_stride, delta_factor, frames);
  const Matrix<float> pos = cast<float>(ds.mask.positions());
  const auto topo = model::make_topology(pos);
  Matrix<float> ic(ds.mask.size(), 1);
  for (int i = 0; i < ds.mask.size(); ++i) ic(i, 0) = traj.values(0, i);
  Matrix<float> q(frames * res * res, 3);
  int r = 0;
  for (int f = 0; f < frames; ++f)
    for (int iy = 0; iy < res; ++iy)
      for (int ix = 0; ix < res; ++ix, ++r) {
        q(r, 0) = static_cast<float>(ix) / static_cast<float>(res);
        q(r, 1) = static_cast<float>(iy) / static_cast<float>(res);
        q(r, 2) = plan.time_of(f);
      }
  const auto pred = m.infer(ic, topo, plan.q, plan.anchor_dt(), q);
  FieldEstimate out;
  for (int f = 0; f < frames; ++f) {
    const auto first = pred.begin() + static_cast<long>(f) * res * res;
    out.emplace_back(res, res, std::vector<float>(first, first + res * res));
  }
  return out;
}

EvalReport evaluate_model(const model::Surrogate<float>& m, const pde::SparseDataset& ds, const std::string& split,
                          int delta_factor, int horizon_frames) {
  const long before = m.system1().rollout_calls();
  EvalReport r = evaluate("model", ds, split, horizon_frames, [&](const pde::SparseTrajectory& t, int frames) {
    return model_estimate(m, ds, t, delta_factor, frames);
  });
  r.rollout_calls = m.system1().rollout_calls() - before;
  r.config["delta_factor"] = delta_factor;
  r.config["model"] = m.config().to_json();
  return r;
}

FieldEstimate time_oracle(const pde::SparseDataset& ds, const pde::SparseTrajectory& traj, int frames) {
  const int res = ds.config.grid.resolution;
  require_dense(traj, "time oracle input", frames);
  const auto sites = mask_points(ds.mask);
  const auto targets = grid_points(res);
  const geometry::CloughTocherInterpolator ct(sites, targets);
  FieldEstimate out;
  std::vector<double> v(sites.size());
  for (int f = 0; f < frames; ++f) {
    const auto& truth = traj.dense[static_cast<std::size_t>(f)];
    for (std::size_t i = 0; i < sites.size(); ++i) v[i] = truth.data()[ds.mask.indices[i]];
    const auto est = ct.evaluate(v);
    Matrix<float> field(res, res);
    for (std::size_t k = 0; k < est.size(); ++k) field.storage()[k] = static_cast<float>(est[k]);
    // Observed nodes read the ground truth directly.
    for (std::size_t i = 0; i < sites.size(); ++i) field.storage()[ds.mask.indices[i]] = truth.data()[ds.mask.indices[i]];
    out.push_back(std::move(field));
  }
  return out;
}

std::array<double, 4> lagrange_weights(const std::array<double, 4>& nodes, double x) {
  std::array<double, 4> w{};
  for (int i = 0; i < 4; ++i) {
    double p = 1.0;
    for (int j = 0; j < 4; ++j)
      if (j != i) {
        if (nodes[i] == nodes[j]) throw std::invalid_argument("lagrange_weights: repeated node");
        p *= (x - nodes[j]) / (nodes[i] - nodes[j]);
      }
    w[i] = p;
  }
  return w;
}

FieldEstimate spatial_oracle(const pde::SparseDataset& ds, const pde::SparseTrajectory& traj, int frames) {
  const int stride = ds.config.temporal_stride;
  if (stride < 2) throw NotApplicable("spatial oracle: every frame is sampled (stride 1), n/a");
  require_dense(traj, "spatial oracle input", frames);
  const auto kept = sampled_frames(stride, frames);
  const int nk = static_cast<int>(kept.size());
  if (nk < 4) throw NotApplicable("spatial oracle: needs at least 4 sampled frames");
  const int res = ds.config.grid.resolution;
  FieldEstimate out;
  for (int f = 0; f < frames; ++f) {
    if (f % stride == 0) {
      out.push_back(traj.dense[static_cast<std::size_t>(f)]);
      continue;
    }
    int first = f / stride - 1;  // nodes first..first+3 bracket f when possible
    first = std::clamp(first, 0, nk - 4);
    std::array<double, 4> nodes{};
    for (int j = 0; j < 4; ++j) nodes[j] = kept[static_cast<std::size_t>(first + j)];
    const auto w = lagrange_weights(nodes, f);
    Matrix<float> field(res, res);
    for (std::size_t k = 0; k < field.size(); ++k) {
      double s = 0.0;
      for (int j = 0; j < 4; ++j) s += w[j] * traj.dense[static_cast<std::size_t>(nodes[j])].storage()[k];
      field.storage()[k] = static_cast<float>(s);
    }
    out.push_back(std::move(field));
  }
  return out;
}

FieldEstimate nearest_neighbor(const pde::SparseDataset& ds, const pde::SparseTrajectory& traj, int frames) {
  const int stride = ds.config.temporal_stride;
  require_dense(traj, "nearest-neighbour input", frames);
  const int res = ds.config.grid.resolution;
  const auto nearest = geometry::periodic_nearest(mask_points(ds.mask), grid_points(res));
  const int last = ((frames - 1) / stride) * stride;
  FieldEstimate out;
  for (int f = 0; f < frames; ++f) {
    // Nearest sampled frame, the earlier one on ties.
    int nf = ((f + (stride - 1) / 2) / stride) * stride;
    nf = std::min(nf, last);
    const auto& src = traj.dense[static_cast<std::size_t>(nf)];
    Matrix<float> field(res, res);
    for (std::size_t k = 0; k < field.size(); ++k)
      field.storage()[k] = src.data()[ds.mask.indices[static_cast<std::size_t>(nearest[k])]];
    out.push_back(std::move(field));
  }
  return out;
}

namespace {

using Clock = std::chrono::steady_clock;

TimingStats stats(const std::vector<double>& v) {
  TimingStats s;
  s.min = *std::min_element(v.begin(), v.end());
  s.max = *std::max_element(v.begin(), v.end());
  double sum = 0.0;
  for (double x : v) sum += x;
  s.mean = sum / static_cast<double>(v.size());
  return s;
}

Matrix<float> random_queries(Rng& rng, int n, const std::vector<double>& times) {
  Matrix<float> q(n, 3);
  for (int r = 0; r < n; ++r) {
    q(r, 0) = static_cast<float>(rng.uniform());
    q(r, 1) = static_cast<float>(rng.uniform());
    q(r, 2) = static_cast<float>(times[static_cast<std::size_t>(r) % times.size()]);
  }
  return q;
}

}  // namespace

json RuntimeProfile::to_json() const {
  json j;
  j["repetitions"] = repetitions;
  j["by_queries"] = json::array();
  for (std::size_t k = 0; k < query_counts.size(); ++k)
    j["by_queries"].push_back({{"queries", query_counts[k]}, {"seconds", by_queries[k].to_json()}});
  j["marginal_cost"] = json::array();
  for (std::size_t k = 0; k < times.size(); ++k)
    j["marginal_cost"].push_back({{"t", times[k]}, {"seconds_per_query", marginal_cost[k]}});
  j["marginal_spread"] = marginal_spread();
  j["by_time_points"] = json::array();
  for (std::size_t k = 0; k < time_point_counts.size(); ++k)
    j["by_time_points"].push_back({{"time_points", time_point_counts[k]},
                                   {"seconds", by_time_points[k].to_json()},
                                   {"rollout_steps", rollout_steps_by_time_points[k]}});
  return j;
}

double RuntimeProfile::marginal_spread() const {
  if (marginal_cost.empty()) return 0.0;
  double mean = 0.0;
  for (double c : marginal_cost) mean += c;
  mean /= static_cast<double>(marginal_cost.size());
  double worst = 0.0;
  for (double c : marginal_cost) worst = std::max(worst, std::abs(c - mean) / mean);
  return worst;
}

RuntimeProfile runtime_profile(const model::Surrogate<float>& m, const pde::SparseDataset& ds, int delta_factor,
                               const std::vector<int>& query_counts, const std::vector<double>& times,
                               const std::vector<int>& time_point_counts, int repetitions) {
  if (repetitions < 1) throw std::invalid_argument("runtime_profile: repetitions must be >= 1");
  if (query_counts.size() < 2) throw std::invalid_argument("runtime_profile: need at least two query counts");
  const auto& source = !ds.test.empty() ? ds.test : (!ds.val.empty() ? ds.val : ds.train);
  if (source.empty()) throw std::invalid_argument("runtime_profile: empty dataset");
  const auto plan = train::AnchorPlan::make(ds.config.grid.frames, ds.config.temporal_stride, delta_factor);
  const Matrix<float> pos = cast<float>(ds.mask.positions());
  const auto topo = model::make_topology(pos);
  Matrix<float> ic(ds.mask.size(), 1);
  for (int i = 0; i < ds.mask.size(); ++i) ic(i, 0) = source.front().values(0, i);
  Rng rng(17);
  RuntimeProfile p;
  p.repetitions = repetitions;
  p.query_counts = query_counts;
  p.times = times;
  p.time_point_counts = time_point_counts;

  auto seconds = [](Clock::time_point a) { return std::chrono::duration<double>(Clock::now() - a).count(); };

  // Whole pipeline (rollout + queries) against the number of queries.
  for (int n : query_counts) {
    const auto q = random_queries(rng, n, {1.0});
    std::vector<double> runs;
    for (int rep = 0; rep < repetitions; ++rep) {
      const auto t0 = Clock::now();
      (void)m.infer(ic, topo, plan.q, plan.anchor_dt(), q);
      runs.push_back(seconds(t0));
    }
    p.by_queries.push_back(stats(runs));
  }

  // Marginal query cost at fixed t, with the anchors prepared once.
  Graph<float> g(false);
  const auto anchors = m.anchors(g, ic, topo, plan.q, plan.anchor_dt());
  const int lo = query_counts.front(), hi = query_counts.back();
  for (double t : times) {
    const auto qlo = random_queries(rng, lo, {t});
    const auto qhi = random_queries(rng, hi, {t});
    auto time_eval = [&](const Matrix<float>& q) {
      std::vector<double> runs;
      for (int rep = 0; rep < repetitions; ++rep) {
        Graph<float> cg(false);
        const auto rebound = model::Observer<float>::rebind(g, cg, anchors.prepared);
        const auto t0 = Clock::now();
        (void)m.observer().evaluate(cg, rebound, q);
        runs.push_back(seconds(t0));
      }
      return stats(runs).min;
    };
    p.marginal_cost.push_back((time_eval(qhi) - time_eval(qlo)) / static_cast<double>(hi - lo));
  }

  // Requesting more distinct time points does not lengthen the rollout.
  for (int npts : time_point_counts) {
    std::vector<double> ts;
    for (int k = 0; k < npts; ++k) ts.push_back(npts == 1 ? 1.0 : static_cast<double>(k) / (npts - 1));
    const auto q = random_queries(rng, hi, ts);
    std::vector<double> runs;
    long steps = -1;
    for (int rep = 0; rep < repetitions; ++rep) {
      const auto t0 = Clock::now();
      Graph<float> pg(false);
      const auto a = m.anchors(pg, ic, topo, plan.q, plan.anchor_dt());
      (void)m.predict(pg, a, q);
      runs.push_back(seconds(t0));
      steps = static_cast<long>(a.states.size()) - 1;
    }
    p.by_time_points.push_back(stats(runs));
    p.rollout_steps_by_time_points.push_back(steps);
  }
  return p;
}

std::string error_map_csv(const pde::SparseDataset& ds, const pde::SparseTrajectory& traj,
                          const FieldEstimate& estimate) {
  const int res = ds.config.grid.resolution;
  const auto member = ds.mask.membership();
  std::ostringstream os;
  os << "x,y,in_x,mse\n" << std::setprecision(9);
  for (int k = 0; k < res * res; ++k) {
    double s = 0.0;
    for (std::size_t f = 0; f < estimate.size(); ++f) {
      const double d = static_cast<double>(estimate[f].storage()[static_cast<std::size_t>(k)]) -
                       traj.dense.at(f).storage()[static_cast<std::size_t>(k)];
      s += d * d;
    }
    os << static_cast<double>(k % res) / res << ',' << static_cast<double>(k / res) / res << ','
       << (member[static_cast<std::size_t>(k)] ? 1 : 0) << ',' << s / static_cast<double>(estimate.size()) << '\n';
  }
  return os.str();
}

}  // namespace dualobs::eval
