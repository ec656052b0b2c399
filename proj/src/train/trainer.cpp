#include "dualobs/train/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <set>
#include <sstream>

#include "dualobs/train/optim.hpp"

namespace dualobs::train {

using nlohmann::json;
using model::GraphTopology;
using model::Surrogate;

void TrainConfig::validate() const {
  auto need = [](bool ok, const std::string& what) {
    if (!ok) throw std::invalid_argument("train config: " + what);
  };
  need(lr > 0 && std::isfinite(lr), "lr must be positive");
  need(epochs >= 1, "epochs must be >= 1");
  need(decay > 0 && decay <= 1, "decay must be in (0, 1]");
  need(grad_clip > 0, "grad_clip must be positive");
  need(weight_decay >= 0, "weight_decay must be >= 0");
  need(batch >= 1, "batch must be >= 1");
  need(delta_factor >= 1, "delta_factor must be >= 1");
  need(ic_keep > 0 && ic_keep <= 1, "ic_keep must be in (0, 1]");
  need(n_queries >= 1, "n_queries must be >= 1");
  need(w_continuous >= 0 && w_dynamics >= 0, "loss weights must be >= 0");
  need(val_trajectories >= 0 && val_queries >= 1 && val_every >= 1, "validation settings must be positive");
  need(std::is_sorted(milestones.begin(), milestones.end()), "milestones must be increasing");
}

json TrainConfig::to_json() const {
  return {{"lr", lr},
          {"epochs", epochs},
          {"milestones", milestones},
          {"decay", decay},
          {"grad_clip", grad_clip},
          {"weight_decay", weight_decay},
          {"batch", batch},
          {"delta_factor", delta_factor},
          {"ic_keep", ic_keep},
          {"n_queries", n_queries},
          {"w_continuous", w_continuous},
          {"w_dynamics", w_dynamics},
          {"seed", seed},
          {"val_trajectories", val_trajectories},
          {"val_queries", val_queries},
          {"val_every", val_every}};
}

TrainConfig TrainConfig::from_json(const json& j) {
  TrainConfig c;
  const json defaults = c.to_json();
  if (!j.is_object()) throw std::invalid_argument("train config must be an object");
  for (const auto& [k, v] : j.items())
    if (!defaults.contains(k)) throw std::invalid_argument("unknown train config key '" + k + "'");
  auto get = [&](const char* key, auto& field) {
    if (j.contains(key)) field = j.at(key).get<std::decay_t<decltype(field)>>();
  };
  get("lr", c.lr);
  get("epochs", c.epochs);
  get("milestones", c.milestones);
  get("decay", c.decay);
  get("grad_clip", c.grad_clip);
  get("weight_decay", c.weight_decay);
  get("batch", c.batch);
  get("delta_factor", c.delta_factor);
  get("ic_keep", c.ic_keep);
  get("n_queries", c.n_queries);
  get("w_continuous", c.w_continuous);
  get("w_dynamics", c.w_dynamics);
  get("seed", c.seed);
  get("val_trajectories", c.val_trajectories);
  get("val_queries", c.val_queries);
  get("val_every", c.val_every);
  c.validate();
  return c;
}

double learning_rate(const TrainConfig& c, int epoch) {
  double lr = c.lr;
  for (int m : c.milestones)
    if (epoch >= m) lr *= c.decay;
  return lr;
}

AnchorPlan AnchorPlan::make(int train_frames, int stride, int k, int horizon_frames) {
  if (train_frames < 1 || stride < 1 || k < 1) throw std::invalid_argument("AnchorPlan: bad arguments");
  AnchorPlan p;
  p.train_frames = train_frames;
  p.horizon_frames = horizon_frames < 0 ? train_frames : horizon_frames;
  p.delta_frames = k * stride;
  p.q = p.horizon_frames / p.delta_frames;
  return p;
}

std::vector<int> subsample_ic(int n, double keep, Rng& rng) {
  if (n < 4) throw std::invalid_argument("subsample_ic: need at least 4 observed nodes");
  if (!(keep > 0 && keep <= 1)) throw std::invalid_argument("subsample_ic: keep must be in (0, 1]");
  const int k = std::clamp(static_cast<int>(std::lround(keep * n)), 3, n);
  if (k == n) {
    std::vector<int> all(static_cast<std::size_t>(n));
    std::iota(all.begin(), all.end(), 0);
    return all;
  }
  auto idx = rng.choose(n, k);
  std::sort(idx.begin(), idx.end());
  return idx;
}

std::vector<int> QuerySampler::sample(int n, Rng& rng) const {
  if (n < 0 || static_cast<std::size_t>(n) > w_.size())
    throw std::invalid_argument("QuerySampler: cannot draw " + std::to_string(n) + " of " +
                                std::to_string(w_.size()));
  // Exponential keys: index i gets log(u_i) / W_i and the n largest keys win,
  // which is successive sampling proportional to W. Zero weights come last,
  // ordered by a second uniform draw.
  struct Key {
    double key, tie;
    int index;
  };
  std::vector<Key> keys(w_.size());
  for (std::size_t i = 0; i < w_.size(); ++i) {
    double u;
    do {
      u = rng.uniform();
    } while (u <= 0.0);
    const double tie = rng.uniform();
    keys[i] = {w_[i] > 0 ? std::log(u) / w_[i] : -INFINITY, tie, static_cast<int>(i)};
  }
  auto better = [](const Key& a, const Key& b) {
    if (a.key != b.key) return a.key > b.key;
    if (a.tie != b.tie) return a.tie > b.tie;
    return a.index < b.index;
  };
  std::partial_sort(keys.begin(), keys.begin() + n, keys.end(), better);
  std::vector<int> out;
  for (int i = 0; i < n; ++i) out.push_back(keys[static_cast<std::size_t>(i)].index);
  return out;
}

void QuerySampler::update(const std::vector<int>& sampled, double loss) {
  for (int i : sampled) w_.at(static_cast<std::size_t>(i)) = 0.0;
  for (double& w : w_) w += loss;
}

namespace {

Matrix<float> float_positions(const pde::SparseMask& mask) {
  return cast<float>(mask.positions());
}

}  // namespace

StepLoss trajectory_loss(const Surrogate<float>& model, const pde::SparseDataset& ds,
                         const pde::SparseTrajectory& traj, const AnchorPlan& plan, const TrainConfig& cfg,
                         const std::vector<int>& ic_nodes, const std::vector<int>& queries, float scale) {
  const int M = ds.mask.size();
  const int stride = ds.config.temporal_stride;
  const auto frames = ds.kept_frames();
  const Matrix<float> all_pos = float_positions(ds.mask);

  Matrix<float> pos(static_cast<int>(ic_nodes.size()), 2);
  Matrix<float> ic(pos.rows(), 1);
  for (int r = 0; r < pos.rows(); ++r) {
    const int i = ic_nodes[static_cast<std::size_t>(r)];
    pos(r, 0) = all_pos(i, 0);
    pos(r, 1) = all_pos(i, 1);
    ic(r, 0) = traj.values(0, i);
  }
  const GraphTopology<float> topo = model::make_topology(pos);

  Matrix<float> qx(static_cast<int>(queries.size()), 3);
  Matrix<float> qy(qx.rows(), 1);
  StepLoss out;
  for (int r = 0; r < qx.rows(); ++r) {
    const int idx = queries[static_cast<std::size_t>(r)];
    const int row = idx / M, i = idx % M;
    const int frame = frames.at(static_cast<std::size_t>(row));
    qx(r, 0) = all_pos(i, 0);
    qx(r, 1) = all_pos(i, 1);
    qx(r, 2) = plan.time_of(frame);
    qy(r, 0) = traj.values(row, i);
    if (!plan.is_anchor_frame(frame)) ++out.off_anchor;
  }

  Graph<float> g(scale != 0.0f);
  const auto anchors = model.anchors(g, ic, topo, plan.q, plan.anchor_dt());
  Var l_cont = g.mse(model.predict(g, anchors, qx), qy);
  Var l_dyn = g.constant(Matrix<float>(1, 1));
  for (int n = 0; n <= plan.q; ++n) {
    const int frame = plan.anchor_frame(n);
    if (frame >= plan.train_frames) break;  // no observation beyond the horizon
    Matrix<float> target(pos.rows(), 1);
    for (int r = 0; r < pos.rows(); ++r) target(r, 0) = traj.values(frame / stride, ic_nodes[static_cast<std::size_t>(r)]);
    l_dyn = g.add(l_dyn, g.mse(model.system1().observe(g, anchors.states[static_cast<std::size_t>(n)].nodes), target));
  }
  out.continuous = g.scalar(l_cont);
  out.dynamics = g.scalar(l_dyn);
  if (scale != 0.0f) {
    Var total = g.add(g.scale(l_cont, static_cast<float>(cfg.w_continuous) * scale),
                      g.scale(l_dyn, static_cast<float>(cfg.w_dynamics) * scale));
    g.backward(total);
  }
  return out;
}

namespace {

struct ValSubset {
  std::vector<int> traj;
  std::vector<std::vector<std::pair<int, int>>> points;  // (frame, flat grid index) per trajectory
};

ValSubset make_val_subset(const pde::SparseDataset& ds, const TrainConfig& cfg) {
  ValSubset v;
  const int res = ds.config.grid.resolution;
  const int T = ds.config.grid.frames;
  const auto member = ds.mask.membership();
  std::vector<int> ext;
  for (int k = 0; k < res * res; ++k)
    if (!member[static_cast<std::size_t>(k)]) ext.push_back(k);
  if (ext.empty()) return v;
  Rng rng(cfg.seed ^ 0x7a11dULL);
  const int n = std::min<int>(cfg.val_trajectories, static_cast<int>(ds.val.size()));
  const int pool = static_cast<int>(ext.size()) * T;
  for (int t = 0; t < n; ++t) {
    v.traj.push_back(t);
    std::vector<std::pair<int, int>> pts;
    for (int idx : rng.choose(pool, std::min(cfg.val_queries, pool)))
      pts.push_back({idx / static_cast<int>(ext.size()), ext[static_cast<std::size_t>(idx) % ext.size()]});
    std::sort(pts.begin(), pts.end());
    v.points.push_back(std::move(pts));
  }
  return v;
}

}  // namespace

double validation_ext_x(const Surrogate<float>& model, const pde::SparseDataset& ds, const TrainConfig& cfg) {
  const ValSubset v = make_val_subset(ds, cfg);
  if (v.traj.empty()) return 0.0;
  const auto plan = AnchorPlan::make(ds.config.grid.frames, ds.config.temporal_stride, cfg.delta_factor);
  const Matrix<float> pos = float_positions(ds.mask);
  const auto topo = model::make_topology(pos);
  const int res = ds.config.grid.resolution;
  double se = 0.0;
  long count = 0;
  for (std::size_t k = 0; k < v.traj.size(); ++k) {
    const auto& traj = ds.val[static_cast<std::size_t>(v.traj[k])];
    if (!traj.has_dense()) throw std::invalid_argument("validation split has no dense reference");
    Matrix<float> ic(ds.mask.size(), 1);
    for (int i = 0; i < ds.mask.size(); ++i) ic(i, 0) = traj.values(0, i);
    const auto& pts = v.points[k];
    Matrix<float> q(static_cast<int>(pts.size()), 3);
    for (int r = 0; r < q.rows(); ++r) {
      const auto [frame, flat] = pts[static_cast<std::size_t>(r)];
      q(r, 0) = static_cast<float>(flat % res) / static_cast<float>(res);
      q(r, 1) = static_cast<float>(flat / res) / static_cast<float>(res);
      q(r, 2) = plan.time_of(frame);
    }
    const auto pred = model.infer(ic, topo, plan.q, plan.anchor_dt(), q);
    for (int r = 0; r < q.rows(); ++r) {
      const auto [frame, flat] = pts[static_cast<std::size_t>(r)];
      const double d = static_cast<double>(pred[static_cast<std::size_t>(r)]) -
                       traj.dense[static_cast<std::size_t>(frame)].data()[flat];
      se += d * d;
      ++count;
    }
  }
  return se / static_cast<double>(count);
}

std::string metrics_csv(const std::vector<EpochMetrics>& history) {
  std::ostringstream os;
  os << "epoch,lr,l_continuous,l_dynamics,grad_norm,val_ext_x,off_anchor_queries\n";
  os << std::setprecision(9);
  for (const auto& m : history) {
    os << m.epoch << ',' << m.lr << ',' << m.l_continuous << ',' << m.l_dynamics << ',' << m.grad_norm << ',';
    if (m.val_ext_x >= 0) os << m.val_ext_x;
    os << ',' << m.off_anchor_queries << '\n';
  }
  return os.str();
}

TrainResult train(Surrogate<float>& model, const pde::SparseDataset& ds, const TrainConfig& cfg,
                  const std::optional<std::filesystem::path>& out, const EpochCallback& on_epoch) {
  cfg.validate();
  if (ds.train.empty()) throw std::invalid_argument("train: empty training split");
  const auto plan = AnchorPlan::make(ds.config.grid.frames, ds.config.temporal_stride, cfg.delta_factor);
  const int M = ds.mask.size();
  const int Tk = static_cast<int>(ds.kept_frames().size());
  const int K = static_cast<int>(ds.train.size());
  std::vector<QuerySampler> samplers(static_cast<std::size_t>(K), QuerySampler(static_cast<std::size_t>(M) * Tk));
  Rng rng(cfg.seed * 0x9e3779b97f4a7c15ULL + 1);
  AdamW<float> opt(model.params().all(), cfg.lr, cfg.weight_decay);
  const bool validate = !ds.val.empty() && cfg.val_trajectories > 0;

  TrainResult result;
  std::ofstream csv;
  if (out) {
    std::filesystem::create_directories(*out);
    csv.open(*out / "metrics.csv", std::ios::binary);
    csv << metrics_csv({});
  }
  auto meta = [&](int epoch, double val) {
    return json{{"epoch", epoch}, {"val_ext_x", val}, {"train", cfg.to_json()}};
  };

  int step = 0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    EpochMetrics em;
    em.epoch = epoch;
    em.lr = learning_rate(cfg, epoch);
    opt.set_lr(em.lr);
    std::vector<int> order = rng.choose(K, K);
    int steps_this_epoch = 0;
    for (int b0 = 0; b0 < K; b0 += cfg.batch, ++step, ++steps_this_epoch) {
      const int b1 = std::min(K, b0 + cfg.batch);
      const int bsize = b1 - b0;
      opt.zero_grad();
      double cont = 0.0, dyn = 0.0;
      std::vector<std::vector<int>> picked;
      for (int b = b0; b < b1; ++b) {
        const int k = order[static_cast<std::size_t>(b)];
        const int nq = cfg.n_queries / bsize + ((b - b0) < cfg.n_queries % bsize ? 1 : 0);
        const auto ic_nodes = subsample_ic(M, cfg.ic_keep, rng);
        auto qs = samplers[static_cast<std::size_t>(k)].sample(std::min(nq, M * Tk), rng);
        const StepLoss sl = trajectory_loss(model, ds, ds.train[static_cast<std::size_t>(k)], plan, cfg, ic_nodes, qs,
                                            1.0f / static_cast<float>(bsize));
        if (!std::isfinite(sl.continuous)) throw NonFiniteLoss(epoch, step, "L_continuous");
        if (!std::isfinite(sl.dynamics)) throw NonFiniteLoss(epoch, step, "L_dynamics");
        cont += sl.continuous;
        dyn += sl.dynamics;
        em.off_anchor_queries += sl.off_anchor;
        picked.push_back(std::move(qs));
      }
      cont /= bsize;
      dyn /= bsize;
      const double batch_loss = cfg.w_continuous * cont + cfg.w_dynamics * dyn;
      for (int b = b0; b < b1; ++b)
        samplers[static_cast<std::size_t>(order[static_cast<std::size_t>(b)])].update(
            picked[static_cast<std::size_t>(b - b0)], batch_loss);
      const double gn = opt.clip_grad_norm(cfg.grad_clip);
      if (!std::isfinite(gn)) throw NonFiniteLoss(epoch, step, "gradient");
      em.grad_norm = std::max(em.grad_norm, gn);
      opt.step();
      em.l_continuous += cont;
      em.l_dynamics += dyn;
    }
    em.l_continuous /= steps_this_epoch;
    em.l_dynamics /= steps_this_epoch;
    const bool last = epoch + 1 == cfg.epochs;
    if (validate && ((epoch + 1) % cfg.val_every == 0 || last)) {
      em.val_ext_x = validation_ext_x(model, ds, cfg);
      if (result.best_epoch < 0 || em.val_ext_x < result.best_val) {
        result.best_epoch = epoch;
        result.best_val = em.val_ext_x;
        if (out) model::save_checkpoint(*out / "best", model, meta(epoch, em.val_ext_x));
      }
    }
    result.history.push_back(em);
    if (csv.is_open()) {
      const std::string all = metrics_csv({em});
      csv << all.substr(all.find('\n') + 1) << std::flush;
    }
    if (on_epoch) on_epoch(em);
  }
  if (out) {
    model::save_checkpoint(*out / "final", model, meta(cfg.epochs - 1, result.history.back().val_ext_x));
    if (!validate) model::save_checkpoint(*out / "best", model, meta(cfg.epochs - 1, -1.0));
  }
  return result;
}

}  // namespace dualobs::train
