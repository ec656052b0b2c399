#include "dualobs/theory/bounds.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include <unsupported/Eigen/MatrixFunctions>

#include "dualobs/core/rng.hpp"

namespace dualobs::theory {

namespace {

// Rounding allowance when comparing a computed error to a bound.
constexpr double kRelSlack = 1e-12;

double spectral_norm(const MatrixXd& m) {
  if (m.size() == 0) return 0.0;
  Eigen::JacobiSVD<MatrixXd> svd(m);
  return svd.singularValues()(0);
}

MatrixXd gaussian(Rng& rng, int r, int c) {
  MatrixXd m(r, c);
  for (int j = 0; j < c; ++j)
    for (int i = 0; i < r; ++i) m(i, j) = rng.normal();
  return m;
}

VectorXd gaussian(Rng& rng, int n) { return gaussian(rng, n, 1).col(0); }

VectorXd unit(Rng& rng, int n) {
  VectorXd v;
  do {
    v = gaussian(rng, n);
  } while (v.norm() < 1e-8);
  return v / v.norm();
}

// Orthonormal columns, r x c with r >= c.
MatrixXd orthonormal(Rng& rng, int r, int c) {
  Eigen::HouseholderQR<MatrixXd> qr(gaussian(rng, r, c));
  return qr.householderQ() * MatrixXd::Identity(r, c);
}

double log_uniform(Rng& rng, double lo, double hi) {
  return std::exp(rng.uniform(std::log(lo), std::log(hi)));
}

PerturbedLinearMap perturb(Rng& rng, const MatrixXd& M, double amplitude, double freq) {
  PerturbedLinearMap m;
  m.M = M;
  const int out = static_cast<int>(M.rows()), in = static_cast<int>(M.cols());
  MatrixXd W = gaussian(rng, out, in);
  m.W = W * (freq / spectral_norm(W));
  m.a = unit(rng, out) * amplitude;
  m.b = VectorXd(out);
  for (int i = 0; i < out; ++i) m.b(i) = rng.uniform(0.0, 2.0 * M_PI);
  return m;
}

bool exceeds(double err, double bound, double scale) {
  return err > bound * (1.0 + kRelSlack) + kRelSlack * std::max(1.0, scale);
}

// Max over sampled points of |exact - approx| / declared, and of the slope
// between point pairs / declared.
std::pair<double, double> sample_hypotheses(const PerturbedLinearMap& m, double d, double L,
                                            Rng& rng) {
  double dev = 0.0, slope = 0.0;
  for (double scale : {0.1, 1.0, 10.0}) {
    for (int i = 0; i < 96; ++i) {
      const VectorXd x = gaussian(rng, m.in_dim()) * scale;
      const VectorXd y = x + gaussian(rng, m.in_dim()) * (scale * rng.uniform(1e-3, 1.0));
      const double dx = (m.exact(x) - m.approx(x)).norm();
      if (d > 0) dev = std::max(dev, dx / d);
      else if (dx > 0) dev = HUGE_VAL;
      const double step = (x - y).norm();
      if (step > 0 && L > 0) slope = std::max(slope, (m.approx(x) - m.approx(y)).norm() / step / L);
    }
  }
  return {dev, slope};
}

}  // namespace

double geometric_sum(double r, int n) {
  if (n <= 0) return 0.0;
  if (r == 1.0) return n;
  return (std::pow(r, n) - 1.0) / (r - 1.0);
}

double bound_latent(const LipschitzConstants& c, int n) {
  return c.d_h + c.L_h * (c.d_f * geometric_sum(c.L_f, n) + std::pow(c.L_f, n) * c.d_e);
}

double bound_reproject(const LipschitzConstants& c, int n) {
  return c.delta() * geometric_sum(c.L(), n);
}

std::pair<double, double> excess_terms(const LipschitzConstants& c, int n) {
  const double k1 = c.L_h * c.L_f * c.d_f * geometric_sum(c.L_f, n - 1) +
                    c.L_h * c.L_f * c.d_e * (std::pow(c.L_f, n - 1) - 1.0);
  const double L = c.L();
  const double k2 = c.delta() * L * geometric_sum(L, n - 1);
  return {k1, k2};
}

VectorXd PerturbedLinearMap::approx(const VectorXd& x) const {
  VectorXd y = M * x;
  if (a.size() > 0) y += a.cwiseProduct((W * x + b).array().sin().matrix());
  return y;
}

double PerturbedLinearMap::deviation_bound() const { return a.size() ? a.norm() : 0.0; }

double PerturbedLinearMap::lipschitz_bound() const {
  double L = spectral_norm(M);
  if (a.size()) L += spectral_norm(a.cwiseAbs().asDiagonal() * W);
  return L;
}

PerturbedLinearMap PerturbedLinearMap::unperturbed(const MatrixXd& M) {
  PerturbedLinearMap m;
  m.M = M;
  return m;
}

void SyntheticSystem::certify() {
  declared = {f.lipschitz_bound(), h.lipschitz_bound(), e.lipschitz_bound(),
              f.deviation_bound(), h.deviation_bound(), e.deviation_bound()};
}

void SyntheticSystem::validate() const {
  const int nz = latent_dim(), ns = obs_dim();
  if (f.out_dim() != nz || h.in_dim() != nz || e.in_dim() != ns || e.out_dim() != nz)
    throw std::invalid_argument("SyntheticSystem: inconsistent map dimensions");
  for (const auto* m : {&f, &h, &e}) {
    if (m->a.size() && (m->a.size() != m->out_dim() || m->b.size() != m->out_dim() ||
                        m->W.rows() != m->out_dim() || m->W.cols() != m->in_dim()))
      throw std::invalid_argument("SyntheticSystem: perturbation shape mismatch");
  }
  if (std::abs(declared.L() - 1.0) < 1e-12)
    throw HypothesisViolation("L_h * L_f * L_e must differ from 1");
  // The re-projecting scheme re-encodes observations; on exact data this
  // must recover the latent state.
  const double err = (e.M * h.M - MatrixXd::Identity(nz, nz)).norm();
  if (err > 1e-9)
    throw HypothesisViolation("e o h is not the identity on the latent space (|EH - I| = " +
                              std::to_string(err) + ")");
}

SyntheticSystem SyntheticSystem::random(std::uint64_t seed, double target_L) {
  Rng rng(seed);
  const int nz = 2 + static_cast<int>(rng.below(4));
  const int ns = nz + static_cast<int>(rng.below(4));

  VectorXd sigma(nz);
  for (int i = 0; i < nz; ++i) sigma(i) = rng.uniform(1.0, 2.0);
  const MatrixXd U = orthonormal(rng, ns, nz), V = orthonormal(rng, nz, nz);
  const MatrixXd H = U * sigma.asDiagonal() * V.transpose();
  const MatrixXd E = V * sigma.cwiseInverse().asDiagonal() * U.transpose();

  auto amplitude = [&] { return rng.uniform() < 0.1 ? 0.0 : log_uniform(rng, 1e-3, 0.2); };

  SyntheticSystem s;
  s.h = perturb(rng, H, amplitude(), rng.uniform(0.5, 3.0));
  s.e = perturb(rng, E, amplitude(), rng.uniform(0.5, 3.0));
  const double lf_target = target_L / (s.h.lipschitz_bound() * s.e.lipschitz_bound());

  MatrixXd F0 = gaussian(rng, nz, nz);
  F0 /= spectral_norm(F0);
  s.f = perturb(rng, F0, amplitude(), rng.uniform(0.5, 3.0));
  double p = spectral_norm(s.f.a.cwiseAbs().asDiagonal() * s.f.W);
  if (p > 0.5 * lf_target) {
    s.f.W *= 0.5 * lf_target / p;
    p = 0.5 * lf_target;
  }
  s.f.M = F0 * (lf_target - p);
  s.certify();
  if (std::abs(s.declared.L() - 1.0) < 1e-6) {
    s.f.M *= 1.01;
    s.certify();
  }
  s.validate();
  return s;
}

RolloutBoundResult check_rollout_bounds(const SyntheticSystem& sys, int n_max, int ics, std::uint64_t seed) {
  sys.validate();
  if (n_max < 1 || ics < 1) throw std::invalid_argument("check_rollout_bounds: n_max and ics must be >= 1");
  const LipschitzConstants& c = sys.declared;
  Rng rng(seed);

  RolloutBoundResult r;
  r.constants = c;
  const std::pair<double, double> hf = sample_hypotheses(sys.f, c.d_f, c.L_f, rng);
  const std::pair<double, double> hh = sample_hypotheses(sys.h, c.d_h, c.L_h, rng);
  const std::pair<double, double> he = sample_hypotheses(sys.e, c.d_e, c.L_e, rng);
  r.measured_deviation = std::max({hf.first, hh.first, he.first});
  r.measured_lipschitz = std::max({hf.second, hh.second, he.second});
  if (r.measured_deviation > 1.0 + 1e-9)
    throw HypothesisViolation("sampled deviation exceeds the declared delta (ratio " +
                              std::to_string(r.measured_deviation) + ")");
  if (r.measured_lipschitz > 1.0 + 1e-9)
    throw HypothesisViolation("sampled slope exceeds the declared Lipschitz constant (ratio " +
                              std::to_string(r.measured_lipschitz) + ")");

  const bool any_delta = c.d_f > 0 || c.d_h > 0 || c.d_e > 0;
  r.curve.resize(n_max);
  for (int n = 1; n <= n_max; ++n) {
    r.curve[n - 1] = {n, 0.0, bound_latent(c, n), 0.0, bound_reproject(c, n)};
  }

  for (int k = 0; k < ics; ++k) {
    VectorXd z = gaussian(rng, sys.latent_dim());
    const VectorXd s0 = sys.h.exact(z);
    VectorXd z_hat = sys.e.approx(s0);
    VectorXd s_ar = s0;
    for (int n = 1; n <= n_max; ++n) {
      z = sys.f.exact(z);
      const VectorXd s = sys.h.exact(z);
      z_hat = sys.f.approx(z_hat);
      s_ar = sys.h.approx(sys.f.approx(sys.e.approx(s_ar)));
      RolloutBoundPoint& pt = r.curve[n - 1];
      const double el = (s - sys.h.approx(z_hat)).norm();
      const double ea = (s - s_ar).norm();
      pt.err_latent = std::max(pt.err_latent, el);
      pt.err_reproject = std::max(pt.err_reproject, ea);
      ++r.checks;
      if (exceeds(el, pt.bound_latent, s.norm())) ++r.violations_latent;
      if (exceeds(ea, pt.bound_reproject, s.norm())) ++r.violations_reproject;
      if (any_delta && (el >= pt.bound_latent * (1 - kRelSlack) ||
                        ea >= pt.bound_reproject * (1 - kRelSlack)))
        ++r.not_strict;
      if (pt.bound_latent > 0) r.max_ratio_latent = std::max(r.max_ratio_latent, el / pt.bound_latent);
      if (pt.bound_reproject > 0)
        r.max_ratio_reproject = std::max(r.max_ratio_reproject, ea / pt.bound_reproject);
    }
  }
  return r;
}

RolloutSuiteSummary run_rollout_suite(const RolloutSuiteConfig& cfg) {
  if (cfg.systems < 1 || !(cfg.L_min > 0) || !(cfg.L_max >= cfg.L_min))
    throw std::invalid_argument("run_rollout_suite: bad configuration");
  RolloutSuiteSummary s;
  s.config = cfg;
  s.L_lo = HUGE_VAL;
  s.L_hi = 0.0;
  Rng rng(cfg.seed);
  for (int i = 0; i < cfg.systems; ++i) {
    // Spread targets evenly in log L so both ends of the range are covered.
    const double u = cfg.systems == 1 ? 0.5 : (i + rng.uniform()) / cfg.systems;
    const double target = cfg.L_min * std::pow(cfg.L_max / cfg.L_min, u);
    const std::uint64_t sys_seed = rng.next_u64();
    const SyntheticSystem sys = SyntheticSystem::random(sys_seed, target);
    RolloutBoundResult r = check_rollout_bounds(sys, cfg.n_max, cfg.ics, sys_seed ^ 0x51ab);
    s.checks += r.checks;
    s.violations_latent += r.violations_latent;
    s.violations_reproject += r.violations_reproject;
    s.not_strict += r.not_strict;
    s.max_ratio_latent = std::max(s.max_ratio_latent, r.max_ratio_latent);
    s.max_ratio_reproject = std::max(s.max_ratio_reproject, r.max_ratio_reproject);
    s.L_lo = std::min(s.L_lo, r.constants.L());
    s.L_hi = std::max(s.L_hi, r.constants.L());
    s.results.push_back(std::move(r));
  }
  return s;
}

nlohmann::json RolloutSuiteSummary::to_json() const {
  return {{"systems", config.systems},
          {"n_max", config.n_max},
          {"ics_per_system", config.ics},
          {"seed", config.seed},
          {"L_range", {L_lo, L_hi}},
          {"checks", checks},
          {"violations_latent", violations_latent},
          {"violations_reproject", violations_reproject},
          {"not_strict", not_strict},
          {"max_error_over_bound_latent", max_ratio_latent},
          {"max_error_over_bound_reproject", max_ratio_reproject},
          {"passed", passed()}};
}

std::string RolloutSuiteSummary::curves_csv() const {
  std::ostringstream os;
  os.precision(10);
  os << "system,L,n,err_latent,bound_latent,err_reproject,bound_reproject\n";
  for (std::size_t i = 0; i < results.size(); ++i)
    for (const auto& p : results[i].curve)
      os << i << ',' << results[i].constants.L() << ',' << p.n << ',' << p.err_latent << ','
         << p.bound_latent << ',' << p.err_reproject << ',' << p.bound_reproject << '\n';
  return os.str();
}

RegimeReport compare_regimes(const RegimeConfig& cfg) {
  if (cfg.horizons.empty() || !(cfg.delta > 0))
    throw std::invalid_argument("compare_regimes: need horizons and delta > 0");
  RegimeReport rep;
  rep.config = cfg;
  rep.min_ratio_large = HUGE_VAL;
  rep.k2_dominates = true;
  auto sweep = [&](const std::vector<double>& values, bool large) {
    for (double lh : values)
      for (double lf : values)
        for (double le : values)
          for (int n : cfg.horizons) {
            const LipschitzConstants c{lf, lh, le, cfg.delta, cfg.delta, cfg.delta};
            const auto [k1, k2] = excess_terms(c, n);
            rep.rows.push_back({lh, lf, le, n, k1, k2, large});
            if (large) {
              rep.min_ratio_large = std::min(rep.min_ratio_large, k2 / k1);
              if (k2 < k1) rep.k2_dominates = false;
            } else {
              rep.max_k1_over_delta_small =
                  std::max(rep.max_k1_over_delta_small, std::abs(k1) / c.delta());
              rep.max_k2_vs_Ldelta_small =
                  std::max(rep.max_k2_vs_Ldelta_small, std::abs(k2 / (c.L() * c.delta()) - 1.0));
            }
          }
  };
  sweep(cfg.large_values, true);
  sweep(cfg.small_values, false);
  if (cfg.large_values.empty()) rep.min_ratio_large = 0.0;
  return rep;
}

nlohmann::json RegimeReport::to_json() const {
  return {{"large_values", config.large_values},
          {"small_values", config.small_values},
          {"horizons", config.horizons},
          {"delta", config.delta},
          {"rows", rows.size()},
          {"min_K2_over_K1_large", min_ratio_large},
          {"K2_dominates_large", k2_dominates},
          {"max_abs_K1_over_delta_small", max_k1_over_delta_small},
          {"max_rel_dev_K2_from_L_delta_small", max_k2_vs_Ldelta_small},
          {"passed", passed()}};
}

std::string RegimeReport::csv() const {
  std::ostringstream os;
  os.precision(10);
  os << "regime,L_h,L_f,L_e,n,K1,K2\n";
  for (const auto& r : rows)
    os << (r.large ? "large" : "small") << ',' << r.L_h << ',' << r.L_f << ',' << r.L_e << ','
       << r.n << ',' << r.K1 << ',' << r.K2 << '\n';
  return os.str();
}

MatrixXd ObservableLinearSystem::transition() const { return flow(dt); }

MatrixXd ObservableLinearSystem::flow(double t) const {
  const MatrixXd Gt = G * t;
  return Gt.exp();
}

double ObservableLinearSystem::lipschitz() const { return spectral_norm(G); }

MatrixXd ObservableLinearSystem::observability(int q) const {
  if (q < 0) throw std::invalid_argument("observability: q must be >= 0");
  const int m = static_cast<int>(C.rows()), d = state_dim();
  const MatrixXd A = transition();
  MatrixXd O(m * (q + 1), d);
  MatrixXd block = C;
  for (int k = 0; k <= q; ++k) {
    O.middleRows(k * m, m) = block;
    block = block * A;
  }
  return O;
}

double ObservableLinearSystem::alpha(int q) const {
  const MatrixXd O = observability(q);
  if (O.rows() < O.cols()) return 0.0;
  Eigen::JacobiSVD<MatrixXd> svd(O);
  return svd.singularValues()(O.cols() - 1);
}

int ObservableLinearSystem::observability_index(int q_max, double tol) const {
  for (int q = 0; q <= q_max; ++q) {
    if (alpha(q) > tol * spectral_norm(observability(q))) return q;
  }
  return -1;
}

VectorXd ObservableLinearSystem::anchors(const VectorXd& s0, int q) const {
  return observability(q) * s0;
}

VectorXd ObservableLinearSystem::reconstruct(const VectorXd& z, int q, double t) const {
  const MatrixXd O = observability(q);
  if (z.size() != O.rows()) throw std::invalid_argument("reconstruct: anchor length mismatch");
  const VectorXd s0 = O.jacobiSvd(Eigen::ComputeThinU | Eigen::ComputeThinV).solve(z);
  return flow(t) * s0;
}

void ObservableLinearSystem::validate() const {
  if (G.rows() != G.cols() || G.rows() == 0) throw std::invalid_argument("G must be square");
  if (C.cols() != G.cols() || C.rows() == 0) throw std::invalid_argument("C column count must match G");
  if (!(dt > 0)) throw std::invalid_argument("dt must be positive");
}

ObservableLinearSystem ObservableLinearSystem::from_transition(const MatrixXd& A,
                                                               const MatrixXd& C, double dt) {
  if (!(dt > 0)) throw std::invalid_argument("dt must be positive");
  const MatrixXd L = A.log();
  ObservableLinearSystem s{L / dt, C, dt};
  s.validate();
  return s;
}

ObservableLinearSystem ObservableLinearSystem::random(std::uint64_t seed) {
  Rng rng(seed);
  for (;;) {
    const int d = 2 + static_cast<int>(rng.below(5));
    const int m = 1 + static_cast<int>(rng.below(d));
    MatrixXd G = gaussian(rng, d, d);
    G *= rng.uniform(0.1, 2.0) / spectral_norm(G);
    ObservableLinearSystem s{G, gaussian(rng, m, d) / std::sqrt(static_cast<double>(d)),
                             rng.uniform(0.1, 0.5)};
    const int p = s.observability_index(d + 2);
    if (p >= 0 && s.alpha(p) > 1e-3) return s;
  }
}

ObserverBoundResult check_observer_bound(const ObservableLinearSystem& sys, int q, double noise_level, int trials,
                        int times, double t_max, std::uint64_t seed, int q_max) {
  sys.validate();
  if (q < 0 || trials < 0 || times < 1 || !(t_max >= 0) || !(noise_level >= 0))
    throw std::invalid_argument("check_observer_bound: bad arguments");
  ObserverBoundResult r;
  r.q = q;
  r.alpha = sys.alpha(q);
  r.L_s = sys.lipschitz();
  r.noise = noise_level;
  if (!(r.alpha > 1e-12 * spectral_norm(sys.observability(q))))
    throw Unobservable("alpha(" + std::to_string(q) + ") = " + std::to_string(r.alpha) +
                       ": initial state not recoverable from the anchors");

  if (q_max < q) q_max = q + 3;
  for (int k = 0; k <= q_max; ++k) {
    r.alpha_curve.push_back(sys.alpha(k));
    if (k > 0 && r.alpha_curve[k] < r.alpha_curve[k - 1] * (1 - 1e-12) - 1e-14)
      r.alpha_monotone = false;
  }

  Rng rng(seed);
  const VectorXd s0 = unit(rng, sys.state_dim());
  const VectorXd z = sys.anchors(s0, q);
  std::vector<double> ts(times);
  for (int i = 0; i < times; ++i) ts[i] = times == 1 ? t_max : t_max * i / (times - 1);

  for (double t : ts) {
    const VectorXd truth = sys.flow(t) * s0;
    r.exact_error = std::max(r.exact_error, (truth - sys.reconstruct(z, q, t)).norm());
    r.curve.push_back({t, 0.0, 2.0 / r.alpha * noise_level * std::exp(r.L_s * t)});
  }
  for (int k = 0; k < trials; ++k) {
    const VectorXd noisy = z + unit(rng, static_cast<int>(z.size())) * noise_level;
    for (int i = 0; i < times; ++i) {
      const VectorXd truth = sys.flow(ts[i]) * s0;
      const double err = (truth - sys.reconstruct(noisy, q, ts[i])).norm();
      ObserverBoundPoint& p = r.curve[i];
      p.error = std::max(p.error, err);
      ++r.checks;
      if (exceeds(err, p.bound, truth.norm())) ++r.violations;
      if (p.bound > 0) r.max_ratio = std::max(r.max_ratio, err / p.bound);
    }
  }
  return r;
}

ObserverSuiteSummary run_observer_suite(const ObserverSuiteConfig& cfg) {
  if (cfg.systems < 1 || cfg.noise_draws < 1) throw std::invalid_argument("run_observer_suite: bad configuration");
  ObserverSuiteSummary s;
  s.config = cfg;
  Rng rng(cfg.seed);
  for (int i = 0; i < cfg.systems; ++i) {
    const std::uint64_t sys_seed = rng.next_u64();
    const ObservableLinearSystem sys = ObservableLinearSystem::random(sys_seed);
    const int p = sys.observability_index(sys.state_dim() + 2);
    const int q = p + static_cast<int>(rng.below(4));
    ObserverBoundResult r = check_observer_bound(sys, q, cfg.noise_level, cfg.noise_draws, cfg.times, cfg.t_max,
                                sys_seed ^ 0x9a2e, q + 3);
    s.trials += cfg.noise_draws;
    s.checks += r.checks;
    s.violations += r.violations;
    if (!r.alpha_monotone) ++s.non_monotone;
    for (std::size_t k = p + 1; k < r.alpha_curve.size(); ++k) {
      const double before = 2.0 / r.alpha_curve[k - 1] * cfg.noise_level;
      const double after = 2.0 / r.alpha_curve[k] * cfg.noise_level;
      if (after > before * (1 + 1e-12)) {
        ++s.bound_increasing;
        break;
      }
    }
    s.max_exact_error = std::max(s.max_exact_error, r.exact_error);
    s.max_ratio = std::max(s.max_ratio, r.max_ratio);
    s.results.push_back(std::move(r));
  }
  return s;
}

nlohmann::json ObserverSuiteSummary::to_json() const {
  return {{"systems", config.systems},
          {"noise_draws", config.noise_draws},
          {"noise_level", config.noise_level},
          {"times", config.times},
          {"t_max", config.t_max},
          {"seed", config.seed},
          {"trials", trials},
          {"checks", checks},
          {"violations", violations},
          {"alpha_non_monotone", non_monotone},
          {"bound_increasing_in_q", bound_increasing},
          {"max_noise_free_error", max_exact_error},
          {"max_error_over_bound", max_ratio},
          {"passed", passed()}};
}

std::string ObserverSuiteSummary::curves_csv() const {
  std::ostringstream os;
  os.precision(10);
  os << "system,q,t,error,bound\n";
  for (std::size_t i = 0; i < results.size(); ++i)
    for (const auto& p : results[i].curve)
      os << i << ',' << results[i].q << ',' << p.t << ',' << p.error << ',' << p.bound << '\n';
  return os.str();
}

std::string ObserverSuiteSummary::alpha_csv() const {
  std::ostringstream os;
  os.precision(10);
  os << "system,q,alpha\n";
  for (std::size_t i = 0; i < results.size(); ++i)
    for (std::size_t k = 0; k < results[i].alpha_curve.size(); ++k)
      os << i << ',' << k << ',' << results[i].alpha_curve[k] << '\n';
  return os.str();
}

}  // namespace dualobs::theory
