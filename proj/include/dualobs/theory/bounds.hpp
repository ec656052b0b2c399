#pragma once

// Numerical checks of the two error bounds on synthetic systems whose
// constants are known: latent vs re-projecting rollouts (linear maps with
// bounded sine perturbations) and observer reconstruction from anchor
// sequences (continuous-time linear systems).

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

namespace dualobs::theory {

using Eigen::MatrixXd;
using Eigen::VectorXd;

class HypothesisViolation : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class Unobservable : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// sum_{k<n} r^k, exact at r = 1.
double geometric_sum(double r, int n);

struct LipschitzConstants {
  double L_f = 1, L_h = 1, L_e = 1;
  double d_f = 0, d_h = 0, d_e = 0;

  double L() const { return L_h * L_f * L_e; }
  double delta() const { return d_h + L_h * d_f + L_h * L_f * d_e; }
};

/// Bound on |s[n] - h^(f^n(e(s0)))|.
double bound_latent(const LipschitzConstants& c, int n);
/// Bound on |s[n] - (h^ o f^ o e^)^n(s0)|.
double bound_reproject(const LipschitzConstants& c, int n);
/// Split of both bounds as delta + K: {K1 (latent), K2 (re-projecting)}.
std::pair<double, double> excess_terms(const LipschitzConstants& c, int n);

/// x -> M x, approximated by x -> M x + a * sin(W x + b) (elementwise).
/// The perturbation has sup norm <= |a| and Jacobian norm <= |diag(a) W|.
struct PerturbedLinearMap {
  MatrixXd M, W;
  VectorXd a, b;

  int in_dim() const { return static_cast<int>(M.cols()); }
  int out_dim() const { return static_cast<int>(M.rows()); }
  VectorXd exact(const VectorXd& x) const { return M * x; }
  VectorXd approx(const VectorXd& x) const;
  double deviation_bound() const;  // |a|
  double lipschitz_bound() const;  // |M|_2 + |diag(a) W|_2

  static PerturbedLinearMap unperturbed(const MatrixXd& M);
};

/// True maps f (latent step), h (readout), e = pseudo-inverse of h, so that
/// e(h(z)) = z and the re-projecting scheme is consistent on exact data.
struct SyntheticSystem {
  PerturbedLinearMap f, h, e;
  LipschitzConstants declared;

  int latent_dim() const { return f.in_dim(); }
  int obs_dim() const { return h.out_dim(); }

  /// Declared constants from the analytic certificates.
  void certify();
  /// Structural checks plus L != 1.
  void validate() const;
  /// Random system with product constant close to `target_L`.
  static SyntheticSystem random(std::uint64_t seed, double target_L);
};

struct RolloutBoundPoint {
  int n = 0;
  double err_latent = 0, bound_latent = 0;
  double err_reproject = 0, bound_reproject = 0;
};

struct RolloutBoundResult {
  LipschitzConstants constants;
  int checks = 0;
  int violations_latent = 0;
  int violations_reproject = 0;
  int not_strict = 0;  // error == bound although some delta > 0
  double max_ratio_latent = 0;  // max error / bound over bounded checks
  double max_ratio_reproject = 0;
  double measured_deviation = 0;  // sampled sup of |true - approx| / declared delta (max over maps)
  double measured_lipschitz = 0;  // sampled max slope / declared L (max over maps)
  std::vector<RolloutBoundPoint> curve;  // worst-case (max over ICs) error per n
};

/// Samples the hypotheses (throws HypothesisViolation when a sampled
/// deviation or slope exceeds its declared constant), then compares both
/// schemes against their bounds for `ics` random initial conditions.
RolloutBoundResult check_rollout_bounds(const SyntheticSystem& sys, int n_max, int ics, std::uint64_t seed);

struct RolloutSuiteConfig {
  int systems = 1000;
  int n_max = 8;
  int ics = 4;
  double L_min = 0.2;
  double L_max = 8.0;
  std::uint64_t seed = 0;
};

struct RolloutSuiteSummary {
  RolloutSuiteConfig config;
  int checks = 0;
  int violations_latent = 0;
  int violations_reproject = 0;
  int not_strict = 0;
  double L_lo = 0, L_hi = 0;
  double max_ratio_latent = 0, max_ratio_reproject = 0;
  std::vector<RolloutBoundResult> results;

  bool passed() const { return violations_latent == 0 && violations_reproject == 0; }
  nlohmann::json to_json() const;
  /// system,L,n,err_latent,bound_latent,err_reproject,bound_reproject
  std::string curves_csv() const;
};

RolloutSuiteSummary run_rollout_suite(const RolloutSuiteConfig& cfg);

struct RegimeRow {
  double L_h = 0, L_f = 0, L_e = 0;
  int n = 0;
  double K1 = 0, K2 = 0;
  bool large = false;
};

struct RegimeConfig {
  std::vector<double> large_values{10.0, 30.0, 100.0};
  std::vector<double> small_values{0.001, 0.003, 0.01};
  std::vector<int> horizons{3, 4, 5};
  double delta = 0.1;  // d_f = d_h = d_e
};

struct RegimeReport {
  RegimeConfig config;
  std::vector<RegimeRow> rows;
  double min_ratio_large = 0;        // min K2 / K1 over the large grid
  bool k2_dominates = false;         // K2 >= K1 on every large row
  double max_k1_over_delta_small = 0;  // max |K1| / delta on the small grid
  double max_k2_vs_Ldelta_small = 0;   // max |K2 / (L delta) - 1| on the small grid

  /// K2 >= K1 and K2 / K1 > 100 on the large grid; |K1| < 1e-3 delta and
  /// K2 within 1% of L delta on the small grid.
  bool passed() const {
    return k2_dominates && min_ratio_large > 1e2 && max_k1_over_delta_small < 1e-3 &&
           max_k2_vs_Ldelta_small < 1e-2;
  }
  nlohmann::json to_json() const;
  std::string csv() const;
};

RegimeReport compare_regimes(const RegimeConfig& cfg);

/// ds/dt = G s, anchors z[n] = C s(n dt). A = exp(G dt) is the anchor step.
struct ObservableLinearSystem {
  MatrixXd G, C;
  double dt = 1.0;

  int state_dim() const { return static_cast<int>(G.rows()); }
  MatrixXd transition() const;
  MatrixXd flow(double t) const;        // exp(G t)
  double lipschitz() const;             // |G|_2
  MatrixXd observability(int q) const;  // [C; CA; ...; CA^q]
  double alpha(int q) const;            // smallest singular value of the above
  /// Smallest q with alpha(q) > tol * |O_q|, or -1 up to q_max.
  int observability_index(int q_max, double tol = 1e-10) const;

  /// Stacked anchors [z[0]; ...; z[q]] of the trajectory from s0.
  VectorXd anchors(const VectorXd& s0, int q) const;
  /// Least-squares initial state from (noisy) anchors, then the flow to t.
  VectorXd reconstruct(const VectorXd& anchors, int q, double t) const;

  void validate() const;
  static ObservableLinearSystem from_transition(const MatrixXd& A, const MatrixXd& C, double dt);
  static ObservableLinearSystem random(std::uint64_t seed);
};

struct ObserverBoundPoint {
  double t = 0, error = 0, bound = 0;
};

struct ObserverBoundResult {
  int q = 0;
  double alpha = 0, L_s = 0, noise = 0;
  double exact_error = 0;  // noise-free reconstruction error, max over t
  int checks = 0, violations = 0;
  double max_ratio = 0;
  bool alpha_monotone = true;
  std::vector<double> alpha_curve;  // alpha(0..q_max)
  std::vector<ObserverBoundPoint> curve;
};

/// Reconstruction error vs 2 alpha(q)^-1 |delta| e^(L_s t) for `trials`
/// noise draws with |delta| = noise_level, at `times` evenly spaced in
/// [0, t_max]. Throws Unobservable when alpha(q) vanishes.
ObserverBoundResult check_observer_bound(const ObservableLinearSystem& sys, int q, double noise_level, int trials,
                        int times, double t_max, std::uint64_t seed, int q_max = -1);

struct ObserverSuiteConfig {
  int systems = 1000;
  int noise_draws = 1;
  int times = 8;
  double t_max = 1.0;
  double noise_level = 1e-2;
  std::uint64_t seed = 0;
};

struct ObserverSuiteSummary {
  ObserverSuiteConfig config;
  int trials = 0, checks = 0, violations = 0;
  int non_monotone = 0;
  int bound_increasing = 0;  // bound at fixed |delta| grew with q
  double max_exact_error = 0;
  double max_ratio = 0;
  std::vector<ObserverBoundResult> results;

  bool passed() const {
    return violations == 0 && non_monotone == 0 && bound_increasing == 0 && max_exact_error < 1e-10;
  }
  nlohmann::json to_json() const;
  std::string curves_csv() const;  // system,t,error,bound
  std::string alpha_csv() const;   // system,q,alpha
};

ObserverSuiteSummary run_observer_suite(const ObserverSuiteConfig& cfg);

}  // namespace dualobs::theory
