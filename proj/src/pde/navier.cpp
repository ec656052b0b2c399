#include "dualobs/pde/navier.hpp"

#include <fftw3.h>

#include <cmath>
#include <complex>
#include <memory>
#include <numbers>
#include <sstream>

#include "dualobs/core/rng.hpp"

namespace dualobs::pde {
namespace {

using cplx = std::complex<double>;
constexpr double kTwoPi = 2.0 * std::numbers::pi;

int signed_mode(int i, int n) { return i <= n / 2 ? i : i - n; }

// FFTW plans and wavenumber tables for one resolution. Plans use
// FFTW_ESTIMATE so the chosen algorithm (and hence rounding) does not depend
// on timing measurements.
class Spectral {
 public:
  explicit Spectral(int n) : n_(n), nc_(n / 2 + 1) {
    const std::size_t nr = static_cast<std::size_t>(n) * n;
    const std::size_t ns = static_cast<std::size_t>(n) * nc_;
    real_ = fftw_alloc_real(nr);
    spec_ = fftw_alloc_complex(ns);
    fwd_ = fftw_plan_dft_r2c_2d(n, n, real_, spec_, FFTW_ESTIMATE);
    inv_ = fftw_plan_dft_c2r_2d(n, n, spec_, real_, FFTW_ESTIMATE);
    kx_.resize(ns);
    ky_.resize(ns);
    k2_.resize(ns);
    keep_.resize(ns);
    for (int iy = 0; iy < n; ++iy) {
      for (int ix = 0; ix < nc_; ++ix) {
        const std::size_t i = static_cast<std::size_t>(iy) * nc_ + ix;
        const int my = signed_mode(iy, n);
        const int mx = ix;
        // Odd derivatives of the Nyquist modes are set to zero.
        kx_[i] = (2 * mx == n) ? 0.0 : kTwoPi * mx;
        ky_[i] = (2 * iy == n) ? 0.0 : kTwoPi * my;
        k2_[i] = kTwoPi * kTwoPi * (static_cast<double>(mx) * mx + static_cast<double>(my) * my);
        keep_[i] = (3 * std::abs(mx) < n && 3 * std::abs(my) < n) ? 1.0 : 0.0;
      }
    }
  }
  ~Spectral() {
    fftw_destroy_plan(fwd_);
    fftw_destroy_plan(inv_);
    fftw_free(real_);
    fftw_free(spec_);
  }
  Spectral(const Spectral&) = delete;
  Spectral& operator=(const Spectral&) = delete;

  int n() const { return n_; }
  std::size_t spec_size() const { return static_cast<std::size_t>(n_) * nc_; }
  std::size_t real_size() const { return static_cast<std::size_t>(n_) * n_; }

  void forward(const double* phys, cplx* out) {
    std::copy(phys, phys + real_size(), real_);
    fftw_execute(fwd_);
    const auto* s = reinterpret_cast<const cplx*>(spec_);
    std::copy(s, s + spec_size(), out);
  }

  // Normalized inverse: inverse(forward(f)) == f up to rounding.
  void inverse(const cplx* in, double* phys) {
    auto* s = reinterpret_cast<cplx*>(spec_);
    std::copy(in, in + spec_size(), s);
    fftw_execute(inv_);
    const double scale = 1.0 / static_cast<double>(real_size());
    for (std::size_t i = 0; i < real_size(); ++i) phys[i] = real_[i] * scale;
  }

  const std::vector<double>& kx() const { return kx_; }
  const std::vector<double>& ky() const { return ky_; }
  const std::vector<double>& k2() const { return k2_; }
  const std::vector<double>& keep() const { return keep_; }

  double k2_max() const {
    double m = 0.0;
    for (double v : k2_) m = std::max(m, v);
    return m;
  }

 private:
  int n_, nc_;
  double* real_;
  fftw_complex* spec_;
  fftw_plan fwd_, inv_;
  std::vector<double> kx_, ky_, k2_, keep_;
};

// Right-hand side of the vorticity equation in spectral space.
class Rhs {
 public:
  Rhs(Spectral& sp, double nu, const std::vector<cplx>& force_hat)
      : sp_(sp), nu_(nu), force_hat_(force_hat) {
    const std::size_t ns = sp.spec_size(), nr = sp.real_size();
    tmp_.resize(ns);
    u_.resize(nr);
    v_.resize(nr);
    wx_.resize(nr);
    wy_.resize(nr);
    adv_.resize(nr);
  }

  // out = -(u.grad w)^ + nu lap(w)^ + f^; returns max(|u| + |v|) on the grid.
  double operator()(const std::vector<cplx>& w, std::vector<cplx>& out) {
    const auto& kx = sp_.kx();
    const auto& ky = sp_.ky();
    const auto& k2 = sp_.k2();
    const cplx I(0.0, 1.0);
    const std::size_t ns = sp_.spec_size();
    // psi = w / |k|^2, u = psi_y, v = -psi_x
    for (std::size_t i = 0; i < ns; ++i) {
      const cplx psi = k2[i] > 0.0 ? w[i] / k2[i] : cplx(0.0);
      tmp_[i] = I * ky[i] * psi;
    }
    sp_.inverse(tmp_.data(), u_.data());
    for (std::size_t i = 0; i < ns; ++i) {
      const cplx psi = k2[i] > 0.0 ? w[i] / k2[i] : cplx(0.0);
      tmp_[i] = -I * kx[i] * psi;
    }
    sp_.inverse(tmp_.data(), v_.data());
    for (std::size_t i = 0; i < ns; ++i) tmp_[i] = I * kx[i] * w[i];
    sp_.inverse(tmp_.data(), wx_.data());
    for (std::size_t i = 0; i < ns; ++i) tmp_[i] = I * ky[i] * w[i];
    sp_.inverse(tmp_.data(), wy_.data());
    double speed = 0.0;
    for (std::size_t i = 0; i < adv_.size(); ++i) {
      adv_[i] = u_[i] * wx_[i] + v_[i] * wy_[i];
      speed = std::max(speed, std::abs(u_[i]) + std::abs(v_[i]));
    }
    sp_.forward(adv_.data(), tmp_.data());
    const auto& keep = sp_.keep();
    for (std::size_t i = 0; i < ns; ++i) {
      out[i] = -keep[i] * tmp_[i] - nu_ * k2[i] * w[i] + force_hat_[i];
    }
    return speed;
  }

 private:
  Spectral& sp_;
  double nu_;
  const std::vector<cplx>& force_hat_;
  std::vector<cplx> tmp_;
  std::vector<double> u_, v_, wx_, wy_, adv_;
};

void check_field(const Field& f, const GridSpec& grid, const char* what) {
  if (f.rows() != grid.resolution || f.cols() != grid.resolution) {
    throw std::invalid_argument(std::string(what) + " has shape " + shape_string(f.rows(), f.cols()) +
                                ", grid is " + std::to_string(grid.resolution));
  }
}

bool all_finite(const Field& f) {
  for (double v : f.storage())
    if (!std::isfinite(v)) return false;
  return true;
}

double node_coord(int i, int n) { return static_cast<double>(i) / n; }

}  // namespace

void GridSpec::validate() const {
  if (resolution < 8 || (resolution & (resolution - 1)) != 0)
    throw std::invalid_argument("resolution must be a power of two >= 8, got " +
                                std::to_string(resolution));
  if (frames < 2) throw std::invalid_argument("frames must be >= 2");
  if (!(dt_star > 0.0) || !std::isfinite(dt_star)) throw std::invalid_argument("dt_star must be > 0");
}

Field sample_initial_condition(std::uint64_t seed, const GridSpec& grid, double tau, double gamma) {
  grid.validate();
  const int n = grid.resolution;
  Rng rng(seed);
  Field noise(n, n);
  for (auto& v : noise.storage()) v = rng.normal();

  Spectral sp(n);
  std::vector<cplx> hat(sp.spec_size());
  sp.forward(noise.data(), hat.data());
  const auto& k2 = sp.k2();
  for (std::size_t i = 0; i < hat.size(); ++i) {
    hat[i] *= k2[i] > 0.0 ? std::pow(k2[i] + tau * tau, -gamma / 2.0) : 0.0;
  }
  Field w(n, n);
  sp.inverse(hat.data(), w.data());

  double mean = 0.0;
  for (double v : w.storage()) mean += v;
  mean /= static_cast<double>(w.size());
  double ss = 0.0;
  for (auto& v : w.storage()) {
    v -= mean;
    ss += v * v;
  }
  const double rms = std::sqrt(ss / static_cast<double>(w.size()));
  for (auto& v : w.storage()) v /= rms;
  return w;
}

Field taylor_green(const GridSpec& grid, double amplitude, int wavenumber) {
  const int n = grid.resolution;
  const double k = kTwoPi * wavenumber;
  Field w(n, n);
  for (int iy = 0; iy < n; ++iy)
    for (int ix = 0; ix < n; ++ix)
      w(iy, ix) = amplitude * 2.0 * k * k * std::sin(k * node_coord(ix, n)) *
                  std::sin(k * node_coord(iy, n));
  return w;
}

Field default_forcing(const GridSpec& grid) {
  const int n = grid.resolution;
  Field f(n, n);
  for (int iy = 0; iy < n; ++iy)
    for (int ix = 0; ix < n; ++ix) {
      const double s = kTwoPi * (node_coord(ix, n) + node_coord(iy, n));
      f(iy, ix) = 0.1 * (std::sin(s) + std::cos(s));
    }
  return f;
}

double max_speed(const Field& w) {
  const int n = w.rows();
  Spectral sp(n);
  std::vector<cplx> hat(sp.spec_size()), out(sp.spec_size());
  sp.forward(w.data(), hat.data());
  const std::vector<cplx> zero(sp.spec_size());
  Rhs rhs(sp, 0.0, zero);
  return rhs(hat, out);
}

double enstrophy(const Field& w) {
  double s = 0.0;
  for (double v : w.storage()) s += v * v;
  return s;
}

int suggest_substeps(const Field& ic, double nu, const GridSpec& grid) {
  const int n = grid.resolution;
  Spectral sp(n);
  const double speed = max_speed(ic);
  int substeps = 1;
  auto ok = [&](int s) {
    const double dt = grid.dt_star / s;
    return speed * dt * n <= 0.5 * kMaxCfl && nu * sp.k2_max() * dt <= 0.5 * kRk4RealStability;
  };
  while (!ok(substeps)) {
    if (substeps > (1 << 24)) throw std::runtime_error("suggest_substeps: no stable step found");
    substeps *= 2;
  }
  return substeps;
}

DenseTrajectory simulate_navier(const Field& ic, double nu, const Field& force,
                                const GridSpec& grid, int substeps,
                                NavierDiagnostics* diagnostics) {
  grid.validate();
  check_field(ic, grid, "initial condition");
  check_field(force, grid, "forcing");
  if (!(nu > 0.0)) throw std::invalid_argument("viscosity must be > 0");
  if (substeps < 1) throw std::invalid_argument("substeps must be >= 1");

  const int n = grid.resolution;
  const double dt = grid.dt_star / substeps;
  Spectral sp(n);

  const double diffusive = nu * sp.k2_max() * dt;
  if (diffusive > kRk4RealStability) {
    std::ostringstream os;
    os << "diffusive number " << diffusive << " exceeds the RK4 stability limit "
       << kRk4RealStability << " (substeps=" << substeps << ")";
    throw StepSizeError(os.str(), 0.0);
  }

  std::vector<cplx> force_hat(sp.spec_size());
  sp.forward(force.data(), force_hat.data());
  Rhs rhs(sp, nu, force_hat);

  std::vector<cplx> w(sp.spec_size()), k1(w.size()), k2(w.size()), k3(w.size()), k4(w.size()),
      stage(w.size());
  sp.forward(ic.data(), w.data());

  DenseTrajectory out;
  out.grid = grid;
  out.frames.reserve(static_cast<std::size_t>(grid.frames));
  out.frames.push_back(ic);

  double worst_cfl = 0.0;
  long step = 0;
  for (int frame = 1; frame < grid.frames; ++frame) {
    for (int s = 0; s < substeps; ++s, ++step) {
      const double speed = rhs(w, k1);
      const double cfl = speed * dt * n;
      worst_cfl = std::max(worst_cfl, cfl);
      if (!std::isfinite(cfl)) {
        throw InstabilityError("non-finite velocity at substep " + std::to_string(step), step);
      }
      if (cfl > kMaxCfl) {
        std::ostringstream os;
        os << "CFL " << cfl << " exceeds " << kMaxCfl << " at substep " << step
           << " (substeps per frame=" << substeps << ")";
        throw StepSizeError(os.str(), cfl);
      }
      for (std::size_t i = 0; i < w.size(); ++i) stage[i] = w[i] + 0.5 * dt * k1[i];
      rhs(stage, k2);
      for (std::size_t i = 0; i < w.size(); ++i) stage[i] = w[i] + 0.5 * dt * k2[i];
      rhs(stage, k3);
      for (std::size_t i = 0; i < w.size(); ++i) stage[i] = w[i] + dt * k3[i];
      rhs(stage, k4);
      for (std::size_t i = 0; i < w.size(); ++i)
        w[i] += dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
    }
    Field f(n, n);
    sp.inverse(w.data(), f.data());
    if (!all_finite(f)) {
      throw InstabilityError("non-finite vorticity in frame " + std::to_string(frame) +
                                 " (substep " + std::to_string(step) + ")",
                             step);
    }
    out.frames.push_back(std::move(f));
  }
  if (diagnostics) {
    diagnostics->max_cfl = worst_cfl;
    diagnostics->diffusive_number = diffusive;
  }
  return out;
}

}  // namespace dualobs::pde
