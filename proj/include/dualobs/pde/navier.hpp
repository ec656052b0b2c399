#pragma once

// Pseudo-spectral 2-D incompressible Navier-Stokes in vorticity form on the
// periodic unit square:
//
//   w_t + (u . grad) w = nu * lap(w) + f,   lap(psi) = -w,   u = (psi_y, -psi_x)
//
// Classical RK4 in time with a fixed number of substeps per recorded frame,
// 2/3-rule dealiasing of the advection term. Fields are Matrix<double>
// indexed (y, x) with node (iy, ix) at (ix / N, iy / N).

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "dualobs/core/matrix.hpp"

namespace dualobs::pde {

using Field = Matrix<double>;

struct GridSpec {
  int resolution = 64;
  double dt_star = 1.0;  // time between recorded frames
  int frames = 20;

  void validate() const;
};

struct DenseTrajectory {
  std::vector<Field> frames;  // frames[0] is the initial condition
  GridSpec grid;
  std::uint64_t ic_seed = 0;
};

class InstabilityError : public std::runtime_error {
 public:
  InstabilityError(const std::string& what, long substep)
      : std::runtime_error(what), substep_(substep) {}
  long substep() const { return substep_; }

 private:
  long substep_;
};

/// Raised before integration when the requested step violates the CFL or
/// diffusive stability limit.
class StepSizeError : public std::runtime_error {
 public:
  StepSizeError(const std::string& what, double cfl) : std::runtime_error(what), cfl_(cfl) {}
  double cfl() const { return cfl_; }

 private:
  double cfl_;
};

inline constexpr double kMaxCfl = 0.5;
// Extent of the RK4 stability region along the negative real axis.
inline constexpr double kRk4RealStability = 2.785;

/// Gaussian random field with power spectrum (|k|^2 + tau^2)^(-gamma),
/// k = 2 pi m, zero mean and unit RMS.
Field sample_initial_condition(std::uint64_t seed, const GridSpec& grid, double tau = 7.0,
                               double gamma = 2.5);

/// amplitude * 2 k^2 sin(k x) sin(k y) with k = 2 pi * wavenumber.
Field taylor_green(const GridSpec& grid, double amplitude = 1.0, int wavenumber = 1);

/// 0.1 (sin(2 pi (x + y)) + cos(2 pi (x + y))).
Field default_forcing(const GridSpec& grid);
inline constexpr const char* kDefaultForcingId = "0.1*(sin(2pi(x+y))+cos(2pi(x+y)))";
inline constexpr double kDefaultViscosity = 1e-3;

struct NavierDiagnostics {
  double max_cfl = 0.0;           // worst advective CFL seen over all substeps
  double diffusive_number = 0.0;  // nu * |k|max^2 * dt
};

/// Integrates grid.frames - 1 intervals of grid.dt_star, each split into
/// `substeps` RK4 steps. The CFL number max(|u|+|v|) dt / dx is checked at
/// every substep; exceeding kMaxCfl throws StepSizeError.
DenseTrajectory simulate_navier(const Field& ic, double nu, const Field& force,
                                const GridSpec& grid, int substeps,
                                NavierDiagnostics* diagnostics = nullptr);

/// Smallest power-of-two substep count whose diffusive number and
/// initial-state CFL are within limits with a safety factor of 2.
int suggest_substeps(const Field& ic, double nu, const GridSpec& grid);

/// Max over the grid of |u| + |v| for a vorticity field.
double max_speed(const Field& w);

double enstrophy(const Field& w);

}  // namespace dualobs::pde
