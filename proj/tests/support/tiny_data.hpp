#pragma once

#include <functional>

#include "dualobs/pde/dataset.hpp"

namespace dualobs::testing {

/// Dataset built from a closed-form field instead of the solver:
/// value(frame, flat index) for every split.
inline pde::SparseDataset synthetic_dataset(int res, int frames, int stride, double keep, int n_train, int n_eval,
                                            const std::function<double(int traj, int frame, int flat)>& field,
                                            int sim_frames = -1) {
  pde::DatasetConfig c;
  c.grid = {res, 1.0, frames};
  c.sim_frames = sim_frames < 0 ? 2 * frames : sim_frames;
  c.keep_ratio = keep;
  c.temporal_stride = stride;
  c.counts = {n_train, n_eval, n_eval};
  c.seed = 5;
  auto mask = pde::SparseMask::sample(res, keep, stride, 11);
  auto make = [&](int count, int nframes, int offset) {
    std::vector<pde::DenseTrajectory> out;
    for (int k = 0; k < count; ++k) {
      pde::DenseTrajectory d;
      d.grid = c.grid;
      d.ic_seed = static_cast<std::uint64_t>(offset + k);
      for (int f = 0; f < nframes; ++f) {
        pde::Field fld(res, res);
        for (int i = 0; i < res * res; ++i) fld.data()[i] = field(offset + k, f, i);
        d.frames.push_back(std::move(fld));
      }
      out.push_back(std::move(d));
    }
    return out;
  };
  return pde::make_sparse_dataset(c, mask, make(n_train, frames, 0), make(n_eval, c.sim_frames, 1000),
                                  make(n_eval, c.sim_frames, 2000));
}

}  // namespace dualobs::testing
