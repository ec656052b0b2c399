#pragma once

// Central finite-difference checks for reverse-mode gradients.

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "dualobs/core/autodiff.hpp"

namespace dualobs::testing {

struct BlockError {
  std::string name;
  double rel_error = 0.0;  // ||analytic - numeric|| / max(||analytic||, ||numeric||, floor)
  double analytic_norm = 0.0;
  double numeric_norm = 0.0;
};

/// `loss` builds a fresh graph from the current parameter values and returns
/// the scalar loss; when `grad` is true it must also call backward().
using LossFn = std::function<double(bool grad)>;

/// Compares Parameter::grad after one backward pass against central
/// differences with step eps. Each block is checked on at most
/// `max_entries` entries chosen with a fixed stride.
inline std::vector<BlockError> check_gradients(const std::vector<Parameter<double>*>& params,
                                               const LossFn& loss, double eps = 1e-4,
                                               std::size_t max_entries = 64) {
  for (auto* p : params) p->zero_grad();
  loss(true);
  std::vector<BlockError> out;
  for (auto* p : params) {
    const std::size_t n = p->value.size();
    const std::size_t stride = std::max<std::size_t>(1, n / max_entries);
    double diff2 = 0.0, a2 = 0.0, n2 = 0.0;
    for (std::size_t i = 0; i < n; i += stride) {
      double& v = p->value.data()[i];
      const double saved = v;
      v = saved + eps;
      const double up = loss(false);
      v = saved - eps;
      const double down = loss(false);
      v = saved;
      const double numeric = (up - down) / (2 * eps);
      const double analytic = p->grad.data()[i];
      diff2 += (analytic - numeric) * (analytic - numeric);
      a2 += analytic * analytic;
      n2 += numeric * numeric;
    }
    const double scale = std::max({std::sqrt(a2), std::sqrt(n2), 1e-8});
    out.push_back({p->name, std::sqrt(diff2) / scale, std::sqrt(a2), std::sqrt(n2)});
  }
  return out;
}

inline double worst(const std::vector<BlockError>& errs) {
  double w = 0.0;
  for (const auto& e : errs) w = std::max(w, e.rel_error);
  return w;
}

}  // namespace dualobs::testing
