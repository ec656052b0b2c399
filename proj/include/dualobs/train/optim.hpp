#pragma once

#include <cmath>
#include <vector>

#include "dualobs/core/autodiff.hpp"

namespace dualobs::train {

/// Adam with decoupled weight decay.
template <class T>
class AdamW {
 public:
  AdamW(std::vector<Parameter<T>*> params, double lr, double weight_decay, double beta1 = 0.9,
        double beta2 = 0.999, double eps = 1e-8)
      : params_(std::move(params)), lr_(lr), wd_(weight_decay), b1_(beta1), b2_(beta2), eps_(eps) {
    for (auto* p : params_) {
      m_.emplace_back(p->value.size(), 0.0);
      v_.emplace_back(p->value.size(), 0.0);
    }
  }

  void set_lr(double lr) { lr_ = lr; }
  double lr() const { return lr_; }
  long steps() const { return t_; }

  void zero_grad() {
    for (auto* p : params_) p->zero_grad();
  }

  double grad_norm() const {
    double s = 0.0;
    for (const auto* p : params_)
      for (T g : p->grad.storage()) s += static_cast<double>(g) * g;
    return std::sqrt(s);
  }

  /// Rescales gradients so their global norm is at most max_norm; returns
  /// the norm before clipping.
  double clip_grad_norm(double max_norm) {
    const double n = grad_norm();
    if (n > max_norm) {
      const double s = max_norm / (n + 1e-12);
      for (auto* p : params_)
        for (T& g : p->grad.storage()) g = static_cast<T>(g * s);
    }
    return n;
  }

  void step() {
    ++t_;
    const double c1 = 1.0 - std::pow(b1_, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(b2_, static_cast<double>(t_));
    for (std::size_t k = 0; k < params_.size(); ++k) {
      auto& val = params_[k]->value.storage();
      const auto& grad = params_[k]->grad.storage();
      auto& m = m_[k];
      auto& v = v_[k];
      for (std::size_t i = 0; i < val.size(); ++i) {
        const double g = grad[i];
        m[i] = b1_ * m[i] + (1 - b1_) * g;
        v[i] = b2_ * v[i] + (1 - b2_) * g * g;
        double x = val[i];
        x -= lr_ * wd_ * x;
        x -= lr_ * (m[i] / c1) / (std::sqrt(v[i] / c2) + eps_);
        val[i] = static_cast<T>(x);
      }
    }
  }

 private:
  std::vector<Parameter<T>*> params_;
  std::vector<std::vector<double>> m_, v_;
  double lr_, wd_, b1_, b2_, eps_;
  long t_ = 0;
};

}  // namespace dualobs::train
