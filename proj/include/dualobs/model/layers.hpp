#pragma once

#include <cmath>
#include <memory>
#include <string>
#include <vector>

#include "dualobs/core/autodiff.hpp"
#include "dualobs/core/rng.hpp"

namespace dualobs::model {

enum class Activation { kRelu, kSwish };

/// Owns parameter blocks in registration order; blocks never move once
/// created, so Parameter pointers stay valid.
template <class T>
class ParamStore {
 public:
  Parameter<T>& create(const std::string& name, int rows, int cols) {
    blocks_.push_back(std::make_unique<Parameter<T>>(name, Matrix<T>(rows, cols)));
    return *blocks_.back();
  }
  std::vector<Parameter<T>*> all() const {
    std::vector<Parameter<T>*> out;
    for (const auto& b : blocks_) out.push_back(b.get());
    return out;
  }
  Parameter<T>* find(const std::string& name) const {
    for (const auto& b : blocks_)
      if (b->name == name) return b.get();
    return nullptr;
  }
  std::size_t count() const {
    std::size_t n = 0;
    for (const auto& b : blocks_) n += b->value.size();
    return n;
  }

 private:
  std::vector<std::unique_ptr<Parameter<T>>> blocks_;
};

/// U(-1/sqrt(fan_in), 1/sqrt(fan_in)), drawn in block order.
template <class T>
void init_uniform(Parameter<T>& p, int fan_in, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  for (auto& v : p.value.storage()) v = static_cast<T>(rng.uniform(-bound, bound));
}

template <class T>
struct Linear {
  Parameter<T>* w = nullptr;  // in x out
  Parameter<T>* b = nullptr;  // 1 x out

  Linear() = default;
  Linear(ParamStore<T>& store, const std::string& name, int in, int out) {
    w = &store.create(name + ".W", in, out);
    b = &store.create(name + ".b", 1, out);
  }
  void init(int fan_in, Rng& rng) {
    init_uniform(*w, fan_in, rng);
    init_uniform(*b, fan_in, rng);
  }
  Var operator()(Graph<T>& g, Var x) const { return g.affine(x, g.param(*w), g.param(*b)); }
};

template <class T>
Var activate(Graph<T>& g, Var x, Activation a) {
  return a == Activation::kRelu ? g.relu(x) : g.swish(x);
}

/// Linear -> activation -> Linear.
template <class T>
struct Mlp2 {
  Linear<T> l0, l1;
  Activation act = Activation::kRelu;

  Mlp2() = default;
  Mlp2(ParamStore<T>& store, const std::string& name, int in, int hidden, int out, Activation a)
      : l0(store, name + ".0", in, hidden), l1(store, name + ".1", hidden, out), act(a) {}
  void init(Rng& rng) {
    l0.init(l0.w->value.rows(), rng);
    l1.init(l1.w->value.rows(), rng);
  }
  Var operator()(Graph<T>& g, Var x) const { return l1(g, activate(g, l0(g, x), act)); }
};

}  // namespace dualobs::model
