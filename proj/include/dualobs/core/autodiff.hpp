#pragma once

// Tape-based reverse-mode differentiation over 2-D matrices.
//
// A Graph records every operation in creation order. backward() walks the
// tape in reverse and accumulates gradients into inputs that require them;
// parameter gradients are added to Parameter::grad so one Graph per
// trajectory can be built, differentiated and dropped while gradients
// accumulate across a batch.

#include <algorithm>
#include <cmath>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "dualobs/core/matrix.hpp"
#include "dualobs/simd/kernels.hpp"

namespace dualobs {

template <class T>
struct Parameter {
  std::string name;
  Matrix<T> value;
  Matrix<T> grad;

  Parameter() = default;
  Parameter(std::string n, Matrix<T> v)
      : name(std::move(n)), value(std::move(v)), grad(value.rows(), value.cols()) {}

  void zero_grad() {
    if (!grad.same_shape(value)) grad = Matrix<T>(value.rows(), value.cols());
    grad.fill(T(0));
  }
};

struct Var {
  int id = -1;
  bool valid() const { return id >= 0; }
};

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

template <class T>
class Graph {
 public:
  explicit Graph(bool enable_grad = true) : enable_grad_(enable_grad) {}

  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  bool grad_enabled() const { return enable_grad_; }
  std::size_t size() const { return nodes_.size(); }

  // ---- leaves ---------------------------------------------------------------

  Var constant(Matrix<T> v) { return push(std::move(v), false); }

  /// Differentiable input that is not a parameter (its gradient is read
  /// back with grad()).
  Var leaf(Matrix<T> v) { return push(std::move(v), enable_grad_); }

  Var param(Parameter<T>& p) {
    if (auto it = param_ids_.find(&p); it != param_ids_.end()) return Var{it->second};
    Node n;
    n.external = &p.value;
    n.requires_grad = enable_grad_;
    n.param = &p;
    nodes_.push_back(std::move(n));
    const int id = static_cast<int>(nodes_.size()) - 1;
    param_ids_.emplace(&p, id);
    return Var{id};
  }

  /// Read-only view of a parameter that never receives gradient.
  Var frozen(const Parameter<T>& p) {
    Node n;
    n.external = &p.value;
    nodes_.push_back(std::move(n));
    return Var{static_cast<int>(nodes_.size()) - 1};
  }

  const Matrix<T>& value(Var v) const {
    const Node& n = nodes_.at(static_cast<std::size_t>(v.id));
    return n.external ? *n.external : n.value;
  }

  T scalar(Var v) const {
    const auto& m = value(v);
    if (m.size() != 1) throw ShapeError("scalar(): node is " + shape_string(m.rows(), m.cols()));
    return m.data()[0];
  }

  /// Gradient of the last backward() target with respect to v (empty if v
  /// was not reached).
  const Matrix<T>& grad(Var v) const { return nodes_.at(static_cast<std::size_t>(v.id)).grad; }

  bool requires_grad(Var v) const { return nodes_.at(static_cast<std::size_t>(v.id)).requires_grad; }

  void backward(Var loss) {
    if (!enable_grad_) throw std::logic_error("backward() on a graph built without gradients");
    const auto& lv = value(loss);
    if (lv.size() != 1) throw ShapeError("backward(): loss must be 1x1");
    grad_ref(loss.id).data()[0] = T(1);
    for (int id = loss.id; id >= 0; --id) {
      Node& n = nodes_[static_cast<std::size_t>(id)];
      if (!n.requires_grad || n.grad.empty()) continue;
      if (n.backprop) n.backprop(*this, id);
      if (n.param) {
        Parameter<T>& p = *n.param;
        if (!p.grad.same_shape(p.value)) p.zero_grad();
        simd::axpy(static_cast<int>(p.grad.size()), T(1), n.grad.data(), p.grad.data());
      }
    }
  }

  // ---- linear algebra -------------------------------------------------------

  /// A * B
  Var matmul(Var a, Var b) {
    const auto& A = value(a);
    const auto& B = value(b);
    if (A.cols() != B.rows()) throw mismatch("matmul", A, B);
    Matrix<T> C(A.rows(), B.cols());
    simd::gemm(A.rows(), B.cols(), A.cols(), A.data(), A.cols(), B.data(), B.cols(), C.data(),
               C.cols(), false);
    return record(std::move(C), {a, b}, [a, b](Graph& g, int self) {
      const auto& dC = g.nodes_[self].grad;
      const auto& A = g.value(a);
      const auto& B = g.value(b);
      if (g.needs(a)) {
        auto& dA = g.grad_ref(a.id);
        simd::gemm_nt(A.rows(), A.cols(), B.cols(), dC.data(), dC.cols(), B.data(), B.cols(),
                      dA.data(), dA.cols(), true);
      }
      if (g.needs(b)) {
        auto& dB = g.grad_ref(b.id);
        simd::gemm_tn(B.rows(), B.cols(), A.rows(), A.data(), A.cols(), dC.data(), dC.cols(),
                      dB.data(), dB.cols(), true);
      }
    });
  }

  /// A * B^T
  Var matmul_nt(Var a, Var b) {
    const auto& A = value(a);
    const auto& B = value(b);
    if (A.cols() != B.cols()) throw mismatch("matmul_nt", A, B);
    Matrix<T> C(A.rows(), B.rows());
    simd::gemm_nt(A.rows(), B.rows(), A.cols(), A.data(), A.cols(), B.data(), B.cols(), C.data(),
                  C.cols(), false);
    return record(std::move(C), {a, b}, [a, b](Graph& g, int self) {
      const auto& dC = g.nodes_[self].grad;
      const auto& A = g.value(a);
      const auto& B = g.value(b);
      if (g.needs(a)) {
        auto& dA = g.grad_ref(a.id);
        simd::gemm(A.rows(), A.cols(), B.rows(), dC.data(), dC.cols(), B.data(), B.cols(),
                   dA.data(), dA.cols(), true);
      }
      if (g.needs(b)) {
        auto& dB = g.grad_ref(b.id);
        simd::gemm_tn(B.rows(), B.cols(), A.rows(), dC.data(), dC.cols(), A.data(), A.cols(),
                      dB.data(), dB.cols(), true);
      }
    });
  }

  /// X * W + b, with b a 1 x n row broadcast over rows.
  Var affine(Var x, Var w, Var b) {
    const auto& X = value(x);
    const auto& W = value(w);
    const auto& B = value(b);
    if (X.cols() != W.rows()) throw mismatch("affine", X, W);
    if (B.rows() != 1 || B.cols() != W.cols()) throw mismatch("affine bias", W, B);
    Matrix<T> Y(X.rows(), W.cols());
    for (int r = 0; r < Y.rows(); ++r) std::copy(B.data(), B.data() + B.cols(), Y.row(r).data());
    simd::gemm(X.rows(), W.cols(), X.cols(), X.data(), X.cols(), W.data(), W.cols(), Y.data(),
               Y.cols(), true);
    return record(std::move(Y), {x, w, b}, [x, w, b](Graph& g, int self) {
      const auto& dY = g.nodes_[self].grad;
      const auto& X = g.value(x);
      const auto& W = g.value(w);
      if (g.needs(x)) {
        auto& dX = g.grad_ref(x.id);
        simd::gemm_nt(X.rows(), X.cols(), W.cols(), dY.data(), dY.cols(), W.data(), W.cols(),
                      dX.data(), dX.cols(), true);
      }
      if (g.needs(w)) {
        auto& dW = g.grad_ref(w.id);
        simd::gemm_tn(W.rows(), W.cols(), X.rows(), X.data(), X.cols(), dY.data(), dY.cols(),
                      dW.data(), dW.cols(), true);
      }
      if (g.needs(b)) {
        auto& dB = g.grad_ref(b.id);
        for (int r = 0; r < dY.rows(); ++r)
          simd::axpy(dY.cols(), T(1), dY.row(r).data(), dB.data());
      }
    });
  }

  // ---- elementwise ----------------------------------------------------------

  Var add(Var a, Var b) {
    const auto& A = value(a);
    const auto& B = value(b);
    if (!A.same_shape(B)) throw mismatch("add", A, B);
    Matrix<T> C = A;
    for (std::size_t i = 0; i < C.size(); ++i) C.data()[i] += B.data()[i];
    return record(std::move(C), {a, b}, [a, b](Graph& g, int self) {
      const auto& dC = g.nodes_[self].grad;
      if (g.needs(a)) g.accumulate(a, dC, T(1));
      if (g.needs(b)) g.accumulate(b, dC, T(1));
    });
  }

  Var sub(Var a, Var b) {
    const auto& A = value(a);
    const auto& B = value(b);
    if (!A.same_shape(B)) throw mismatch("sub", A, B);
    Matrix<T> C = A;
    for (std::size_t i = 0; i < C.size(); ++i) C.data()[i] -= B.data()[i];
    return record(std::move(C), {a, b}, [a, b](Graph& g, int self) {
      const auto& dC = g.nodes_[self].grad;
      if (g.needs(a)) g.accumulate(a, dC, T(1));
      if (g.needs(b)) g.accumulate(b, dC, T(-1));
    });
  }

  /// Hadamard product.
  Var mul(Var a, Var b) {
    const auto& A = value(a);
    const auto& B = value(b);
    if (!A.same_shape(B)) throw mismatch("mul", A, B);
    Matrix<T> C = A;
    for (std::size_t i = 0; i < C.size(); ++i) C.data()[i] *= B.data()[i];
    return record(std::move(C), {a, b}, [a, b](Graph& g, int self) {
      const auto& dC = g.nodes_[self].grad;
      if (g.needs(a)) {
        auto& dA = g.grad_ref(a.id);
        const auto& B = g.value(b);
        for (std::size_t i = 0; i < dA.size(); ++i) dA.data()[i] += dC.data()[i] * B.data()[i];
      }
      if (g.needs(b)) {
        auto& dB = g.grad_ref(b.id);
        const auto& A = g.value(a);
        for (std::size_t i = 0; i < dB.size(); ++i) dB.data()[i] += dC.data()[i] * A.data()[i];
      }
    });
  }

  Var scale(Var a, T s) {
    Matrix<T> C = value(a);
    for (auto& v : C.storage()) v *= s;
    return record(std::move(C), {a}, [a, s](Graph& g, int self) {
      g.accumulate(a, g.nodes_[self].grad, s);
    });
  }

  /// 1 - a
  Var one_minus(Var a) {
    Matrix<T> C = value(a);
    for (auto& v : C.storage()) v = T(1) - v;
    return record(std::move(C), {a}, [a](Graph& g, int self) {
      g.accumulate(a, g.nodes_[self].grad, T(-1));
    });
  }

  /// a + row, row being 1 x cols broadcast to every row of a.
  Var add_row(Var a, Var row) {
    const auto& A = value(a);
    const auto& R = value(row);
    if (R.rows() != 1 || R.cols() != A.cols()) throw mismatch("add_row", A, R);
    Matrix<T> C = A;
    for (int r = 0; r < C.rows(); ++r)
      for (int c = 0; c < C.cols(); ++c) C(r, c) += R(0, c);
    return record(std::move(C), {a, row}, [a, row](Graph& g, int self) {
      const auto& dC = g.nodes_[self].grad;
      if (g.needs(a)) g.accumulate(a, dC, T(1));
      if (g.needs(row)) {
        auto& dR = g.grad_ref(row.id);
        for (int r = 0; r < dC.rows(); ++r)
          simd::axpy(dC.cols(), T(1), dC.row(r).data(), dR.data());
      }
    });
  }

  Var relu(Var a) {
    return unary(a, [](T x) { return x > T(0) ? x : T(0); },
                 [](T x, T) { return x > T(0) ? T(1) : T(0); });
  }

  Var sigmoid(Var a) {
    return unary(a, [](T x) { return sigmoid_value(x); }, [](T, T y) { return y * (T(1) - y); });
  }

  Var tanh(Var a) {
    return unary(a, [](T x) { return std::tanh(x); }, [](T, T y) { return T(1) - y * y; });
  }

  /// x * sigmoid(x)
  Var swish(Var a) {
    return unary(a, [](T x) { return x * sigmoid_value(x); },
                 [](T x, T) {
                   const T s = sigmoid_value(x);
                   return s + x * s * (T(1) - s);
                 });
  }

  // ---- structural -----------------------------------------------------------

  Var concat_cols(std::span<const Var> parts) {
    if (parts.empty()) throw ShapeError("concat_cols: no inputs");
    const int rows = value(parts[0]).rows();
    int cols = 0;
    for (Var p : parts) {
      if (value(p).rows() != rows) throw mismatch("concat_cols", value(parts[0]), value(p));
      cols += value(p).cols();
    }
    Matrix<T> C(rows, cols);
    int off = 0;
    for (Var p : parts) {
      const auto& P = value(p);
      for (int r = 0; r < rows; ++r) std::copy(P.row(r).begin(), P.row(r).end(), &C(r, off));
      off += P.cols();
    }
    std::vector<Var> inputs(parts.begin(), parts.end());
    return record(std::move(C), inputs, [inputs](Graph& g, int self) {
      const auto& dC = g.nodes_[self].grad;
      int off = 0;
      for (Var p : inputs) {
        const int pc = g.value(p).cols();
        if (g.needs(p)) {
          auto& dP = g.grad_ref(p.id);
          for (int r = 0; r < dC.rows(); ++r)
            simd::axpy(pc, T(1), &dC(r, off), dP.row(r).data());
        }
        off += pc;
      }
    });
  }
  Var concat_cols(std::initializer_list<Var> parts) {
    return concat_cols(std::span<const Var>(parts.begin(), parts.size()));
  }

  Var concat_rows(std::span<const Var> parts) {
    if (parts.empty()) throw ShapeError("concat_rows: no inputs");
    const int cols = value(parts[0]).cols();
    int rows = 0;
    for (Var p : parts) {
      if (value(p).cols() != cols) throw mismatch("concat_rows", value(parts[0]), value(p));
      rows += value(p).rows();
    }
    Matrix<T> C(rows, cols);
    auto* out = C.data();
    for (Var p : parts) out = std::copy(value(p).data(), value(p).data() + value(p).size(), out);
    std::vector<Var> inputs(parts.begin(), parts.end());
    return record(std::move(C), inputs, [inputs](Graph& g, int self) {
      const auto& dC = g.nodes_[self].grad;
      const T* src = dC.data();
      for (Var p : inputs) {
        const auto n = static_cast<int>(g.value(p).size());
        if (g.needs(p)) simd::axpy(n, T(1), src, g.grad_ref(p.id).data());
        src += n;
      }
    });
  }

  Var slice_cols(Var a, int c0, int c1) {
    const auto& A = value(a);
    if (c0 < 0 || c1 > A.cols() || c0 > c1) throw ShapeError("slice_cols: bad range");
    Matrix<T> C(A.rows(), c1 - c0);
    for (int r = 0; r < A.rows(); ++r)
      std::copy(A.row(r).begin() + c0, A.row(r).begin() + c1, C.row(r).begin());
    return record(std::move(C), {a}, [a, c0](Graph& g, int self) {
      const auto& dC = g.nodes_[self].grad;
      auto& dA = g.grad_ref(a.id);
      for (int r = 0; r < dC.rows(); ++r)
        simd::axpy(dC.cols(), T(1), dC.row(r).data(), &dA(r, c0));
    });
  }

  /// out[r] = a[idx[r]]
  Var gather_rows(Var a, std::vector<int> idx) {
    const auto& A = value(a);
    Matrix<T> C(static_cast<int>(idx.size()), A.cols());
    for (std::size_t r = 0; r < idx.size(); ++r) {
      if (idx[r] < 0 || idx[r] >= A.rows()) throw ShapeError("gather_rows: index out of range");
      std::copy(A.row(idx[r]).begin(), A.row(idx[r]).end(), C.row(static_cast<int>(r)).begin());
    }
    auto shared = std::make_shared<const std::vector<int>>(std::move(idx));
    return record(std::move(C), {a}, [a, shared](Graph& g, int self) {
      const auto& dC = g.nodes_[self].grad;
      auto& dA = g.grad_ref(a.id);
      const auto& ix = *shared;
      for (std::size_t r = 0; r < ix.size(); ++r)
        simd::axpy(dC.cols(), T(1), dC.row(static_cast<int>(r)).data(), dA.row(ix[r]).data());
    });
  }

  /// out[idx[r]] += a[r], out having `rows` rows. The rows landing on one
  /// output are added in lexicographic order of their values, so the result
  /// is bitwise independent of the order of the input rows.
  Var scatter_add_rows(Var a, std::vector<int> idx, int rows) {
    const auto& A = value(a);
    if (static_cast<int>(idx.size()) != A.rows()) throw ShapeError("scatter_add_rows: index count");
    if (rows < 0) throw ShapeError("scatter_add_rows: negative row count");
    std::vector<int> start(static_cast<std::size_t>(rows) + 1, 0);
    for (int d : idx) {
      if (d < 0 || d >= rows) throw ShapeError("scatter_add_rows: index out of range");
      ++start[static_cast<std::size_t>(d) + 1];
    }
    for (int d = 0; d < rows; ++d) start[d + 1] += start[d];
    std::vector<int> bucket(idx.size());
    {
      std::vector<int> fill(start.begin(), start.end() - 1);
      for (std::size_t r = 0; r < idx.size(); ++r) bucket[fill[idx[r]]++] = static_cast<int>(r);
    }
    auto row_less = [&A](int x, int y) {
      auto rx = A.row(x), ry = A.row(y);
      return std::lexicographical_compare(rx.begin(), rx.end(), ry.begin(), ry.end());
    };
    Matrix<T> C(rows, A.cols());
    for (int d = 0; d < rows; ++d) {
      auto first = bucket.begin() + start[d], last = bucket.begin() + start[d + 1];
      std::sort(first, last, row_less);
      auto dst = C.row(d);
      for (auto it = first; it != last; ++it) {
        auto src = A.row(*it);
        for (int c = 0; c < A.cols(); ++c) dst[c] += src[c];
      }
    }
    auto shared = std::make_shared<const std::vector<int>>(std::move(idx));
    return record(std::move(C), {a}, [a, shared](Graph& g, int self) {
      const auto& dC = g.nodes_[self].grad;
      auto& dA = g.grad_ref(a.id);
      const auto& ix = *shared;
      for (std::size_t r = 0; r < ix.size(); ++r)
        simd::axpy(dC.cols(), T(1), dC.row(ix[r]).data(), dA.row(static_cast<int>(r)).data());
    });
  }

  /// Collapses groups of identical rows: out[k] is the common value of the
  /// rows r with group[r] == k. Each member receives 1/|group| of the
  /// gradient, which is the exact derivative when the rows are equal.
  Var merge_rows(Var a, std::vector<int> group, int groups) {
    const auto& A = value(a);
    if (static_cast<int>(group.size()) != A.rows()) throw ShapeError("merge_rows: group count");
    Matrix<T> C(groups, A.cols());
    auto count = std::make_shared<std::vector<int>>(static_cast<std::size_t>(groups), 0);
    for (int r = 0; r < A.rows(); ++r) {
      const int k = group[static_cast<std::size_t>(r)];
      if (k < 0 || k >= groups) throw ShapeError("merge_rows: group out of range");
      if ((*count)[k]++ == 0) std::copy(A.row(r).begin(), A.row(r).end(), C.row(k).begin());
    }
    auto shared = std::make_shared<const std::vector<int>>(std::move(group));
    return record(std::move(C), {a}, [a, shared, count](Graph& g, int self) {
      const auto& dC = g.nodes_[self].grad;
      auto& dA = g.grad_ref(a.id);
      for (std::size_t r = 0; r < shared->size(); ++r) {
        const int k = (*shared)[r];
        simd::axpy(dC.cols(), T(1) / static_cast<T>((*count)[k]), dC.row(k).data(),
                   dA.row(static_cast<int>(r)).data());
      }
    });
  }

  /// Row-wise softmax. With `multiplicity`, column j counts multiplicity[j]
  /// times: p_ij = m_j exp(s_ij) / sum_k m_k exp(s_ik).
  Var softmax_rows(Var a, std::span<const T> multiplicity = {}) {
    const auto& A = value(a);
    if (!multiplicity.empty() && static_cast<int>(multiplicity.size()) != A.cols())
      throw ShapeError("softmax_rows: multiplicity size");
    Matrix<T> P(A.rows(), A.cols());
    for (int r = 0; r < A.rows(); ++r) {
      auto in = A.row(r);
      auto out = P.row(r);
      T mx = -std::numeric_limits<T>::infinity();
      for (T v : in) mx = std::max(mx, v);
      T sum = T(0);
      for (int c = 0; c < A.cols(); ++c) {
        T e = std::exp(in[c] - mx);
        if (!multiplicity.empty()) e *= multiplicity[c];
        out[c] = e;
        sum += e;
      }
      for (auto& v : out) v /= sum;
    }
    return record(std::move(P), {a}, [a](Graph& g, int self) {
      const auto& dP = g.nodes_[self].grad;
      const auto& P = g.nodes_[self].value;
      auto& dA = g.grad_ref(a.id);
      for (int r = 0; r < P.rows(); ++r) {
        auto p = P.row(r);
        auto dp = dP.row(r);
        T inner = T(0);
        for (int c = 0; c < P.cols(); ++c) inner += p[c] * dp[c];
        auto da = dA.row(r);
        for (int c = 0; c < P.cols(); ++c) da[c] += p[c] * (dp[c] - inner);
      }
    });
  }

  /// Elementwise mean over a list of same-shaped nodes.
  Var mean_of(std::span<const Var> parts) {
    if (parts.empty()) throw ShapeError("mean_of: no inputs");
    Matrix<T> C(value(parts[0]).rows(), value(parts[0]).cols());
    for (Var p : parts) {
      if (!value(p).same_shape(C)) throw mismatch("mean_of", C, value(p));
      simd::axpy(static_cast<int>(C.size()), T(1), value(p).data(), C.data());
    }
    const T inv = T(1) / static_cast<T>(parts.size());
    for (auto& v : C.storage()) v *= inv;
    std::vector<Var> inputs(parts.begin(), parts.end());
    return record(std::move(C), inputs, [inputs, inv](Graph& g, int self) {
      for (Var p : inputs)
        if (g.needs(p)) g.accumulate(p, g.nodes_[self].grad, inv);
    });
  }

  /// Elementwise max over a list of same-shaped nodes; the gradient goes to
  /// the first maximiser.
  Var max_of(std::span<const Var> parts) {
    if (parts.empty()) throw ShapeError("max_of: no inputs");
    Matrix<T> C = value(parts[0]);
    auto arg = std::make_shared<std::vector<int>>(C.size(), 0);
    for (std::size_t k = 1; k < parts.size(); ++k) {
      const auto& P = value(parts[k]);
      if (!P.same_shape(C)) throw mismatch("max_of", C, P);
      for (std::size_t i = 0; i < C.size(); ++i) {
        if (P.data()[i] > C.data()[i]) {
          C.data()[i] = P.data()[i];
          (*arg)[i] = static_cast<int>(k);
        }
      }
    }
    std::vector<Var> inputs(parts.begin(), parts.end());
    return record(std::move(C), inputs, [inputs, arg](Graph& g, int self) {
      const auto& dC = g.nodes_[self].grad;
      for (std::size_t k = 0; k < inputs.size(); ++k) {
        if (!g.needs(inputs[k])) continue;
        auto& dP = g.grad_ref(inputs[k].id);
        for (std::size_t i = 0; i < dC.size(); ++i)
          if ((*arg)[i] == static_cast<int>(k)) dP.data()[i] += dC.data()[i];
      }
    });
  }

  // ---- reductions and losses ------------------------------------------------

  /// mean over all entries of (a - target)^2, as a 1x1 node.
  Var mse(Var a, const Matrix<T>& target) {
    const auto& A = value(a);
    if (!A.same_shape(target)) throw mismatch("mse", A, target);
    if (A.empty()) throw ShapeError("mse: empty input");
    T s = T(0);
    for (std::size_t i = 0; i < A.size(); ++i) {
      const T d = A.data()[i] - target.data()[i];
      s += d * d;
    }
    const T inv = T(1) / static_cast<T>(A.size());
    auto tgt = std::make_shared<const Matrix<T>>(target);
    return record(Matrix<T>(1, 1, s * inv), {a}, [a, tgt, inv](Graph& g, int self) {
      const T up = g.nodes_[self].grad.data()[0];
      const auto& A = g.value(a);
      auto& dA = g.grad_ref(a.id);
      for (std::size_t i = 0; i < A.size(); ++i)
        dA.data()[i] += up * T(2) * inv * (A.data()[i] - tgt->data()[i]);
    });
  }

  /// sum_ij w_ij * a_ij as a 1x1 node (random linear functionals for
  /// gradient checks).
  Var weighted_sum(Var a, const Matrix<T>& weights) {
    const auto& A = value(a);
    if (!A.same_shape(weights)) throw mismatch("weighted_sum", A, weights);
    T s = T(0);
    for (std::size_t i = 0; i < A.size(); ++i) s += A.data()[i] * weights.data()[i];
    auto w = std::make_shared<const Matrix<T>>(weights);
    return record(Matrix<T>(1, 1, s), {a}, [a, w](Graph& g, int self) {
      g.accumulate_matrix(a, *w, g.nodes_[self].grad.data()[0]);
    });
  }

  Var sum_squares(Var a) {
    const auto& A = value(a);
    T s = T(0);
    for (T v : A.storage()) s += v * v;
    return record(Matrix<T>(1, 1, s), {a}, [a](Graph& g, int self) {
      const T up = g.nodes_[self].grad.data()[0];
      const auto& A = g.value(a);
      auto& dA = g.grad_ref(a.id);
      for (std::size_t i = 0; i < A.size(); ++i) dA.data()[i] += up * T(2) * A.data()[i];
    });
  }

  /// Fourier features of coordinates (rows x dims) with a learned frequency
  /// vector omega (1 x dims). Layout is coordinate-major: for each
  /// coordinate d, [cos(k w_d c_d) for k = 0..K] then [sin(k w_d c_d) for
  /// k = 0..K]; the concatenation is cropped to `width` columns. K is the
  /// smallest harmonic count whose 2 * dims * (K + 1) entries reach `width`.
  Var fourier(const Matrix<T>& coords, Var omega, int width) {
    const auto& W = value(omega);
    const int dims = coords.cols();
    if (W.rows() != 1 || W.cols() != dims) throw mismatch("fourier", coords, W);
    const int harmonics = fourier_harmonics(dims, width);
    Matrix<T> out(coords.rows(), width);
    for (int r = 0; r < coords.rows(); ++r) {
      int col = 0;
      for (int d = 0; d < dims && col < width; ++d) {
        const T base = W(0, d) * coords(r, d);
        for (int k = 0; k < harmonics && col < width; ++k) out(r, col++) = std::cos(k * base);
        for (int k = 0; k < harmonics && col < width; ++k) out(r, col++) = std::sin(k * base);
      }
    }
    auto c = std::make_shared<const Matrix<T>>(coords);
    return record(std::move(out), {omega}, [omega, c, harmonics, width](Graph& g, int self) {
      const auto& dOut = g.nodes_[self].grad;
      const auto& W = g.value(omega);
      auto& dW = g.grad_ref(omega.id);
      const int dims = c->cols();
      for (int r = 0; r < c->rows(); ++r) {
        int col = 0;
        for (int d = 0; d < dims && col < width; ++d) {
          const T x = (*c)(r, d);
          const T base = W(0, d) * x;
          T acc = T(0);
          for (int k = 0; k < harmonics && col < width; ++k, ++col)
            acc -= dOut(r, col) * std::sin(k * base) * k * x;
          for (int k = 0; k < harmonics && col < width; ++k, ++col)
            acc += dOut(r, col) * std::cos(k * base) * k * x;
          dW(0, d) += acc;
        }
      }
    });
  }

  static int fourier_harmonics(int dims, int width) {
    if (dims <= 0 || width <= 0 || width % 2 != 0)
      throw ShapeError("fourier: width must be positive and even");
    const int per_harmonic = 2 * dims;
    return (width + per_harmonic - 1) / per_harmonic;
  }

 private:
  using Backprop = std::function<void(Graph&, int)>;

  struct Node {
    Matrix<T> value;
    const Matrix<T>* external = nullptr;
    Matrix<T> grad;
    bool requires_grad = false;
    Parameter<T>* param = nullptr;
    Backprop backprop;
  };

  static T sigmoid_value(T x) {
    if (x >= T(0)) {
      const T e = std::exp(-x);
      return T(1) / (T(1) + e);
    }
    const T e = std::exp(x);
    return e / (T(1) + e);
  }

  static ShapeError mismatch(const char* op, const Matrix<T>& a, const Matrix<T>& b) {
    return ShapeError(std::string(op) + ": shape mismatch " + shape_string(a.rows(), a.cols()) +
                      " vs " + shape_string(b.rows(), b.cols()));
  }

  Var push(Matrix<T> v, bool needs_grad) {
    Node n;
    n.value = std::move(v);
    n.requires_grad = needs_grad;
    nodes_.push_back(std::move(n));
    return Var{static_cast<int>(nodes_.size()) - 1};
  }

  Var record(Matrix<T> v, std::initializer_list<Var> inputs, Backprop bp) {
    return record(std::move(v), std::span<const Var>(inputs.begin(), inputs.size()), std::move(bp));
  }

  Var record(Matrix<T> v, std::span<const Var> inputs, Backprop bp) {
    bool needs_grad = false;
    if (enable_grad_)
      for (Var in : inputs) needs_grad = needs_grad || needs(in);
    Node n;
    n.value = std::move(v);
    n.requires_grad = needs_grad;
    if (needs_grad) n.backprop = std::move(bp);
    nodes_.push_back(std::move(n));
    return Var{static_cast<int>(nodes_.size()) - 1};
  }

  template <class F, class D>
  Var unary(Var a, F f, D df) {
    Matrix<T> C = value(a);
    for (auto& v : C.storage()) v = f(v);
    return record(std::move(C), {a}, [a, df](Graph& g, int self) {
      const auto& dC = g.nodes_[self].grad;
      const auto& Y = g.nodes_[self].value;
      const auto& X = g.value(a);
      auto& dA = g.grad_ref(a.id);
      for (std::size_t i = 0; i < dA.size(); ++i)
        dA.data()[i] += dC.data()[i] * df(X.data()[i], Y.data()[i]);
    });
  }

  bool needs(Var v) const { return nodes_[static_cast<std::size_t>(v.id)].requires_grad; }

  Matrix<T>& grad_ref(int id) {
    Node& n = nodes_[static_cast<std::size_t>(id)];
    if (n.grad.empty()) {
      const auto& v = n.external ? *n.external : n.value;
      n.grad = Matrix<T>(v.rows(), v.cols());
    }
    return n.grad;
  }

  void accumulate(Var v, const Matrix<T>& g, T s) {
    if (!needs(v)) return;
    auto& d = grad_ref(v.id);
    simd::axpy(static_cast<int>(d.size()), s, g.data(), d.data());
  }

  void accumulate_matrix(Var v, const Matrix<T>& g, T s) { accumulate(v, g, s); }

  bool enable_grad_;
  std::vector<Node> nodes_;
  std::unordered_map<const Parameter<T>*, int> param_ids_;
};

}  // namespace dualobs
