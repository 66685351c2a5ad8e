#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <initializer_list>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "uqkit/error.hpp"
#include "uqkit/special.hpp"
#include "uqkit/tensor.hpp"

namespace uqkit {

class Tape;

// Handle to a node recorded on a Tape. Cheap to copy; only valid while the
// tape is alive.
class Var {
 public:
  Var() = default;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape& tape() const { return *tape_; }
  std::size_t id() const { return id_; }
  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }

 private:
  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

/// Reverse-mode recording structure.
///
/// Nodes are appended in evaluation order, so every node's inputs precede it.
/// backward() walks the list once in reverse. Gradients are only stored for
/// nodes that depend on a parameter. A tape is single-threaded; independent
/// tapes may be used concurrently.
class Tape {
 public:
  using Backprop = std::function<void(Tape&, const Tensor& out_grad)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Tensor value) { return push(std::move(value), false, nullptr, "constant"); }

  Var parameter(Tensor value) {
    Var v = push(std::move(value), true, nullptr, "parameter");
    parameters_.push_back(v.id());
    return v;
  }

  // Appends an operation result. `inputs` decide whether the node needs a
  // gradient; `backprop` receives d(loss)/d(result) and must route it to the
  // inputs through accumulate().
  Var record(Tensor value, std::initializer_list<Var> inputs, Backprop backprop, const char* op) {
    bool needs = false;
    for (const Var& in : inputs) needs = needs || nodes_[in.id()].requires_grad;
    return push(std::move(value), needs, needs ? std::move(backprop) : nullptr, op);
  }

  const Tensor& value(Var v) const { return nodes_[v.id()].value; }
  bool requires_grad(Var v) const { return nodes_[v.id()].requires_grad; }

  void accumulate(Var v, const Tensor& g) {
    Node& node = nodes_[v.id()];
    if (!node.requires_grad) return;
    if (!node.grad) {
      node.grad = g;
    } else {
      auto dst = node.grad->data();
      auto src = g.values();
      for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
    }
  }

  // Gradient of the last backward() loss with respect to v (zeros when v was
  // not reached).
  Tensor grad(Var v) const {
    const Node& node = nodes_[v.id()];
    return node.grad ? *node.grad : Tensor::zeros(node.value.shape());
  }

  std::size_t size() const { return nodes_.size(); }
  const std::vector<std::size_t>& parameter_ids() const { return parameters_; }

  void backward(Var loss) {
    if (nodes_.empty()) throw ContractError("backward on an empty tape");
    if (!value(loss).is_scalar()) {
      throw ContractError("backward needs a scalar loss, got " + shape_string(value(loss).shape()));
    }
    for (Node& n : nodes_) n.grad.reset();
    Node& root = nodes_[loss.id()];
    if (!root.requires_grad) return;
    root.grad = Tensor::filled(root.value.shape(), 1.0);
    for (std::size_t i = loss.id() + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (!n.grad || !n.backprop) continue;
      // Copy: accumulate() may touch other nodes but never this one.
      const Tensor g = *n.grad;
      n.backprop(*this, g);
    }
  }

 private:
  struct Node {
    Tensor value;
    std::optional<Tensor> grad;
    bool requires_grad = false;
    Backprop backprop;
  };

  Var push(Tensor value, bool requires_grad, Backprop backprop, const char* op) {
    if (!value.all_finite()) {
      throw NumericalError(std::string("non-finite value produced by '") + op + "'");
    }
    nodes_.push_back(Node{std::move(value), std::nullopt, requires_grad, std::move(backprop)});
    return Var(this, nodes_.size() - 1);
  }

  std::vector<Node> nodes_;
  std::vector<std::size_t> parameters_;
};

inline const Tensor& Var::value() const { return tape_->value(*this); }

namespace detail {

// Reduces a gradient to the shape of a broadcast operand.
inline Tensor unbroadcast(const Tensor& g, const Tensor& operand) {
  if (g.shape() == operand.shape()) return g;
  double s = 0.0;
  for (double v : g.values()) s += v;
  return Tensor(operand.shape(), {s});
}

template <typename Fwd, typename Dfdx>
Var unary(Var a, const char* op, Fwd fwd, Dfdx dfdx) {
  Tape& t = a.tape();
  return t.record(map(a.value(), fwd), {a},
                  [a, dfdx](Tape& tape, const Tensor& g) {
                    Tensor ga = g;
                    auto x = tape.value(a).values();
                    auto d = ga.data();
                    for (std::size_t i = 0; i < d.size(); ++i) d[i] *= dfdx(x[i]);
                    tape.accumulate(a, ga);
                  },
                  op);
}

}  // namespace detail

inline Var operator+(Var a, Var b) {
  return a.tape().record(a.value() + b.value(), {a, b},
                         [a, b](Tape& t, const Tensor& g) {
                           t.accumulate(a, detail::unbroadcast(g, t.value(a)));
                           t.accumulate(b, detail::unbroadcast(g, t.value(b)));
                         },
                         "add");
}

inline Var operator-(Var a, Var b) {
  return a.tape().record(a.value() - b.value(), {a, b},
                         [a, b](Tape& t, const Tensor& g) {
                           t.accumulate(a, detail::unbroadcast(g, t.value(a)));
                           t.accumulate(b, detail::unbroadcast(map(g, [](double v) { return -v; }), t.value(b)));
                         },
                         "sub");
}

inline Var operator*(Var a, Var b) {
  return a.tape().record(a.value() * b.value(), {a, b},
                         [a, b](Tape& t, const Tensor& g) {
                           if (t.requires_grad(a)) t.accumulate(a, detail::unbroadcast(g * t.value(b), t.value(a)));
                           if (t.requires_grad(b)) t.accumulate(b, detail::unbroadcast(g * t.value(a), t.value(b)));
                         },
                         "mul");
}

inline Var operator/(Var a, Var b) {
  if (std::any_of(b.value().values().begin(), b.value().values().end(), [](double v) { return v == 0.0; })) {
    throw DomainError("division by zero");
  }
  return a.tape().record(zip_with(a.value(), b.value(), std::divides<>()), {a, b},
                         [a, b](Tape& t, const Tensor& g) {
                           const Tensor& bv = t.value(b);
                           if (t.requires_grad(a)) {
                             t.accumulate(a, detail::unbroadcast(zip_with(g, bv, std::divides<>()), t.value(a)));
                           }
                           if (t.requires_grad(b)) {
                             Tensor q = zip_with(t.value(a), bv, [](double x, double y) { return -x / (y * y); });
                             t.accumulate(b, detail::unbroadcast(g * q, bv));
                           }
                         },
                         "div");
}

inline Var operator-(Var a) {
  return detail::unary(a, "neg", [](double x) { return -x; }, [](double) { return -1.0; });
}

inline Var operator*(Var a, double s) {
  return detail::unary(a, "scale", [s](double x) { return s * x; }, [s](double) { return s; });
}
inline Var operator*(double s, Var a) { return a * s; }

inline Var operator+(Var a, double s) {
  return detail::unary(a, "shift", [s](double x) { return x + s; }, [](double) { return 1.0; });
}
inline Var operator+(double s, Var a) { return a + s; }
inline Var operator-(Var a, double s) { return a + (-s); }
inline Var operator-(double s, Var a) { return (-a) + s; }

inline Var matmul(Var a, Var b) {
  return a.tape().record(matmul(a.value(), b.value()), {a, b},
                         [a, b](Tape& t, const Tensor& g) {
                           const Tensor& av = t.value(a);
                           const Tensor& bv = t.value(b);
                           const std::size_t m = av.rows(), k = av.cols(), n = bv.cols();
                           if (t.requires_grad(a)) {
                             Tensor ga = Tensor::zeros(av.shape());
                             kernels::gemm_nt(g.values().data(), bv.values().data(), ga.data().data(), m, n, k, false);
                             t.accumulate(a, ga);
                           }
                           if (t.requires_grad(b)) {
                             Tensor gb = Tensor::zeros(bv.shape());
                             kernels::gemm_tn(av.values().data(), g.values().data(), gb.data().data(), m, k, n, false);
                             t.accumulate(b, gb);
                           }
                         },
                         "matmul");
}

inline Var relu(Var a) {
  return detail::unary(a, "relu", [](double x) { return x > 0.0 ? x : 0.0; },
                       [](double x) { return x > 0.0 ? 1.0 : 0.0; });
}

inline Var tanh(Var a) {
  return detail::unary(a, "tanh", [](double x) { return std::tanh(x); },
                       [](double x) {
                         const double y = std::tanh(x);
                         return 1.0 - y * y;
                       });
}

inline Var exp(Var a) {
  return detail::unary(a, "exp", [](double x) { return std::exp(x); }, [](double x) { return std::exp(x); });
}

inline Var log(Var a) {
  for (double v : a.value().values()) {
    if (!(v > 0.0)) throw DomainError("log of non-positive value " + std::to_string(v));
  }
  return detail::unary(a, "log", [](double x) { return std::log(x); }, [](double x) { return 1.0 / x; });
}

inline Var softplus(Var a) {
  return detail::unary(a, "softplus", special::softplus, special::sigmoid);
}

inline Var sigmoid(Var a) {
  return detail::unary(a, "sigmoid", special::sigmoid, [](double x) {
    const double s = special::sigmoid(x);
    return s * (1.0 - s);
  });
}

inline Var square(Var a) {
  return detail::unary(a, "square", [](double x) { return x * x; }, [](double x) { return 2.0 * x; });
}

// Subgradient 0 at the kink.
inline Var abs(Var a) {
  return detail::unary(a, "abs", [](double x) { return std::fabs(x); },
                       [](double x) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); });
}

inline Var lgamma(Var a) {
  for (double v : a.value().values()) {
    if (!(v > 0.0)) throw DomainError("lgamma requires positive arguments");
  }
  return detail::unary(a, "lgamma", special::log_gamma, special::digamma);
}

inline Var sum(Var a) {
  double s = 0.0;
  for (double v : a.value().values()) s += v;
  return a.tape().record(Tensor::scalar(s), {a},
                         [a](Tape& t, const Tensor& g) {
                           t.accumulate(a, Tensor::filled(t.value(a).shape(), g[0]));
                         },
                         "sum");
}

inline Var mean(Var a) { return sum(a) * (1.0 / static_cast<double>(a.value().size())); }

// Columns [begin, end) of a rank-2 value.
inline Var columns(Var a, std::size_t begin, std::size_t end) {
  return a.tape().record(columns(a.value(), begin, end), {a},
                         [a, begin](Tape& t, const Tensor& g) {
                           const Tensor& av = t.value(a);
                           Tensor ga = Tensor::zeros(av.shape());
                           const std::size_t w = g.cols();
                           for (std::size_t i = 0; i < av.rows(); ++i)
                             for (std::size_t j = 0; j < w; ++j) ga.at(i, begin + j) = g.at(i, j);
                           t.accumulate(a, ga);
                         },
                         "columns");
}

inline Var column(Var a, std::size_t j) { return columns(a, j, j + 1); }

// Row-wise log-softmax of a rank-2 value, stabilized by max subtraction.
inline Var log_softmax_rows(Var a) {
  const Tensor& x = a.value();
  require_matrix(x, "log_softmax_rows");
  Tensor out = x;
  const std::size_t n = x.rows(), c = x.cols();
  for (std::size_t i = 0; i < n; ++i) {
    double m = x.at(i, 0);
    for (std::size_t j = 1; j < c; ++j) m = std::max(m, x.at(i, j));
    double s = 0.0;
    for (std::size_t j = 0; j < c; ++j) s += std::exp(x.at(i, j) - m);
    const double lse = m + std::log(s);
    for (std::size_t j = 0; j < c; ++j) out.at(i, j) = x.at(i, j) - lse;
  }
  Tensor saved = out;
  return a.tape().record(std::move(out), {a},
                         [a, saved = std::move(saved)](Tape& t, const Tensor& g) {
                           Tensor ga = g;
                           const std::size_t rows = saved.rows(), cols = saved.cols();
                           for (std::size_t i = 0; i < rows; ++i) {
                             double gs = 0.0;
                             for (std::size_t j = 0; j < cols; ++j) gs += g.at(i, j);
                             for (std::size_t j = 0; j < cols; ++j) {
                               ga.at(i, j) = g.at(i, j) - std::exp(saved.at(i, j)) * gs;
                             }
                           }
                           t.accumulate(a, ga);
                         },
                         "log_softmax");
}

}  // namespace uqkit
