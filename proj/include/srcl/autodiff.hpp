#pragma once

#include <cmath>
#include <functional>
#include <memory>
#include <stdexcept>
#include <unordered_set>
#include <utility>
#include <vector>

#include "srcl/contrastive.hpp"
#include "srcl/tensor.hpp"

namespace srcl {

struct Node;
class Variable;

namespace detail {
inline bool& grad_enabled_flag() {
  thread_local bool enabled = true;
  return enabled;
}
}  // namespace detail

/// Scoped switch that drops tape recording (inference paths).
struct NoGradGuard {
  bool prev;
  NoGradGuard() : prev(detail::grad_enabled_flag()) { detail::grad_enabled_flag() = false; }
  ~NoGradGuard() { detail::grad_enabled_flag() = prev; }
};

struct Node {
  Tensor value;
  Tensor grad;  // allocated on first accumulation
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward_fn;  // reads this->grad, accumulates into parents

  void accumulate(const Tensor& g) {
    if (grad.numel() == 0) grad = Tensor::zeros(value.shape());
    grad.array() += g.array();
  }
  Tensor& grad_buffer() {
    if (grad.numel() == 0) grad = Tensor::zeros(value.shape());
    return grad;
  }
};

/// Value-semantics handle on a tape node.
class Variable {
 public:
  Variable() = default;
  explicit Variable(std::shared_ptr<Node> n) : node_(std::move(n)) {}

  static Variable leaf(Tensor value, bool requires_grad = false) {
    auto n = std::make_shared<Node>();
    n->value = std::move(value);
    n->requires_grad = requires_grad;
    return Variable(std::move(n));
  }

  bool defined() const { return node_ != nullptr; }
  const Tensor& value() const { return node_->value; }
  Tensor& mutable_value() { return node_->value; }
  const Tensor& grad() const { return node_->grad; }
  bool requires_grad() const { return node_ && node_->requires_grad; }
  std::shared_ptr<Node> node() const { return node_; }

  void zero_grad() {
    if (node_ && node_->grad.numel()) node_->grad.array().setZero();
  }

  double item() const {
    if (value().numel() != 1) throw config_error("item() on non-scalar variable");
    return value()[0];
  }

  /// Reverse pass from a scalar root.
  void backward() const;

 private:
  std::shared_ptr<Node> node_;
};

inline Variable make_op(Tensor value, std::vector<Variable> parents,
                        std::function<void(Node&)> backward_fn) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  bool needs = false;
  if (detail::grad_enabled_flag()) {
    for (const auto& p : parents) needs = needs || p.requires_grad();
  }
  n->requires_grad = needs;
  if (needs) {
    n->parents.reserve(parents.size());
    for (auto& p : parents) n->parents.push_back(p.node());
    n->backward_fn = std::move(backward_fn);
  }
  return Variable(std::move(n));
}

inline void Variable::backward() const {
  if (!node_) throw config_error("backward() on empty variable");
  if (value().numel() != 1) throw config_error("backward() requires a scalar root");
  if (!node_->requires_grad) return;

  // post-order over the parent DAG
  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  std::vector<std::pair<Node*, std::size_t>> stack{{node_.get(), 0}};
  visited.insert(node_.get());
  while (!stack.empty()) {
    auto& [n, i] = stack.back();
    if (i < n->parents.size()) {
      Node* p = n->parents[i++].get();
      if (p->requires_grad && !visited.count(p)) {
        visited.insert(p);
        stack.emplace_back(p, 0);
      }
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }

  node_->accumulate(Tensor::constant({1}, 1.0));
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backward_fn && n->grad.numel()) n->backward_fn(*n);
  }
}

// --------------------------------------------------------------------------
// elementwise and reduction ops

inline Variable add(const Variable& a, const Variable& b) {
  require_same_shape(a.value(), b.value(), "add");
  Tensor out(a.value().shape());
  out.array() = a.value().array() + b.value().array();
  auto an = a.node(), bn = b.node();
  return make_op(std::move(out), {a, b}, [an, bn](Node& self) {
    if (an->requires_grad) an->accumulate(self.grad);
    if (bn->requires_grad) bn->accumulate(self.grad);
  });
}

inline Variable sub(const Variable& a, const Variable& b) {
  require_same_shape(a.value(), b.value(), "sub");
  Tensor out(a.value().shape());
  out.array() = a.value().array() - b.value().array();
  auto an = a.node(), bn = b.node();
  return make_op(std::move(out), {a, b}, [an, bn](Node& self) {
    if (an->requires_grad) an->accumulate(self.grad);
    if (bn->requires_grad) {
      if (bn->grad.numel() == 0) bn->grad = Tensor::zeros(bn->value.shape());
      bn->grad.array() -= self.grad.array();
    }
  });
}

inline Variable mul(const Variable& a, const Variable& b) {
  require_same_shape(a.value(), b.value(), "mul");
  Tensor out(a.value().shape());
  out.array() = a.value().array() * b.value().array();
  auto an = a.node(), bn = b.node();
  return make_op(std::move(out), {a, b}, [an, bn](Node& self) {
    if (an->requires_grad) {
      Tensor g(self.value.shape());
      g.array() = self.grad.array() * bn->value.array();
      an->accumulate(g);
    }
    if (bn->requires_grad) {
      Tensor g(self.value.shape());
      g.array() = self.grad.array() * an->value.array();
      bn->accumulate(g);
    }
  });
}

inline Variable div(const Variable& a, const Variable& b) {
  require_same_shape(a.value(), b.value(), "div");
  Tensor out(a.value().shape());
  out.array() = a.value().array() / b.value().array();
  auto an = a.node(), bn = b.node();
  return make_op(std::move(out), {a, b}, [an, bn](Node& self) {
    if (an->requires_grad) {
      Tensor g(self.value.shape());
      g.array() = self.grad.array() / bn->value.array();
      an->accumulate(g);
    }
    if (bn->requires_grad) {
      Tensor g(self.value.shape());
      g.array() = -self.grad.array() * an->value.array() / bn->value.array().square();
      bn->accumulate(g);
    }
  });
}

inline Variable add_scalar(const Variable& a, double c) {
  Tensor out(a.value().shape());
  out.array() = a.value().array() + c;
  auto an = a.node();
  return make_op(std::move(out), {a}, [an](Node& self) { an->accumulate(self.grad); });
}

inline Variable mul_scalar(const Variable& a, double c) {
  Tensor out(a.value().shape());
  out.array() = a.value().array() * c;
  auto an = a.node();
  return make_op(std::move(out), {a}, [an, c](Node& self) {
    Tensor g(self.value.shape());
    g.array() = self.grad.array() * c;
    an->accumulate(g);
  });
}

inline Variable neg(const Variable& a) { return mul_scalar(a, -1.0); }

inline Variable abs_val(const Variable& a) {
  Tensor out(a.value().shape());
  out.array() = a.value().array().abs();
  auto an = a.node();
  return make_op(std::move(out), {a}, [an](Node& self) {
    Tensor g(self.value.shape());
    g.array() = self.grad.array() * an->value.array().sign();
    an->accumulate(g);
  });
}

inline Variable leaky_relu(const Variable& a, double slope) {
  Tensor out(a.value().shape());
  out.array() = (a.value().array() > 0.0).select(a.value().array(), a.value().array() * slope);
  auto an = a.node();
  return make_op(std::move(out), {a}, [an, slope](Node& self) {
    Tensor g(self.value.shape());
    g.array() = (an->value.array() > 0.0).select(self.grad.array(), self.grad.array() * slope);
    an->accumulate(g);
  });
}

inline Variable sigmoid(const Variable& a) {
  Tensor out(a.value().shape());
  out.array() = 0.5 * (1.0 + (0.5 * a.value().array()).tanh());
  auto an = a.node();
  Tensor saved = out;  // reuse the activation in backward
  return make_op(std::move(out), {a}, [an, saved](Node& self) {
    Tensor g(self.value.shape());
    g.array() = self.grad.array() * saved.array() * (1.0 - saved.array());
    an->accumulate(g);
  });
}

/// log(1 + e^x), evaluated as max(x, 0) + log1p(e^-|x|).
inline Variable softplus(const Variable& a) {
  Tensor out(a.value().shape());
  out.array() = a.value().array().max(0.0) + (-a.value().array().abs()).exp().log1p();
  auto an = a.node();
  return make_op(std::move(out), {a}, [an](Node& self) {
    Tensor g(self.value.shape());
    // d/dx softplus = sigmoid(x)
    g.array() = self.grad.array() * 0.5 * (1.0 + (0.5 * an->value.array()).tanh());
    an->accumulate(g);
  });
}

inline Variable sum_all(const Variable& a) {
  Tensor out = Tensor::constant({1}, a.value().array().sum());
  auto an = a.node();
  return make_op(std::move(out), {a}, [an](Node& self) {
    Tensor g(an->value.shape());
    g.array().setConstant(self.grad[0]);
    an->accumulate(g);
  });
}

inline Variable mean_all(const Variable& a) {
  const double inv = 1.0 / static_cast<double>(a.value().numel());
  Tensor out = Tensor::constant({1}, a.value().array().sum() * inv);
  auto an = a.node();
  return make_op(std::move(out), {a}, [an, inv](Node& self) {
    Tensor g(an->value.shape());
    g.array().setConstant(self.grad[0] * inv);
    an->accumulate(g);
  });
}

inline Variable reshape(const Variable& a, Shape shape) {
  Tensor out = a.value().reshaped(std::move(shape));
  auto an = a.node();
  return make_op(std::move(out), {a}, [an](Node& self) {
    an->accumulate(self.grad.reshaped(an->value.shape()));
  });
}

inline Variable detach(const Variable& a) { return Variable::leaf(a.value(), false); }

/// y = x W^T + b with x: [N, K], W: [M, K], b: [M].
inline Variable linear(const Variable& x, const Variable& w, const Variable& b) {
  const Index n = x.value().dim(0), k = x.value().dim(1), m = w.value().dim(0);
  if (w.value().dim(1) != k) throw config_error("linear: weight/input dimension mismatch");
  if (b.value().numel() != m) throw config_error("linear: bias size mismatch");

  using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  Eigen::Map<const RowMat> xm(x.value().data(), n, k);
  Eigen::Map<const RowMat> wm(w.value().data(), m, k);
  Eigen::Map<const Eigen::VectorXd> bv(b.value().data(), m);

  Tensor out({n, m});
  Eigen::Map<RowMat> om(out.data(), n, m);
  om.noalias() = xm * wm.transpose();
  om.rowwise() += bv.transpose();

  auto xn = x.node(), wn = w.node(), bn = b.node();
  return make_op(std::move(out), {x, w, b}, [xn, wn, bn, n, k, m](Node& self) {
    Eigen::Map<const RowMat> gy(self.grad.data(), n, m);
    Eigen::Map<const RowMat> xm2(xn->value.data(), n, k);
    Eigen::Map<const RowMat> wm2(wn->value.data(), m, k);
    if (xn->requires_grad) {
      Eigen::Map<RowMat> gx(xn->grad_buffer().data(), n, k);
      gx.noalias() += gy * wm2;
    }
    if (wn->requires_grad) {
      Eigen::Map<RowMat> gw(wn->grad_buffer().data(), m, k);
      gw.noalias() += gy.transpose() * xm2;
    }
    if (bn->requires_grad) {
      Eigen::Map<Eigen::VectorXd> gb(bn->grad_buffer().data(), m);
      gb.noalias() += gy.colwise().sum().transpose();
    }
  });
}

/// Channel-wise gating: x [N, C, Z, Y, X] scaled by g [N, C].
inline Variable scale_channels(const Variable& x, const Variable& g) {
  if (x.value().rank() != 5 || g.value().rank() != 2)
    throw config_error("scale_channels expects rank-5 input and rank-2 gains");
  const Index n = x.value().dim(0), c = x.value().dim(1);
  const Index s = x.value().numel() / (n * c);
  if (g.value().dim(0) != n || g.value().dim(1) != c)
    throw config_error("scale_channels gain shape mismatch");

  Tensor out(x.value().shape());
  for (Index i = 0; i < n; ++i)
    for (Index j = 0; j < c; ++j) {
      const double gain = g.value()[i * c + j];
      const Index base = (i * c + j) * s;
      for (Index t = 0; t < s; ++t) out[base + t] = x.value()[base + t] * gain;
    }

  auto xn = x.node(), gn = g.node();
  return make_op(std::move(out), {x, g}, [xn, gn, n, c, s](Node& self) {
    if (xn->requires_grad) {
      Tensor gx(xn->value.shape());
      for (Index i = 0; i < n; ++i)
        for (Index j = 0; j < c; ++j) {
          const double gain = gn->value[i * c + j];
          const Index base = (i * c + j) * s;
          for (Index t = 0; t < s; ++t) gx[base + t] = self.grad[base + t] * gain;
        }
      xn->accumulate(gx);
    }
    if (gn->requires_grad) {
      Tensor gg({n, c});
      for (Index i = 0; i < n; ++i)
        for (Index j = 0; j < c; ++j) {
          const Index base = (i * c + j) * s;
          double acc = 0.0;
          for (Index t = 0; t < s; ++t) acc += self.grad[base + t] * xn->value[base + t];
          gg[i * c + j] = acc;
        }
      gn->accumulate(gg);
    }
  });
}

/// Mean over the spatial axes of x [N, C, Z, Y, X] -> [N, C].
inline Variable global_avg_pool(const Variable& x) {
  if (x.value().rank() != 5) throw config_error("global_avg_pool expects rank-5 input");
  const Index n = x.value().dim(0), c = x.value().dim(1);
  const Index s = x.value().numel() / (n * c);
  Tensor out({n, c});
  for (Index i = 0; i < n * c; ++i) {
    double acc = 0.0;
    for (Index t = 0; t < s; ++t) acc += x.value()[i * s + t];
    out[i] = acc / static_cast<double>(s);
  }
  auto xn = x.node();
  return make_op(std::move(out), {x}, [xn, n, c, s](Node& self) {
    Tensor g(xn->value.shape());
    for (Index i = 0; i < n * c; ++i) {
      const double v = self.grad[i] / static_cast<double>(s);
      for (Index t = 0; t < s; ++t) g[i * s + t] = v;
    }
    xn->accumulate(g);
  });
}

/// Modified InfoNCE batch objective as a tape node over two [N, D] inputs.
/// Value and gradients come from the closed-form batch expressions.
inline Variable contrastive_loss(const Variable& u, const Variable& v, const ContrastiveConfig& cfg) {
  if (u.value().rank() != 2 || v.value().rank() != 2)
    throw config_error("contrastive_loss expects rank-2 embedding batches");
  const Index n = u.value().dim(0), d = u.value().dim(1);
  EmbeddingBatch ub(n, d), vb(v.value().dim(0), v.value().dim(1));
  for (Index i = 0; i < n; ++i)
    for (Index j = 0; j < d; ++j) ub(i, j) = u.value()[i * d + j];
  for (Index i = 0; i < v.value().dim(0); ++i)
    for (Index j = 0; j < v.value().dim(1); ++j) vb(i, j) = v.value()[i * v.value().dim(1) + j];

  EmbeddingBatch du, dv;
  const double loss = symmetric_batch_loss_grad(ub, vb, cfg, du, dv);

  auto un = u.node(), vn = v.node();
  return make_op(Tensor::constant({1}, loss), {u, v}, [un, vn, du, dv, n, d](Node& self) {
    const double g = self.grad[0];
    if (un->requires_grad) {
      Tensor gu({n, d});
      for (Index i = 0; i < n; ++i)
        for (Index j = 0; j < d; ++j) gu[i * d + j] = g * du(i, j);
      un->accumulate(gu);
    }
    if (vn->requires_grad) {
      Tensor gv({n, d});
      for (Index i = 0; i < n; ++i)
        for (Index j = 0; j < d; ++j) gv[i * d + j] = g * dv(i, j);
      vn->accumulate(gv);
    }
  });
}

inline Variable l1_loss(const Variable& a, const Variable& b) {
  return mean_all(abs_val(sub(a, b)));
}

}  // namespace srcl
