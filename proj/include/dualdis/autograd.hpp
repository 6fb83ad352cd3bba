#pragma once

// Reverse-mode differentiation over a per-step tape.
//
// Every op appends a node holding its value and a closure that pushes the
// node's gradient into its parents. Parameters are persistent leaf nodes
// whose gradients accumulate across backward calls until zeroed by the
// optimizer. `detach` and frozen parameter views are the two gradient
// blocking mechanisms.

#include <memory>
#include <string>
#include <vector>

#include "dualdis/tensor.hpp"

namespace dualdis {

template <class T>
class Tape;

template <class T>
struct Node {
  Tensor<T> value;
  Tensor<T> grad;
  bool requires_grad = false;
  bool leaf = true;
  std::string name;
  std::function<void(Node&)> backward;

  /// Gradient buffer, allocated on first use.
  Tensor<T>& grad_buffer() {
    if (grad.shape() != value.shape()) grad = Tensor<T>::zeros_like(value);
    return grad;
  }
};

/// Handle to a value recorded on a tape.
template <class T>
class Var {
 public:
  Var() = default;
  Var(std::shared_ptr<Node<T>> node, Tape<T>* tape) : node_(std::move(node)), tape_(tape) {}

  explicit operator bool() const noexcept { return static_cast<bool>(node_); }
  const Tensor<T>& value() const { return node_->value; }
  const Shape& shape() const { return node_->value.shape(); }
  int dim(int i) const { return node_->value.dim(i); }
  bool requires_grad() const { return node_ && node_->requires_grad; }
  Node<T>* node() const { return node_.get(); }
  const std::shared_ptr<Node<T>>& shared() const { return node_; }
  Tape<T>* tape() const { return tape_; }

 private:
  std::shared_ptr<Node<T>> node_;
  Tape<T>* tape_ = nullptr;
};

/// Raised on misuse of the differentiation machinery (no forward recorded,
/// non-finite gradients, ...).
class GradientError : public Error {
 public:
  using Error::Error;
};

template <class T>
class Tape {
 public:
  explicit Tape(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool grad_enabled() const noexcept { return grad_enabled_; }

  Var<T> constant(Tensor<T> value, std::string name = {}) {
    auto node = std::make_shared<Node<T>>();
    node->value = std::move(value);
    node->name = std::move(name);
    return Var<T>(std::move(node), this);
  }

  /// Wraps an existing leaf (a parameter) so ops can consume it.
  Var<T> leaf(const std::shared_ptr<Node<T>>& node) { return Var<T>(node, this); }

  /// Records an op result. `backward` receives the result node and must
  /// accumulate into the parents it captured.
  template <class Fn>
  Var<T> record(Tensor<T> value, std::initializer_list<Var<T>> parents, Fn&& backward, const char* name = "") {
    auto node = std::make_shared<Node<T>>();
    node->value = std::move(value);
    node->name = name;
    node->leaf = false;
    bool needs = false;
    if (grad_enabled_) {
      for (const auto& p : parents) needs = needs || p.requires_grad();
    }
    if (needs) {
      node->requires_grad = true;
      node->backward = std::forward<Fn>(backward);
      order_.push_back(node);
    }
    return Var<T>(std::move(node), this);
  }

  /// Backpropagates d(loss)/d(.) into every reachable parameter.
  void backward(const Var<T>& loss) {
    if (!loss) throw GradientError("backward: null loss");
    if (loss.value().size() != 1) throw ShapeError("backward", "scalar loss", loss.shape());
    if (!std::isfinite(static_cast<double>(loss.value()[0]))) {
      throw GradientError("backward: non-finite loss value");
    }
    if (!loss.requires_grad()) return;  // nothing trainable reached
    auto it = std::find(order_.begin(), order_.end(), loss.shared());
    if (it == order_.end()) throw GradientError("backward: loss was not recorded on this tape");
    for (auto& n : order_) n->grad = Tensor<T>();
    loss.node()->grad_buffer()[0] = T(1);
    for (auto rit = std::make_reverse_iterator(it + 1); rit != order_.rend(); ++rit) {
      Node<T>& n = **rit;
      if (n.grad.empty() && n.value.size() != 0) continue;
      n.backward(n);
    }
  }

  std::size_t size() const noexcept { return order_.size(); }

 private:
  bool grad_enabled_;
  std::vector<std::shared_ptr<Node<T>>> order_;
};

/// Accumulates `g` into parent `v` if it is differentiable.
template <class T>
inline void accumulate(const Var<T>& v, const Tensor<T>& g) {
  if (!v.requires_grad()) return;
  v.node()->grad_buffer() += g;
}

template <class T>
inline Tensor<T>* grad_target(const Var<T>& v) {
  return v.requires_grad() ? &v.node()->grad_buffer() : nullptr;
}

/// Trainable tensor with a persistent gradient.
template <class T>
class Parameter {
 public:
  Parameter() = default;
  Parameter(std::string name, Tensor<T> value, bool trainable = true) : node_(std::make_shared<Node<T>>()) {
    node_->value = std::move(value);
    node_->name = std::move(name);
    node_->requires_grad = trainable;
    node_->grad = Tensor<T>::zeros_like(node_->value);
  }

  // Copies are deep: a copied parameter never aliases the original's storage.
  Parameter(const Parameter& other) : node_(other.node_ ? std::make_shared<Node<T>>(*other.node_) : nullptr) {}
  Parameter& operator=(const Parameter& other) {
    if (this != &other) node_ = other.node_ ? std::make_shared<Node<T>>(*other.node_) : nullptr;
    return *this;
  }
  Parameter(Parameter&&) noexcept = default;
  Parameter& operator=(Parameter&&) noexcept = default;

  explicit operator bool() const noexcept { return static_cast<bool>(node_); }
  const std::string& name() const { return node_->name; }
  Tensor<T>& value() { return node_->value; }
  const Tensor<T>& value() const { return node_->value; }
  Tensor<T>& grad() { return node_->grad_buffer(); }
  const Tensor<T>& grad() const { return node_->grad; }
  bool trainable() const { return node_->requires_grad; }
  void set_trainable(bool t) { node_->requires_grad = t; }
  void zero_grad() { node_->grad_buffer().fill(T(0)); }

  /// Differentiable view; `frozen` views read the value but never receive gradient.
  Var<T> var(Tape<T>& tape, bool frozen = false) const {
    if (frozen || !tape.grad_enabled()) return tape.constant(node_->value, node_->name);
    return tape.leaf(node_);
  }

 private:
  std::shared_ptr<Node<T>> node_;
};

/// Non-finite gradients are reported with the offending parameter name.
template <class T>
void check_gradients_finite(std::span<Parameter<T>* const> params) {
  for (const auto* p : params) {
    if (!p->grad().all_finite()) throw GradientError("non-finite gradient in parameter '" + p->name() + "'");
  }
}

// ---------------------------------------------------------------------------
// Elementwise and structural ops.

template <class T>
Var<T> detach(const Var<T>& x) {
  return x.tape()->constant(x.value(), "detach");
}

template <class T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  if (a.shape() != b.shape()) throw ShapeError("add", to_string(a.shape()), b.shape());
  Tensor<T> out = a.value();
  out += b.value();
  return a.tape()->record(std::move(out), {a, b}, [a, b](Node<T>& n) {
    accumulate(a, n.grad);
    accumulate(b, n.grad);
  }, "add");
}

template <class T>
Var<T> scale(const Var<T>& a, T s) {
  Tensor<T> out = a.value();
  for (auto& v : out.values()) v *= s;
  return a.tape()->record(std::move(out), {a}, [a, s](Node<T>& n) {
    if (auto* g = grad_target(a)) {
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += s * n.grad[i];
    }
  }, "scale");
}

/// Elementwise a + s*b.
template <class T>
Var<T> axpy(const Var<T>& a, T s, const Var<T>& b) {
  if (a.shape() != b.shape()) throw ShapeError("axpy", to_string(a.shape()), b.shape());
  Tensor<T> out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += s * b.value()[i];
  return a.tape()->record(std::move(out), {a, b}, [a, b, s](Node<T>& n) {
    accumulate(a, n.grad);
    if (auto* g = grad_target(b)) {
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += s * n.grad[i];
    }
  }, "axpy");
}

template <class T>
Var<T> sum(const Var<T>& a) {
  T s = 0;
  for (T v : a.value().values()) s += v;
  return a.tape()->record(Tensor<T>({1}, std::vector<T>{s}), {a}, [a](Node<T>& n) {
    if (auto* g = grad_target(a)) {
      const T d = n.grad[0];
      for (auto& v : g->values()) v += d;
    }
  }, "sum");
}

/// Weighted sum of scalar terms; null terms are skipped.
template <class T>
Var<T> weighted_sum(Tape<T>& tape, const std::vector<std::pair<T, Var<T>>>& terms) {
  Var<T> acc = tape.constant(Tensor<T>({1}, std::vector<T>{T(0)}));
  for (const auto& [w, v] : terms) {
    if (!v) continue;
    if (v.value().size() != 1) throw ShapeError("weighted_sum", "scalar term", v.shape());
    acc = axpy(acc, w, v);
  }
  return acc;
}

template <class T>
Var<T> reshape(const Var<T>& a, Shape shape) {
  Tensor<T> out = a.value().reshaped(shape);
  return a.tape()->record(std::move(out), {a}, [a](Node<T>& n) {
    if (auto* g = grad_target(a)) {
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += n.grad[i];
    }
  }, "reshape");
}

/// (B, ...) -> (B, prod(...)).
template <class T>
Var<T> flatten(const Var<T>& a) {
  if (a.value().rank() == 2) return a;
  const int b = a.dim(0);
  return reshape(a, Shape{b, static_cast<int>(a.value().size() / std::max(b, 1))});
}

/// Column concatenation of two (B, d) matrices.
template <class T>
Var<T> concat_cols(const Var<T>& a, const Var<T>& b) {
  if (a.value().rank() != 2 || b.value().rank() != 2 || a.dim(0) != b.dim(0)) {
    throw ShapeError("concat_cols", "(" + std::to_string(a.dim(0)) + ",d)", b.shape());
  }
  const int rows = a.dim(0), da = a.dim(1), db = b.dim(1);
  Tensor<T> out({rows, da + db});
  for (int r = 0; r < rows; ++r) {
    std::copy_n(a.value().data() + r * da, da, out.data() + r * (da + db));
    std::copy_n(b.value().data() + r * db, db, out.data() + r * (da + db) + da);
  }
  return a.tape()->record(std::move(out), {a, b}, [a, b, rows, da, db](Node<T>& n) {
    if (auto* g = grad_target(a)) {
      for (int r = 0; r < rows; ++r)
        for (int c = 0; c < da; ++c) (*g)[r * da + c] += n.grad[r * (da + db) + c];
    }
    if (auto* g = grad_target(b)) {
      for (int r = 0; r < rows; ++r)
        for (int c = 0; c < db; ++c) (*g)[r * db + c] += n.grad[r * (da + db) + da + c];
    }
  }, "concat_cols");
}

}  // namespace dualdis
