#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

namespace spatial_diar::nn {

/// Dense row-major matrix. Sequences are (frames x features); scalars are 1 x 1.
template <typename T>
struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<T> data;

  Matrix() = default;
  Matrix(std::size_t r, std::size_t c, T fill = T(0)) : rows(r), cols(c), data(r * c, fill) {}
  Matrix(std::size_t r, std::size_t c, std::vector<T> values) : rows(r), cols(c), data(std::move(values)) {
    if (data.size() != r * c) throw std::invalid_argument("matrix data size mismatch");
  }

  T& operator()(std::size_t r, std::size_t c) { return data[r * cols + c]; }
  const T& operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }
  T* row(std::size_t r) { return data.data() + r * cols; }
  const T* row(std::size_t r) const { return data.data() + r * cols; }
  std::size_t size() const { return data.size(); }
  bool same_shape(const Matrix& o) const { return rows == o.rows && cols == o.cols; }

  template <typename U>
  Matrix<U> cast() const {
    Matrix<U> out(rows, cols);
    for (std::size_t i = 0; i < data.size(); ++i) out.data[i] = U(data[i]);
    return out;
  }
};

template <typename T>
struct Node {
  Matrix<T> value;
  Matrix<T> grad;  ///< empty until first accumulation
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;

  /// Gradient buffer, allocated (zeroed) on first use.
  Matrix<T>& grad_buffer() {
    if (grad.size() != value.size() || !grad.same_shape(value)) grad = Matrix<T>(value.rows, value.cols);
    return grad;
  }
  bool has_grad() const { return grad.size() == value.size() && grad.same_shape(value) && value.size() > 0; }
};

namespace detail {
inline bool& grad_enabled_flag() {
  thread_local bool enabled = true;
  return enabled;
}
}  // namespace detail

inline bool grad_enabled() { return detail::grad_enabled_flag(); }

/// Disables graph recording in scope; forward values are unchanged.
class NoGradGuard {
 public:
  NoGradGuard() : prev_(detail::grad_enabled_flag()) { detail::grad_enabled_flag() = false; }
  ~NoGradGuard() { detail::grad_enabled_flag() = prev_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

/// Handle to a graph node. Copies share the node.
template <typename T>
class Var {
 public:
  Var() = default;
  explicit Var(Matrix<T> value, bool requires_grad = false) : node_(std::make_shared<Node<T>>()) {
    node_->value = std::move(value);
    node_->requires_grad = requires_grad;
  }
  explicit Var(std::shared_ptr<Node<T>> node) : node_(std::move(node)) {}

  const Matrix<T>& value() const { return node_->value; }
  Matrix<T>& mutable_value() { return node_->value; }
  const Matrix<T>& grad() const { return node_->grad; }
  Matrix<T>& grad_buffer() { return node_->grad_buffer(); }
  bool requires_grad() const { return node_ && node_->requires_grad; }
  std::size_t rows() const { return node_->value.rows; }
  std::size_t cols() const { return node_->value.cols; }
  Node<T>* node() const { return node_.get(); }
  const std::shared_ptr<Node<T>>& ptr() const { return node_; }
  explicit operator bool() const { return bool(node_); }

  void zero_grad() { node_->grad = Matrix<T>(); }

 private:
  std::shared_ptr<Node<T>> node_;
};

/// Creates an op node. Parents and the backward closure are kept only when recording is on
/// and at least one parent needs a gradient.
template <typename T>
Var<T> make_op(Matrix<T> value, std::vector<Var<T>> parents, std::function<void(Node<T>&)> backward) {
  Var<T> out(std::move(value));
  if (!grad_enabled()) return out;
  bool needs = false;
  for (const auto& p : parents) needs = needs || p.requires_grad();
  if (!needs) return out;
  auto* node = out.node();
  node->requires_grad = true;
  node->parents.reserve(parents.size());
  for (auto& p : parents) node->parents.push_back(p.ptr());
  node->backward = std::move(backward);
  return out;
}

/// Gradient buffer of parent i, or nullptr when that parent does not require a gradient.
template <typename T>
Matrix<T>* parent_grad(Node<T>& self, std::size_t i) {
  auto& p = self.parents[i];
  return p->requires_grad ? &p->grad_buffer() : nullptr;
}

/// Reverse-mode sweep from a scalar root. Leaf gradients accumulate across calls.
template <typename T>
void backward(const Var<T>& root) {
  if (root.rows() != 1 || root.cols() != 1) throw std::invalid_argument("backward() needs a scalar root");
  if (!root.requires_grad()) return;
  std::vector<Node<T>*> order;
  std::unordered_set<Node<T>*> seen;
  std::vector<std::pair<Node<T>*, std::size_t>> stack{{root.node(), 0}};
  seen.insert(root.node());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node<T>* p = node->parents[next++].get();
      if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  root.node()->grad_buffer().data[0] += T(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node<T>* n = *it;
    if (n->backward && n->has_grad()) n->backward(*n);
  }
  // intermediate buffers are released with the graph; free them early for long sequences
  for (Node<T>* n : order) {
    if (n->backward) n->grad = Matrix<T>();
  }
}

}  // namespace spatial_diar::nn
