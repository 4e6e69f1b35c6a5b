#pragma once

// Dense row-major tensors of doubles with reverse-mode differentiation.
//
// Every operation that has at least one input with requires_grad() records a
// backward closure on its result. backward(loss) walks the recorded graph in
// reverse topological order and accumulates d(loss)/d(x) into x.grad for
// every tensor on the path. The graph lives only as long as the tensors that
// reference it, so each forward pass builds a fresh tape.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "slotner/errors.hpp"

namespace slotner {

using Shape = std::vector<std::size_t>;

inline std::string shape_str(const Shape& shape) {
  std::ostringstream out;
  out << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out << 'x';
    out << shape[i];
  }
  out << ']';
  return out.str();
}

inline std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

namespace detail {

struct Node {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  // empty until something is accumulated
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;

  Node() = default;
  Node(const Node&) = delete;
  Node& operator=(const Node&) = delete;

  // Releases long parent chains iteratively; the default recursive release
  // overflows the stack on very deep graphs.
  ~Node() {
    std::vector<std::shared_ptr<Node>> pending = std::move(parents);
    backward = nullptr;
    while (!pending.empty()) {
      std::shared_ptr<Node> n = std::move(pending.back());
      pending.pop_back();
      if (n.use_count() == 1) {
        for (auto& p : n->parents) pending.push_back(std::move(p));
        n->parents.clear();
        n->backward = nullptr;
      }
    }
  }

  std::vector<double>& ensure_grad() {
    if (grad.size() != data.size()) grad.assign(data.size(), 0.0);
    return grad;
  }
};

}  // namespace detail

class Tensor {
 public:
  Tensor() = default;

  // Zero-filled tensor.
  explicit Tensor(Shape shape, bool requires_grad = false)
      : node_(std::make_shared<detail::Node>()) {
    node_->data.assign(shape_numel(shape), 0.0);
    node_->shape = std::move(shape);
    node_->requires_grad = requires_grad;
  }

  Tensor(Shape shape, std::vector<double> values, bool requires_grad = false)
      : node_(std::make_shared<detail::Node>()) {
    if (shape_numel(shape) != values.size()) {
      throw DimensionError("tensor shape " + shape_str(shape) + " needs " +
                           std::to_string(shape_numel(shape)) + " values, got " +
                           std::to_string(values.size()));
    }
    node_->shape = std::move(shape);
    node_->data = std::move(values);
    node_->requires_grad = requires_grad;
  }

  static Tensor scalar(double value, bool requires_grad = false) {
    return Tensor(Shape{1}, {value}, requires_grad);
  }

  static Tensor vector(std::vector<double> values, bool requires_grad = false) {
    const std::size_t n = values.size();
    return Tensor(Shape{n}, std::move(values), requires_grad);
  }

  static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<double> values,
                       bool requires_grad = false) {
    return Tensor(Shape{rows, cols}, std::move(values), requires_grad);
  }

  bool defined() const { return static_cast<bool>(node_); }

  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t dim(std::size_t i) const { return node_->shape.at(i); }
  std::size_t numel() const { return node_->data.size(); }
  // Size of the last axis.
  std::size_t cols() const { return node_->shape.empty() ? 1 : node_->shape.back(); }
  // Product of all but the last axis.
  std::size_t rows() const { return cols() == 0 ? 0 : numel() / cols(); }

  std::span<const double> data() const { return node_->data; }
  std::span<double> mutable_data() { return node_->data; }

  double item() const {
    if (numel() != 1) throw DimensionError("item() on tensor of shape " + shape_str(shape()));
    return node_->data[0];
  }
  double at(std::size_t i) const { return node_->data.at(i); }
  double at(std::size_t r, std::size_t c) const { return node_->data.at(r * cols() + c); }

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool value) { node_->requires_grad = value; }

  bool has_grad() const { return !node_->grad.empty() || node_->data.empty(); }
  // Empty span when nothing has been accumulated yet.
  std::span<const double> grad() const { return node_->grad; }
  std::span<double> mutable_grad() { return node_->ensure_grad(); }
  void zero_grad() { std::fill(node_->grad.begin(), node_->grad.end(), 0.0); }

  // Same values, no graph history, requires_grad off.
  Tensor detach() const { return Tensor(shape(), node_->data); }

  const std::shared_ptr<detail::Node>& node() const { return node_; }

 private:
  std::shared_ptr<detail::Node> node_;
};

namespace detail {

inline bool& grad_mode() {
  thread_local bool enabled = true;
  return enabled;
}

}  // namespace detail

// While alive, operations on this thread record no backward graph.
class NoGradGuard {
 public:
  NoGradGuard() : previous_(detail::grad_mode()) { detail::grad_mode() = false; }
  ~NoGradGuard() { detail::grad_mode() = previous_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

namespace detail {

// Builds an op result. The backward closure is attached only when some input
// participates in differentiation.
inline Tensor make_result(Shape shape, std::vector<double> values,
                          std::initializer_list<const Tensor*> inputs,
                          std::function<void(Node&)> backward) {
  Tensor out(std::move(shape), std::move(values));
  bool any = false;
  if (grad_mode()) {
    for (const Tensor* in : inputs) any = any || in->requires_grad();
  }
  if (any) {
    auto& node = *out.node();
    node.requires_grad = true;
    for (const Tensor* in : inputs) node.parents.push_back(in->node());
    node.backward = std::move(backward);
  }
  return out;
}

inline Tensor make_result(Shape shape, std::vector<double> values, const std::vector<Tensor>& inputs,
                          std::function<void(Node&)> backward) {
  Tensor out(std::move(shape), std::move(values));
  bool any = false;
  if (grad_mode()) {
    for (const Tensor& in : inputs) any = any || in.requires_grad();
  }
  if (any) {
    auto& node = *out.node();
    node.requires_grad = true;
    for (const Tensor& in : inputs) node.parents.push_back(in.node());
    node.backward = std::move(backward);
  }
  return out;
}

inline bool wants_grad(const std::shared_ptr<Node>& n) { return n->requires_grad; }

}  // namespace detail

// ---------------------------------------------------------------------------
// Linear algebra

// a: [m x k] or [k], b: [k x n]. A rank-1 `a` is treated as a single row and
// the result is rank-1 of length n.
inline Tensor matmul(const Tensor& a, const Tensor& b) {
  if (b.rank() != 2 || (a.rank() != 1 && a.rank() != 2)) {
    throw DimensionError("matmul needs [m x k] or [k] times [k x n], got " + shape_str(a.shape()) +
                         " and " + shape_str(b.shape()));
  }
  const std::size_t m = a.rank() == 1 ? 1 : a.dim(0);
  const std::size_t k = a.rank() == 1 ? a.dim(0) : a.dim(1);
  if (b.dim(0) != k) {
    throw DimensionError("matmul inner dimensions differ: " + shape_str(a.shape()) + " and " +
                         shape_str(b.shape()));
  }
  const std::size_t n = b.dim(1);
  std::vector<double> out(m * n, 0.0);
  const double* A = a.data().data();
  const double* B = b.data().data();
  for (std::size_t i = 0; i < m; ++i) {
    double* row = out.data() + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double s = A[i * k + p];
      if (s == 0.0) continue;
      const double* brow = B + p * n;
      for (std::size_t j = 0; j < n; ++j) row[j] += s * brow[j];
    }
  }
  Shape shape = a.rank() == 1 ? Shape{n} : Shape{m, n};
  return detail::make_result(std::move(shape), std::move(out), {&a, &b}, [m, k, n](detail::Node& self) {
    auto& pa = self.parents[0];
    auto& pb = self.parents[1];
    const double* G = self.grad.data();
    if (detail::wants_grad(pa)) {
      auto& ga = pa->ensure_grad();
      const double* B = pb->data.data();
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t p = 0; p < k; ++p) {
          const double* brow = B + p * n;
          const double* grow = G + i * n;
          double acc = 0.0;
          for (std::size_t j = 0; j < n; ++j) acc += grow[j] * brow[j];
          ga[i * k + p] += acc;
        }
      }
    }
    if (detail::wants_grad(pb)) {
      auto& gb = pb->ensure_grad();
      const double* A = pa->data.data();
      for (std::size_t i = 0; i < m; ++i) {
        const double* grow = G + i * n;
        for (std::size_t p = 0; p < k; ++p) {
          const double s = A[i * k + p];
          if (s == 0.0) continue;
          double* gbrow = gb.data() + p * n;
          for (std::size_t j = 0; j < n; ++j) gbrow[j] += s * grow[j];
        }
      }
    }
  });
}

// ---------------------------------------------------------------------------
// Elementwise

namespace detail {

enum class Broadcast { exact, trailing };

inline Broadcast check_binary(const char* name, const Tensor& a, const Tensor& b) {
  if (a.shape() == b.shape()) return Broadcast::exact;
  if (b.rank() == 1 && a.rank() >= 1 && b.dim(0) == a.cols()) return Broadcast::trailing;
  throw DimensionError(std::string(name) + ": incompatible shapes " + shape_str(a.shape()) + " and " +
                       shape_str(b.shape()));
}

}  // namespace detail

inline Tensor add(const Tensor& a, const Tensor& b) {
  const auto mode = detail::check_binary("add", a, b);
  const std::size_t n = a.numel(), c = b.numel();
  std::vector<double> out(a.data().begin(), a.data().end());
  const auto bd = b.data();
  for (std::size_t i = 0; i < n; ++i) out[i] += bd[mode == detail::Broadcast::exact ? i : i % c];
  return detail::make_result(a.shape(), std::move(out), {&a, &b}, [n, c](detail::Node& self) {
    auto& pa = self.parents[0];
    auto& pb = self.parents[1];
    if (detail::wants_grad(pa)) {
      auto& g = pa->ensure_grad();
      for (std::size_t i = 0; i < n; ++i) g[i] += self.grad[i];
    }
    if (detail::wants_grad(pb)) {
      auto& g = pb->ensure_grad();
      for (std::size_t i = 0; i < n; ++i) g[i % c] += self.grad[i];
    }
  });
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
  const auto mode = detail::check_binary("sub", a, b);
  const std::size_t n = a.numel(), c = b.numel();
  std::vector<double> out(a.data().begin(), a.data().end());
  const auto bd = b.data();
  for (std::size_t i = 0; i < n; ++i) out[i] -= bd[mode == detail::Broadcast::exact ? i : i % c];
  return detail::make_result(a.shape(), std::move(out), {&a, &b}, [n, c](detail::Node& self) {
    auto& pa = self.parents[0];
    auto& pb = self.parents[1];
    if (detail::wants_grad(pa)) {
      auto& g = pa->ensure_grad();
      for (std::size_t i = 0; i < n; ++i) g[i] += self.grad[i];
    }
    if (detail::wants_grad(pb)) {
      auto& g = pb->ensure_grad();
      for (std::size_t i = 0; i < n; ++i) g[i % c] -= self.grad[i];
    }
  });
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
  const auto mode = detail::check_binary("mul", a, b);
  const std::size_t n = a.numel(), c = b.numel();
  std::vector<double> out(n);
  const auto ad = a.data();
  const auto bd = b.data();
  for (std::size_t i = 0; i < n; ++i) out[i] = ad[i] * bd[mode == detail::Broadcast::exact ? i : i % c];
  return detail::make_result(a.shape(), std::move(out), {&a, &b}, [n, c](detail::Node& self) {
    auto& pa = self.parents[0];
    auto& pb = self.parents[1];
    if (detail::wants_grad(pa)) {
      auto& g = pa->ensure_grad();
      for (std::size_t i = 0; i < n; ++i) g[i] += self.grad[i] * pb->data[i % c];
    }
    if (detail::wants_grad(pb)) {
      auto& g = pb->ensure_grad();
      for (std::size_t i = 0; i < n; ++i) g[i % c] += self.grad[i] * pa->data[i];
    }
  });
}

inline Tensor scale(const Tensor& a, double factor) {
  std::vector<double> out(a.data().begin(), a.data().end());
  for (double& v : out) v *= factor;
  return detail::make_result(a.shape(), std::move(out), {&a}, [factor](detail::Node& self) {
    auto& g = self.parents[0]->ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += factor * self.grad[i];
  });
}

namespace detail {

// f maps x to y; dy_dx is expressed through (x, y).
template <typename F, typename D>
Tensor unary(const Tensor& x, F f, D dy_dx) {
  std::vector<double> out(x.numel());
  const auto xd = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(xd[i]);
  return make_result(x.shape(), std::move(out), {&x}, [dy_dx](Node& self) {
    auto& parent = self.parents[0];
    auto& g = parent->ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * dy_dx(parent->data[i], self.data[i]);
  });
}

inline double stable_sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace detail

inline Tensor sigmoid(const Tensor& x) {
  return detail::unary(x, detail::stable_sigmoid, [](double, double y) { return y * (1.0 - y); });
}

inline Tensor tanh(const Tensor& x) {
  return detail::unary(x, [](double v) { return std::tanh(v); }, [](double, double y) { return 1.0 - y * y; });
}

inline Tensor relu(const Tensor& x) {
  return detail::unary(
      x, [](double v) { return v > 0.0 ? v : 0.0; }, [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

enum class ElementwiseOp { add, sub, mul, sigmoid, tanh, relu };

// Dispatch by kind; binary kinds take two arguments, unary kinds one.
inline Tensor elementwise(ElementwiseOp op, std::span<const Tensor> args) {
  const bool binary = op == ElementwiseOp::add || op == ElementwiseOp::sub || op == ElementwiseOp::mul;
  if (args.size() != (binary ? 2u : 1u)) {
    throw DimensionError("elementwise: wrong argument count " + std::to_string(args.size()));
  }
  switch (op) {
    case ElementwiseOp::add: return add(args[0], args[1]);
    case ElementwiseOp::sub: return sub(args[0], args[1]);
    case ElementwiseOp::mul: return mul(args[0], args[1]);
    case ElementwiseOp::sigmoid: return sigmoid(args[0]);
    case ElementwiseOp::tanh: return tanh(args[0]);
    case ElementwiseOp::relu: return relu(args[0]);
  }
  throw DimensionError("elementwise: unknown op");
}

// ---------------------------------------------------------------------------
// Reductions and normalisation

inline Tensor sum(const Tensor& x) {
  double total = 0.0;
  for (double v : x.data()) total += v;
  return detail::make_result(Shape{1}, {total}, {&x}, [](detail::Node& self) {
    auto& g = self.parents[0]->ensure_grad();
    for (double& v : g) v += self.grad[0];
  });
}

// Along the last axis, using a max-shifted log-sum-exp.
inline Tensor log_softmax(const Tensor& x) {
  const std::size_t k = x.cols();
  if (x.rank() == 0 || k == 0) throw DimensionError("log_softmax needs a non-empty last axis");
  const std::size_t rows = x.rows();
  std::vector<double> out(x.numel());
  const auto xd = x.data();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* in = xd.data() + r * k;
    const double mx = *std::max_element(in, in + k);
    double s = 0.0;
    for (std::size_t j = 0; j < k; ++j) s += std::exp(in[j] - mx);
    const double lse = mx + std::log(s);
    for (std::size_t j = 0; j < k; ++j) out[r * k + j] = in[j] - lse;
  }
  return detail::make_result(x.shape(), std::move(out), {&x}, [rows, k](detail::Node& self) {
    auto& g = self.parents[0]->ensure_grad();
    for (std::size_t r = 0; r < rows; ++r) {
      double gs = 0.0;
      for (std::size_t j = 0; j < k; ++j) gs += self.grad[r * k + j];
      for (std::size_t j = 0; j < k; ++j) {
        g[r * k + j] += self.grad[r * k + j] - std::exp(self.data[r * k + j]) * gs;
      }
    }
  });
}

// Sum over rows of x[t, index[t]] for a [T x K] tensor.
inline Tensor pick_sum(const Tensor& x, std::span<const std::size_t> index) {
  if (x.rank() != 2 || x.dim(0) != index.size()) {
    throw DimensionError("pick_sum: " + std::to_string(index.size()) + " indices for " + shape_str(x.shape()));
  }
  const std::size_t k = x.cols();
  double total = 0.0;
  for (std::size_t t = 0; t < index.size(); ++t) {
    if (index[t] >= k) throw DimensionError("pick_sum: index out of range");
    total += x.at(t, index[t]);
  }
  std::vector<std::size_t> idx(index.begin(), index.end());
  return detail::make_result(Shape{1}, {total}, {&x}, [idx, k](detail::Node& self) {
    auto& g = self.parents[0]->ensure_grad();
    for (std::size_t t = 0; t < idx.size(); ++t) g[t * k + idx[t]] += self.grad[0];
  });
}

// ---------------------------------------------------------------------------
// Shape manipulation

// Concatenate along the last axis. All parts are rank-1, or all are rank-2
// with equal row counts.
inline Tensor concat(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw DimensionError("concat of zero tensors");
  const std::size_t rank = parts[0].rank();
  const std::size_t rows = rank == 2 ? parts[0].dim(0) : 1;
  std::vector<std::size_t> widths;
  std::size_t total = 0;
  for (const Tensor& p : parts) {
    if (p.rank() != rank || (rank == 2 && p.dim(0) != rows) || rank > 2) {
      throw DimensionError("concat: incompatible part " + shape_str(p.shape()) + " vs " +
                           shape_str(parts[0].shape()));
    }
    widths.push_back(p.cols());
    total += p.cols();
  }
  std::vector<double> out(rows * total);
  std::size_t offset = 0;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    const auto d = parts[i].data();
    for (std::size_t r = 0; r < rows; ++r) {
      std::copy_n(d.data() + r * widths[i], widths[i], out.data() + r * total + offset);
    }
    offset += widths[i];
  }
  Shape shape = rank == 2 ? Shape{rows, total} : Shape{total};
  return detail::make_result(std::move(shape), std::move(out), parts, [rows, total, widths](detail::Node& self) {
    std::size_t offset = 0;
    for (std::size_t i = 0; i < widths.size(); ++i) {
      auto& p = self.parents[i];
      if (detail::wants_grad(p)) {
        auto& g = p->ensure_grad();
        for (std::size_t r = 0; r < rows; ++r) {
          for (std::size_t j = 0; j < widths[i]; ++j) g[r * widths[i] + j] += self.grad[r * total + offset + j];
        }
      }
      offset += widths[i];
    }
  });
}

// Stack equal-length rank-1 tensors into a [T x n] matrix.
inline Tensor stack_rows(const std::vector<Tensor>& rows) {
  if (rows.empty()) throw DimensionError("stack_rows of zero tensors");
  const std::size_t n = rows[0].numel();
  std::vector<double> out;
  out.reserve(rows.size() * n);
  for (const Tensor& r : rows) {
    if (r.rank() != 1 || r.numel() != n) {
      throw DimensionError("stack_rows: row " + shape_str(r.shape()) + " vs " + shape_str(rows[0].shape()));
    }
    out.insert(out.end(), r.data().begin(), r.data().end());
  }
  return detail::make_result(Shape{rows.size(), n}, std::move(out), rows, [n](detail::Node& self) {
    for (std::size_t i = 0; i < self.parents.size(); ++i) {
      auto& p = self.parents[i];
      if (!detail::wants_grad(p)) continue;
      auto& g = p->ensure_grad();
      for (std::size_t j = 0; j < n; ++j) g[j] += self.grad[i * n + j];
    }
  });
}

// Row r of a [T x n] matrix as a rank-1 tensor.
inline Tensor row(const Tensor& x, std::size_t r) {
  if (x.rank() != 2 || r >= x.dim(0)) {
    throw DimensionError("row " + std::to_string(r) + " of " + shape_str(x.shape()));
  }
  const std::size_t n = x.dim(1);
  std::vector<double> out(x.data().begin() + static_cast<std::ptrdiff_t>(r * n),
                          x.data().begin() + static_cast<std::ptrdiff_t>((r + 1) * n));
  return detail::make_result(Shape{n}, std::move(out), {&x}, [r, n](detail::Node& self) {
    auto& g = self.parents[0]->ensure_grad();
    for (std::size_t j = 0; j < n; ++j) g[r * n + j] += self.grad[j];
  });
}

// Elements [start, start+len) of a rank-1 tensor.
inline Tensor slice(const Tensor& x, std::size_t start, std::size_t len) {
  if (x.rank() != 1 || start + len > x.numel()) {
    throw DimensionError("slice [" + std::to_string(start) + ", +" + std::to_string(len) + ") of " +
                         shape_str(x.shape()));
  }
  std::vector<double> out(x.data().begin() + static_cast<std::ptrdiff_t>(start),
                          x.data().begin() + static_cast<std::ptrdiff_t>(start + len));
  return detail::make_result(Shape{len}, std::move(out), {&x}, [start, len](detail::Node& self) {
    auto& g = self.parents[0]->ensure_grad();
    for (std::size_t j = 0; j < len; ++j) g[start + j] += self.grad[j];
  });
}

// Rows of `table` selected by `ids`, as a [T x d] matrix.
inline Tensor gather_rows(const Tensor& table, std::span<const std::size_t> ids) {
  if (table.rank() != 2) throw DimensionError("gather_rows on " + shape_str(table.shape()));
  const std::size_t d = table.dim(1);
  std::vector<double> out(ids.size() * d);
  for (std::size_t t = 0; t < ids.size(); ++t) {
    if (ids[t] >= table.dim(0)) {
      throw DimensionError("gather_rows: id " + std::to_string(ids[t]) + " outside table " +
                           shape_str(table.shape()));
    }
    std::copy_n(table.data().data() + ids[t] * d, d, out.data() + t * d);
  }
  std::vector<std::size_t> idx(ids.begin(), ids.end());
  return detail::make_result(Shape{ids.size(), d}, std::move(out), {&table}, [idx, d](detail::Node& self) {
    auto& g = self.parents[0]->ensure_grad();
    for (std::size_t t = 0; t < idx.size(); ++t) {
      for (std::size_t j = 0; j < d; ++j) g[idx[t] * d + j] += self.grad[t * d + j];
    }
  });
}

// ---------------------------------------------------------------------------
// Character convolution

// Width-3 convolution over the rows of an [L x dc] matrix, zero padded by one
// row on each side (L output positions), followed by max pooling over
// positions. filters is [F x 3*dc]; each filter row is laid out as
// (previous row, current row, next row). No nonlinearity is applied.
inline Tensor conv1d_maxpool(const Tensor& chars, const Tensor& filters, const Tensor& bias) {
  if (chars.rank() != 2 || chars.dim(0) == 0) {
    throw DimensionError("conv1d_maxpool needs at least one character row, got " + shape_str(chars.shape()));
  }
  const std::size_t L = chars.dim(0), dc = chars.dim(1);
  if (filters.rank() != 2 || filters.dim(1) != 3 * dc || bias.rank() != 1 || bias.dim(0) != filters.dim(0)) {
    throw DimensionError("conv1d_maxpool: filters " + shape_str(filters.shape()) + " and bias " +
                         shape_str(bias.shape()) + " do not fit chars " + shape_str(chars.shape()));
  }
  const std::size_t F = filters.dim(0);
  const double* X = chars.data().data();
  const double* W = filters.data().data();
  std::vector<double> out(F);
  std::vector<std::size_t> argmax(F, 0);
  for (std::size_t f = 0; f < F; ++f) {
    double best = 0.0;
    for (std::size_t pos = 0; pos < L; ++pos) {
      double s = bias.at(f);
      for (std::size_t w = 0; w < 3; ++w) {
        const std::ptrdiff_t src = static_cast<std::ptrdiff_t>(pos + w) - 1;
        if (src < 0 || src >= static_cast<std::ptrdiff_t>(L)) continue;
        const double* xr = X + static_cast<std::size_t>(src) * dc;
        const double* wr = W + f * 3 * dc + w * dc;
        for (std::size_t j = 0; j < dc; ++j) s += xr[j] * wr[j];
      }
      if (pos == 0 || s > best) {
        best = s;
        argmax[f] = pos;
      }
    }
    out[f] = best;
  }
  return detail::make_result(Shape{F}, std::move(out), {&chars, &filters, &bias},
                             [L, dc, F, argmax](detail::Node& self) {
    auto& px = self.parents[0];
    auto& pw = self.parents[1];
    auto& pb = self.parents[2];
    for (std::size_t f = 0; f < F; ++f) {
      const double g = self.grad[f];
      if (g == 0.0) continue;
      if (detail::wants_grad(pb)) pb->ensure_grad()[f] += g;
      for (std::size_t w = 0; w < 3; ++w) {
        const std::ptrdiff_t src = static_cast<std::ptrdiff_t>(argmax[f] + w) - 1;
        if (src < 0 || src >= static_cast<std::ptrdiff_t>(L)) continue;
        const std::size_t s = static_cast<std::size_t>(src);
        if (detail::wants_grad(pw)) {
          auto& gw = pw->ensure_grad();
          for (std::size_t j = 0; j < dc; ++j) gw[f * 3 * dc + w * dc + j] += g * px->data[s * dc + j];
        }
        if (detail::wants_grad(px)) {
          auto& gx = px->ensure_grad();
          for (std::size_t j = 0; j < dc; ++j) gx[s * dc + j] += g * pw->data[f * 3 * dc + w * dc + j];
        }
      }
    }
  });
}

// ---------------------------------------------------------------------------
// Backpropagation

// Accumulates d(loss)/d(x) into every requires_grad tensor reachable from the
// scalar `loss`. Gradients add to whatever the tensors already hold.
inline void backward(const Tensor& loss) {
  if (!loss.defined() || loss.numel() != 1) {
    throw DimensionError("backward needs a scalar loss, got " +
                         (loss.defined() ? shape_str(loss.shape()) : std::string("undefined")));
  }
  if (!loss.requires_grad()) return;

  std::vector<detail::Node*> order;
  std::unordered_set<detail::Node*> seen;
  std::vector<std::pair<detail::Node*, std::size_t>> stack;
  stack.emplace_back(loss.node().get(), 0);
  seen.insert(loss.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      detail::Node* parent = node->parents[next++].get();
      if (parent->requires_grad && seen.insert(parent).second) stack.emplace_back(parent, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  loss.node()->ensure_grad()[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    detail::Node* node = *it;
    if (node->backward && !node->grad.empty()) node->backward(*node);
  }
}

}  // namespace slotner
