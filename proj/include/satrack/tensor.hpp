#pragma once
// Dense float64 tensor with a dynamic reverse-mode tape.
//
// Every op records a closure on the output node when gradient recording is
// enabled and at least one input requires a gradient. backward() walks the
// recorded graph once in reverse topological order and then releases it:
// intermediate nodes drop their parents and closures, leaves keep their
// accumulated gradient until zero_grad().

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

namespace satrack {

/// Invalid configuration, shape or input data. Maps to CLI exit code 1.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Non-finite values, failed numeric checks, non-deterministic functions.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

using Shape = std::vector<std::size_t>;

inline std::size_t numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? ", " : "") << shape[i];
  os << ']';
  return os.str();
}

namespace detail {

struct Node {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;
  bool requires_grad = false;
  bool leaf = true;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(const Node&)> backward;

  std::vector<double>& grad_ref() {
    if (grad.empty()) grad.assign(value.size(), 0.0);
    return grad;
  }
};

using NodePtr = std::shared_ptr<Node>;

inline bool& grad_mode() {
  thread_local bool enabled = true;
  return enabled;
}

inline std::atomic<bool>& finite_check_mode() {
  static std::atomic<bool> enabled{false};
  return enabled;
}

}  // namespace detail

/// Disables tape recording on the current thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard() : previous_(detail::grad_mode()) { detail::grad_mode() = false; }
  ~NoGradGuard() { detail::grad_mode() = previous_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

inline bool grad_enabled() { return detail::grad_mode(); }

/// Debug verification mode: every op output is scanned for NaN/Inf and a
/// NumericError is raised at the producing op.
inline void set_finite_check(bool on) { detail::finite_check_mode() = on; }
inline bool finite_check() { return detail::finite_check_mode(); }

class Tensor {
 public:
  Tensor() = default;

  static Tensor from(Shape shape, std::vector<double> values, bool requires_grad = false) {
    if (satrack::numel(shape) != values.size()) {
      throw ConfigError("tensor shape " + to_string(shape) + " needs " + std::to_string(satrack::numel(shape)) +
                        " values, got " + std::to_string(values.size()));
    }
    for (auto d : shape) {
      if (d == 0) throw ConfigError("tensor extents must be positive, got " + to_string(shape));
    }
    auto node = std::make_shared<detail::Node>();
    node->shape = std::move(shape);
    node->value = std::move(values);
    node->requires_grad = requires_grad;
    return Tensor(std::move(node));
  }
  static Tensor full(Shape shape, double v, bool requires_grad = false) {
    auto n = satrack::numel(shape);
    return from(std::move(shape), std::vector<double>(n, v), requires_grad);
  }
  static Tensor zeros(Shape shape, bool requires_grad = false) { return full(std::move(shape), 0.0, requires_grad); }
  static Tensor scalar(double v, bool requires_grad = false) { return from({1}, {v}, requires_grad); }

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t dim(int axis) const { return node_->shape[normalize_axis(axis)]; }
  std::size_t numel() const { return node_->value.size(); }

  std::span<const double> data() const { return node_->value; }
  /// Direct write access; only valid for leaves (parameter init, optimizer steps, tests).
  std::span<double> mutable_data() { return node_->value; }
  const std::vector<double>& values() const { return node_->value; }

  double item() const {
    if (numel() != 1) throw ConfigError("item() on tensor of shape " + to_string(shape()));
    return node_->value[0];
  }
  double operator[](std::size_t i) const { return node_->value[i]; }

  bool requires_grad() const { return node_->requires_grad; }
  bool is_leaf() const { return node_->leaf; }
  Tensor& set_requires_grad(bool on) {
    node_->requires_grad = on;
    return *this;
  }

  bool has_grad() const { return !node_->grad.empty(); }
  /// Gradient buffer; zeros when nothing was accumulated.
  std::vector<double> grad() const {
    return node_->grad.empty() ? std::vector<double>(numel(), 0.0) : node_->grad;
  }
  void zero_grad() { node_->grad.clear(); }

  /// Same values, cut from the tape.
  Tensor detach() const { return from(shape(), node_->value, false); }

  std::size_t normalize_axis(int axis) const {
    const int r = static_cast<int>(rank());
    const int a = axis < 0 ? axis + r : axis;
    if (a < 0 || a >= r) {
      throw ConfigError("axis " + std::to_string(axis) + " out of range for shape " + to_string(shape()));
    }
    return static_cast<std::size_t>(a);
  }

  const detail::NodePtr& node() const { return node_; }
  explicit Tensor(detail::NodePtr node) : node_(std::move(node)) {}

 private:
  detail::NodePtr node_;
};

struct NamedTensor {
  std::string name;
  Tensor tensor;
};

namespace detail {

inline void check_finite(const Node& n, const char* op) {
  for (double v : n.value) {
    if (!std::isfinite(v)) throw NumericError(std::string("non-finite value produced by ") + op);
  }
}

/// Wraps op output values into a tensor and records the backward closure
/// when any input participates in the tape.
inline Tensor record(const char* op, Shape shape, std::vector<double> value, std::initializer_list<Tensor> inputs,
                     std::function<void(const Node&)> backward) {
  auto out = std::make_shared<Node>();
  out->shape = std::move(shape);
  out->value = std::move(value);
  if (finite_check_mode()) check_finite(*out, op);
  if (grad_mode()) {
    bool any = false;
    for (const auto& t : inputs) any = any || t.requires_grad();
    if (any) {
      out->requires_grad = true;
      out->leaf = false;
      out->parents.reserve(inputs.size());
      for (const auto& t : inputs) out->parents.push_back(t.node());
      out->backward = std::move(backward);
    }
  }
  return Tensor(std::move(out));
}

inline Tensor record(const char* op, Shape shape, std::vector<double> value, const std::vector<Tensor>& inputs,
                     std::function<void(const Node&)> backward) {
  auto out = std::make_shared<Node>();
  out->shape = std::move(shape);
  out->value = std::move(value);
  if (finite_check_mode()) check_finite(*out, op);
  if (grad_mode()) {
    bool any = false;
    for (const auto& t : inputs) any = any || t.requires_grad();
    if (any) {
      out->requires_grad = true;
      out->leaf = false;
      for (const auto& t : inputs) out->parents.push_back(t.node());
      out->backward = std::move(backward);
    }
  }
  return Tensor(std::move(out));
}

}  // namespace detail

/// Accumulates d(loss)/d(x) into every tensor on the tape that requires a
/// gradient, then frees the tape. The loss must hold exactly one value.
inline void backward(const Tensor& loss) {
  if (!loss.defined() || loss.numel() != 1) {
    throw ConfigError("backward() needs a scalar loss, got shape " +
                      (loss.defined() ? to_string(loss.shape()) : std::string("<undefined>")));
  }
  if (!loss.requires_grad()) throw ConfigError("backward() on a loss that is not on the tape");

  std::vector<detail::Node*> order;
  std::unordered_set<detail::Node*> seen;
  std::vector<std::pair<detail::Node*, std::size_t>> stack{{loss.node().get(), 0}};
  seen.insert(loss.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      detail::Node* p = node->parents[next++].get();
      if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  loss.node()->grad_ref()[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    detail::Node* n = *it;
    if (n->backward && !n->grad.empty()) n->backward(*n);
  }
  for (detail::Node* n : order) {
    if (!n->leaf) {
      n->backward = nullptr;
      n->parents.clear();
    }
  }
}

}  // namespace satrack
