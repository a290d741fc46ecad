#include "crnet/array.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <unordered_set>

namespace crnet {

namespace {

thread_local bool g_grad_enabled = true;

void require_finite(const std::vector<double>& v, const char* op, const char* what) {
  for (double x : v) {
    if (!std::isfinite(x)) {
      throw NumericError(std::string("non-finite ") + what + " produced by '" + op + "'");
    }
  }
}

}  // namespace

std::size_t shape_size(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

Array Array::constant(Shape shape, std::vector<double> values) {
  if (shape_size(shape) != values.size()) {
    throw ShapeError("constant: shape " + shape_string(shape) + " does not match " +
                     std::to_string(values.size()) + " values");
  }
  require_finite(values, "constant", "value");
  auto node = std::make_shared<detail::Node>();
  node->shape = std::move(shape);
  node->value = std::move(values);
  return Array(std::move(node));
}

Array Array::zeros(Shape shape) { return full(std::move(shape), 0.0); }

Array Array::full(Shape shape, double value) {
  const auto n = shape_size(shape);
  return constant(std::move(shape), std::vector<double>(n, value));
}

Array Array::scalar(double value) { return constant({}, {value}); }

Array Array::parameter(Shape shape, std::vector<double> values) {
  Array a = constant(std::move(shape), std::move(values));
  a.node_->requires_grad = true;
  return a;
}

const Shape& Array::shape() const {
  if (!node_) throw std::logic_error("use of undefined Array");
  return node_->shape;
}

std::size_t Array::dim(std::size_t axis) const {
  const auto& s = shape();
  if (axis >= s.size()) {
    throw ShapeError("dim: axis " + std::to_string(axis) + " out of range for " + shape_string(s));
  }
  return s[axis];
}

std::size_t Array::size() const { return shape_size(shape()); }

std::span<const double> Array::values() const {
  shape();
  return node_->value;
}

std::span<double> Array::mutable_values() {
  shape();
  if (!node_->is_leaf) throw std::logic_error("mutable_values on a non-leaf array");
  return node_->value;
}

std::vector<double> Array::to_vector() const {
  auto v = values();
  return {v.begin(), v.end()};
}

double Array::item() const {
  if (size() != 1) throw ShapeError("item: array of shape " + shape_string(shape()) + " is not a scalar");
  return node_->value[0];
}

double Array::at(std::size_t row, std::size_t col) const {
  const auto& s = shape();
  if (s.size() != 2 || row >= s[0] || col >= s[1]) {
    throw ShapeError("at: index out of range for " + shape_string(s));
  }
  return node_->value[row * s[1] + col];
}

bool Array::requires_grad() const { return node_ && node_->requires_grad; }
bool Array::is_leaf() const { return node_ && node_->is_leaf; }

std::vector<double> Array::grad() const {
  shape();
  if (node_->grad.empty()) return std::vector<double>(node_->value.size(), 0.0);
  return node_->grad;
}

void Array::zero_grad() {
  if (node_) node_->grad.clear();
}

Array Array::detach() const {
  shape();
  return constant(node_->shape, node_->value);
}

Array Array::clone() const {
  Array a = detach();
  a.node_->requires_grad = node_->requires_grad && node_->is_leaf;
  return a;
}

std::vector<double>& Array::grad_buffer(detail::Node& n) {
  if (n.grad.empty()) n.grad.assign(n.value.size(), 0.0);
  return n.grad;
}

std::vector<double>& Array::grad_buffer(const Array& a) { return grad_buffer(*a.node_); }

Array Array::from_op(const char* op, Shape shape, std::vector<double> values,
                     std::vector<Array> parents, detail::BackwardFn backward) {
  if (shape_size(shape) != values.size()) {
    throw std::logic_error(std::string(op) + ": internal shape/value mismatch");
  }
  require_finite(values, op, "value");
  auto node = std::make_shared<detail::Node>();
  node->shape = std::move(shape);
  node->value = std::move(values);
  node->op = op;
  if (g_grad_enabled) {
    bool any = std::any_of(parents.begin(), parents.end(),
                           [](const Array& p) { return p.requires_grad(); });
    if (any) {
      node->requires_grad = true;
      node->is_leaf = false;
      node->parents.reserve(parents.size());
      for (auto& p : parents) node->parents.push_back(p.node_);
      node->backward = std::move(backward);
    }
  }
  return Array(std::move(node));
}

void Array::backward() const {
  shape();
  if (node_->value.size() != 1 || node_->shape.size() > 1) {
    throw ShapeError("backward: loss must be a scalar, got shape " + shape_string(node_->shape));
  }
  if (!node_->requires_grad) return;

  // Post-order DFS gives a deterministic topological order.
  std::vector<detail::Node*> order;
  std::unordered_set<detail::Node*> visited;
  std::vector<std::pair<detail::Node*, std::size_t>> stack;
  stack.emplace_back(node_.get(), 0);
  visited.insert(node_.get());
  while (!stack.empty()) {
    auto& [n, next] = stack.back();
    if (next < n->parents.size()) {
      detail::Node* p = n->parents[next++].get();
      if (p->requires_grad && !visited.count(p)) {
        visited.insert(p);
        stack.emplace_back(p, 0);
      }
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }

  for (auto* n : order) {
    if (!n->is_leaf) n->grad.assign(n->value.size(), 0.0);
  }
  grad_buffer(*node_)[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    detail::Node* n = *it;
    if (n->is_leaf) continue;
    n->backward(*n);
  }
  for (auto* n : order) {
    if (n->is_leaf) {
      require_finite(n->grad, "backward", "gradient");
    } else {
      require_finite(n->grad, n->op, "gradient");
      n->grad.clear();
      n->grad.shrink_to_fit();
    }
  }
}

}  // namespace crnet
