#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace crnet {

using Shape = std::vector<std::size_t>;

std::size_t shape_size(const Shape& shape);
std::string shape_string(const Shape& shape);

/// Raised when operand shapes are incompatible. The message names the
/// operation and the offending shapes.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Raised when a forward or backward pass produces NaN or Inf.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class Array;

namespace detail {

struct Node;
using BackwardFn = std::function<void(const Node& out)>;

struct Node {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;  // empty until something flows into it
  bool requires_grad = false;
  bool is_leaf = true;
  const char* op = "leaf";
  std::vector<std::shared_ptr<Node>> parents;
  BackwardFn backward;
};

}  // namespace detail

/// Dense row-major array of doubles that can take part in reverse-mode
/// differentiation. Copies share the underlying storage; use clone() for a
/// deep copy.
class Array {
 public:
  Array() = default;

  static Array constant(Shape shape, std::vector<double> values);
  static Array zeros(Shape shape);
  static Array full(Shape shape, double value);
  static Array scalar(double value);
  /// Leaf that accumulates gradients on backward().
  static Array parameter(Shape shape, std::vector<double> values);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t size() const;

  std::span<const double> values() const;
  /// Write access for leaves only (optimizer updates, finite differences).
  std::span<double> mutable_values();
  std::vector<double> to_vector() const;
  double item() const;
  double operator[](std::size_t i) const { return values()[i]; }
  double at(std::size_t row, std::size_t col) const;

  bool requires_grad() const;
  bool is_leaf() const;
  /// Gradient buffer; all zeros when nothing has flowed into this array.
  std::vector<double> grad() const;
  void zero_grad();

  /// Runs reverse-mode accumulation from this scalar through the tape.
  void backward() const;

  Array detach() const;
  Array clone() const;

  /// Builds a tape node. When grad mode is off or no parent requires
  /// gradients the parents and backward rule are dropped.
  static Array from_op(const char* op, Shape shape, std::vector<double> values,
                       std::vector<Array> parents, detail::BackwardFn backward);

  /// Accumulation target for backward rules; allocated on first use.
  static std::vector<double>& grad_buffer(const Array& a);
  static std::vector<double>& grad_buffer(detail::Node& n);

  const detail::Node* node() const { return node_.get(); }

 private:
  explicit Array(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}
  std::shared_ptr<detail::Node> node_;
};

/// Disables tape recording on the current thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

bool grad_enabled();

}  // namespace crnet
