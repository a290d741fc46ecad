#pragma once

#include <functional>
#include <map>
#include <string>
#include <vector>

#include "crnet/array.hpp"

namespace crnet {

struct ParameterEntry {
  Array value;
  double lr_multiplier = 1.0;
};

/// Named trainable arrays. Iteration is sorted by name.
class ParameterSet {
 public:
  /// Registers a new parameter leaf; throws on a duplicate name.
  Array& add(const std::string& name, Shape shape, std::vector<double> values, double lr_multiplier = 1.0);
  /// Registers an existing leaf.
  Array& add(const std::string& name, Array value, double lr_multiplier = 1.0);

  bool contains(const std::string& name) const { return entries_.count(name) != 0; }
  Array& at(const std::string& name);
  const Array& at(const std::string& name) const;
  const ParameterEntry& entry(const std::string& name) const;

  auto begin() { return entries_.begin(); }
  auto end() { return entries_.end(); }
  auto begin() const { return entries_.begin(); }
  auto end() const { return entries_.end(); }
  std::size_t size() const { return entries_.size(); }
  std::vector<std::string> names() const;

  void zero_grad();
  std::size_t total_elements() const;
  /// Parameters whose name starts with one of `prefixes`.
  std::vector<Array> select(const std::vector<std::string>& prefixes) const;

  /// Overwrites values in place from another set with identical names/shapes.
  void copy_values_from(const ParameterSet& other);

 private:
  std::map<std::string, ParameterEntry> entries_;
};

/// Non-trainable state (batch-norm running statistics, derived tensors).
using BufferSet = std::map<std::string, Array>;

}  // namespace crnet
