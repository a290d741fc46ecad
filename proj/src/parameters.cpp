#include "crnet/parameters.hpp"

#include <algorithm>
#include <stdexcept>

namespace crnet {

Array& ParameterSet::add(const std::string& name, Shape shape, std::vector<double> values, double lr_multiplier) {
  return add(name, Array::parameter(std::move(shape), std::move(values)), lr_multiplier);
}

Array& ParameterSet::add(const std::string& name, Array value, double lr_multiplier) {
  if (!value.requires_grad() || !value.is_leaf()) {
    throw std::invalid_argument("parameter '" + name + "' must be a trainable leaf");
  }
  auto [it, inserted] = entries_.emplace(name, ParameterEntry{std::move(value), lr_multiplier});
  if (!inserted) throw std::invalid_argument("duplicate parameter name '" + name + "'");
  return it->second.value;
}

Array& ParameterSet::at(const std::string& name) {
  auto it = entries_.find(name);
  if (it == entries_.end()) throw std::out_of_range("unknown parameter '" + name + "'");
  return it->second.value;
}

const Array& ParameterSet::at(const std::string& name) const { return entry(name).value; }

const ParameterEntry& ParameterSet::entry(const std::string& name) const {
  auto it = entries_.find(name);
  if (it == entries_.end()) throw std::out_of_range("unknown parameter '" + name + "'");
  return it->second;
}

std::vector<std::string> ParameterSet::names() const {
  std::vector<std::string> out;
  out.reserve(entries_.size());
  for (const auto& [name, _] : entries_) out.push_back(name);
  return out;
}

void ParameterSet::zero_grad() {
  for (auto& [_, e] : entries_) e.value.zero_grad();
}

std::size_t ParameterSet::total_elements() const {
  std::size_t n = 0;
  for (const auto& [_, e] : entries_) n += e.value.size();
  return n;
}

std::vector<Array> ParameterSet::select(const std::vector<std::string>& prefixes) const {
  std::vector<Array> out;
  for (const auto& [name, e] : entries_) {
    if (std::any_of(prefixes.begin(), prefixes.end(),
                    [&](const std::string& p) { return name.rfind(p, 0) == 0; })) {
      out.push_back(e.value);
    }
  }
  return out;
}

void ParameterSet::copy_values_from(const ParameterSet& other) {
  if (other.size() != size()) throw std::invalid_argument("parameter sets differ in size");
  for (auto& [name, e] : entries_) {
    const Array& src = other.at(name);
    if (src.shape() != e.value.shape()) {
      throw ShapeError("parameter '" + name + "' shape " + shape_string(src.shape()) + " vs " +
                       shape_string(e.value.shape()));
    }
    auto dst = e.value.mutable_values();
    std::copy(src.values().begin(), src.values().end(), dst.begin());
  }
}

}  // namespace crnet
