#pragma once

#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "crnet/array.hpp"
#include "crnet/parameters.hpp"

namespace crnet {

using NamedArray = std::pair<std::string, Array>;

struct GradCheckReport {
  bool passed = true;
  double max_abs_error = 0.0;
  double max_rel_error = 0.0;
  std::string worst_param;
  std::size_t worst_index = 0;
  std::vector<std::string> failing_params;
  std::size_t coordinates_checked = 0;
};

/// Compares backward() against central differences (f(p+e) - f(p-e)) / 2e
/// for every coordinate of every listed leaf. A coordinate passes when its
/// relative deviation is below `tolerance` (or, where both gradients are
/// below 1e-6 in magnitude, its absolute deviation is). Throws
/// std::runtime_error if two evaluations of `fn` at the same point disagree.
GradCheckReport gradient_check(const std::function<Array()>& fn, const std::vector<NamedArray>& params,
                               double epsilon = 1e-5, double tolerance = 1e-4);

GradCheckReport gradient_check(const std::function<Array()>& fn, const ParameterSet& params,
                               double epsilon = 1e-5, double tolerance = 1e-4);

}  // namespace crnet
