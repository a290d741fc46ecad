#include "crnet/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace crnet {

GradCheckReport gradient_check(const std::function<Array()>& fn, const std::vector<NamedArray>& params,
                               double epsilon, double tolerance) {
  if (!(epsilon > 0.0)) throw std::invalid_argument("gradient_check: epsilon must be positive");
  for (const auto& [name, p] : params) {
    if (!p.requires_grad() || !p.is_leaf()) {
      throw std::invalid_argument("gradient_check: '" + name + "' is not a trainable leaf");
    }
  }

  const auto evaluate = [&] {
    NoGradGuard guard;
    return fn().item();
  };

  const double f0 = evaluate();
  if (evaluate() != f0) throw std::runtime_error("gradient_check: function is not deterministic");

  for (auto [_, p] : params) p.zero_grad();
  Array loss = fn();
  loss.backward();

  GradCheckReport report;
  double worst_score = -1.0;
  for (const auto& [name, param] : params) {
    Array p = param;
    const std::vector<double> analytic = p.grad();
    auto values = p.mutable_values();
    bool param_failed = false;
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double saved = values[i];
      values[i] = saved + epsilon;
      const double plus = evaluate();
      values[i] = saved - epsilon;
      const double minus = evaluate();
      values[i] = saved;
      const double numeric = (plus - minus) / (2.0 * epsilon);

      const double abs_err = std::abs(numeric - analytic[i]);
      const double denom = std::max(std::abs(numeric), std::abs(analytic[i]));
      const double rel_err = denom > 1e-6 ? abs_err / denom : 0.0;
      const bool ok = denom > 1e-6 ? rel_err < tolerance : abs_err < tolerance;
      ++report.coordinates_checked;

      const double score = denom > 1e-6 ? rel_err : abs_err;
      if (score > worst_score) {
        worst_score = score;
        report.worst_param = name;
        report.worst_index = i;
      }
      report.max_abs_error = std::max(report.max_abs_error, abs_err);
      report.max_rel_error = std::max(report.max_rel_error, rel_err);
      if (!ok) param_failed = true;
    }
    if (param_failed) {
      report.passed = false;
      report.failing_params.push_back(name);
    }
    p.zero_grad();
  }
  return report;
}

GradCheckReport gradient_check(const std::function<Array()>& fn, const ParameterSet& params, double epsilon,
                               double tolerance) {
  std::vector<NamedArray> named;
  for (const auto& [name, e] : params) named.emplace_back(name, e.value);
  return gradient_check(fn, named, epsilon, tolerance);
}

}  // namespace crnet
