#include "crnet/optim.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace crnet {

std::string to_string(OptimizerKind kind) { return kind == OptimizerKind::Sgd ? "sgd" : "adam"; }

OptimizerKind optimizer_kind_from_string(const std::string& s) {
  if (s == "sgd") return OptimizerKind::Sgd;
  if (s == "adam") return OptimizerKind::Adam;
  throw std::invalid_argument("unknown optimizer '" + s + "' (expected sgd or adam)");
}

void Optimizer::step(ParameterSet& params) {
  ++state_.step;
  const double t = static_cast<double>(state_.step);
  for (auto& [name, entry] : params) {
    const double lr = config_.lr * entry.lr_multiplier;
    std::vector<double> g = entry.value.grad();
    auto w = entry.value.mutable_values();
    const bool decay = config_.weight_decay > 0.0 &&
                       std::any_of(config_.decay_prefixes.begin(), config_.decay_prefixes.end(),
                                   [&](const std::string& p) { return name.rfind(p, 0) == 0; });
    if (decay)
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += config_.weight_decay * w[i];

    if (config_.kind == OptimizerKind::Sgd) {
      auto& v = state_.slots["velocity/" + name];
      v.resize(g.size(), 0.0);
      for (std::size_t i = 0; i < g.size(); ++i) {
        v[i] = config_.momentum * v[i] + g[i];
        w[i] -= lr * v[i];
      }
    } else {
      auto& m = state_.slots["m/" + name];
      auto& s = state_.slots["v/" + name];
      m.resize(g.size(), 0.0);
      s.resize(g.size(), 0.0);
      const double c1 = 1.0 - std::pow(config_.beta1, t);
      const double c2 = 1.0 - std::pow(config_.beta2, t);
      for (std::size_t i = 0; i < g.size(); ++i) {
        m[i] = config_.beta1 * m[i] + (1.0 - config_.beta1) * g[i];
        s[i] = config_.beta2 * s[i] + (1.0 - config_.beta2) * g[i] * g[i];
        w[i] -= lr * (m[i] / c1) / (std::sqrt(s[i] / c2) + config_.eps);
      }
    }
  }
}

}  // namespace crnet
