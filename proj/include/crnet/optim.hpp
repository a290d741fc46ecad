#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "crnet/parameters.hpp"

namespace crnet {

enum class OptimizerKind { Sgd, Adam };

std::string to_string(OptimizerKind kind);
OptimizerKind optimizer_kind_from_string(const std::string& s);

struct OptimizerConfig {
  OptimizerKind kind = OptimizerKind::Adam;
  double lr = 1e-3;
  double momentum = 0.9;  // SGD only
  double beta1 = 0.9;     // Adam only
  double beta2 = 0.999;
  double eps = 1e-8;
  /// Decoupled L2 decay applied to parameters whose name starts with one of
  /// `decay_prefixes`.
  double weight_decay = 0.0;
  std::vector<std::string> decay_prefixes;
};

/// Serializable optimizer state: named slot arrays plus a step counter.
struct OptimizerState {
  std::uint64_t step = 0;
  std::map<std::string, std::vector<double>> slots;
};

/// Applies one update from the accumulated gradients of a ParameterSet.
class Optimizer {
 public:
  explicit Optimizer(OptimizerConfig config) : config_(std::move(config)) {}

  void step(ParameterSet& params);

  const OptimizerConfig& config() const { return config_; }
  const OptimizerState& state() const { return state_; }
  void set_state(OptimizerState state) { state_ = std::move(state); }

 private:
  OptimizerConfig config_;
  OptimizerState state_;
};

}  // namespace crnet
