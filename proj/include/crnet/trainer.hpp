#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "crnet/dataset.hpp"
#include "crnet/episode.hpp"
#include "crnet/metric.hpp"
#include "crnet/model.hpp"
#include "crnet/optim.hpp"
#include "crnet/rng.hpp"

namespace crnet {

struct TrainConfig {
  EpisodeConfig episode;
  LossWeights weights;
  /// Validate every `val_every` episodes (0 = never) on `val_tasks` tasks.
  std::size_t val_every = 0;
  std::size_t val_tasks = 50;
  std::uint64_t seed = 1;
};

struct RunningMetrics {
  std::uint64_t tasks_seen = 0;
  double mean_total = 0.0;  // running mean of the total loss
  double mean_accuracy_euclidean = 0.0;
  double mean_accuracy_relation = 0.0;
  double best_val_accuracy = -1.0;
  std::uint64_t best_episode = 0;

  bool operator==(const RunningMetrics&) const = default;
};

/// Everything needed to continue a run exactly where it stopped.
struct TrainState {
  ClassRegNet model;
  Optimizer optimizer;
  std::uint64_t episode = 0;  // episodes completed so far
  Rng rng;                    // task sampling stream
  RunningMetrics metrics;

  TrainState(ClassRegNet m, OptimizerConfig opt, std::uint64_t seed)
      : model(std::move(m)), optimizer(std::move(opt)), rng(Rng::stream(seed, "sampling")) {}
};

struct TaskLog {
  std::uint64_t episode = 0;
  std::size_t task = 0;
  double euclidean = 0.0;
  double relation = 0.0;
  double regularization = 0.0;
  double total = 0.0;
  double accuracy_euclidean = 0.0;
  double accuracy_relation = 0.0;

  bool operator==(const TaskLog&) const = default;
};

struct TrainCallbacks {
  /// Called with the new best validation accuracy after a validation round improves it.
  std::function<void(const TrainState&, double)> on_best;
  /// Called when a task produces a non-finite value, before its optimizer step and before rethrowing.
  std::function<void(const TrainState&)> on_abort;
  /// Called after every task.
  std::function<void(const TaskLog&)> on_task;
};

/// Runs `config.episode.episodes` more episodes of `tasks_per_episode` tasks,
/// one optimizer step per task. Throws NumericError on NaN/Inf.
std::vector<TaskLog> train(const FewShotDataset& data, const FewShotDataset* val, const TrainConfig& config,
                           TrainState& state, const TrainCallbacks& callbacks = {});

/// One step on a given task; exposed so fixed-episode runs can reuse it.
TaskLog train_step(const FewShotDataset& data, const EpisodeTask& task, const LossWeights& weights, TrainState& state);

double fraction_correct(const std::vector<std::size_t>& predicted, const std::vector<std::size_t>& labels);

}  // namespace crnet
