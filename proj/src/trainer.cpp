#include "crnet/trainer.hpp"

#include <stdexcept>

#include "crnet/evaluate.hpp"

namespace crnet {

double fraction_correct(const std::vector<std::size_t>& predicted, const std::vector<std::size_t>& labels) {
  if (predicted.size() != labels.size()) throw std::invalid_argument("fraction_correct: size mismatch");
  if (labels.empty()) return 0.0;
  std::size_t hits = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) hits += predicted[i] == labels[i];
  return static_cast<double>(hits) / static_cast<double>(labels.size());
}

TaskLog train_step(const FewShotDataset& data, const EpisodeTask& task, const LossWeights& weights, TrainState& state) {
  state.model.params().zero_grad();
  EpisodeForward fwd = state.model.forward_episode(data, task, weights, Mode::Train);
  fwd.loss.total.backward();
  state.optimizer.step(state.model.params());
  state.model.after_update();

  const LossBreakdown& b = fwd.loss.breakdown;
  TaskLog log;
  log.euclidean = b.euclidean;
  log.relation = b.relation;
  log.regularization = b.regularization;
  log.total = b.total;
  log.accuracy_euclidean = fraction_correct(b.predicted_euclidean, task.query_labels);
  log.accuracy_relation = fraction_correct(b.predicted_relation, task.query_labels);
  return log;
}

namespace {

void update_metrics(RunningMetrics& m, const TaskLog& log) {
  ++m.tasks_seen;
  const double w = 1.0 / static_cast<double>(m.tasks_seen);
  m.mean_total += w * (log.total - m.mean_total);
  m.mean_accuracy_euclidean += w * (log.accuracy_euclidean - m.mean_accuracy_euclidean);
  m.mean_accuracy_relation += w * (log.accuracy_relation - m.mean_accuracy_relation);
}

}  // namespace

std::vector<TaskLog> train(const FewShotDataset& data, const FewShotDataset* val, const TrainConfig& config,
                           TrainState& state, const TrainCallbacks& callbacks) {
  config.episode.validate();
  config.weights.validate();
  std::vector<TaskLog> logs;
  logs.reserve(config.episode.episodes * config.episode.tasks_per_episode);

  for (std::size_t e = 0; e < config.episode.episodes; ++e) {
    for (std::size_t t = 0; t < config.episode.tasks_per_episode; ++t) {
      // Sample on a copy so an aborted task can be replayed from the snapshot.
      Rng rng = state.rng;
      const EpisodeTask task = sample_episode(data, config.episode, rng);
      TaskLog log;
      try {
        log = train_step(data, task, config.weights, state);
      } catch (const NumericError&) {
        if (callbacks.on_abort) callbacks.on_abort(state);
        throw;
      }
      state.rng = rng;
      log.episode = state.episode;
      log.task = t;
      update_metrics(state.metrics, log);
      logs.push_back(log);
      if (callbacks.on_task) callbacks.on_task(log);
    }
    ++state.episode;

    if (val != nullptr && config.val_every > 0 && state.episode % config.val_every == 0) {
      EvalConfig ec;
      ec.episode = config.episode;
      ec.num_tasks = config.val_tasks;
      ec.seed = splitmix64(config.seed ^ fnv1a64("validation"));
      const EvalReport r = evaluate(*val, state.model, ec);
      const double acc = 0.5 * (r.euclidean.mean + r.relation.mean);
      if (acc > state.metrics.best_val_accuracy) {
        state.metrics.best_val_accuracy = acc;
        state.metrics.best_episode = state.episode;
        if (callbacks.on_best) callbacks.on_best(state, acc);
      }
    }
  }
  return logs;
}

}  // namespace crnet
