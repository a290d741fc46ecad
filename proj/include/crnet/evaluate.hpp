#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "crnet/dataset.hpp"
#include "crnet/episode.hpp"
#include "crnet/model.hpp"

namespace crnet {

enum class MetricHead { Euclidean, Relation, Both };
std::string to_string(MetricHead h);
MetricHead metric_head_from_string(const std::string& s);

/// Mean accuracy with a 95% interval half-width 1.96 * sd / sqrt(n), sd
/// using the n-1 divisor (0 when n = 1).
struct AccuracyStat {
  double mean = 0.0;
  double ci95 = 0.0;
  std::vector<double> per_task;
};
AccuracyStat summarize_accuracy(std::vector<double> per_task);

struct EvalConfig {
  EpisodeConfig episode;
  std::size_t num_tasks = 600;
  MetricHead head = MetricHead::Both;
  std::uint64_t seed = 1;
  std::size_t threads = 1;
};

struct EvalReport {
  std::size_t num_tasks = 0;
  AccuracyStat euclidean;  // decoded descriptors, nearest by squared distance
  AccuracyStat relation;   // decoded descriptors, highest relation score
  AccuracyStat prototype;  // mean prototypes, nearest by squared distance
};

struct TaskAccuracy {
  double euclidean = 0.0;
  double relation = 0.0;
  double prototype = 0.0;
};

/// Eval-mode accuracies on one task.
TaskAccuracy evaluate_task(const FewShotDataset& data, const ClassRegNet& model, const EpisodeTask& task);

/// Task i is drawn from Rng::stream(seed, "eval", i), so the report does not
/// depend on `threads`. Heads not requested are left empty.
EvalReport evaluate(const FewShotDataset& data, const ClassRegNet& model, const EvalConfig& config);

}  // namespace crnet
