#include "crnet/evaluate.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <mutex>
#include <stdexcept>
#include <thread>

#include "crnet/metric.hpp"
#include "crnet/ops.hpp"
#include "crnet/trainer.hpp"

namespace crnet {

std::string to_string(MetricHead h) {
  switch (h) {
    case MetricHead::Euclidean: return "euclidean";
    case MetricHead::Relation: return "relation";
    case MetricHead::Both: return "both";
  }
  return "?";
}

MetricHead metric_head_from_string(const std::string& s) {
  if (s == "euclidean") return MetricHead::Euclidean;
  if (s == "relation") return MetricHead::Relation;
  if (s == "both") return MetricHead::Both;
  throw std::invalid_argument("unknown metric head '" + s + "' (expected euclidean, relation or both)");
}

AccuracyStat summarize_accuracy(std::vector<double> per_task) {
  AccuracyStat s;
  const std::size_t n = per_task.size();
  s.per_task = std::move(per_task);
  if (n == 0) return s;
  double sum = 0.0;
  for (double a : s.per_task) sum += a;
  s.mean = sum / static_cast<double>(n);
  if (n > 1) {
    double ss = 0.0;
    for (double a : s.per_task) ss += (a - s.mean) * (a - s.mean);
    s.ci95 = 1.96 * std::sqrt(ss / static_cast<double>(n - 1)) / std::sqrt(static_cast<double>(n));
  }
  return s;
}

TaskAccuracy evaluate_task(const FewShotDataset& data, const ClassRegNet& model, const EpisodeTask& task) {
  NoGradGuard no_grad;
  const std::size_t K = task.ways();
  const std::size_t shots = task.support.size() / K;
  std::vector<ImageRef> refs = task.support;
  refs.insert(refs.end(), task.query.begin(), task.query.end());
  Array features = model.embed(make_batch(data, refs).images, Mode::Eval);
  Array support = take_rows(features, range_indices(0, task.support.size()));
  Array query = take_rows(features, range_indices(task.support.size(), refs.size()));

  Array decoded = model.decoded_descriptors(support, K, shots);
  Array protos = model.prototype_descriptors(support, K, shots);
  TaskAccuracy acc;
  acc.euclidean = fraction_correct(argmin_rows(squared_distances(query, decoded)), task.query_labels);
  acc.relation = fraction_correct(argmax_rows(relation_scores(query, decoded, model.relation())), task.query_labels);
  acc.prototype = fraction_correct(argmin_rows(squared_distances(query, protos)), task.query_labels);
  return acc;
}

EvalReport evaluate(const FewShotDataset& data, const ClassRegNet& model, const EvalConfig& config) {
  config.episode.validate();
  if (config.num_tasks == 0) throw std::invalid_argument("evaluate: num_tasks must be at least 1");
  std::vector<TaskAccuracy> results(config.num_tasks);

  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  auto worker = [&] {
    try {
      for (std::size_t i = next++; i < config.num_tasks; i = next++) {
        Rng rng = Rng::stream(config.seed, "eval", i);
        results[i] = evaluate_task(data, model, sample_episode(data, config.episode, rng));
      }
    } catch (...) {
      std::lock_guard lock(failure_mutex);
      if (!failure) failure = std::current_exception();
      next = config.num_tasks;
    }
  };
  const std::size_t threads = std::clamp<std::size_t>(config.threads, 1, config.num_tasks);
  if (threads == 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t t = 0; t < threads; ++t) pool.emplace_back(worker);
  }
  if (failure) std::rethrow_exception(failure);

  EvalReport report;
  report.num_tasks = config.num_tasks;
  std::vector<double> e, r, p;
  for (const auto& t : results) {
    e.push_back(t.euclidean);
    r.push_back(t.relation);
    p.push_back(t.prototype);
  }
  if (config.head != MetricHead::Relation) report.euclidean = summarize_accuracy(std::move(e));
  if (config.head != MetricHead::Euclidean) report.relation = summarize_accuracy(std::move(r));
  report.prototype = summarize_accuracy(std::move(p));
  return report;
}

}  // namespace crnet
