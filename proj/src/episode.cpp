#include "crnet/episode.hpp"

#include <stdexcept>
#include <string>

namespace crnet {

void EpisodeConfig::validate() const {
  if (ways == 0) throw std::invalid_argument("episode: ways must be positive");
  if (shots == 0) throw std::invalid_argument("episode: shots must be positive");
  if (tasks_per_episode == 0) throw std::invalid_argument("episode: tasks_per_episode must be positive");
}

EpisodeTask sample_episode(const FewShotDataset& data, const EpisodeConfig& config, Rng& rng) {
  config.validate();
  if (data.num_classes() < config.ways) {
    throw std::invalid_argument("episode: split has " + std::to_string(data.num_classes()) + " classes, need " +
                                std::to_string(config.ways));
  }
  const std::size_t need = config.shots + config.queries_per_class;
  EpisodeTask task;
  task.class_ids = rng.sample_without_replacement(data.num_classes(), config.ways);
  for (std::size_t k = 0; k < task.class_ids.size(); ++k) {
    const std::size_t cls = task.class_ids[k];
    const std::size_t available = data.num_images(cls);
    if (available < need) {
      throw std::invalid_argument("episode: class '" + data.classes[cls].name + "' has " + std::to_string(available) +
                                  " images, need " + std::to_string(need));
    }
    const auto support = rng.sample_without_replacement(available, config.shots);
    std::vector<bool> used(available, false);
    for (auto i : support) used[i] = true;
    std::vector<std::size_t> rest;
    for (std::size_t i = 0; i < available; ++i)
      if (!used[i]) rest.push_back(i);
    const auto picks = rng.sample_without_replacement(rest.size(), config.queries_per_class);
    for (auto i : support) {
      task.support.emplace_back(cls, i);
      task.support_labels.push_back(k);
    }
    for (auto p : picks) {
      task.query.emplace_back(cls, rest[p]);
      task.query_labels.push_back(k);
    }
  }
  return task;
}

}  // namespace crnet
