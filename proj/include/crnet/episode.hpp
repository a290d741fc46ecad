#pragma once

#include <cstdint>
#include <vector>

#include "crnet/dataset.hpp"
#include "crnet/rng.hpp"

namespace crnet {

struct EpisodeConfig {
  std::size_t ways = 5;               // K
  std::size_t shots = 5;              // C
  std::size_t queries_per_class = 15;
  std::size_t episodes = 100;         // N_e
  std::size_t tasks_per_episode = 1;  // N_t

  std::size_t support_size() const { return ways * shots; }
  std::size_t query_size() const { return ways * queries_per_class; }
  void validate() const;
};

/// One K-way C-shot task. Support and query images are class-major: rows
/// [k*C, (k+1)*C) of the support belong to episode class k.
struct EpisodeTask {
  std::vector<std::size_t> class_ids;  // episode class k -> dataset class id
  std::vector<ImageRef> support;
  std::vector<ImageRef> query;
  std::vector<std::size_t> support_labels;  // episode-local 0..K-1
  std::vector<std::size_t> query_labels;

  std::size_t ways() const { return class_ids.size(); }
};

/// Draws K distinct classes, then per class C support images without
/// replacement and the queries from the remaining images. Throws
/// std::invalid_argument naming the first class that is too small.
EpisodeTask sample_episode(const FewShotDataset& data, const EpisodeConfig& config, Rng& rng);

}  // namespace crnet
