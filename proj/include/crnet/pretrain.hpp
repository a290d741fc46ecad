#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "crnet/dataset.hpp"
#include "crnet/embedding.hpp"
#include "crnet/parameters.hpp"

namespace crnet {

struct PretrainConfig {
  std::size_t epochs = 10;
  double lr = 1e-4;
  std::size_t batch_size = 32;
  std::uint64_t seed = 1;
};

/// Supervised warm-up of the embedding: a temporary linear head over every
/// class in `data` is trained jointly with the embedding under softmax
/// cross-entropy (Adam), then thrown away. Only parameters of `params` whose
/// names start with `prefix` are updated. Returns the training accuracy of
/// each epoch, measured on the fly.
std::vector<double> pretrain(const FewShotDataset& data, const Embedding& embedding, ParameterSet& params,
                             const PretrainConfig& config, const std::string& prefix = "embed.");

}  // namespace crnet
