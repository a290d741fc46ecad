#pragma once

#include <cstdint>
#include <vector>

#include "crnet/class_codec.hpp"
#include "crnet/dataset.hpp"
#include "crnet/embedding.hpp"
#include "crnet/episode.hpp"
#include "crnet/metric.hpp"
#include "crnet/parameters.hpp"

namespace crnet {

struct ModelConfig {
  EmbeddingConfig embedding;
  EncoderConfig encoder;
  DecoderConfig decoder;
  RelationConfig relation;
};

struct EpisodeForward {
  TotalLoss loss;
  Array support_features;  // [K*C, D]
  Array query_features;    // [K*Q, D]
  Array descriptors;       // [K, D]
  Array relation_scores;   // [K*Q, K]
};

/// Embedding -> class encoder -> class decoder -> metric module, with every
/// trainable array registered in one ParameterSet:
///   embed.*     embedding network
///   encoder.*   bases and assignment parameters
///   decoder.*   basis-axis combination
///   relation.*  comparator
class ClassRegNet {
 public:
  ClassRegNet(ModelConfig config, std::uint64_t seed);
  ClassRegNet(ClassRegNet&&) = default;
  ClassRegNet& operator=(ClassRegNet&&) = default;
  ClassRegNet(const ClassRegNet&) = delete;
  ClassRegNet& operator=(const ClassRegNet&) = delete;

  const ModelConfig& config() const { return config_; }
  std::size_t feature_dim() const { return embedding_.feature_dim(); }

  ParameterSet& params() { return params_; }
  const ParameterSet& params() const { return params_; }
  BufferSet& buffers() { return buffers_; }
  const BufferSet& buffers() const { return buffers_; }

  const Embedding& embedding() const { return embedding_; }
  const ClassEncoderParams& encoder() const { return encoder_; }
  const ClassDecoderParams& decoder() const { return decoder_; }
  const RelationParams& relation() const { return relation_; }

  Array embed(const Array& images, Mode mode) const { return embedding_.forward(images, mode); }
  /// Decoded descriptor of one class from its features [C, D].
  ClassDescriptor decoded_descriptor(const Array& class_features) const;
  /// Class-major support features [K*C, D] -> decoded descriptors [K, D].
  Array decoded_descriptors(const Array& support_features, std::size_t ways, std::size_t shots) const;
  /// Same layout -> mean prototypes [K, D].
  Array prototype_descriptors(const Array& support_features, std::size_t ways, std::size_t shots) const;

  /// Embeds support and query together, builds descriptors and both losses,
  /// reduced over the queries and combined with `weights`.
  EpisodeForward forward_episode(const FewShotDataset& data, const EpisodeTask& task, const LossWeights& weights,
                                 Mode mode) const;

  /// Theta of the regularisation term: encoder, decoder and relation parameters.
  std::vector<Array> regularized_parameters() const;

  /// Re-derives tied encoder quantities after an optimizer step.
  void after_update() { encoder_.sync_tied(); }

 private:
  ModelConfig config_;
  ParameterSet params_;
  BufferSet buffers_;
  Embedding embedding_;
  ClassEncoderParams encoder_;
  ClassDecoderParams decoder_;
  RelationParams relation_;
};

std::vector<std::size_t> range_indices(std::size_t begin, std::size_t end);

}  // namespace crnet
