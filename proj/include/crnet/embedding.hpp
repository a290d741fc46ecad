#pragma once

#include <string>
#include <vector>

#include "crnet/array.hpp"
#include "crnet/dataset.hpp"
#include "crnet/ops.hpp"
#include "crnet/parameters.hpp"
#include "crnet/rng.hpp"

namespace crnet {

enum class EmbeddingVariant { Conv4, ResidualMini };
std::string to_string(EmbeddingVariant v);
EmbeddingVariant embedding_variant_from_string(const std::string& s);

enum class Mode { Train, Eval };

struct EmbeddingConfig {
  EmbeddingVariant variant = EmbeddingVariant::Conv4;
  ImageShape input{1, 32, 32};
  /// One entry per block: four for conv4, three for residual-mini.
  std::vector<std::size_t> widths{16, 32, 64, 64};
  double bn_momentum = 0.1;

  static std::vector<std::size_t> default_widths(EmbeddingVariant v);
  /// Flattened output size D of the final block.
  std::size_t feature_dim() const;
  /// Throws std::invalid_argument unless block count, spatial size and D >= 8 are consistent.
  void validate() const;
};

/// Feature extractor.
///
/// conv4: four blocks of 3x3 conv (pad 1) -> batch-norm -> ReLU -> 2x2 max-pool,
/// flattened.
///
/// residual-mini: three residual blocks, each
///   main:     3x3 conv -> BN -> ReLU -> 3x3 conv -> BN
///   shortcut: 1x1 conv -> BN
///   out:      ReLU(main + shortcut) -> 2x2 max-pool
/// followed by global average pooling.
///
/// Parameters and running statistics live in the ParameterSet/BufferSet passed
/// at construction; the Embedding holds shared handles to them.
class Embedding {
 public:
  Embedding() = default;
  Embedding(EmbeddingConfig config, ParameterSet& params, BufferSet& buffers, Rng& init_rng,
            const std::string& prefix = "embed.");

  /// images [B, channels, H, W] -> features [B, D]. Train mode uses batch
  /// statistics and updates the running averages; eval mode only reads.
  Array forward(const Array& images, Mode mode) const;

  const EmbeddingConfig& config() const { return config_; }
  std::size_t feature_dim() const { return config_.feature_dim(); }

 private:
  struct ConvBn {
    Array weight;
    Array gamma;
    Array beta;
    BatchNormStats stats;
  };
  ConvBn make_conv_bn(const std::string& name, std::size_t in, std::size_t out, std::size_t k, ParameterSet& params,
                      BufferSet& buffers, Rng& rng) const;
  Array apply(const ConvBn& layer, const Array& x, std::size_t padding, Mode mode) const;

  EmbeddingConfig config_;
  std::vector<ConvBn> layers_;
};

}  // namespace crnet
