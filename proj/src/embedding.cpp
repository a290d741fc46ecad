#include "crnet/embedding.hpp"

#include <cmath>
#include <stdexcept>

namespace crnet {

std::string to_string(EmbeddingVariant v) { return v == EmbeddingVariant::Conv4 ? "conv4" : "residual-mini"; }

EmbeddingVariant embedding_variant_from_string(const std::string& s) {
  if (s == "conv4") return EmbeddingVariant::Conv4;
  if (s == "residual-mini") return EmbeddingVariant::ResidualMini;
  throw std::invalid_argument("unknown embedding variant '" + s + "' (expected conv4 or residual-mini)");
}

std::vector<std::size_t> EmbeddingConfig::default_widths(EmbeddingVariant v) {
  if (v == EmbeddingVariant::Conv4) return {16, 32, 64, 64};
  return {16, 32, 64};
}

std::size_t EmbeddingConfig::feature_dim() const {
  if (widths.empty()) return 0;
  if (variant == EmbeddingVariant::ResidualMini) return widths.back();
  std::size_t h = input.height, w = input.width;
  for (std::size_t i = 0; i < widths.size(); ++i) {
    h /= 2;
    w /= 2;
  }
  return widths.back() * h * w;
}

void EmbeddingConfig::validate() const {
  const std::size_t blocks = variant == EmbeddingVariant::Conv4 ? 4 : 3;
  if (widths.size() != blocks) {
    throw std::invalid_argument(to_string(variant) + " needs " + std::to_string(blocks) + " block widths, got " +
                                std::to_string(widths.size()));
  }
  for (auto w : widths)
    if (w == 0) throw std::invalid_argument("block widths must be positive");
  if (input.channels == 0) throw std::invalid_argument("input must have at least one channel");
  std::size_t h = input.height, w = input.width;
  for (std::size_t i = 0; i < blocks; ++i) {
    if (h < 2 || w < 2) {
      throw std::invalid_argument("input " + std::to_string(input.height) + "x" + std::to_string(input.width) +
                                  " too small for " + std::to_string(blocks) + " pooling blocks");
    }
    h /= 2;
    w /= 2;
  }
  if (feature_dim() < 8) {
    throw std::invalid_argument("feature dimension " + std::to_string(feature_dim()) + " is below the minimum of 8");
  }
}

Embedding::ConvBn Embedding::make_conv_bn(const std::string& name, std::size_t in, std::size_t out, std::size_t k,
                                          ParameterSet& params, BufferSet& buffers, Rng& rng) const {
  ConvBn layer;
  const double stddev = std::sqrt(2.0 / static_cast<double>(in * k * k));
  std::vector<double> w(out * in * k * k);
  for (auto& v : w) v = rng.normal(0.0, stddev);
  layer.weight = params.add(name + ".conv.weight", {out, in, k, k}, std::move(w));
  layer.gamma = params.add(name + ".bn.gamma", {out}, std::vector<double>(out, 1.0));
  layer.beta = params.add(name + ".bn.beta", {out}, std::vector<double>(out, 0.0));
  layer.stats.running_mean = Array::zeros({out});
  layer.stats.running_var = Array::full({out}, 1.0);
  layer.stats.momentum = config_.bn_momentum;
  buffers[name + ".bn.running_mean"] = layer.stats.running_mean;
  buffers[name + ".bn.running_var"] = layer.stats.running_var;
  return layer;
}

Embedding::Embedding(EmbeddingConfig config, ParameterSet& params, BufferSet& buffers, Rng& init_rng,
                     const std::string& prefix)
    : config_(std::move(config)) {
  config_.validate();
  std::size_t in = config_.input.channels;
  for (std::size_t b = 0; b < config_.widths.size(); ++b) {
    const std::size_t out = config_.widths[b];
    const std::string block = prefix + "block" + std::to_string(b);
    if (config_.variant == EmbeddingVariant::Conv4) {
      layers_.push_back(make_conv_bn(block, in, out, 3, params, buffers, init_rng));
    } else {
      layers_.push_back(make_conv_bn(block + ".a", in, out, 3, params, buffers, init_rng));
      layers_.push_back(make_conv_bn(block + ".b", out, out, 3, params, buffers, init_rng));
      layers_.push_back(make_conv_bn(block + ".skip", in, out, 1, params, buffers, init_rng));
    }
    in = out;
  }
}

Array Embedding::apply(const ConvBn& layer, const Array& x, std::size_t padding, Mode mode) const {
  BatchNormStats stats = layer.stats;
  Array y = conv2d(x, layer.weight, Array{}, {1, padding});
  return batch_norm(y, layer.gamma, layer.beta, stats, mode == Mode::Train);
}

Array Embedding::forward(const Array& images, Mode mode) const {
  const auto& in = config_.input;
  if (images.rank() != 4 || images.dim(1) != in.channels || images.dim(2) != in.height || images.dim(3) != in.width) {
    throw ShapeError("embed: expected [B," + std::to_string(in.channels) + "," + std::to_string(in.height) + "," +
                     std::to_string(in.width) + "], got " + shape_string(images.shape()));
  }
  if (images.dim(0) == 0) throw ShapeError("embed: empty batch");
  const std::size_t batch = images.dim(0);
  Array x = images;
  if (config_.variant == EmbeddingVariant::Conv4) {
    for (const auto& layer : layers_) x = max_pool2d(relu(apply(layer, x, 1, mode)), 2, 2);
    return reshape(x, {batch, x.size() / batch});
  }
  for (std::size_t b = 0; b < layers_.size(); b += 3) {
    Array main = apply(layers_[b + 1], relu(apply(layers_[b], x, 1, mode)), 1, mode);
    Array skip = apply(layers_[b + 2], x, 0, mode);
    x = max_pool2d(relu(add(main, skip)), 2, 2);
  }
  return global_avg_pool(x);
}

}  // namespace crnet
