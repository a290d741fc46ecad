#include "crnet/model.hpp"

#include <numeric>
#include <stdexcept>

#include "crnet/ops.hpp"

namespace crnet {

std::vector<std::size_t> range_indices(std::size_t begin, std::size_t end) {
  std::vector<std::size_t> out(end - begin);
  std::iota(out.begin(), out.end(), begin);
  return out;
}

ClassRegNet::ClassRegNet(ModelConfig config, std::uint64_t seed) : config_(std::move(config)) {
  Rng embed_rng = Rng::stream(seed, "init.embed");
  Rng encoder_rng = Rng::stream(seed, "init.encoder");
  Rng relation_rng = Rng::stream(seed, "init.relation");
  embedding_ = Embedding(config_.embedding, params_, buffers_, embed_rng);
  encoder_ = ClassEncoderParams::create(config_.encoder, embedding_.feature_dim(), params_, buffers_, encoder_rng);
  decoder_ = ClassDecoderParams::create(config_.decoder, config_.encoder.num_bases, params_);
  relation_ = RelationParams::create(config_.relation, embedding_.feature_dim(), params_, relation_rng);
}

ClassDescriptor ClassRegNet::decoded_descriptor(const Array& class_features) const {
  return decode_class(encode_class(class_features, encoder_, config_.encoder.normalization), decoder_);
}

Array ClassRegNet::decoded_descriptors(const Array& support_features, std::size_t ways, std::size_t shots) const {
  if (support_features.rank() != 2 || support_features.dim(0) != ways * shots) {
    throw ShapeError("decoded_descriptors: expected [" + std::to_string(ways * shots) + ",D] support features, got " +
                     shape_string(support_features.shape()));
  }
  const std::size_t D = support_features.dim(1);
  std::vector<Array> rows;
  for (std::size_t k = 0; k < ways; ++k) {
    Array e = take_rows(support_features, range_indices(k * shots, (k + 1) * shots));
    rows.push_back(reshape(decoded_descriptor(e).vector, {1, D}));
  }
  return concat(rows, 0);
}

Array ClassRegNet::prototype_descriptors(const Array& support_features, std::size_t ways, std::size_t shots) const {
  if (support_features.rank() != 2 || support_features.dim(0) != ways * shots) {
    throw ShapeError("prototype_descriptors: expected [" + std::to_string(ways * shots) + ",D] support features, got " +
                     shape_string(support_features.shape()));
  }
  const std::size_t D = support_features.dim(1);
  return mean(reshape(support_features, {ways, shots, D}), 1);
}

EpisodeForward ClassRegNet::forward_episode(const FewShotDataset& data, const EpisodeTask& task,
                                            const LossWeights& weights, Mode mode) const {
  const std::size_t K = task.ways();
  if (K == 0 || task.support.size() % K != 0) throw std::invalid_argument("forward_episode: malformed task");
  const std::size_t shots = task.support.size() / K;
  std::vector<ImageRef> refs = task.support;
  refs.insert(refs.end(), task.query.begin(), task.query.end());
  const ImageBatch batch = make_batch(data, refs);

  Array features = embed(batch.images, mode);
  EpisodeForward out;
  out.support_features = take_rows(features, range_indices(0, task.support.size()));
  out.query_features = take_rows(features, range_indices(task.support.size(), refs.size()));
  out.descriptors = decoded_descriptors(out.support_features, K, shots);

  const auto reduce = [&](const Array& per_query) {
    return weights.reduction == QueryReduction::Sum ? sum(per_query) : mean(per_query);
  };
  Array le = reduce(euclidean_losses(out.query_features, out.descriptors, task.query_labels));
  out.relation_scores = relation_scores(out.query_features, out.descriptors, relation_);
  Array lr = reduce(relation_losses(out.relation_scores, task.query_labels));
  out.loss = total_loss(le, lr, regularized_parameters(), weights);
  out.loss.breakdown.predicted_euclidean = argmin_rows(squared_distances(out.query_features.detach(), out.descriptors.detach()));
  out.loss.breakdown.predicted_relation = argmax_rows(out.relation_scores.detach());
  return out;
}

std::vector<Array> ClassRegNet::regularized_parameters() const {
  return params_.select({"encoder.", "decoder.", "relation."});
}

}  // namespace crnet
