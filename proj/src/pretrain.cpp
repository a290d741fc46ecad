#include "crnet/pretrain.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "crnet/ops.hpp"
#include "crnet/optim.hpp"
#include "crnet/rng.hpp"

namespace crnet {

std::vector<double> pretrain(const FewShotDataset& data, const Embedding& embedding, ParameterSet& params,
                             const PretrainConfig& config, const std::string& prefix) {
  if (data.total_images() == 0) throw std::invalid_argument("pretrain: empty dataset");
  if (data.num_classes() < 2) throw std::invalid_argument("pretrain: need at least two classes");
  if (config.lr < 0.0) throw std::invalid_argument("pretrain: negative learning rate");
  if (config.batch_size < 2) throw std::invalid_argument("pretrain: batch size must be at least 2");

  const std::size_t D = embedding.feature_dim();
  const std::size_t classes = data.num_classes();
  Rng init = Rng::stream(config.seed, "pretrain-head");
  ParameterSet trainable;
  for (auto& [name, entry] : params)
    if (name.rfind(prefix, 0) == 0) trainable.add(name, entry.value, entry.lr_multiplier);
  std::vector<double> w(D * classes);
  for (auto& v : w) v = init.normal(0.0, 1.0 / std::sqrt(static_cast<double>(D)));
  Array head_w = trainable.add("head.weight", {D, classes}, std::move(w));
  Array head_b = trainable.add("head.bias", {classes}, std::vector<double>(classes, 0.0));

  OptimizerConfig oc;
  oc.kind = OptimizerKind::Adam;
  oc.lr = config.lr;
  Optimizer opt(oc);

  std::vector<ImageRef> all;
  for (std::size_t c = 0; c < classes; ++c)
    for (std::size_t i = 0; i < data.num_images(c); ++i) all.emplace_back(c, i);

  Rng order = Rng::stream(config.seed, "pretrain-order");
  std::vector<double> curve;
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    const auto perm = order.sample_without_replacement(all.size(), all.size());
    std::size_t correct = 0, seen = 0;
    for (std::size_t start = 0; start < perm.size(); start += config.batch_size) {
      const std::size_t end = std::min(perm.size(), start + config.batch_size);
      if (end - start < 2) break;  // batch-norm needs more than one sample
      std::vector<ImageRef> refs;
      for (std::size_t i = start; i < end; ++i) refs.push_back(all[perm[i]]);
      const ImageBatch batch = make_batch(data, refs);

      trainable.zero_grad();
      Array logits = add_rowwise(matmul(embedding.forward(batch.images, Mode::Train), head_w), head_b);
      Array loss = mean(sub(log_sum_exp(logits, 1), pick(logits, batch.labels)));
      loss.backward();
      opt.step(trainable);

      for (std::size_t r = 0; r < refs.size(); ++r) {
        std::size_t best = 0;
        for (std::size_t c = 1; c < classes; ++c)
          if (logits.at(r, c) > logits.at(r, best)) best = c;
        correct += best == batch.labels[r];
      }
      seen += refs.size();
    }
    curve.push_back(seen ? static_cast<double>(correct) / static_cast<double>(seen) : 0.0);
  }
  return curve;
}

}  // namespace crnet
