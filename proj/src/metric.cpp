#include "crnet/metric.hpp"

#include <cmath>
#include <stdexcept>

#include "crnet/ops.hpp"

namespace crnet {

namespace {

void check_labels(const char* op, std::span<const std::size_t> labels, std::size_t rows, std::size_t classes) {
  if (classes == 0) throw std::invalid_argument(std::string(op) + ": no classes");
  if (labels.size() != rows) {
    throw ShapeError(std::string(op) + ": " + std::to_string(labels.size()) + " labels for " + std::to_string(rows) +
                     " rows");
  }
  for (auto k : labels)
    if (k >= classes) {
      throw std::out_of_range(std::string(op) + ": class " + std::to_string(k) + " out of range for K=" +
                              std::to_string(classes));
    }
}

}  // namespace

Array euclidean_losses(const Array& queries, const Array& descriptors, std::span<const std::size_t> labels) {
  if (descriptors.rank() != 2 || descriptors.dim(0) == 0) {
    throw std::invalid_argument("euclidean_loss: need at least one descriptor, got " +
                                shape_string(descriptors.shape()));
  }
  if (queries.rank() != 2) throw ShapeError("euclidean_loss: queries must be [M,D], got " + shape_string(queries.shape()));
  check_labels("euclidean_loss", labels, queries.dim(0), descriptors.dim(0));
  Array d = squared_distances(queries, descriptors);
  return add(pick(d, labels), log_sum_exp(scale(d, -1.0), 1));
}

Array euclidean_loss(const Array& query, const Array& descriptors, std::size_t true_class) {
  if (query.rank() != 1) throw ShapeError("euclidean_loss: query must be [D], got " + shape_string(query.shape()));
  const std::size_t k[] = {true_class};
  return reshape(euclidean_losses(reshape(query, {1, query.dim(0)}), descriptors, k), {});
}

Array euclidean_probabilities(const Array& queries, const Array& descriptors) {
  return softmax(scale(squared_distances(queries, descriptors), -1.0), 1);
}

RelationParams RelationParams::create(const RelationConfig& config, std::size_t feature_dim, ParameterSet& params,
                                      Rng& rng, const std::string& prefix) {
  if (config.hidden == 0) throw std::invalid_argument("relation hidden width must be positive");
  const std::size_t in = 2 * feature_dim, h = config.hidden;
  const auto he = [&](std::size_t fan_in, std::size_t n) {
    std::vector<double> v(n);
    for (auto& x : v) x = rng.normal(0.0, std::sqrt(2.0 / static_cast<double>(fan_in)));
    return v;
  };
  RelationParams p;
  p.w1 = params.add(prefix + "fc1.weight", {in, h}, he(in, in * h));
  p.b1 = params.add(prefix + "fc1.bias", {h}, std::vector<double>(h, 0.0));
  p.w2 = params.add(prefix + "fc2.weight", {h, h}, he(h, h * h));
  p.b2 = params.add(prefix + "fc2.bias", {h}, std::vector<double>(h, 0.0));
  std::vector<double> w3(h);
  for (auto& x : w3) x = rng.normal(0.0, 1.0 / std::sqrt(static_cast<double>(h)));
  p.w3 = params.add(prefix + "fc3.weight", {h, 1}, std::move(w3));
  p.b3 = params.add(prefix + "fc3.bias", {1}, {0.0});
  return p;
}

Array relation_scores(const Array& queries, const Array& descriptors, const RelationParams& params) {
  if (queries.rank() != 2 || descriptors.rank() != 2 || queries.dim(1) != descriptors.dim(1) ||
      2 * queries.dim(1) != params.input_dim()) {
    throw ShapeError("relation_scores: queries " + shape_string(queries.shape()) + " and descriptors " +
                     shape_string(descriptors.shape()) + " do not match comparator input " +
                     std::to_string(params.input_dim()));
  }
  const std::size_t M = queries.dim(0), K = descriptors.dim(0);
  std::vector<std::size_t> qi, ci;
  qi.reserve(M * K);
  ci.reserve(M * K);
  for (std::size_t q = 0; q < M; ++q)
    for (std::size_t k = 0; k < K; ++k) {
      qi.push_back(q);
      ci.push_back(k);
    }
  Array pairs = concat({take_rows(queries, qi), take_rows(descriptors, ci)}, 1);
  Array h = relu(add_rowwise(matmul(pairs, params.w1), params.b1));
  h = relu(add_rowwise(matmul(h, params.w2), params.b2));
  Array s = add_rowwise(matmul(h, params.w3), params.b3);
  return reshape(s, {M, K});
}

Array relation_losses(const Array& scores, std::span<const std::size_t> labels) {
  if (scores.rank() != 2) throw ShapeError("relation_loss: scores must be [M,K], got " + shape_string(scores.shape()));
  check_labels("relation_loss", labels, scores.dim(0), scores.dim(1));
  return sub(log_sum_exp(scores, 1), pick(scores, labels));
}

Array relation_loss(const Array& scores_row, std::size_t true_class) {
  if (scores_row.rank() != 1) throw ShapeError("relation_loss: expected [K] scores, got " + shape_string(scores_row.shape()));
  const std::size_t k[] = {true_class};
  return reshape(relation_losses(reshape(scores_row, {1, scores_row.dim(0)}), k), {});
}

std::string to_string(QueryReduction r) { return r == QueryReduction::Sum ? "sum" : "mean"; }

QueryReduction query_reduction_from_string(const std::string& s) {
  if (s == "sum") return QueryReduction::Sum;
  if (s == "mean") return QueryReduction::Mean;
  throw std::invalid_argument("unknown query reduction '" + s + "' (expected sum or mean)");
}

void LossWeights::validate() const {
  if (euclidean < 0.0 || relation < 0.0 || regularization < 0.0) {
    throw std::invalid_argument("loss weights must be non-negative");
  }
  if (!(euclidean > 0.0 || relation > 0.0)) {
    throw std::invalid_argument("at least one of the euclidean/relation loss weights must be positive");
  }
}

TotalLoss total_loss(const Array& euclidean, const Array& relation, const std::vector<Array>& theta,
                     const LossWeights& weights) {
  weights.validate();
  Array reg = Array::scalar(0.0);
  for (const auto& p : theta) reg = add(reg, squared_norm(p));
  Array total = add(add(scale(reshape(euclidean, {}), weights.euclidean), scale(reshape(relation, {}), weights.relation)),
                    scale(reg, weights.regularization));
  TotalLoss out;
  out.total = total;
  out.breakdown.euclidean = euclidean.item();
  out.breakdown.relation = relation.item();
  out.breakdown.regularization = reg.item();
  out.breakdown.total = total.item();
  return out;
}

namespace {

std::vector<std::size_t> arg_rows(const Array& m, bool want_max) {
  if (m.rank() != 2) throw ShapeError("arg_rows: expected a matrix, got " + shape_string(m.shape()));
  std::vector<std::size_t> out(m.dim(0), 0);
  for (std::size_t i = 0; i < m.dim(0); ++i)
    for (std::size_t j = 1; j < m.dim(1); ++j) {
      const double v = m.at(i, j), best = m.at(i, out[i]);
      if (want_max ? v > best : v < best) out[i] = j;
    }
  return out;
}

}  // namespace

std::vector<std::size_t> argmin_rows(const Array& m) { return arg_rows(m, false); }
std::vector<std::size_t> argmax_rows(const Array& m) { return arg_rows(m, true); }

}  // namespace crnet
