#pragma once

#include <span>
#include <string>
#include <vector>

#include "crnet/array.hpp"
#include "crnet/parameters.hpp"
#include "crnet/rng.hpp"

namespace crnet {

/// -log softmax(-d)_k with d the squared Euclidean distance from `query` [D]
/// to each row of `descriptors` [K,D]:  d_k + log sum_k' exp(-d_k').
Array euclidean_loss(const Array& query, const Array& descriptors, std::size_t true_class);
/// Per-query version: queries [M,D], labels [M] -> [M].
Array euclidean_losses(const Array& queries, const Array& descriptors, std::span<const std::size_t> labels);
/// p_E(y=k|q) = softmax_k(-d(q, C_k)), queries [M,D] -> [M,K].
Array euclidean_probabilities(const Array& queries, const Array& descriptors);

struct RelationConfig {
  std::size_t hidden = 64;
};

/// Comparator f_R over concat(query, descriptor):
///   linear(2D->h) -> ReLU -> linear(h->h) -> ReLU -> linear(h->1)
struct RelationParams {
  Array w1, b1, w2, b2, w3, b3;

  static RelationParams create(const RelationConfig& config, std::size_t feature_dim, ParameterSet& params, Rng& rng,
                               const std::string& prefix = "relation.");
  std::size_t input_dim() const { return w1.dim(0); }
};

/// RS[q,k] = f_R(concat(queries_q, descriptors_k)), shape [M,K].
Array relation_scores(const Array& queries, const Array& descriptors, const RelationParams& params);
/// -RS_k + log sum_k' exp(RS_k') for one row of scores [K].
Array relation_loss(const Array& scores_row, std::size_t true_class);
/// Row-wise version: scores [M,K] -> [M].
Array relation_losses(const Array& scores, std::span<const std::size_t> labels);

/// Weights of the total loss alpha1*L_E + alpha2*L_R + alpha3*|Theta|^2.
/// Distinct from the encoder's sensitivity alpha.
/// How per-query losses of an episode are combined before weighting. Sum
/// accumulates over queries; mean divides that by the query count, which
/// also scales the regularization term up relative to both losses.
enum class QueryReduction { Sum, Mean };
std::string to_string(QueryReduction r);
QueryReduction query_reduction_from_string(const std::string& s);

struct LossWeights {
  double euclidean = 0.5;
  double relation = 1.0;
  double regularization = 1.0;
  QueryReduction reduction = QueryReduction::Sum;

  void validate() const;
};

struct LossBreakdown {
  double euclidean = 0.0;
  double relation = 0.0;
  double regularization = 0.0;
  double total = 0.0;
  std::vector<std::size_t> predicted_euclidean;
  std::vector<std::size_t> predicted_relation;
};

struct TotalLoss {
  Array total;
  LossBreakdown breakdown;
};

/// Combines already-reduced L_E and L_R with the squared norm of `theta`
/// (encoder, decoder and relation parameters).
TotalLoss total_loss(const Array& euclidean, const Array& relation, const std::vector<Array>& theta,
                     const LossWeights& weights);

/// Row-wise argmin / argmax helpers (lowest index wins ties).
std::vector<std::size_t> argmin_rows(const Array& m);
std::vector<std::size_t> argmax_rows(const Array& m);

}  // namespace crnet
