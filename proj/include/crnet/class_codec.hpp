#pragma once

#include <string>

#include "crnet/array.hpp"
#include "crnet/parameters.hpp"
#include "crnet/rng.hpp"

namespace crnet {

enum class Parameterization { Decoupled, Tied };
enum class NormalizationMode { IntraGlobal, GlobalOnly };

std::string to_string(Parameterization p);
Parameterization parameterization_from_string(const std::string& s);
std::string to_string(NormalizationMode m);
NormalizationMode normalization_from_string(const std::string& s);

struct EncoderConfig {
  std::size_t num_bases = 8;
  Parameterization parameterization = Parameterization::Decoupled;
  NormalizationMode normalization = NormalizationMode::IntraGlobal;
  double init_alpha = 1.0;
};

/// Encoder parameters over N semantic bases in a D-dimensional feature space.
///
/// The soft assignment of a feature e to basis n is
///   softmax_n(assign_weights_n . e + assign_biases_n),
/// which equals softmax_n(-alpha * |e - bases_n|^2) when
/// assign_weights = 2*alpha*bases and assign_biases_n = -alpha*|bases_n|^2
/// (the |e|^2 term is common to every n and cancels). Decoupled mode trains
/// all three groups independently. Tied mode trains `bases` and `alpha` and
/// derives the other two inside the graph.
struct ClassEncoderParams {
  Parameterization parameterization = Parameterization::Decoupled;
  Array bases;           // [N, D]
  Array assign_weights;  // [N, D]
  Array assign_biases;   // [N]
  Array alpha;           // [1]

  std::size_t num_bases() const { return bases.dim(0); }
  std::size_t feature_dim() const { return bases.dim(1); }

  /// Registers parameters under `prefix`. Bases are N(0, 1/sqrt(D)); the
  /// assignment parameters start at the values tied mode would derive.
  static ClassEncoderParams create(const EncoderConfig& config, std::size_t feature_dim, ParameterSet& params,
                                   BufferSet& buffers, Rng& rng, const std::string& prefix = "encoder.");

  /// Assignment weights/biases as graph nodes (derived in tied mode).
  Array effective_weights() const;
  Array effective_biases() const;

  /// Tied mode: overwrite the stored assign_weights/assign_biases with the
  /// values derived from the current alpha and bases.
  void sync_tied();
};

struct ClassRepresentation {
  Array matrix;  // [N, D]
  bool normalized = false;
};

enum class DescriptorSource { Decoded, MeanPrototype };
std::string to_string(DescriptorSource s);

struct ClassDescriptor {
  Array vector;  // [D]
  DescriptorSource source = DescriptorSource::Decoded;
};

/// features [C, D] (or [D]) -> weights [C, N], each row on the simplex.
Array soft_assign(const Array& features, const ClassEncoderParams& params);

/// Direct distance form softmax_n(-alpha * |e - bases_n|^2); used to verify
/// the expanded form above.
Array soft_assign_distance(const Array& features, const Array& bases, const Array& alpha);

/// Rows of `features` sorted lexicographically, so downstream sums do not
/// depend on sample order.
Array canonical_rows(const Array& features);

/// R(n,:) = sum_i a_n(E_i) * (E_i - bases_n), before normalisation.
Array aggregate_residuals(const Array& features, const ClassEncoderParams& params);

/// Aggregate then normalise (intra-row L2 then global L2, or global only).
ClassRepresentation encode_class(const Array& features, const ClassEncoderParams& params,
                                 NormalizationMode mode = NormalizationMode::IntraGlobal);

struct DecoderConfig {
  bool relu = false;
  /// Initial combination weight of every basis. At 0 all classes start with
  /// the same descriptor (the bias).
  double init_weight = 0.0;
};

/// Learned combination across the basis axis (a 1x1 convolution over N
/// channels down to one) plus a scalar bias.
struct ClassDecoderParams {
  Array weights;  // [N]
  Array bias;     // [1]
  bool relu = false;

  /// Weights start at config.init_weight, bias at 0.
  static ClassDecoderParams create(const DecoderConfig& config, std::size_t num_bases, ParameterSet& params,
                                   const std::string& prefix = "decoder.");
};

ClassDescriptor decode_class(const ClassRepresentation& rep, const ClassDecoderParams& params);

/// Column-wise mean of features [C, D].
ClassDescriptor mean_prototype(const Array& features);

}  // namespace crnet
