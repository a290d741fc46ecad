#include "crnet/class_codec.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "crnet/ops.hpp"

namespace crnet {

std::string to_string(Parameterization p) { return p == Parameterization::Tied ? "tied" : "decoupled"; }

Parameterization parameterization_from_string(const std::string& s) {
  if (s == "decoupled") return Parameterization::Decoupled;
  if (s == "tied") return Parameterization::Tied;
  throw std::invalid_argument("unknown encoder parameterization '" + s + "' (expected decoupled or tied)");
}

std::string to_string(NormalizationMode m) {
  return m == NormalizationMode::IntraGlobal ? "intra_global" : "global_only";
}

NormalizationMode normalization_from_string(const std::string& s) {
  if (s == "intra_global") return NormalizationMode::IntraGlobal;
  if (s == "global_only") return NormalizationMode::GlobalOnly;
  throw std::invalid_argument("unknown normalization '" + s + "' (expected intra_global or global_only)");
}

std::string to_string(DescriptorSource s) {
  return s == DescriptorSource::Decoded ? "decoded" : "mean-prototype";
}

namespace {

void derive_tied(const Array& bases, double alpha, std::vector<double>& w, std::vector<double>& b) {
  const std::size_t N = bases.dim(0), D = bases.dim(1);
  auto r = bases.values();
  w.assign(N * D, 0.0);
  b.assign(N, 0.0);
  for (std::size_t n = 0; n < N; ++n) {
    double sq = 0.0;
    for (std::size_t j = 0; j < D; ++j) {
      w[n * D + j] = 2.0 * alpha * r[n * D + j];
      sq += r[n * D + j] * r[n * D + j];
    }
    b[n] = -alpha * sq;
  }
}

}  // namespace

ClassEncoderParams ClassEncoderParams::create(const EncoderConfig& config, std::size_t feature_dim,
                                              ParameterSet& params, BufferSet& buffers, Rng& rng,
                                              const std::string& prefix) {
  if (config.num_bases == 0) throw std::invalid_argument("encoder needs at least one basis");
  if (feature_dim == 0) throw std::invalid_argument("encoder feature dimension must be positive");
  if (!(config.init_alpha > 0.0)) throw std::invalid_argument("encoder alpha must be positive");
  const std::size_t N = config.num_bases, D = feature_dim;
  std::vector<double> r(N * D);
  for (auto& v : r) v = rng.normal(0.0, 1.0 / std::sqrt(static_cast<double>(D)));

  ClassEncoderParams p;
  p.parameterization = config.parameterization;
  p.bases = params.add(prefix + "bases", {N, D}, r);
  Array bases_view = Array::constant({N, D}, r);
  std::vector<double> w, b;
  derive_tied(bases_view, config.init_alpha, w, b);
  if (config.parameterization == Parameterization::Decoupled) {
    p.assign_weights = params.add(prefix + "assign_weights", {N, D}, std::move(w));
    p.assign_biases = params.add(prefix + "assign_biases", {N}, std::move(b));
    p.alpha = Array::constant({1}, {config.init_alpha});
    buffers[prefix + "alpha"] = p.alpha;
  } else {
    p.alpha = params.add(prefix + "alpha", {1}, {config.init_alpha});
    p.assign_weights = Array::constant({N, D}, std::move(w));
    p.assign_biases = Array::constant({N}, std::move(b));
    buffers[prefix + "assign_weights"] = p.assign_weights;
    buffers[prefix + "assign_biases"] = p.assign_biases;
  }
  return p;
}

Array ClassEncoderParams::effective_weights() const {
  if (parameterization == Parameterization::Decoupled) return assign_weights;
  return scale(mul_scalar(bases, alpha), 2.0);
}

Array ClassEncoderParams::effective_biases() const {
  if (parameterization == Parameterization::Decoupled) return assign_biases;
  return scale(mul_scalar(sum(mul(bases, bases), 1), alpha), -1.0);
}

void ClassEncoderParams::sync_tied() {
  if (parameterization != Parameterization::Tied) return;
  if (!(alpha.item() > 0.0)) throw NumericError("tied encoder: alpha must stay positive");
  std::vector<double> w, b;
  derive_tied(bases, alpha.item(), w, b);
  std::copy(w.begin(), w.end(), assign_weights.mutable_values().begin());
  std::copy(b.begin(), b.end(), assign_biases.mutable_values().begin());
}

namespace {

Array as_rows(const Array& features, const char* op) {
  if (features.rank() == 1) return reshape(features, {1, features.dim(0)});
  if (features.rank() != 2) throw ShapeError(std::string(op) + ": expected [C,D] features, got " + shape_string(features.shape()));
  return features;
}

}  // namespace

Array soft_assign(const Array& features, const ClassEncoderParams& params) {
  Array e = as_rows(features, "soft_assign");
  if (e.dim(1) != params.feature_dim()) {
    throw ShapeError("soft_assign: features " + shape_string(e.shape()) + " do not match bases " +
                     shape_string(params.bases.shape()));
  }
  Array logits = add_rowwise(matmul(e, transpose(params.effective_weights())), params.effective_biases());
  return softmax(logits, 1);
}

Array soft_assign_distance(const Array& features, const Array& bases, const Array& alpha) {
  Array e = as_rows(features, "soft_assign_distance");
  return softmax(scale(mul_scalar(squared_distances(e, bases), alpha), -1.0), 1);
}

Array canonical_rows(const Array& features) {
  Array e = as_rows(features, "canonical_rows");
  const std::size_t C = e.dim(0), D = e.dim(1);
  auto v = e.values();
  std::vector<std::size_t> order(C);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return std::lexicographical_compare(v.begin() + static_cast<std::ptrdiff_t>(a * D),
                                        v.begin() + static_cast<std::ptrdiff_t>((a + 1) * D),
                                        v.begin() + static_cast<std::ptrdiff_t>(b * D),
                                        v.begin() + static_cast<std::ptrdiff_t>((b + 1) * D));
  });
  return take_rows(e, order);
}

Array aggregate_residuals(const Array& features, const ClassEncoderParams& params) {
  Array e = as_rows(features, "encode_class");
  if (e.dim(0) == 0) throw std::invalid_argument("encode_class: class has no samples");
  e = canonical_rows(e);
  Array a = soft_assign(e, params);                        // [C, N]
  Array weighted = matmul(transpose(a), e);                // sum_i a_in E_i
  Array mass = sum(a, 0);                                  // sum_i a_in
  return sub(weighted, scale_rows(params.bases, mass));    // minus (sum_i a_in) R_n
}

ClassRepresentation encode_class(const Array& features, const ClassEncoderParams& params, NormalizationMode mode) {
  Array r = aggregate_residuals(features, params);
  if (mode == NormalizationMode::IntraGlobal) r = l2_normalize_rows(r);
  return {l2_normalize(r), true};
}

ClassDecoderParams ClassDecoderParams::create(const DecoderConfig& config, std::size_t num_bases,
                                              ParameterSet& params, const std::string& prefix) {
  ClassDecoderParams p;
  p.weights = params.add(prefix + "weights", {num_bases}, std::vector<double>(num_bases, config.init_weight));
  p.bias = params.add(prefix + "bias", {1}, {0.0});
  p.relu = config.relu;
  return p;
}

ClassDescriptor decode_class(const ClassRepresentation& rep, const ClassDecoderParams& params) {
  if (!rep.normalized) throw std::invalid_argument("decode_class: representation is not normalized");
  const Array& r = rep.matrix;
  if (r.rank() != 2 || params.weights.rank() != 1 || params.weights.dim(0) != r.dim(0) || params.bias.size() != 1) {
    throw ShapeError("decode_class: representation " + shape_string(r.shape()) + " incompatible with decoder weights " +
                     shape_string(params.weights.shape()));
  }
  const std::size_t N = r.dim(0), D = r.dim(1);
  Array combined = reshape(matmul(reshape(params.weights, {1, N}), r), {D});
  Array out = add(combined, mul_scalar(Array::full({D}, 1.0), params.bias));
  if (params.relu) out = relu(out);
  return {out, DescriptorSource::Decoded};
}

ClassDescriptor mean_prototype(const Array& features) {
  Array e = as_rows(features, "mean_prototype");
  if (e.dim(0) == 0) throw std::invalid_argument("mean_prototype: class has no samples");
  return {mean(e, 0), DescriptorSource::MeanPrototype};
}

}  // namespace crnet
