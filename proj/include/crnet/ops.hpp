#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "crnet/array.hpp"

// Differentiable operations. Every op validates shapes up front and throws
// ShapeError naming itself and the operand shapes on mismatch.
namespace crnet {

// Elementwise, operands of identical shape.
Array add(const Array& a, const Array& b);
Array sub(const Array& a, const Array& b);
Array mul(const Array& a, const Array& b);
Array scale(const Array& a, double factor);
Array add_scalar(const Array& a, double value);
Array relu(const Array& a);

/// x[m,n] + bias[n], bias broadcast over rows.
Array add_rowwise(const Array& x, const Array& bias);
/// x[m,n] * w[m], each row scaled by its own weight.
Array scale_rows(const Array& x, const Array& w);
/// a[m] * s where s has a single element.
Array mul_scalar(const Array& a, const Array& s);

Array matmul(const Array& a, const Array& b);
Array transpose(const Array& a);

Array sum(const Array& a);
Array mean(const Array& a);
Array sum(const Array& a, std::size_t axis);
Array mean(const Array& a, std::size_t axis);
Array squared_norm(const Array& a);

/// Stabilised: max + log(sum(exp(x - max))). The axis is removed.
Array log_sum_exp(const Array& a, std::size_t axis);
Array softmax(const Array& a, std::size_t axis);
Array log_softmax(const Array& a, std::size_t axis);

Array concat(const std::vector<Array>& parts, std::size_t axis);
Array reshape(const Array& a, Shape shape);
/// Gathers slices along axis 0; repeated indices accumulate gradient.
Array take_rows(const Array& a, std::span<const std::size_t> rows);
/// out[i] = x[i, cols[i]] for x of shape [m,n].
Array pick(const Array& x, std::span<const std::size_t> cols);

/// d[i,j] = ||a_i - b_j||^2 for a[m,D], b[k,D].
Array squared_distances(const Array& a, const Array& b);

/// Divides each row of a[m,n] by its L2 norm; all-zero rows stay zero.
Array l2_normalize_rows(const Array& a);
/// Divides the whole array by its L2 norm; an all-zero array stays zero.
Array l2_normalize(const Array& a);

struct Conv2dOptions {
  std::size_t stride = 1;
  std::size_t padding = 0;
};

/// x[B,Cin,H,W] * w[Cout,Cin,kh,kw] (+ bias[Cout] when defined).
Array conv2d(const Array& x, const Array& w, const Array& bias, Conv2dOptions opts = {});
Array max_pool2d(const Array& x, std::size_t kernel, std::size_t stride);
Array avg_pool2d(const Array& x, std::size_t kernel, std::size_t stride);
/// [B,C,H,W] -> [B,C]
Array global_avg_pool(const Array& x);

struct BatchNormStats {
  Array running_mean;
  Array running_var;
  double momentum = 0.1;
  double eps = 1e-5;
};

/// Normalises over every axis except 1 ([B,C] or [B,C,H,W]). Training mode
/// uses batch statistics and updates `stats`; eval mode reads them.
Array batch_norm(const Array& x, const Array& gamma, const Array& beta, BatchNormStats& stats,
                 bool training);

}  // namespace crnet
