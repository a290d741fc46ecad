#include "crnet/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <initializer_list>
#include <limits>
#include <numeric>

namespace crnet {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapC = Eigen::Map<const RowMat>;
using Map = Eigen::Map<RowMat>;

using NodePtr = std::shared_ptr<detail::Node>;

// Gradient target of a parent, or null if it does not need one.
double* target(const NodePtr& p) {
  if (!p->requires_grad) return nullptr;
  return Array::grad_buffer(*p).data();
}

[[noreturn]] void shape_fail(const char* op, const std::string& what) {
  throw ShapeError(std::string(op) + ": " + what);
}

void require_same(const char* op, const Array& a, const Array& b) {
  if (a.shape() != b.shape()) {
    shape_fail(op, "shape mismatch " + shape_string(a.shape()) + " vs " + shape_string(b.shape()));
  }
}

void require_rank(const char* op, const Array& a, std::size_t rank) {
  if (a.rank() != rank) {
    shape_fail(op, "expected rank " + std::to_string(rank) + ", got " + shape_string(a.shape()));
  }
}

struct AxisSplit {
  std::size_t outer = 1, n = 1, inner = 1;
};

AxisSplit split_axis(const char* op, const Shape& s, std::size_t axis) {
  if (axis >= s.size()) {
    shape_fail(op, "axis " + std::to_string(axis) + " out of range for " + shape_string(s));
  }
  AxisSplit r;
  for (std::size_t i = 0; i < axis; ++i) r.outer *= s[i];
  r.n = s[axis];
  for (std::size_t i = axis + 1; i < s.size(); ++i) r.inner *= s[i];
  return r;
}

Shape drop_axis(const Shape& s, std::size_t axis) {
  Shape out;
  for (std::size_t i = 0; i < s.size(); ++i)
    if (i != axis) out.push_back(s[i]);
  return out;
}

}  // namespace

Array add(const Array& a, const Array& b) {
  require_same("add", a, b);
  std::vector<double> out(a.size());
  auto av = a.values(), bv = b.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] + bv[i];
  return Array::from_op("add", a.shape(), std::move(out), {a, b}, [](const detail::Node& o) {
    for (int k = 0; k < 2; ++k)
      if (double* g = target(o.parents[k]))
        for (std::size_t i = 0; i < o.grad.size(); ++i) g[i] += o.grad[i];
  });
}

Array sub(const Array& a, const Array& b) {
  require_same("sub", a, b);
  std::vector<double> out(a.size());
  auto av = a.values(), bv = b.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] - bv[i];
  return Array::from_op("sub", a.shape(), std::move(out), {a, b}, [](const detail::Node& o) {
    if (double* g = target(o.parents[0]))
      for (std::size_t i = 0; i < o.grad.size(); ++i) g[i] += o.grad[i];
    if (double* g = target(o.parents[1]))
      for (std::size_t i = 0; i < o.grad.size(); ++i) g[i] -= o.grad[i];
  });
}

Array mul(const Array& a, const Array& b) {
  require_same("mul", a, b);
  std::vector<double> out(a.size());
  auto av = a.values(), bv = b.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i];
  return Array::from_op("mul", a.shape(), std::move(out), {a, b}, [](const detail::Node& o) {
    const auto& x = o.parents[0]->value;
    const auto& y = o.parents[1]->value;
    if (double* g = target(o.parents[0]))
      for (std::size_t i = 0; i < o.grad.size(); ++i) g[i] += o.grad[i] * y[i];
    if (double* g = target(o.parents[1]))
      for (std::size_t i = 0; i < o.grad.size(); ++i) g[i] += o.grad[i] * x[i];
  });
}

Array scale(const Array& a, double factor) {
  std::vector<double> out(a.size());
  auto av = a.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * factor;
  return Array::from_op("scale", a.shape(), std::move(out), {a}, [factor](const detail::Node& o) {
    if (double* g = target(o.parents[0]))
      for (std::size_t i = 0; i < o.grad.size(); ++i) g[i] += o.grad[i] * factor;
  });
}

Array add_scalar(const Array& a, double value) {
  std::vector<double> out(a.size());
  auto av = a.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] + value;
  return Array::from_op("add_scalar", a.shape(), std::move(out), {a}, [](const detail::Node& o) {
    if (double* g = target(o.parents[0]))
      for (std::size_t i = 0; i < o.grad.size(); ++i) g[i] += o.grad[i];
  });
}

Array relu(const Array& a) {
  std::vector<double> out(a.size());
  auto av = a.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] > 0.0 ? av[i] : 0.0;
  return Array::from_op("relu", a.shape(), std::move(out), {a}, [](const detail::Node& o) {
    if (double* g = target(o.parents[0]))
      for (std::size_t i = 0; i < o.grad.size(); ++i)
        if (o.value[i] > 0.0) g[i] += o.grad[i];
  });
}

Array add_rowwise(const Array& x, const Array& bias) {
  require_rank("add_rowwise", x, 2);
  if (bias.rank() != 1 || bias.dim(0) != x.dim(1)) {
    shape_fail("add_rowwise", "bias " + shape_string(bias.shape()) + " incompatible with " +
                                  shape_string(x.shape()));
  }
  const std::size_t m = x.dim(0), n = x.dim(1);
  std::vector<double> out(x.size());
  auto xv = x.values(), bv = bias.values();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] = xv[i * n + j] + bv[j];
  return Array::from_op("add_rowwise", x.shape(), std::move(out), {x, bias},
                        [m, n](const detail::Node& o) {
                          if (double* g = target(o.parents[0]))
                            for (std::size_t i = 0; i < m * n; ++i) g[i] += o.grad[i];
                          if (double* g = target(o.parents[1]))
                            for (std::size_t i = 0; i < m; ++i)
                              for (std::size_t j = 0; j < n; ++j) g[j] += o.grad[i * n + j];
                        });
}

Array scale_rows(const Array& x, const Array& w) {
  require_rank("scale_rows", x, 2);
  if (w.rank() != 1 || w.dim(0) != x.dim(0)) {
    shape_fail("scale_rows", "weights " + shape_string(w.shape()) + " incompatible with " +
                                 shape_string(x.shape()));
  }
  const std::size_t m = x.dim(0), n = x.dim(1);
  std::vector<double> out(x.size());
  auto xv = x.values(), wv = w.values();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] = xv[i * n + j] * wv[i];
  return Array::from_op("scale_rows", x.shape(), std::move(out), {x, w}, [m, n](const detail::Node& o) {
    const auto& xv = o.parents[0]->value;
    const auto& wv = o.parents[1]->value;
    if (double* g = target(o.parents[0]))
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) g[i * n + j] += o.grad[i * n + j] * wv[i];
    if (double* g = target(o.parents[1]))
      for (std::size_t i = 0; i < m; ++i) {
        double acc = 0.0;
        for (std::size_t j = 0; j < n; ++j) acc += o.grad[i * n + j] * xv[i * n + j];
        g[i] += acc;
      }
  });
}

Array mul_scalar(const Array& a, const Array& s) {
  if (s.size() != 1) shape_fail("mul_scalar", "factor must have one element, got " + shape_string(s.shape()));
  const double f = s.item();
  std::vector<double> out(a.size());
  auto av = a.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * f;
  return Array::from_op("mul_scalar", a.shape(), std::move(out), {a, s}, [](const detail::Node& o) {
    const auto& av = o.parents[0]->value;
    const double f = o.parents[1]->value[0];
    if (double* g = target(o.parents[0]))
      for (std::size_t i = 0; i < o.grad.size(); ++i) g[i] += o.grad[i] * f;
    if (double* g = target(o.parents[1])) {
      double acc = 0.0;
      for (std::size_t i = 0; i < o.grad.size(); ++i) acc += o.grad[i] * av[i];
      g[0] += acc;
    }
  });
}

Array matmul(const Array& a, const Array& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
    shape_fail("matmul", "cannot multiply " + shape_string(a.shape()) + " by " + shape_string(b.shape()));
  }
  const auto m = static_cast<Eigen::Index>(a.dim(0));
  const auto k = static_cast<Eigen::Index>(a.dim(1));
  const auto n = static_cast<Eigen::Index>(b.dim(1));
  std::vector<double> out(static_cast<std::size_t>(m * n));
  Map(out.data(), m, n).noalias() = MapC(a.values().data(), m, k) * MapC(b.values().data(), k, n);
  return Array::from_op("matmul", {a.dim(0), b.dim(1)}, std::move(out), {a, b},
                        [m, k, n](const detail::Node& o) {
                          MapC go(o.grad.data(), m, n);
                          if (double* g = target(o.parents[0]))
                            Map(g, m, k).noalias() += go * MapC(o.parents[1]->value.data(), k, n).transpose();
                          if (double* g = target(o.parents[1]))
                            Map(g, k, n).noalias() += MapC(o.parents[0]->value.data(), m, k).transpose() * go;
                        });
}

Array transpose(const Array& a) {
  require_rank("transpose", a, 2);
  const std::size_t m = a.dim(0), n = a.dim(1);
  std::vector<double> out(a.size());
  auto av = a.values();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[j * m + i] = av[i * n + j];
  return Array::from_op("transpose", {n, m}, std::move(out), {a}, [m, n](const detail::Node& o) {
    if (double* g = target(o.parents[0]))
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) g[i * n + j] += o.grad[j * m + i];
  });
}

Array sum(const Array& a) {
  double s = 0.0;
  for (double v : a.values()) s += v;
  return Array::from_op("sum", {}, {s}, {a}, [](const detail::Node& o) {
    if (double* g = target(o.parents[0])) {
      const std::size_t n = o.parents[0]->value.size();
      for (std::size_t i = 0; i < n; ++i) g[i] += o.grad[0];
    }
  });
}

Array mean(const Array& a) {
  if (a.size() == 0) shape_fail("mean", "empty array");
  return scale(sum(a), 1.0 / static_cast<double>(a.size()));
}

Array sum(const Array& a, std::size_t axis) {
  const auto sp = split_axis("sum", a.shape(), axis);
  std::vector<double> out(sp.outer * sp.inner, 0.0);
  auto av = a.values();
  for (std::size_t o = 0; o < sp.outer; ++o)
    for (std::size_t j = 0; j < sp.n; ++j)
      for (std::size_t i = 0; i < sp.inner; ++i) out[o * sp.inner + i] += av[(o * sp.n + j) * sp.inner + i];
  return Array::from_op("sum_axis", drop_axis(a.shape(), axis), std::move(out), {a},
                        [sp](const detail::Node& o) {
                          if (double* g = target(o.parents[0]))
                            for (std::size_t ou = 0; ou < sp.outer; ++ou)
                              for (std::size_t j = 0; j < sp.n; ++j)
                                for (std::size_t i = 0; i < sp.inner; ++i)
                                  g[(ou * sp.n + j) * sp.inner + i] += o.grad[ou * sp.inner + i];
                        });
}

Array mean(const Array& a, std::size_t axis) {
  const auto sp = split_axis("mean", a.shape(), axis);
  if (sp.n == 0) shape_fail("mean", "empty axis in " + shape_string(a.shape()));
  return scale(sum(a, axis), 1.0 / static_cast<double>(sp.n));
}

Array squared_norm(const Array& a) {
  double s = 0.0;
  for (double v : a.values()) s += v * v;
  return Array::from_op("squared_norm", {}, {s}, {a}, [](const detail::Node& o) {
    if (double* g = target(o.parents[0])) {
      const auto& x = o.parents[0]->value;
      for (std::size_t i = 0; i < x.size(); ++i) g[i] += 2.0 * x[i] * o.grad[0];
    }
  });
}

namespace {

// Per-slice max and log-sum-exp along the split axis.
void slice_lse(std::span<const double> v, const AxisSplit& sp, std::vector<double>& lse) {
  lse.assign(sp.outer * sp.inner, 0.0);
  for (std::size_t o = 0; o < sp.outer; ++o)
    for (std::size_t i = 0; i < sp.inner; ++i) {
      double m = -std::numeric_limits<double>::infinity();
      for (std::size_t j = 0; j < sp.n; ++j) m = std::max(m, v[(o * sp.n + j) * sp.inner + i]);
      double s = 0.0;
      for (std::size_t j = 0; j < sp.n; ++j) s += std::exp(v[(o * sp.n + j) * sp.inner + i] - m);
      lse[o * sp.inner + i] = m + std::log(s);
    }
}

}  // namespace

Array log_sum_exp(const Array& a, std::size_t axis) {
  const auto sp = split_axis("log_sum_exp", a.shape(), axis);
  if (sp.n == 0) shape_fail("log_sum_exp", "empty axis in " + shape_string(a.shape()));
  std::vector<double> lse;
  slice_lse(a.values(), sp, lse);
  return Array::from_op("log_sum_exp", drop_axis(a.shape(), axis), lse, {a}, [sp](const detail::Node& o) {
    if (double* g = target(o.parents[0])) {
      const auto& x = o.parents[0]->value;
      for (std::size_t ou = 0; ou < sp.outer; ++ou)
        for (std::size_t i = 0; i < sp.inner; ++i) {
          const double l = o.value[ou * sp.inner + i];
          const double go = o.grad[ou * sp.inner + i];
          for (std::size_t j = 0; j < sp.n; ++j) {
            const auto idx = (ou * sp.n + j) * sp.inner + i;
            g[idx] += go * std::exp(x[idx] - l);
          }
        }
    }
  });
}

Array softmax(const Array& a, std::size_t axis) {
  const auto sp = split_axis("softmax", a.shape(), axis);
  std::vector<double> lse;
  slice_lse(a.values(), sp, lse);
  std::vector<double> out(a.size());
  auto av = a.values();
  for (std::size_t o = 0; o < sp.outer; ++o)
    for (std::size_t j = 0; j < sp.n; ++j)
      for (std::size_t i = 0; i < sp.inner; ++i) {
        const auto idx = (o * sp.n + j) * sp.inner + i;
        out[idx] = std::exp(av[idx] - lse[o * sp.inner + i]);
      }
  return Array::from_op("softmax", a.shape(), std::move(out), {a}, [sp](const detail::Node& o) {
    if (double* g = target(o.parents[0]))
      for (std::size_t ou = 0; ou < sp.outer; ++ou)
        for (std::size_t i = 0; i < sp.inner; ++i) {
          double dot = 0.0;
          for (std::size_t j = 0; j < sp.n; ++j) {
            const auto idx = (ou * sp.n + j) * sp.inner + i;
            dot += o.grad[idx] * o.value[idx];
          }
          for (std::size_t j = 0; j < sp.n; ++j) {
            const auto idx = (ou * sp.n + j) * sp.inner + i;
            g[idx] += o.value[idx] * (o.grad[idx] - dot);
          }
        }
  });
}

Array log_softmax(const Array& a, std::size_t axis) {
  const auto sp = split_axis("log_softmax", a.shape(), axis);
  std::vector<double> lse;
  slice_lse(a.values(), sp, lse);
  std::vector<double> out(a.size());
  auto av = a.values();
  for (std::size_t o = 0; o < sp.outer; ++o)
    for (std::size_t j = 0; j < sp.n; ++j)
      for (std::size_t i = 0; i < sp.inner; ++i) {
        const auto idx = (o * sp.n + j) * sp.inner + i;
        out[idx] = av[idx] - lse[o * sp.inner + i];
      }
  return Array::from_op("log_softmax", a.shape(), std::move(out), {a}, [sp](const detail::Node& o) {
    if (double* g = target(o.parents[0]))
      for (std::size_t ou = 0; ou < sp.outer; ++ou)
        for (std::size_t i = 0; i < sp.inner; ++i) {
          double total = 0.0;
          for (std::size_t j = 0; j < sp.n; ++j) total += o.grad[(ou * sp.n + j) * sp.inner + i];
          for (std::size_t j = 0; j < sp.n; ++j) {
            const auto idx = (ou * sp.n + j) * sp.inner + i;
            g[idx] += o.grad[idx] - std::exp(o.value[idx]) * total;
          }
        }
  });
}

Array concat(const std::vector<Array>& parts, std::size_t axis) {
  if (parts.empty()) shape_fail("concat", "no operands");
  const Shape& first = parts.front().shape();
  if (axis >= first.size()) shape_fail("concat", "axis out of range for " + shape_string(first));
  Shape out_shape = first;
  out_shape[axis] = 0;
  std::vector<std::size_t> widths;
  for (const auto& p : parts) {
    const Shape& s = p.shape();
    bool ok = s.size() == first.size();
    for (std::size_t i = 0; ok && i < s.size(); ++i)
      if (i != axis && s[i] != first[i]) ok = false;
    if (!ok) shape_fail("concat", "incompatible shapes " + shape_string(first) + " and " + shape_string(s));
    out_shape[axis] += s[axis];
    widths.push_back(s[axis]);
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= first[i];
  for (std::size_t i = axis + 1; i < first.size(); ++i) inner *= first[i];
  const std::size_t total = out_shape[axis];
  std::vector<double> out(shape_size(out_shape));
  std::size_t offset = 0;
  for (std::size_t p = 0; p < parts.size(); ++p) {
    auto v = parts[p].values();
    const std::size_t w = widths[p];
    for (std::size_t o = 0; o < outer; ++o)
      std::copy_n(v.begin() + static_cast<std::ptrdiff_t>(o * w * inner), w * inner,
                  out.begin() + static_cast<std::ptrdiff_t>((o * total + offset) * inner));
    offset += w;
  }
  return Array::from_op("concat", out_shape, std::move(out), parts,
                        [widths, outer, inner, total](const detail::Node& o) {
                          std::size_t off = 0;
                          for (std::size_t p = 0; p < widths.size(); ++p) {
                            const std::size_t w = widths[p];
                            if (double* g = target(o.parents[p]))
                              for (std::size_t ou = 0; ou < outer; ++ou)
                                for (std::size_t i = 0; i < w * inner; ++i)
                                  g[ou * w * inner + i] += o.grad[(ou * total + off) * inner + i];
                            off += w;
                          }
                        });
}

Array reshape(const Array& a, Shape shape) {
  if (shape_size(shape) != a.size()) {
    shape_fail("reshape", "cannot reshape " + shape_string(a.shape()) + " to " + shape_string(shape));
  }
  return Array::from_op("reshape", std::move(shape), a.to_vector(), {a}, [](const detail::Node& o) {
    if (double* g = target(o.parents[0]))
      for (std::size_t i = 0; i < o.grad.size(); ++i) g[i] += o.grad[i];
  });
}

Array take_rows(const Array& a, std::span<const std::size_t> rows) {
  if (a.rank() == 0) shape_fail("take_rows", "scalar operand");
  const std::size_t m = a.dim(0);
  const std::size_t row = a.size() / std::max<std::size_t>(m, 1);
  for (auto r : rows)
    if (r >= m) shape_fail("take_rows", "row " + std::to_string(r) + " out of range for " + shape_string(a.shape()));
  Shape out_shape = a.shape();
  out_shape[0] = rows.size();
  std::vector<double> out(rows.size() * row);
  auto av = a.values();
  for (std::size_t i = 0; i < rows.size(); ++i)
    std::copy_n(av.begin() + static_cast<std::ptrdiff_t>(rows[i] * row), row,
                out.begin() + static_cast<std::ptrdiff_t>(i * row));
  std::vector<std::size_t> idx(rows.begin(), rows.end());
  return Array::from_op("take_rows", out_shape, std::move(out), {a}, [idx, row](const detail::Node& o) {
    if (double* g = target(o.parents[0]))
      for (std::size_t i = 0; i < idx.size(); ++i)
        for (std::size_t j = 0; j < row; ++j) g[idx[i] * row + j] += o.grad[i * row + j];
  });
}

Array pick(const Array& x, std::span<const std::size_t> cols) {
  require_rank("pick", x, 2);
  const std::size_t m = x.dim(0), n = x.dim(1);
  if (cols.size() != m) {
    shape_fail("pick", std::to_string(cols.size()) + " indices for " + shape_string(x.shape()));
  }
  std::vector<double> out(m);
  auto xv = x.values();
  for (std::size_t i = 0; i < m; ++i) {
    if (cols[i] >= n) shape_fail("pick", "column " + std::to_string(cols[i]) + " out of range for " + shape_string(x.shape()));
    out[i] = xv[i * n + cols[i]];
  }
  std::vector<std::size_t> idx(cols.begin(), cols.end());
  return Array::from_op("pick", {m}, std::move(out), {x}, [idx, n](const detail::Node& o) {
    if (double* g = target(o.parents[0]))
      for (std::size_t i = 0; i < idx.size(); ++i) g[i * n + idx[i]] += o.grad[i];
  });
}

Array squared_distances(const Array& a, const Array& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(1)) {
    shape_fail("squared_distances", "incompatible " + shape_string(a.shape()) + " and " + shape_string(b.shape()));
  }
  const std::size_t m = a.dim(0), k = b.dim(0), d = a.dim(1);
  std::vector<double> out(m * k);
  auto av = a.values(), bv = b.values();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < k; ++j) {
      double s = 0.0;
      for (std::size_t t = 0; t < d; ++t) {
        const double diff = av[i * d + t] - bv[j * d + t];
        s += diff * diff;
      }
      out[i * k + j] = s;
    }
  return Array::from_op("squared_distances", {m, k}, std::move(out), {a, b}, [m, k, d](const detail::Node& o) {
    const auto& av = o.parents[0]->value;
    const auto& bv = o.parents[1]->value;
    double* ga = target(o.parents[0]);
    double* gb = target(o.parents[1]);
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < k; ++j) {
        const double go = 2.0 * o.grad[i * k + j];
        if (go == 0.0) continue;
        for (std::size_t t = 0; t < d; ++t) {
          const double diff = go * (av[i * d + t] - bv[j * d + t]);
          if (ga) ga[i * d + t] += diff;
          if (gb) gb[j * d + t] -= diff;
        }
      }
  });
}

namespace {

// y = x / |x| over `len` contiguous values; zero stays zero.
Array normalize_blocks(const char* op, const Array& a, std::size_t blocks, std::size_t len) {
  std::vector<double> out(a.size(), 0.0);
  std::vector<double> norms(blocks, 0.0);
  auto av = a.values();
  for (std::size_t b = 0; b < blocks; ++b) {
    double s = 0.0;
    for (std::size_t j = 0; j < len; ++j) s += av[b * len + j] * av[b * len + j];
    norms[b] = std::sqrt(s);
    if (norms[b] > 0.0)
      for (std::size_t j = 0; j < len; ++j) out[b * len + j] = av[b * len + j] / norms[b];
  }
  return Array::from_op(op, a.shape(), std::move(out), {a}, [norms, len](const detail::Node& o) {
    if (double* g = target(o.parents[0]))
      for (std::size_t b = 0; b < norms.size(); ++b) {
        if (norms[b] == 0.0) continue;
        double dot = 0.0;
        for (std::size_t j = 0; j < len; ++j) dot += o.value[b * len + j] * o.grad[b * len + j];
        for (std::size_t j = 0; j < len; ++j)
          g[b * len + j] += (o.grad[b * len + j] - o.value[b * len + j] * dot) / norms[b];
      }
  });
}

}  // namespace

Array l2_normalize_rows(const Array& a) {
  require_rank("l2_normalize_rows", a, 2);
  return normalize_blocks("l2_normalize_rows", a, a.dim(0), a.dim(1));
}

Array l2_normalize(const Array& a) { return normalize_blocks("l2_normalize", a, 1, a.size()); }

Array conv2d(const Array& x, const Array& w, const Array& bias, Conv2dOptions opts) {
  if (x.rank() != 4 || w.rank() != 4 || x.dim(1) != w.dim(1)) {
    shape_fail("conv2d", "input " + shape_string(x.shape()) + " incompatible with kernel " + shape_string(w.shape()));
  }
  if (opts.stride == 0) shape_fail("conv2d", "stride must be positive");
  const std::size_t B = x.dim(0), Cin = x.dim(1), H = x.dim(2), W = x.dim(3);
  const std::size_t Cout = w.dim(0), kh = w.dim(2), kw = w.dim(3);
  const std::size_t p = opts.padding, s = opts.stride;
  if (H + 2 * p < kh || W + 2 * p < kw) {
    shape_fail("conv2d", "kernel " + shape_string(w.shape()) + " larger than padded input " + shape_string(x.shape()));
  }
  const bool has_bias = bias.defined();
  if (has_bias && (bias.rank() != 1 || bias.dim(0) != Cout)) {
    shape_fail("conv2d", "bias " + shape_string(bias.shape()) + " does not match " + std::to_string(Cout) + " channels");
  }
  const std::size_t Ho = (H + 2 * p - kh) / s + 1, Wo = (W + 2 * p - kw) / s + 1;
  const std::size_t K = Cin * kh * kw, P = Ho * Wo;

  // im2col for the whole batch, kept for the backward pass.
  auto cols = std::make_shared<std::vector<double>>(B * K * P, 0.0);
  auto xv = x.values();
  for (std::size_t b = 0; b < B; ++b) {
    double* c = cols->data() + b * K * P;
    for (std::size_t ci = 0; ci < Cin; ++ci)
      for (std::size_t ki = 0; ki < kh; ++ki)
        for (std::size_t kj = 0; kj < kw; ++kj) {
          const std::size_t r = (ci * kh + ki) * kw + kj;
          for (std::size_t oh = 0; oh < Ho; ++oh) {
            const long ih = static_cast<long>(oh * s + ki) - static_cast<long>(p);
            if (ih < 0 || ih >= static_cast<long>(H)) continue;
            for (std::size_t ow = 0; ow < Wo; ++ow) {
              const long iw = static_cast<long>(ow * s + kj) - static_cast<long>(p);
              if (iw < 0 || iw >= static_cast<long>(W)) continue;
              c[r * P + oh * Wo + ow] = xv[((b * Cin + ci) * H + static_cast<std::size_t>(ih)) * W + static_cast<std::size_t>(iw)];
            }
          }
        }
  }

  const auto eCout = static_cast<Eigen::Index>(Cout), eK = static_cast<Eigen::Index>(K),
             eP = static_cast<Eigen::Index>(P);
  std::vector<double> out(B * Cout * P);
  MapC wm(w.values().data(), eCout, eK);
  for (std::size_t b = 0; b < B; ++b) {
    Map ob(out.data() + b * Cout * P, eCout, eP);
    ob.noalias() = wm * MapC(cols->data() + b * K * P, eK, eP);
    if (has_bias) {
      auto bv = bias.values();
      for (std::size_t co = 0; co < Cout; ++co) ob.row(static_cast<Eigen::Index>(co)).array() += bv[co];
    }
  }

  std::vector<Array> parents{x, w};
  if (has_bias) parents.push_back(bias);
  return Array::from_op(
      "conv2d", {B, Cout, Ho, Wo}, std::move(out), parents,
      [=](const detail::Node& o) {
        double* gx = target(o.parents[0]);
        double* gw = target(o.parents[1]);
        double* gb = has_bias ? target(o.parents[2]) : nullptr;
        MapC wm(o.parents[1]->value.data(), eCout, eK);
        RowMat dcols(eK, eP);
        for (std::size_t b = 0; b < B; ++b) {
          MapC go(o.grad.data() + b * Cout * P, eCout, eP);
          if (gw) Map(gw, eCout, eK).noalias() += go * MapC(cols->data() + b * K * P, eK, eP).transpose();
          if (gb)
            for (std::size_t co = 0; co < Cout; ++co) gb[co] += go.row(static_cast<Eigen::Index>(co)).sum();
          if (gx) {
            dcols.noalias() = wm.transpose() * go;
            for (std::size_t ci = 0; ci < Cin; ++ci)
              for (std::size_t ki = 0; ki < kh; ++ki)
                for (std::size_t kj = 0; kj < kw; ++kj) {
                  const std::size_t r = (ci * kh + ki) * kw + kj;
                  for (std::size_t oh = 0; oh < Ho; ++oh) {
                    const long ih = static_cast<long>(oh * s + ki) - static_cast<long>(p);
                    if (ih < 0 || ih >= static_cast<long>(H)) continue;
                    for (std::size_t ow = 0; ow < Wo; ++ow) {
                      const long iw = static_cast<long>(ow * s + kj) - static_cast<long>(p);
                      if (iw < 0 || iw >= static_cast<long>(W)) continue;
                      gx[((b * Cin + ci) * H + static_cast<std::size_t>(ih)) * W + static_cast<std::size_t>(iw)] +=
                          dcols(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(oh * Wo + ow));
                    }
                  }
                }
          }
        }
      });
}

namespace {

void pool_dims(const char* op, const Array& x, std::size_t kernel, std::size_t stride, std::size_t& Ho,
               std::size_t& Wo) {
  require_rank(op, x, 4);
  if (kernel == 0 || stride == 0) shape_fail(op, "kernel and stride must be positive");
  if (x.dim(2) < kernel || x.dim(3) < kernel) {
    shape_fail(op, "kernel " + std::to_string(kernel) + " larger than input " + shape_string(x.shape()));
  }
  Ho = (x.dim(2) - kernel) / stride + 1;
  Wo = (x.dim(3) - kernel) / stride + 1;
}

}  // namespace

Array max_pool2d(const Array& x, std::size_t kernel, std::size_t stride) {
  std::size_t Ho, Wo;
  pool_dims("max_pool2d", x, kernel, stride, Ho, Wo);
  const std::size_t BC = x.dim(0) * x.dim(1), H = x.dim(2), W = x.dim(3);
  std::vector<double> out(BC * Ho * Wo);
  std::vector<std::size_t> arg(out.size());
  auto xv = x.values();
  for (std::size_t c = 0; c < BC; ++c)
    for (std::size_t oh = 0; oh < Ho; ++oh)
      for (std::size_t ow = 0; ow < Wo; ++ow) {
        std::size_t best = c * H * W + oh * stride * W + ow * stride;
        for (std::size_t i = 0; i < kernel; ++i)
          for (std::size_t j = 0; j < kernel; ++j) {
            const std::size_t idx = c * H * W + (oh * stride + i) * W + ow * stride + j;
            if (xv[idx] > xv[best]) best = idx;
          }
        const std::size_t o = (c * Ho + oh) * Wo + ow;
        out[o] = xv[best];
        arg[o] = best;
      }
  return Array::from_op("max_pool2d", {x.dim(0), x.dim(1), Ho, Wo}, std::move(out), {x},
                        [arg = std::move(arg)](const detail::Node& o) {
                          if (double* g = target(o.parents[0]))
                            for (std::size_t i = 0; i < arg.size(); ++i) g[arg[i]] += o.grad[i];
                        });
}

Array avg_pool2d(const Array& x, std::size_t kernel, std::size_t stride) {
  std::size_t Ho, Wo;
  pool_dims("avg_pool2d", x, kernel, stride, Ho, Wo);
  const std::size_t BC = x.dim(0) * x.dim(1), H = x.dim(2), W = x.dim(3);
  const double inv = 1.0 / static_cast<double>(kernel * kernel);
  std::vector<double> out(BC * Ho * Wo, 0.0);
  auto xv = x.values();
  for (std::size_t c = 0; c < BC; ++c)
    for (std::size_t oh = 0; oh < Ho; ++oh)
      for (std::size_t ow = 0; ow < Wo; ++ow) {
        double s = 0.0;
        for (std::size_t i = 0; i < kernel; ++i)
          for (std::size_t j = 0; j < kernel; ++j) s += xv[c * H * W + (oh * stride + i) * W + ow * stride + j];
        out[(c * Ho + oh) * Wo + ow] = s * inv;
      }
  return Array::from_op("avg_pool2d", {x.dim(0), x.dim(1), Ho, Wo}, std::move(out), {x},
                        [=](const detail::Node& o) {
                          if (double* g = target(o.parents[0]))
                            for (std::size_t c = 0; c < BC; ++c)
                              for (std::size_t oh = 0; oh < Ho; ++oh)
                                for (std::size_t ow = 0; ow < Wo; ++ow) {
                                  const double go = o.grad[(c * Ho + oh) * Wo + ow] * inv;
                                  for (std::size_t i = 0; i < kernel; ++i)
                                    for (std::size_t j = 0; j < kernel; ++j)
                                      g[c * H * W + (oh * stride + i) * W + ow * stride + j] += go;
                                }
                        });
}

Array global_avg_pool(const Array& x) {
  require_rank("global_avg_pool", x, 4);
  const std::size_t B = x.dim(0), C = x.dim(1);
  return reshape(mean(reshape(x, {B * C, x.dim(2) * x.dim(3)}), 1), {B, C});
}

Array batch_norm(const Array& x, const Array& gamma, const Array& beta, BatchNormStats& stats, bool training) {
  if (x.rank() != 2 && x.rank() != 4) shape_fail("batch_norm", "expected [B,C] or [B,C,H,W], got " + shape_string(x.shape()));
  const std::size_t B = x.dim(0), C = x.dim(1);
  const std::size_t S = x.rank() == 4 ? x.dim(2) * x.dim(3) : 1;
  for (const Array* p : std::initializer_list<const Array*>{&gamma, &beta, &stats.running_mean, &stats.running_var}) {
    if (p->rank() != 1 || p->dim(0) != C) {
      shape_fail("batch_norm", "per-channel parameter " + shape_string(p->shape()) + " does not match " +
                                   shape_string(x.shape()));
    }
  }
  const double M = static_cast<double>(B * S);
  auto xv = x.values();
  auto gv = gamma.values(), bv = beta.values();
  std::vector<double> mu(C, 0.0), inv_std(C, 0.0);
  if (training) {
    if (B * S < 2) shape_fail("batch_norm", "training mode needs more than one value per channel");
    for (std::size_t c = 0; c < C; ++c) {
      double s = 0.0;
      for (std::size_t b = 0; b < B; ++b)
        for (std::size_t i = 0; i < S; ++i) s += xv[(b * C + c) * S + i];
      mu[c] = s / M;
      double v = 0.0;
      for (std::size_t b = 0; b < B; ++b)
        for (std::size_t i = 0; i < S; ++i) {
          const double d = xv[(b * C + c) * S + i] - mu[c];
          v += d * d;
        }
      v /= M;
      inv_std[c] = 1.0 / std::sqrt(v + stats.eps);
      auto rm = stats.running_mean.mutable_values();
      auto rv = stats.running_var.mutable_values();
      rm[c] = (1.0 - stats.momentum) * rm[c] + stats.momentum * mu[c];
      rv[c] = (1.0 - stats.momentum) * rv[c] + stats.momentum * v * M / (M - 1.0);
    }
  } else {
    auto rm = stats.running_mean.values(), rv = stats.running_var.values();
    for (std::size_t c = 0; c < C; ++c) {
      mu[c] = rm[c];
      inv_std[c] = 1.0 / std::sqrt(rv[c] + stats.eps);
    }
  }
  std::vector<double> xhat(x.size()), out(x.size());
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t c = 0; c < C; ++c)
      for (std::size_t i = 0; i < S; ++i) {
        const std::size_t idx = (b * C + c) * S + i;
        xhat[idx] = (xv[idx] - mu[c]) * inv_std[c];
        out[idx] = gv[c] * xhat[idx] + bv[c];
      }
  return Array::from_op(
      "batch_norm", x.shape(), std::move(out), {x, gamma, beta},
      [=, xhat = std::move(xhat)](const detail::Node& o) {
        const auto& gv = o.parents[1]->value;
        double* gx = target(o.parents[0]);
        double* gg = target(o.parents[1]);
        double* gbeta = target(o.parents[2]);
        for (std::size_t c = 0; c < C; ++c) {
          double sum_g = 0.0, sum_gx = 0.0;
          for (std::size_t b = 0; b < B; ++b)
            for (std::size_t i = 0; i < S; ++i) {
              const std::size_t idx = (b * C + c) * S + i;
              sum_g += o.grad[idx];
              sum_gx += o.grad[idx] * xhat[idx];
            }
          if (gg) gg[c] += sum_gx;
          if (gbeta) gbeta[c] += sum_g;
          if (!gx) continue;
          const double k = gv[c] * inv_std[c];
          for (std::size_t b = 0; b < B; ++b)
            for (std::size_t i = 0; i < S; ++i) {
              const std::size_t idx = (b * C + c) * S + i;
              gx[idx] += training ? k * (o.grad[idx] - sum_g / M - xhat[idx] * sum_gx / M) : k * o.grad[idx];
            }
        }
      });
}

}  // namespace crnet
