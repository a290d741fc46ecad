#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <functional>
#include <limits>
#include <string>

#include "crnet/grad_check.hpp"
#include "crnet/ops.hpp"
#include "crnet/optim.hpp"
#include "crnet/parameters.hpp"
#include "support.hpp"

using namespace crnet;
using testing::random_param;
using testing::random_constant;

namespace {

/// Scalar probe: sum(out * W) for a fixed random W, so every output
/// coordinate carries a distinct weight.
Array probe(const Array& out, std::uint64_t seed) {
  Rng rng(seed ^ 0x9e3779b97f4a7c15ull);
  return sum(mul(out, random_constant(rng, out.shape())));
}

struct OpCase {
  std::string name;
  std::function<std::pair<std::function<Array()>, std::vector<NamedArray>>(Rng&)> make;
};

std::vector<OpCase> op_cases() {
  using testing::dim_between;
  std::vector<OpCase> cases;
  auto unary = [&](std::string name, std::function<Array(const Array&)> op, bool kink = false) {
    cases.push_back({name, [op, kink](Rng& rng) {
                       Shape s{dim_between(rng, 1, 4), dim_between(rng, 1, 4)};
                       Array p = kink ? Array::parameter(s, testing::away_from_zero(rng, shape_size(s)))
                                      : random_param(rng, s);
                       const std::uint64_t k = rng.next_u64();
                       return std::make_pair(std::function<Array()>([=] { return probe(op(p), k); }),
                                             std::vector<NamedArray>{{"p", p}});
                     }});
  };
  auto binary = [&](std::string name, std::function<Array(const Array&, const Array&)> op,
                    std::function<std::pair<Shape, Shape>(Rng&)> shapes) {
    cases.push_back({name, [op, shapes](Rng& rng) {
                       auto [sa, sb] = shapes(rng);
                       Array a = random_param(rng, sa), b = random_param(rng, sb);
                       const std::uint64_t k = rng.next_u64();
                       return std::make_pair(std::function<Array()>([=] { return probe(op(a, b), k); }),
                                             std::vector<NamedArray>{{"a", a}, {"b", b}});
                     }});
  };
  auto same = [](Rng& rng) {
    Shape s{dim_between(rng, 1, 4), dim_between(rng, 1, 4)};
    return std::make_pair(s, s);
  };

  binary("add", [](auto& a, auto& b) { return add(a, b); }, same);
  binary("sub", [](auto& a, auto& b) { return sub(a, b); }, same);
  binary("mul", [](auto& a, auto& b) { return mul(a, b); }, same);
  unary("scale", [](auto& a) { return scale(a, -1.7); });
  unary("add_scalar", [](auto& a) { return add_scalar(a, 0.3); });
  unary("relu", [](auto& a) { return relu(a); }, true);
  binary("add_rowwise", [](auto& a, auto& b) { return add_rowwise(a, b); }, [](Rng& rng) {
    const std::size_t m = dim_between(rng, 1, 4), n = dim_between(rng, 1, 4);
    return std::make_pair(Shape{m, n}, Shape{n});
  });
  binary("scale_rows", [](auto& a, auto& b) { return scale_rows(a, b); }, [](Rng& rng) {
    const std::size_t m = dim_between(rng, 1, 4), n = dim_between(rng, 1, 4);
    return std::make_pair(Shape{m, n}, Shape{m});
  });
  binary("mul_scalar", [](auto& a, auto& b) { return mul_scalar(a, b); }, [](Rng& rng) {
    return std::make_pair(Shape{dim_between(rng, 1, 5)}, Shape{1});
  });
  binary("matmul", [](auto& a, auto& b) { return matmul(a, b); }, [](Rng& rng) {
    const std::size_t m = dim_between(rng, 1, 4), k = dim_between(rng, 1, 4), n = dim_between(rng, 1, 4);
    return std::make_pair(Shape{m, k}, Shape{k, n});
  });
  unary("transpose", [](auto& a) { return transpose(a); });
  unary("sum", [](auto& a) { return sum(a); });
  unary("mean", [](auto& a) { return mean(a); });
  unary("sum_axis0", [](auto& a) { return sum(a, 0); });
  unary("sum_axis1", [](auto& a) { return sum(a, 1); });
  unary("mean_axis1", [](auto& a) { return mean(a, 1); });
  unary("squared_norm", [](auto& a) { return squared_norm(a); });
  unary("log_sum_exp", [](auto& a) { return log_sum_exp(a, 1); });
  unary("log_sum_exp_axis0", [](auto& a) { return log_sum_exp(a, 0); });
  unary("softmax", [](auto& a) { return softmax(a, 1); });
  unary("softmax_axis0", [](auto& a) { return softmax(a, 0); });
  unary("log_softmax", [](auto& a) { return log_softmax(a, 1); });
  binary("concat0", [](auto& a, auto& b) { return concat({a, b}, 0); }, [](Rng& rng) {
    const std::size_t n = dim_between(rng, 1, 4);
    return std::make_pair(Shape{dim_between(rng, 1, 3), n}, Shape{dim_between(rng, 1, 3), n});
  });
  binary("concat1", [](auto& a, auto& b) { return concat({a, b}, 1); }, [](Rng& rng) {
    const std::size_t m = dim_between(rng, 1, 4);
    return std::make_pair(Shape{m, dim_between(rng, 1, 3)}, Shape{m, dim_between(rng, 1, 3)});
  });
  unary("reshape", [](auto& a) { return reshape(a, {a.size()}); });
  unary("take_rows", [](auto& a) {
    std::vector<std::size_t> rows{a.dim(0) - 1, 0, a.dim(0) - 1};
    return take_rows(a, rows);
  });
  unary("pick", [](auto& a) {
    std::vector<std::size_t> cols(a.dim(0));
    for (std::size_t i = 0; i < cols.size(); ++i) cols[i] = (i * 7) % a.dim(1);
    return pick(a, cols);
  });
  binary("squared_distances", [](auto& a, auto& b) { return squared_distances(a, b); }, [](Rng& rng) {
    const std::size_t d = dim_between(rng, 1, 4);
    return std::make_pair(Shape{dim_between(rng, 1, 4), d}, Shape{dim_between(rng, 1, 4), d});
  });
  unary("l2_normalize_rows", [](auto& a) { return l2_normalize_rows(a); });
  unary("l2_normalize", [](auto& a) { return l2_normalize(a); });

  cases.push_back({"conv2d", [](Rng& rng) {
                     const std::size_t cin = dim_between(rng, 1, 2), cout = dim_between(rng, 1, 3);
                     const std::size_t k = dim_between(rng, 1, 3), h = dim_between(rng, 3, 5);
                     Conv2dOptions o{dim_between(rng, 1, 2), rng.uniform_index(2)};
                     Array x = random_param(rng, {dim_between(rng, 1, 2), cin, h, h + 1});
                     Array w = random_param(rng, {cout, cin, k, k});
                     Array b = random_param(rng, {cout});
                     const std::uint64_t key = rng.next_u64();
                     return std::make_pair(std::function<Array()>([=] { return probe(conv2d(x, w, b, o), key); }),
                                           std::vector<NamedArray>{{"x", x}, {"w", w}, {"b", b}});
                   }});
  cases.push_back({"max_pool2d", [](Rng& rng) {
                     Array x = random_param(rng, {1, dim_between(rng, 1, 2), 4, 4});
                     const std::uint64_t key = rng.next_u64();
                     return std::make_pair(std::function<Array()>([=] { return probe(max_pool2d(x, 2, 2), key); }),
                                           std::vector<NamedArray>{{"x", x}});
                   }});
  cases.push_back({"avg_pool2d", [](Rng& rng) {
                     Array x = random_param(rng, {dim_between(rng, 1, 2), 2, 4, 5});
                     const std::uint64_t key = rng.next_u64();
                     return std::make_pair(std::function<Array()>([=] { return probe(avg_pool2d(x, 2, 1), key); }),
                                           std::vector<NamedArray>{{"x", x}});
                   }});
  cases.push_back({"global_avg_pool", [](Rng& rng) {
                     Array x = random_param(rng, {2, dim_between(rng, 1, 3), 3, 2});
                     const std::uint64_t key = rng.next_u64();
                     return std::make_pair(std::function<Array()>([=] { return probe(global_avg_pool(x), key); }),
                                           std::vector<NamedArray>{{"x", x}});
                   }});
  for (bool training : {true, false}) {
    cases.push_back({training ? "batch_norm_train" : "batch_norm_eval", [training](Rng& rng) {
                       const std::size_t c = dim_between(rng, 1, 3);
                       Array x = random_param(rng, {dim_between(rng, 2, 4), c, 2, 2});
                       Array g = random_param(rng, {c}), b = random_param(rng, {c});
                       std::vector<double> var(c);
                       for (auto& v : var) v = 0.5 + rng.uniform();
                       BatchNormStats stats{random_constant(rng, {c}), Array::constant({c}, var)};
                       const std::uint64_t key = rng.next_u64();
                       return std::make_pair(std::function<Array()>([=] {
                                               BatchNormStats s = stats;
                                               s.running_mean = stats.running_mean.clone();
                                               s.running_var = stats.running_var.clone();
                                               return probe(batch_norm(x, g, b, s, training), key);
                                             }),
                                             std::vector<NamedArray>{{"x", x}, {"gamma", g}, {"beta", b}});
                     }});
  }
  return cases;
}

}  // namespace

TEST_CASE("log_sum_exp of equal entries") {
  CHECK(log_sum_exp(Array::constant({2}, {0, 0}), 0).item() == doctest::Approx(std::log(2.0)).epsilon(1e-15));
}

TEST_CASE("softmax of equal logits is uniform") {
  const auto p = softmax(Array::constant({3}, {4.2, 4.2, 4.2}), 0).to_vector();
  for (double v : p) CHECK(v == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
}

TEST_CASE("identity matmul") {
  Rng rng(1);
  for (std::size_t n : {1u, 3u, 7u}) {
    Array a = random_constant(rng, {3, n});
    Array id = Array::constant({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1});
    const auto out = matmul(id, a).to_vector();
    const auto in = a.to_vector();
    CHECK(out == in);
  }
}

TEST_CASE("backward: sum, squared norm, unrelated parameter") {
  Array p = Array::parameter({3}, {0.5, -1, 2});
  sum(p).backward();
  CHECK(p.grad() == std::vector<double>{1, 1, 1});

  Array q = Array::parameter({2}, {1, 2});
  squared_norm(q).backward();
  CHECK(q.grad() == std::vector<double>{2, 4});

  Array used = Array::parameter({2}, {1, 1});
  Array unused = Array::parameter({2}, {3, 4});
  Array loss = sum(used);
  (void)add(unused, unused);
  loss.backward();
  CHECK(unused.grad() == std::vector<double>{0, 0});
}

TEST_CASE("backward rejects non-scalar outputs") {
  Array p = Array::parameter({2}, {1, 2});
  CHECK_THROWS_AS(scale(p, 2.0).backward(), ShapeError);
  CHECK_NOTHROW(reshape(sum(p), {1}).backward());
}

TEST_CASE("shape errors name the operation and shapes") {
  Array a = Array::zeros({2, 3}), b = Array::zeros({3, 2});
  try {
    add(a, b);
    FAIL("expected ShapeError");
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("add") != std::string::npos);
    CHECK(msg.find("[2,3]") != std::string::npos);
    CHECK(msg.find("[3,2]") != std::string::npos);
  }
  try {
    matmul(a, a);
    FAIL("expected ShapeError");
  } catch (const ShapeError& e) {
    CHECK(std::string(e.what()).find("matmul") != std::string::npos);
  }
  CHECK_THROWS_AS(conv2d(Array::zeros({1, 2, 4, 4}), Array::zeros({1, 3, 3, 3}), Array()), ShapeError);
  CHECK_THROWS_AS(concat({Array::zeros({2, 2}), Array::zeros({3, 3})}, 0), ShapeError);
  CHECK_THROWS_AS(reshape(Array::zeros({2, 2}), {3}), ShapeError);
}

TEST_CASE("non-finite values are a hard error") {
  Array p = Array::parameter({2}, {1e308, 1e308});
  CHECK_THROWS_AS(scale(p, 10.0), NumericError);
  CHECK_THROWS_AS(Array::constant({1}, {std::numeric_limits<double>::quiet_NaN()}), NumericError);
}

TEST_CASE("gradient_check: quadratic passes at tight tolerance") {
  Array p = Array::parameter({4}, {0.3, -1.2, 2.5, 0.0});
  const auto r = gradient_check([&] { return squared_norm(p); }, {{"p", p}}, 1e-5, 1e-6);
  CHECK(r.passed);
  CHECK(r.coordinates_checked == 4);
  CHECK(r.max_abs_error < 1e-8);
}

TEST_CASE("gradient_check: corrupted rule is caught and named") {
  Array good = Array::parameter({3}, {0.4, -0.7, 1.1});
  Array bad = Array::parameter({3}, {0.9, 0.2, -1.3});
  // x^2 with the derivative deliberately written as x instead of 2x.
  auto broken_square = [](const Array& x) {
    std::vector<double> v(x.size());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = x[i] * x[i];
    return Array::from_op("broken_square", x.shape(), std::move(v), {x}, [](const detail::Node& o) {
      auto& g = Array::grad_buffer(*o.parents[0]);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.parents[0]->value[i] * o.grad[i];
    });
  };
  const auto r = gradient_check([&] { return add(sum(mul(good, good)), sum(broken_square(bad))); },
                                {{"good", good}, {"bad", bad}});
  CHECK_FALSE(r.passed);
  REQUIRE(r.failing_params.size() == 1);
  CHECK(r.failing_params[0] == "bad");
  CHECK(r.worst_param == "bad");
}

TEST_CASE("gradient_check: non-determinism is reported") {
  Array p = Array::parameter({2}, {1, 2});
  int calls = 0;
  CHECK_THROWS_AS(gradient_check([&] { return scale(sum(p), 1.0 + 1e-3 * ++calls); }, {{"p", p}}),
                  std::runtime_error);
}

TEST_CASE("every differentiable op passes gradient_check over 100 seeds") {
  for (const auto& c : op_cases()) {
    CAPTURE(c.name);
    for (std::uint64_t seed = 0; seed < 100; ++seed) {
      CAPTURE(seed);
      Rng rng = Rng::stream(seed, c.name);
      auto [fn, params] = c.make(rng);
      const auto r = gradient_check(fn, params, 1e-5, 1e-4);
      if (!r.passed) {
        CAPTURE(r.worst_param);
        CAPTURE(r.max_rel_error);
        CAPTURE(r.max_abs_error);
        FAIL("gradient mismatch");
      }
    }
  }
}

TEST_CASE("softmax rows lie on the simplex") {
  for (std::uint64_t seed = 0; seed < 200; ++seed) {
    Rng rng(seed);
    const std::size_t m = testing::dim_between(rng, 1, 6), n = testing::dim_between(rng, 1, 9);
    const Array p = softmax(random_constant(rng, {m, n}, 30.0), 1);
    for (std::size_t i = 0; i < m; ++i) {
      double s = 0;
      for (std::size_t j = 0; j < n; ++j) {
        CHECK(p.at(i, j) >= 0.0);
        s += p.at(i, j);
      }
      CHECK(std::abs(s - 1.0) <= 1e-9);
    }
  }
}

TEST_CASE("log_sum_exp matches its stabilised definition and survives 1e3") {
  Rng rng(3);
  for (int t = 0; t < 100; ++t) {
    const std::size_t n = testing::dim_between(rng, 1, 8);
    auto v = testing::random_values(rng, n, 400.0);
    v[rng.uniform_index(n)] = 1e3;
    double mx = v[0];
    for (double x : v) mx = std::max(mx, x);
    double s = 0;
    for (double x : v) s += std::exp(x - mx);
    const double expected = mx + std::log(s);
    const double got = log_sum_exp(Array::constant({n}, v), 0).item();
    CHECK(std::isfinite(got));
    CHECK(got == expected);
  }
}

TEST_CASE("1x1 convolution equals a matmul over channels") {
  Rng rng(11);
  const std::size_t B = 2, cin = 3, cout = 4, H = 3, W = 5;
  Array x = random_constant(rng, {B, cin, H, W});
  Array w = random_constant(rng, {cout, cin, 1, 1});
  const Array y = conv2d(x, w, Array());
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t o = 0; o < cout; ++o)
      for (std::size_t p = 0; p < H * W; ++p) {
        double expected = 0;
        for (std::size_t c = 0; c < cin; ++c) expected += w[o * cin + c] * x[(b * cin + c) * H * W + p];
        CHECK(y[(b * cout + o) * H * W + p] == doctest::Approx(expected).epsilon(1e-13));
      }
}

TEST_CASE("conv2d with stride and padding against direct loops") {
  Rng rng(12);
  const std::size_t cin = 2, cout = 3, H = 5, W = 4, k = 3, stride = 2, pad = 1;
  Array x = random_constant(rng, {1, cin, H, W});
  Array w = random_constant(rng, {cout, cin, k, k});
  Array b = random_constant(rng, {cout});
  const Array y = conv2d(x, w, b, {stride, pad});
  const std::size_t OH = (H + 2 * pad - k) / stride + 1, OW = (W + 2 * pad - k) / stride + 1;
  REQUIRE(y.shape() == Shape{1, cout, OH, OW});
  for (std::size_t o = 0; o < cout; ++o)
    for (std::size_t i = 0; i < OH; ++i)
      for (std::size_t j = 0; j < OW; ++j) {
        double s = b[o];
        for (std::size_t c = 0; c < cin; ++c)
          for (std::size_t u = 0; u < k; ++u)
            for (std::size_t v = 0; v < k; ++v) {
              const long r = static_cast<long>(i * stride + u) - static_cast<long>(pad);
              const long q = static_cast<long>(j * stride + v) - static_cast<long>(pad);
              if (r < 0 || q < 0 || r >= static_cast<long>(H) || q >= static_cast<long>(W)) continue;
              s += w[((o * cin + c) * k + u) * k + v] * x[(c * H + r) * W + q];
            }
        CHECK(y[(o * OH + i) * OW + j] == doctest::Approx(s).epsilon(1e-13));
      }
}

TEST_CASE("batch norm eval mode uses running statistics") {
  Array x = Array::constant({2, 1}, {1.0, 3.0});
  Array g = Array::constant({1}, {2.0}), b = Array::constant({1}, {0.5});
  BatchNormStats stats{Array::constant({1}, {1.0}), Array::constant({1}, {4.0}), 0.1, 0.0};
  const auto y = batch_norm(x, g, b, stats, false).to_vector();
  CHECK(y[0] == doctest::Approx(0.5));
  CHECK(y[1] == doctest::Approx(2.5));
  CHECK(stats.running_mean[0] == 1.0);

  BatchNormStats train_stats{Array::constant({1}, {0.0}), Array::constant({1}, {1.0}), 0.5, 0.0};
  const auto z = batch_norm(x, Array::constant({1}, {1.0}), Array::constant({1}, {0.0}), train_stats, true).to_vector();
  CHECK(z[0] == doctest::Approx(-1.0));
  CHECK(z[1] == doctest::Approx(1.0));
  CHECK(train_stats.running_mean[0] == doctest::Approx(1.0));  // 0.5*0 + 0.5*2
  CHECK(train_stats.running_var[0] == doctest::Approx(1.5));   // 0.5*1 + 0.5*2 (unbiased)
}

TEST_CASE("parameter set: sorted, unique, selectable") {
  ParameterSet ps;
  ps.add("b.x", {1}, {1.0});
  ps.add("a.y", {2}, {1.0, 2.0}, 0.5);
  ps.add("c.z", {1}, {3.0});
  CHECK_THROWS_AS(ps.add("a.y", {1}, {0.0}), std::invalid_argument);
  CHECK(ps.names() == std::vector<std::string>{"a.y", "b.x", "c.z"});
  CHECK(ps.entry("a.y").lr_multiplier == 0.5);
  CHECK(ps.select({"a.", "c."}).size() == 2);
  CHECK(ps.total_elements() == 4);
}

TEST_CASE("optimizers: one step against hand-computed updates") {
  for (auto kind : {OptimizerKind::Sgd, OptimizerKind::Adam}) {
    ParameterSet ps;
    Array& p = ps.add("w", {2}, {1.0, -2.0});
    OptimizerConfig cfg;
    cfg.kind = kind;
    cfg.lr = 0.1;
    Optimizer opt(cfg);
    squared_norm(p).backward();  // grad = [2, -4]
    opt.step(ps);
    if (kind == OptimizerKind::Sgd) {
      CHECK(p[0] == doctest::Approx(1.0 - 0.1 * 2.0));
      CHECK(p[1] == doctest::Approx(-2.0 + 0.1 * 4.0));
    } else {
      // First bias-corrected Adam step moves each coordinate by lr * sign(g).
      CHECK(p[0] == doctest::Approx(0.9).epsilon(1e-6));
      CHECK(p[1] == doctest::Approx(-1.9).epsilon(1e-6));
    }
    CHECK(opt.state().step == 1);
  }
}

TEST_CASE("optimizers with lr = 0 leave parameters unchanged") {
  for (auto kind : {OptimizerKind::Sgd, OptimizerKind::Adam}) {
    ParameterSet ps;
    Array& p = ps.add("w", {2}, {1.0, -2.0});
    OptimizerConfig cfg;
    cfg.kind = kind;
    cfg.lr = 0.0;
    Optimizer opt(cfg);
    for (int i = 0; i < 3; ++i) {
      ps.zero_grad();
      squared_norm(p).backward();
      opt.step(ps);
    }
    CHECK(p.to_vector() == std::vector<double>{1.0, -2.0});
  }
}
