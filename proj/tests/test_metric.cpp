#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "crnet/config.hpp"
#include "crnet/grad_check.hpp"
#include "crnet/metric.hpp"
#include "crnet/ops.hpp"
#include "support.hpp"

using namespace crnet;

namespace {

/// Query at the origin and descriptors on the first axis so that the squared
/// distances are exactly `d`.
std::pair<Array, Array> with_distances(const std::vector<double>& d) {
  std::vector<double> c(d.size() * 2, 0.0);
  for (std::size_t k = 0; k < d.size(); ++k) c[2 * k] = std::sqrt(d[k]);
  return {Array::constant({2}, {0.0, 0.0}), Array::constant({d.size(), 2}, c)};
}

RelationParams random_relation(Rng& rng, std::size_t d, std::size_t h) {
  ParameterSet ps;
  RelationConfig rc;
  rc.hidden = h;
  return RelationParams::create(rc, d, ps, rng);
}

/// -log p_E(y=k|q) from explicitly normalised probabilities.
double neg_log_pe(const std::vector<double>& q, const std::vector<std::vector<double>>& c, std::size_t k) {
  std::vector<double> d(c.size());
  for (std::size_t j = 0; j < c.size(); ++j) {
    d[j] = 0;
    for (std::size_t i = 0; i < q.size(); ++i) d[j] += (q[i] - c[j][i]) * (q[i] - c[j][i]);
  }
  const double dmin = *std::min_element(d.begin(), d.end());
  double z = 0;
  for (double x : d) z += std::exp(-(x - dmin));
  return -std::log(std::exp(-(d[k] - dmin)) / z);
}

}  // namespace

TEST_CASE("single class gives exactly zero for both losses") {
  Rng rng(1);
  for (int t = 0; t < 50; ++t) {
    const Array q = testing::random_constant(rng, {3}, 5.0);
    const Array c = testing::random_constant(rng, {1, 3}, 5.0);
    CHECK(euclidean_loss(q, c, 0).item() == 0.0);
    CHECK(relation_loss(testing::random_constant(rng, {1}, 10.0), 0).item() == 0.0);
  }
}

TEST_CASE("equal distances or scores give log K") {
  for (std::size_t K : {2u, 3u, 5u, 20u}) {
    const auto [q, c] = with_distances(std::vector<double>(K, 2.25));
    CHECK(std::abs(euclidean_loss(q, c, K - 1).item() - std::log(double(K))) <= 1e-12);
    CHECK(std::abs(relation_loss(Array::full({K}, 3.7), 0).item() - std::log(double(K))) <= 1e-12);
  }
}

TEST_CASE("worked loss values") {
  const auto [q, c] = with_distances({0.0, 1.0});
  const double le = euclidean_loss(q, c, 0).item();
  const double le_oracle = std::log(1.0 + std::exp(-1.0));
  CHECK(std::abs(le - le_oracle) <= 1e-9);
  CHECK(le == doctest::Approx(0.31326).epsilon(1e-5));

  const double lr = relation_loss(Array::constant({2}, {2.0, 0.0}), 0).item();
  const double lr_oracle = -2.0 + std::log(std::exp(2.0) + 1.0);
  CHECK(std::abs(lr - lr_oracle) <= 1e-9);
  CHECK(lr == doctest::Approx(0.12693).epsilon(1e-4));

  LossWeights w;
  w.euclidean = 0.5;
  w.relation = 1.0;
  w.regularization = 1.0;
  const auto t = total_loss(Array::scalar(le), Array::scalar(lr), {}, w);
  const double total_oracle = 0.5 * le_oracle + lr_oracle;
  CHECK(std::abs(t.breakdown.total - total_oracle) <= 1e-9);
  CHECK(t.breakdown.total == doctest::Approx(0.28356).epsilon(1e-4));

  const auto zero = total_loss(Array::scalar(0.0), Array::scalar(0.0), {Array::zeros({3, 2})}, w);
  CHECK(zero.breakdown.total == 0.0);
}

TEST_CASE("total loss includes the squared parameter norm") {
  LossWeights w;
  w.euclidean = 0.25;
  w.relation = 2.0;
  w.regularization = 0.1;
  const auto t = total_loss(Array::scalar(1.0), Array::scalar(3.0),
                            {Array::constant({2}, {1, 2}), Array::constant({1}, {-3})}, w);
  CHECK(t.breakdown.regularization == 14.0);
  CHECK(t.breakdown.total == doctest::Approx(0.25 + 6.0 + 1.4).epsilon(1e-15));
}

TEST_CASE("euclidean loss equals -log p_E") {
  Rng rng(2);
  for (int t = 0; t < 300; ++t) {
    const std::size_t K = testing::dim_between(rng, 1, 6), D = testing::dim_between(rng, 1, 5);
    const Array q = testing::random_constant(rng, {D}, 2.0);
    const Array c = testing::random_constant(rng, {K, D}, 2.0);
    const std::size_t k = rng.uniform_index(K);
    std::vector<std::vector<double>> cv(K, std::vector<double>(D));
    for (std::size_t i = 0; i < K; ++i)
      for (std::size_t j = 0; j < D; ++j) cv[i][j] = c.at(i, j);
    const double oracle = neg_log_pe(q.to_vector(), cv, k);
    const double got = euclidean_loss(q, c, k).item();
    const double via_pe = -std::log(euclidean_probabilities(reshape(q, {1, D}), c).at(0, k));
    CHECK(std::abs(got - oracle) <= 1e-12 * std::max(1.0, std::abs(oracle)));
    CHECK(std::abs(got - via_pe) <= 1e-12 * std::max(1.0, std::abs(oracle)));
  }
}

TEST_CASE("losses are invariant to a common shift") {
  Rng rng(3);
  for (int t = 0; t < 200; ++t) {
    const std::size_t K = testing::dim_between(rng, 2, 6);
    const Array s = testing::random_constant(rng, {K}, 3.0);
    const double shift = rng.normal(0.0, 20.0);
    const std::size_t k = rng.uniform_index(K);
    const double a = relation_loss(s, k).item();
    const double b = relation_loss(add_scalar(s, shift), k).item();
    CHECK(std::abs(a - b) <= 1e-12 * std::max(1.0, a) + 1e-12 * std::abs(shift));

    // A shared offset on every distance: lift all descriptors off the query
    // along a new orthogonal axis.
    const std::size_t D = 3;
    const Array q = testing::random_constant(rng, {D});
    const Array c = testing::random_constant(rng, {K, D});
    const double lift = std::abs(shift);
    std::vector<double> q2 = q.to_vector(), c2;
    q2.push_back(0.0);
    for (std::size_t i = 0; i < K; ++i) {
      for (std::size_t j = 0; j < D; ++j) c2.push_back(c.at(i, j));
      c2.push_back(std::sqrt(lift));
    }
    const double e1 = euclidean_loss(q, c, k).item();
    const double e2 = euclidean_loss(Array::constant({D + 1}, q2), Array::constant({K, D + 1}, c2), k).item();
    CHECK(std::abs(e1 - e2) <= 1e-12 * std::max(1.0, lift));
  }
}

TEST_CASE("decision consistency and bounds") {
  Rng rng(4);
  for (int t = 0; t < 200; ++t) {
    const std::size_t K = testing::dim_between(rng, 2, 6), D = 4, M = 5;
    const Array q = testing::random_constant(rng, {M, D});
    const Array c = testing::random_constant(rng, {K, D});
    const auto by_dist = argmin_rows(squared_distances(q, c));
    const Array p = euclidean_probabilities(q, c);
    CHECK(argmax_rows(p) == by_dist);

    std::vector<std::size_t> labels(M);
    for (auto& l : labels) l = rng.uniform_index(K);
    const auto le = euclidean_losses(q, c, labels).to_vector();
    const Array s = testing::random_constant(rng, {M, K}, 3.0);
    const auto lr = relation_losses(s, labels).to_vector();
    const Array d = squared_distances(q, c);
    for (std::size_t i = 0; i < M; ++i) {
      double dmin = INFINITY, smax = -INFINITY;
      for (std::size_t k = 0; k < K; ++k) dmin = std::min(dmin, d.at(i, k)), smax = std::max(smax, s.at(i, k));
      CHECK(le[i] >= 0.0);
      CHECK(lr[i] >= 0.0);
      CHECK(le[i] <= std::log(double(K)) + (d.at(i, labels[i]) - dmin) + 1e-12);
      CHECK(lr[i] <= std::log(double(K)) + (smax - s.at(i, labels[i])) + 1e-12);
    }
  }
}

TEST_CASE("loss argument errors") {
  CHECK_THROWS_AS(euclidean_loss(Array::zeros({2}), Array::zeros({0, 2}), 0), std::invalid_argument);
  CHECK_THROWS_AS(euclidean_loss(Array::zeros({2}), Array::zeros({2, 2}), 2), std::out_of_range);
  CHECK_THROWS_AS(relation_loss(Array::zeros({3}), 3), std::out_of_range);
  LossWeights w;
  w.euclidean = -1;
  CHECK_THROWS_AS(w.validate(), std::invalid_argument);
  CHECK_THROWS_AS(query_reduction_from_string("max"), std::invalid_argument);
}

TEST_CASE("relation scores: zero last layer, duplicated descriptors") {
  Rng rng(5);
  RelationParams p = random_relation(rng, 3, 6);
  const Array q = testing::random_constant(rng, {4, 3});
  const Array c = testing::random_constant(rng, {2, 3});
  const Array dup = concat({c, take_rows(c, std::vector<std::size_t>{0})}, 0);
  const Array s = relation_scores(q, dup, p);
  REQUIRE(s.shape() == Shape{4, 3});
  for (std::size_t i = 0; i < 4; ++i) CHECK(s.at(i, 0) == s.at(i, 2));

  std::fill(p.w3.mutable_values().begin(), p.w3.mutable_values().end(), 0.0);
  std::fill(p.b3.mutable_values().begin(), p.b3.mutable_values().end(), 0.0);
  for (double v : relation_scores(q, c, p).to_vector()) CHECK(v == 0.0);
  CHECK_THROWS_AS(relation_scores(Array::zeros({1, 2}), c, p), ShapeError);
}

TEST_CASE("relation scores with a hand-set comparator") {
  // D = 1, hidden 2. Layer 1 passes q and c through (both positive), layer 2
  // is the identity, layer 3 scores 2q - c + 0.5.
  RelationParams p;
  p.w1 = Array::constant({2, 2}, {1, 0, 0, 1});
  p.b1 = Array::constant({2}, {0, 0});
  p.w2 = Array::constant({2, 2}, {1, 0, 0, 1});
  p.b2 = Array::constant({2}, {0, 0});
  p.w3 = Array::constant({2, 1}, {2, -1});
  p.b3 = Array::constant({1}, {0.5});
  const std::vector<double> q{1.0, 3.0}, c{0.5, 2.0};
  const Array s = relation_scores(Array::constant({2, 1}, q), Array::constant({2, 1}, c), p);
  for (std::size_t i = 0; i < 2; ++i)
    for (std::size_t k = 0; k < 2; ++k) CHECK(s.at(i, k) == 2 * q[i] - c[k] + 0.5);
}

TEST_CASE("total loss gradient over encoder-free toy Theta") {
  Rng rng(6);
  ParameterSet ps;
  RelationConfig rc;
  rc.hidden = 5;
  RelationParams rel = RelationParams::create(rc, 3, ps, rng);
  Array desc = ps.add("decoder.descriptors", {2, 3}, testing::random_values(rng, 6));
  const Array q = testing::random_constant(rng, {4, 3});
  const std::vector<std::size_t> labels{0, 1, 1, 0};
  LossWeights w;
  w.regularization = 0.3;
  const auto r = gradient_check(
      [&] {
        Array le = sum(euclidean_losses(q, desc, labels));
        Array lr = sum(relation_losses(relation_scores(q, desc, rel), labels));
        std::vector<Array> theta;
        for (const auto& [name, e] : ps) theta.push_back(e.value);
        return total_loss(le, lr, theta, w).total;
      },
      ps);
  CAPTURE(r.worst_param);
  CHECK(r.passed);
}

TEST_CASE("reference training table values") {
  const RunConfig res = reference_config(EmbeddingVariant::ResidualMini);
  CHECK(res.loss.euclidean == 1.0 / 8.0);
  CHECK(res.loss.relation == 1.0);
  CHECK(res.loss.regularization == 1.0);
  CHECK(res.encoder.num_bases == 16);
  CHECK(res.optimizer.lr == 1e-3);
  CHECK(res.pretrain.lr == 1e-4);
  CHECK(res.optimizer.kind == OptimizerKind::Sgd);
  CHECK(res.embedding.input == ImageShape{3, 80, 80});

  const RunConfig conv = reference_config(EmbeddingVariant::Conv4);
  CHECK(conv.loss.euclidean == 0.5);
  CHECK(conv.loss.relation == 1.0);
  CHECK(conv.loss.regularization == 1.0);
  CHECK(conv.encoder.num_bases == 8);
  CHECK(conv.optimizer.lr == 1e-3);
  CHECK(conv.pretrain.lr == 1e-4);
  CHECK(conv.optimizer.kind == OptimizerKind::Adam);
  CHECK(conv.embedding.input == ImageShape{3, 84, 84});
}
