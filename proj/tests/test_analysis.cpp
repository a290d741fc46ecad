#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <map>
#include <sstream>

#include <Eigen/Eigenvalues>

#include "crnet/analysis.hpp"
#include "crnet/checkpoint.hpp"
#include "crnet/ops.hpp"
#include "crnet/trainer.hpp"
#include "support.hpp"

using namespace crnet;

namespace {

Eigen::MatrixXd random_matrix(Rng& rng, Eigen::Index rows, Eigen::Index cols, double scale = 1.0) {
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i)
    for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = rng.normal(0.0, scale);
  return m;
}

GaussianSummary random_summary(Rng& rng, Eigen::Index d) {
  GaussianSummary s;
  s.mean = random_matrix(rng, d, 1);
  const Eigen::MatrixXd a = random_matrix(rng, d, d);
  s.cov = a * a.transpose() / double(d);
  s.count = 10;
  return s;
}

/// Trace term through the eigenvalues of the (non-symmetric) product S_a S_b.
double general_eigen_fid(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b, double jitter) {
  auto stats = [&](const Eigen::MatrixXd& x, Eigen::VectorXd& mu, Eigen::MatrixXd& cov) {
    mu = x.colwise().mean().transpose();
    const Eigen::MatrixXd c = x.rowwise() - mu.transpose();
    cov = c.transpose() * c / double(x.rows() - 1);
    cov.diagonal().array() += jitter;
  };
  Eigen::VectorXd ma, mb;
  Eigen::MatrixXd sa, sb;
  stats(a, ma, sa);
  stats(b, mb, sb);
  Eigen::EigenSolver<Eigen::MatrixXd> es(sa * sb);
  double tr = 0;
  for (Eigen::Index i = 0; i < es.eigenvalues().size(); ++i) tr += std::sqrt(std::max(0.0, es.eigenvalues()[i].real()));
  return (ma - mb).squaredNorm() + sa.trace() + sb.trace() - 2.0 * tr;
}

/// Features rotated onto their own principal axes: sample covariance becomes diagonal.
Eigen::MatrixXd decorrelate(const Eigen::MatrixXd& x) {
  const Eigen::RowVectorXd mu = x.colwise().mean();
  const Eigen::MatrixXd c = x.rowwise() - mu;
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(c.transpose() * c);
  return (c * es.eigenvectors()).rowwise() + mu * es.eigenvectors();
}

struct Trained {
  RunConfig cfg = testing::tiny_config();
  DatasetBundle data;
  TrainState state;
  Trained() : data(make_synthetic_bundle(cfg.synthetic)), state(initial_state(cfg)) {
    TrainConfig tc;
    tc.episode = cfg.episode;
    tc.episode.episodes = 20;
    tc.weights = cfg.loss;
    train(data.train, nullptr, tc, state);
  }
};

/// Non-comment lines after the header, split on commas.
std::vector<std::vector<std::string>> read_csv_rows(const std::string& text, std::string* header = nullptr) {
  std::istringstream in(text);
  std::string line;
  bool seen_header = false;
  std::vector<std::vector<std::string>> rows;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    if (!seen_header) {
      seen_header = true;
      if (header) *header = line;
      continue;
    }
    std::vector<std::string> cells;
    std::istringstream ls(line);
    std::string cell;
    while (std::getline(ls, cell, ',')) cells.push_back(cell);
    rows.push_back(cells);
  }
  return rows;
}

}  // namespace

TEST_CASE("meta-shift on identical images gives zero distances") {
  RunConfig cfg = testing::tiny_config();
  cfg.synthetic.noise = 0.0;
  const DatasetBundle data = make_synthetic_bundle(cfg.synthetic);
  const ClassRegNet model(cfg.model(), 1);
  for (auto fn : {decoded_descriptor_fn(model), prototype_descriptor_fn(model)}) {
    const auto r = meta_shift(data.test, 0, 3, 20, fn, 2);
    for (double d : r.distances) CHECK(std::abs(d) < 1e-12);
    CHECK(r.mean < 1e-12);
  }
}

TEST_CASE("meta-shift with two tests gives equal distances") {
  RunConfig cfg = testing::tiny_config();
  const DatasetBundle data = make_synthetic_bundle(cfg.synthetic);
  const ClassRegNet model(cfg.model(), 1);
  const auto r = meta_shift(data.test, 1, 2, 2, prototype_descriptor_fn(model), 3, DescriptorSource::MeanPrototype);
  REQUIRE(r.distances.size() == 2);
  CHECK(r.distances[0] == doctest::Approx(r.distances[1]).epsilon(1e-12));
  CHECK(r.source == DescriptorSource::MeanPrototype);
  CHECK(r.std == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("meta-shift argument errors") {
  RunConfig cfg = testing::tiny_config();
  const DatasetBundle data = make_synthetic_bundle(cfg.synthetic);
  const ClassRegNet model(cfg.model(), 1);
  const auto fn = prototype_descriptor_fn(model);
  CHECK_THROWS_AS(meta_shift(data.test, 0, 2, 1, fn, 1), std::invalid_argument);
  CHECK_THROWS_AS(meta_shift(data.test, 0, 0, 4, fn, 1), std::invalid_argument);
  try {
    meta_shift(data.test, 2, 50, 4, fn, 1);
    FAIL("expected std::invalid_argument");
  } catch (const std::invalid_argument& e) {
    CHECK(std::string(e.what()).find(data.test.classes[2].name) != std::string::npos);
  }
}

TEST_CASE("meta-shift over 500 tests against a two-pass oracle, and rotation invariance") {
  Trained t;
  const DescriptorFn base = decoded_descriptor_fn(t.state.model);
  std::vector<std::vector<double>> seen;
  const DescriptorFn recording = [&](const Array& images) {
    Array d = base(images);
    seen.push_back(d.to_vector());
    return d;
  };
  const auto r = meta_shift(t.data.test, 0, 5, 500, recording, 11);
  REQUIRE(seen.size() == 500);
  REQUIRE(r.distances.size() == 500);
  CHECK(r.num_tests == 500);
  CHECK(r.shots == 5);

  const std::size_t D = seen[0].size();
  std::vector<double> mu(D, 0.0);
  for (const auto& v : seen)
    for (std::size_t j = 0; j < D; ++j) mu[j] += v[j];
  for (auto& m : mu) m /= 500.0;
  double mean = 0;
  std::vector<double> dist(500);
  for (std::size_t i = 0; i < 500; ++i) {
    double s = 0;
    for (std::size_t j = 0; j < D; ++j) s += (seen[i][j] - mu[j]) * (seen[i][j] - mu[j]);
    dist[i] = std::sqrt(s);
    mean += dist[i] / 500.0;
    CHECK(std::abs(r.distances[i] - dist[i]) <= 1e-12);
  }
  double var = 0;
  for (double d : dist) var += (d - mean) * (d - mean) / 500.0;
  CHECK(std::abs(r.mean - mean) <= 1e-12);
  CHECK(std::abs(r.std - std::sqrt(var)) <= 1e-12);
  CHECK(r.mean > 0.0);

  Rng rng(12);
  const Eigen::HouseholderQR<Eigen::MatrixXd> qr(random_matrix(rng, Eigen::Index(D), Eigen::Index(D)));
  const Eigen::MatrixXd Q = qr.householderQ();
  const DescriptorFn rotated = [&](const Array& images) {
    const auto v = base(images).to_vector();
    const Eigen::VectorXd x = Q * Eigen::Map<const Eigen::VectorXd>(v.data(), Eigen::Index(D));
    return Array::constant({D}, std::vector<double>(x.data(), x.data() + D));
  };
  const auto rr = meta_shift(t.data.test, 0, 5, 500, rotated, 11);
  for (std::size_t i = 0; i < 500; ++i) CHECK(std::abs(rr.distances[i] - r.distances[i]) <= 1e-9);
}

TEST_CASE("frechet distance closed forms") {
  Rng rng(1);
  for (int t = 0; t < 50; ++t) {
    const auto a = random_summary(rng, 5);
    CHECK(std::abs(frechet_distance(a, a)) <= 1e-8);
  }

  GaussianSummary za, zb;
  za.mean = Eigen::Vector3d(1, -2, 0.5);
  zb.mean = Eigen::Vector3d(-1, 0, 2.5);
  za.cov = zb.cov = Eigen::Matrix3d::Zero();
  CHECK(std::abs(frechet_distance(za, zb) - (za.mean - zb.mean).squaredNorm()) <= 1e-9);

  GaussianSummary da, db;
  da.mean = db.mean = Eigen::Vector2d(0.3, 0.7);
  da.cov = Eigen::Vector2d(1, 4).asDiagonal();
  db.cov = Eigen::Vector2d(9, 1).asDiagonal();
  const double oracle = (1 + 9 - 2 * std::sqrt(1.0 * 9.0)) + (4 + 1 - 2 * std::sqrt(4.0 * 1.0));
  CHECK(oracle == 5.0);
  CHECK(std::abs(frechet_distance(da, db) - oracle) <= 1e-9);

  GaussianSummary bad = random_summary(rng, 4);
  CHECK_THROWS_AS(frechet_distance(da, bad), ShapeError);
}

TEST_CASE("frechet distance is non-negative and symmetric (200 pairs)") {
  Rng rng(2);
  for (int t = 0; t < 200; ++t) {
    const Eigen::Index d = Eigen::Index(testing::dim_between(rng, 1, 8));
    auto a = random_summary(rng, d), b = random_summary(rng, d);
    if (t % 4 == 0) {
      // Rank-deficient covariance.
      const Eigen::MatrixXd v = random_matrix(rng, d, 1);
      b.cov = v * v.transpose();
    }
    const double ab = frechet_distance(a, b), ba = frechet_distance(b, a);
    CHECK(ab >= 0.0);
    CHECK(std::abs(ab - ba) <= 1e-8 * std::max(1.0, ab));
  }
}

TEST_CASE("summary uses the unbiased covariance") {
  Rng rng(3);
  const Eigen::MatrixXd x = random_matrix(rng, 75, 4);
  const GaussianSummary s = summarize(x);
  CHECK(s.count == 75);
  for (Eigen::Index i = 0; i < 4; ++i) {
    double m = 0;
    for (Eigen::Index r = 0; r < 75; ++r) m += x(r, i);
    m /= 75.0;
    CHECK(std::abs(s.mean(i) - m) <= 1e-12);
  }
  for (Eigen::Index i = 0; i < 4; ++i)
    for (Eigen::Index j = 0; j < 4; ++j) {
      double c = 0;
      for (Eigen::Index r = 0; r < 75; ++r) c += (x(r, i) - s.mean(i)) * (x(r, j) - s.mean(j));
      CHECK(std::abs(s.cov(i, j) - c / 74.0) <= 1e-12);
    }
  CHECK_THROWS_AS(summarize(random_matrix(rng, 1, 4)), std::invalid_argument);
}

TEST_CASE("feature sets with orthogonal centred columns match the diagonal closed form") {
  Rng rng(4);
  for (int t = 0; t < 20; ++t) {
    const Eigen::Index n = 30, d = 5;
    auto diag_features = [&](Eigen::VectorXd& var, Eigen::VectorXd& mu) {
      Eigen::MatrixXd c = random_matrix(rng, n, d);
      c.rowwise() -= c.colwise().mean();
      const Eigen::HouseholderQR<Eigen::MatrixXd> qr(c);
      Eigen::MatrixXd q = qr.householderQ() * Eigen::MatrixXd::Identity(n, d);
      q.rowwise() -= q.colwise().mean();  // orthogonal to the ones vector already; keeps exactness
      Eigen::VectorXd scale(d);
      for (Eigen::Index j = 0; j < d; ++j) scale(j) = 0.5 + 3.0 * rng.uniform();
      mu = random_matrix(rng, d, 1);
      const Eigen::MatrixXd x = (q * scale.asDiagonal()).rowwise() + mu.transpose();
      var.resize(d);
      for (Eigen::Index j = 0; j < d; ++j) var(j) = (q.col(j) * scale(j)).squaredNorm() / double(n - 1);
      return x;
    };
    Eigen::VectorXd va, vb, ma, mb;
    const Eigen::MatrixXd a = diag_features(va, ma), b = diag_features(vb, mb);
    double oracle = (ma - mb).squaredNorm();
    for (Eigen::Index j = 0; j < d; ++j) oracle += std::pow(std::sqrt(va(j)) - std::sqrt(vb(j)), 2);
    CHECK(std::abs(feature_frechet_distance(a, b, 0.0) - oracle) <= 1e-9);
  }
}

TEST_CASE("fid protocol: identical sets, CSV shape and independent recomputation") {
  Trained t;
  const ClassRegNet& model = t.state.model;
  EpisodeConfig ec = t.cfg.episode;

  Rng rng(5);
  const EpisodeTask task = sample_episode(t.data.test, ec, rng);
  NoGradGuard ng;
  const Eigen::MatrixXd s = to_matrix(model.embed(make_batch(t.data.test, task.support).images, Mode::Eval));
  CHECK(feature_frechet_distance(s, s) <= 1e-6);

  const auto fid = fid_protocol(t.data.test, model, 500, ec, 6);
  REQUIRE(fid.size() == 500);
  for (double f : fid) CHECK(f >= 0.0);
  std::ostringstream csv;
  write_fid_csv(csv, fid, {{"jitter", "1e-06"}, {"seed", "6"}});
  std::string header;
  const auto rows = read_csv_rows(csv.str(), &header);
  CHECK(header == "test_index,fid");
  REQUIRE(rows.size() == 500);
  for (std::size_t i = 0; i < 500; ++i) {
    CHECK(std::stoul(rows[i][0]) == i);
    CHECK(std::stod(rows[i][1]) == doctest::Approx(fid[i]).epsilon(1e-15));
  }

  // Test 0 again, by hand: same episode stream, a different square-root path.
  Rng r0 = Rng::stream(6, "fid", 0);
  const EpisodeTask t0 = sample_episode(t.data.test, ec, r0);
  const Eigen::MatrixXd a = to_matrix(model.embed(make_batch(t.data.test, t0.support).images, Mode::Eval));
  const Eigen::MatrixXd b = to_matrix(model.embed(make_batch(t.data.test, t0.query).images, Mode::Eval));
  CHECK(std::abs(general_eigen_fid(a, b, 1e-6) - fid[0]) <= 1e-6);

  // Whitened copies: each set rotated onto its principal axes, where the
  // covariances are diagonal and the closed form applies.
  const Eigen::MatrixXd aw = decorrelate(a), bw = decorrelate(b);
  const GaussianSummary sa = summarize(aw), sb = summarize(bw);
  double oracle = (sa.mean - sb.mean).squaredNorm();
  for (Eigen::Index j = 0; j < sa.mean.size(); ++j)
    oracle += std::pow(std::sqrt(sa.cov(j, j) + 1e-6) - std::sqrt(sb.cov(j, j) + 1e-6), 2);
  CHECK(std::abs(feature_frechet_distance(aw, bw, 1e-6) - oracle) <= 1e-6);
}

TEST_CASE("embedding export row counts") {
  RunConfig cfg = testing::tiny_config();
  const FewShotDataset data = make_synthetic_dataset(20, 50, cfg.synthetic.shape, 0.6, 0.05, 7);
  const ClassRegNet model(cfg.model(), 8);
  const auto rows = export_embeddings(data, model, 50, 9);
  CHECK(rows.size() == 1000);

  std::ostringstream csv;
  write_embeddings_csv(csv, rows, model.feature_dim(), {{"seed", "9"}});
  std::string header;
  const auto parsed = read_csv_rows(csv.str(), &header);
  CHECK(header.rfind("class,feat_0,", 0) == 0);
  REQUIRE(parsed.size() == 1000);
  std::map<std::string, std::size_t> per_class;
  for (const auto& r : parsed) {
    CHECK(r.size() == model.feature_dim() + 1);
    ++per_class[r[0]];
  }
  CHECK(per_class.size() == 20);
  for (const auto& [name, n] : per_class) CHECK(n == 50);

  const auto again = export_embeddings(data, model, 50, 9);
  for (std::size_t i = 0; i < rows.size(); ++i) CHECK(again[i].features == rows[i].features);

  std::ostringstream empty;
  write_embeddings_csv(empty, export_embeddings(data, model, 0, 9), model.feature_dim(), {});
  std::string h;
  CHECK(read_csv_rows(empty.str(), &h).empty());
  CHECK(h.rfind("class,", 0) == 0);
}

TEST_CASE("meta-shift CSV re-parses to the same statistics") {
  Trained t;
  const auto r = meta_shift(t.data.test, 1, 2, 40, decoded_descriptor_fn(t.state.model), 13);
  std::ostringstream csv;
  write_metashift_csv(csv, r, {{"seed", "13"}});
  std::string header;
  const auto rows = read_csv_rows(csv.str(), &header);
  CHECK(header == "test_index,distance");
  REQUIRE(rows.size() == 40);
  double mean = 0;
  for (const auto& row : rows) mean += std::stod(row[1]) / 40.0;
  CHECK(std::abs(mean - r.mean) <= 1e-12);
  CHECK(csv.str().find("# source=decoded") != std::string::npos);
}
