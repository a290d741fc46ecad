#include "crnet/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <limits>
#include <stdexcept>

#include "crnet/ops.hpp"

namespace crnet {

DescriptorFn decoded_descriptor_fn(const ClassRegNet& model) {
  return [&model](const Array& images) {
    NoGradGuard no_grad;
    return model.decoded_descriptor(model.embed(images, Mode::Eval)).vector;
  };
}

DescriptorFn prototype_descriptor_fn(const ClassRegNet& model) {
  return [&model](const Array& images) {
    NoGradGuard no_grad;
    return mean_prototype(model.embed(images, Mode::Eval)).vector;
  };
}

std::vector<double> distances_to_mean(const std::vector<std::vector<double>>& descriptors) {
  if (descriptors.empty()) return {};
  const std::size_t D = descriptors.front().size();
  std::vector<double> mu(D, 0.0);
  for (const auto& d : descriptors) {
    if (d.size() != D) throw std::invalid_argument("distances_to_mean: descriptors differ in dimension");
    for (std::size_t j = 0; j < D; ++j) mu[j] += d[j];
  }
  for (auto& m : mu) m /= static_cast<double>(descriptors.size());
  std::vector<double> out;
  out.reserve(descriptors.size());
  for (const auto& d : descriptors) {
    double s = 0.0;
    for (std::size_t j = 0; j < D; ++j) s += (d[j] - mu[j]) * (d[j] - mu[j]);
    out.push_back(std::sqrt(s));
  }
  return out;
}

MetaShiftReport meta_shift(const FewShotDataset& data, std::size_t class_id, std::size_t shots, std::size_t num_tests,
                           const DescriptorFn& descriptor_fn, std::uint64_t seed, DescriptorSource source) {
  if (class_id >= data.num_classes()) throw std::out_of_range("meta_shift: no class " + std::to_string(class_id));
  if (num_tests < 2) throw std::invalid_argument("meta_shift: need at least 2 tests");
  if (shots == 0) throw std::invalid_argument("meta_shift: shots must be positive");
  const std::size_t available = data.num_images(class_id);
  if (available < shots) {
    throw std::invalid_argument("meta_shift: class '" + data.classes[class_id].name + "' has " +
                                std::to_string(available) + " images, need " + std::to_string(shots));
  }
  std::vector<std::vector<double>> descriptors;
  descriptors.reserve(num_tests);
  for (std::size_t t = 0; t < num_tests; ++t) {
    Rng rng = Rng::stream(seed, "metashift", t);
    std::vector<ImageRef> refs;
    for (auto i : rng.sample_without_replacement(available, shots)) refs.emplace_back(class_id, i);
    descriptors.push_back(descriptor_fn(make_batch(data, refs).images).to_vector());
  }
  MetaShiftReport r;
  r.distances = distances_to_mean(descriptors);
  for (double d : r.distances) r.mean += d;
  r.mean /= static_cast<double>(num_tests);
  for (double d : r.distances) r.std += (d - r.mean) * (d - r.mean);
  r.std = std::sqrt(r.std / static_cast<double>(num_tests));
  r.source = source;
  r.class_id = class_id;
  r.num_tests = num_tests;
  r.shots = shots;
  return r;
}

GaussianSummary summarize(const Eigen::MatrixXd& features) {
  if (features.rows() < 2) throw std::invalid_argument("summarize: need at least two samples");
  GaussianSummary s;
  s.count = static_cast<std::size_t>(features.rows());
  s.mean = features.colwise().mean().transpose();
  const Eigen::MatrixXd centered = features.rowwise() - s.mean.transpose();
  s.cov = (centered.transpose() * centered) / static_cast<double>(features.rows() - 1);
  s.cov = 0.5 * (s.cov + s.cov.transpose());
  return s;
}

namespace {

/// Square roots of symmetric eigenvalues; anything at or below the roundoff
/// floor of the largest one counts as zero.
Eigen::VectorXd clamped_roots(const Eigen::VectorXd& eigenvalues) {
  if (eigenvalues.size() == 0) return eigenvalues;
  const double floor = eigenvalues.cwiseAbs().maxCoeff() * static_cast<double>(eigenvalues.size()) *
                       std::numeric_limits<double>::epsilon();
  return eigenvalues.unaryExpr([floor](double v) { return v > floor ? std::sqrt(v) : 0.0; });
}

Eigen::MatrixXd psd_sqrt(const Eigen::MatrixXd& m) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (m + m.transpose()));
  if (es.info() != Eigen::Success) throw NumericError("frechet_distance: eigendecomposition failed");
  return es.eigenvectors() * clamped_roots(es.eigenvalues()).asDiagonal() * es.eigenvectors().transpose();
}

}  // namespace

double frechet_distance(const GaussianSummary& a, const GaussianSummary& b) {
  if (a.mean.size() != b.mean.size() || a.cov.rows() != a.mean.size() || b.cov.rows() != b.mean.size() ||
      a.cov.cols() != a.cov.rows() || b.cov.cols() != b.cov.rows()) {
    throw ShapeError("frechet_distance: summaries of dimension " + std::to_string(a.mean.size()) + " and " +
                     std::to_string(b.mean.size()));
  }
  const Eigen::MatrixXd ra = psd_sqrt(a.cov);
  const Eigen::MatrixXd inner = ra * b.cov * ra;
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (inner + inner.transpose()), Eigen::EigenvaluesOnly);
  if (es.info() != Eigen::Success) throw NumericError("frechet_distance: eigendecomposition failed");
  const double cross = clamped_roots(es.eigenvalues()).sum();
  const double d = (a.mean - b.mean).squaredNorm() + a.cov.trace() + b.cov.trace() - 2.0 * cross;
  if (!std::isfinite(d)) throw NumericError("frechet_distance: non-finite result");
  return std::max(0.0, d);
}

double feature_frechet_distance(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b, double jitter) {
  GaussianSummary sa = summarize(a), sb = summarize(b);
  sa.cov.diagonal().array() += jitter;
  sb.cov.diagonal().array() += jitter;
  return frechet_distance(sa, sb);
}

Eigen::MatrixXd to_matrix(const Array& a) {
  if (a.rank() != 2) throw ShapeError("to_matrix: expected a matrix, got " + shape_string(a.shape()));
  Eigen::MatrixXd m(a.dim(0), a.dim(1));
  for (std::size_t i = 0; i < a.dim(0); ++i)
    for (std::size_t j = 0; j < a.dim(1); ++j) m(i, j) = a.at(i, j);
  return m;
}

std::vector<double> fid_protocol(const FewShotDataset& data, const ClassRegNet& model, std::size_t num_tests,
                                 const EpisodeConfig& episode, std::uint64_t seed, double jitter) {
  if (num_tests == 0) throw std::invalid_argument("fid_protocol: num_tests must be at least 1");
  NoGradGuard no_grad;
  std::vector<double> out;
  out.reserve(num_tests);
  for (std::size_t t = 0; t < num_tests; ++t) {
    Rng rng = Rng::stream(seed, "fid", t);
    const EpisodeTask task = sample_episode(data, episode, rng);
    const Array s = model.embed(make_batch(data, task.support).images, Mode::Eval);
    const Array q = model.embed(make_batch(data, task.query).images, Mode::Eval);
    out.push_back(feature_frechet_distance(to_matrix(s), to_matrix(q), jitter));
  }
  return out;
}

std::vector<EmbeddingRow> export_embeddings(const FewShotDataset& data, const ClassRegNet& model,
                                            std::size_t samples_per_class, std::uint64_t seed) {
  NoGradGuard no_grad;
  std::vector<EmbeddingRow> rows;
  for (std::size_t c = 0; c < data.num_classes(); ++c) {
    const std::size_t n = std::min(samples_per_class, data.num_images(c));
    if (n == 0) continue;
    Rng rng = Rng::stream(seed, "export", c);
    std::vector<ImageRef> refs;
    for (auto i : rng.sample_without_replacement(data.num_images(c), n)) refs.emplace_back(c, i);
    const Array f = model.embed(make_batch(data, refs).images, Mode::Eval);
    for (std::size_t i = 0; i < n; ++i) {
      EmbeddingRow row{data.classes[c].name, {}};
      for (std::size_t j = 0; j < f.dim(1); ++j) row.features.push_back(f.at(i, j));
      rows.push_back(std::move(row));
    }
  }
  return rows;
}

void write_csv_preamble(std::ostream& out, const std::map<std::string, std::string>& meta, const std::string& header) {
  for (const auto& [k, v] : meta) out << "# " << k << "=" << v << "\n";
  out << header << "\n";
}

void write_metashift_csv(std::ostream& out, const MetaShiftReport& report,
                         const std::map<std::string, std::string>& meta) {
  auto m = meta;
  m["source"] = to_string(report.source);
  m["class_id"] = std::to_string(report.class_id);
  m["shots"] = std::to_string(report.shots);
  m["num_tests"] = std::to_string(report.num_tests);
  write_csv_preamble(out, m, "test_index,distance");
  out << std::setprecision(17);
  for (std::size_t t = 0; t < report.distances.size(); ++t) out << t << "," << report.distances[t] << "\n";
}

void write_fid_csv(std::ostream& out, const std::vector<double>& fid, const std::map<std::string, std::string>& meta) {
  write_csv_preamble(out, meta, "test_index,fid");
  out << std::setprecision(17);
  for (std::size_t t = 0; t < fid.size(); ++t) out << t << "," << fid[t] << "\n";
}

void write_embeddings_csv(std::ostream& out, const std::vector<EmbeddingRow>& rows, std::size_t feature_dim,
                          const std::map<std::string, std::string>& meta) {
  std::string header = "class";
  for (std::size_t j = 0; j < feature_dim; ++j) header += ",feat_" + std::to_string(j);
  write_csv_preamble(out, meta, header);
  out << std::setprecision(17);
  for (const auto& r : rows) {
    if (r.features.size() != feature_dim) throw std::invalid_argument("write_embeddings_csv: row width mismatch");
    out << r.class_name;
    for (double v : r.features) out << "," << v;
    out << "\n";
  }
}

}  // namespace crnet
