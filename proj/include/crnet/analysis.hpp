#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <ostream>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "crnet/class_codec.hpp"
#include "crnet/dataset.hpp"
#include "crnet/episode.hpp"
#include "crnet/model.hpp"

namespace crnet {

/// Maps the images of one class [C, channels, H, W] to a descriptor [D].
using DescriptorFn = std::function<Array(const Array& images)>;

DescriptorFn decoded_descriptor_fn(const ClassRegNet& model);
DescriptorFn prototype_descriptor_fn(const ClassRegNet& model);

struct MetaShiftReport {
  std::vector<double> distances;  // one per test, to the mean descriptor
  double mean = 0.0;
  double std = 0.0;  // population std of the distances
  DescriptorSource source = DescriptorSource::Decoded;
  std::size_t class_id = 0;
  std::size_t num_tests = 0;
  std::size_t shots = 0;
};

/// Euclidean distance of each row to the arithmetic mean row.
std::vector<double> distances_to_mean(const std::vector<std::vector<double>>& descriptors);

/// Draws `shots` images of `class_id` without replacement for each of
/// `num_tests` tests (test t uses Rng::stream(seed, "metashift", t), so two
/// sources with the same seed see the same supports), builds a descriptor
/// per test and reports each one's distance to their mean.
MetaShiftReport meta_shift(const FewShotDataset& data, std::size_t class_id, std::size_t shots, std::size_t num_tests,
                           const DescriptorFn& descriptor_fn, std::uint64_t seed,
                           DescriptorSource source = DescriptorSource::Decoded);

struct GaussianSummary {
  Eigen::VectorXd mean;
  Eigen::MatrixXd cov;  // unbiased (n-1) estimate
  std::size_t count = 0;
};

/// Rows of `features` are samples. Needs at least two rows.
GaussianSummary summarize(const Eigen::MatrixXd& features);

/// |mu_a - mu_b|^2 + Tr(S_a + S_b - 2 (S_a^1/2 S_b S_a^1/2)^1/2), square roots
/// taken by symmetric eigendecomposition with negative eigenvalues clamped to
/// zero. Clamped at 0 from below.
double frechet_distance(const GaussianSummary& a, const GaussianSummary& b);

/// Frechet distance between two feature sets, adding `jitter` to both
/// covariance diagonals.
double feature_frechet_distance(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b, double jitter = 1e-6);

/// Per test t (episode from Rng::stream(seed, "fid", t)): eval-mode features of
/// the support and query images, then their Frechet distance.
std::vector<double> fid_protocol(const FewShotDataset& data, const ClassRegNet& model, std::size_t num_tests,
                                 const EpisodeConfig& episode, std::uint64_t seed, double jitter = 1e-6);

struct EmbeddingRow {
  std::string class_name;
  std::vector<double> features;
};

/// `samples_per_class` random images of every class (all of them if the
/// class is smaller), eval-mode features.
std::vector<EmbeddingRow> export_embeddings(const FewShotDataset& data, const ClassRegNet& model,
                                            std::size_t samples_per_class, std::uint64_t seed);

Eigen::MatrixXd to_matrix(const Array& a);

/// `#`-prefixed metadata lines then the CSV header.
void write_csv_preamble(std::ostream& out, const std::map<std::string, std::string>& meta, const std::string& header);
void write_metashift_csv(std::ostream& out, const MetaShiftReport& report, const std::map<std::string, std::string>& meta);
void write_fid_csv(std::ostream& out, const std::vector<double>& fid, const std::map<std::string, std::string>& meta);
void write_embeddings_csv(std::ostream& out, const std::vector<EmbeddingRow>& rows, std::size_t feature_dim,
                          const std::map<std::string, std::string>& meta);

}  // namespace crnet
