#pragma once

#include <cmath>
#include <filesystem>
#include <string>
#include <vector>

#include "crnet/array.hpp"
#include "crnet/config.hpp"
#include "crnet/rng.hpp"

namespace testing {

inline std::vector<double> random_values(crnet::Rng& rng, std::size_t n, double scale = 1.0) {
  std::vector<double> v(n);
  for (auto& x : v) x = rng.normal(0.0, scale);
  return v;
}

/// Values bounded away from zero, for ops with a kink there.
inline std::vector<double> away_from_zero(crnet::Rng& rng, std::size_t n) {
  std::vector<double> v(n);
  for (auto& x : v) {
    const double m = 0.1 + rng.uniform();
    x = rng.uniform() < 0.5 ? -m : m;
  }
  return v;
}

inline crnet::Array random_param(crnet::Rng& rng, crnet::Shape shape, double scale = 1.0) {
  const std::size_t n = crnet::shape_size(shape);
  return crnet::Array::parameter(std::move(shape), random_values(rng, n, scale));
}

inline crnet::Array random_constant(crnet::Rng& rng, crnet::Shape shape, double scale = 1.0) {
  const std::size_t n = crnet::shape_size(shape);
  return crnet::Array::constant(std::move(shape), random_values(rng, n, scale));
}

inline std::size_t dim_between(crnet::Rng& rng, std::size_t lo, std::size_t hi) {
  return lo + rng.uniform_index(hi - lo + 1);
}

/// Small model and data: 16x16 grayscale, conv4 of widths {4,4,8,8} (D = 8),
/// 4 bases, 5-way 2-shot with 3 queries per class.
inline crnet::RunConfig tiny_config() {
  crnet::RunConfig c;
  c.synthetic.shape = {1, 16, 16};
  c.synthetic.train_classes = 6;
  c.synthetic.val_classes = 5;
  c.synthetic.test_classes = 5;
  c.synthetic.images_per_class = 12;
  c.embedding.input = c.synthetic.shape;
  c.embedding.widths = {4, 4, 8, 8};
  c.encoder.num_bases = 4;
  c.relation.hidden = 8;
  c.episode.ways = 5;
  c.episode.shots = 2;
  c.episode.queries_per_class = 3;
  c.episode.episodes = 3;
  c.eval.num_tasks = 4;
  c.analysis.metashift_tests = 4;
  c.analysis.metashift_shots = 2;
  c.analysis.fid_tests = 3;
  c.analysis.export_samples_per_class = 3;
  c.analysis.sweep_bases = {2};
  c.pretrain.epochs = 1;
  c.pretrain.batch_size = 16;
  c.seed = 5;
  return c;
}

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    path_ = std::filesystem::temp_directory_path() /
            ("crnet_" + tag + "_" + std::to_string(reinterpret_cast<std::uintptr_t>(this)));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

}  // namespace testing
