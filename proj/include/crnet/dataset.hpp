#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "crnet/array.hpp"

namespace crnet {

struct ImageShape {
  std::size_t channels = 1;
  std::size_t height = 32;
  std::size_t width = 32;
  std::size_t size() const { return channels * height * width; }
  bool operator==(const ImageShape&) const = default;
};

enum class Split { Train, Val, Test };
std::string to_string(Split split);
Split split_from_string(const std::string& s);

struct ClassImages {
  std::string name;
  /// Each image is channels*height*width values in [0,1], channel-major.
  std::vector<std::vector<double>> images;
};

/// One split of a few-shot dataset: a list of classes, each with its images.
struct FewShotDataset {
  Split split = Split::Train;
  ImageShape shape;
  std::vector<ClassImages> classes;

  std::size_t num_classes() const { return classes.size(); }
  std::size_t num_images(std::size_t cls) const { return classes.at(cls).images.size(); }
  std::size_t total_images() const;
};

/// (class index, image index) into a FewShotDataset.
using ImageRef = std::pair<std::size_t, std::size_t>;

struct ImageBatch {
  Array images;  // [B, channels, H, W]
  std::vector<std::size_t> labels;
};

/// Stacks the referenced images into one [B,C,H,W] constant; labels are the
/// class indices of the refs.
ImageBatch make_batch(const FewShotDataset& data, const std::vector<ImageRef>& refs);

struct DatasetBundle {
  ImageShape shape;
  FewShotDataset train;
  FewShotDataset val;
  FewShotDataset test;
  /// Free-form key/value pairs written to the manifest (generator settings).
  std::map<std::string, std::string> info;

  const FewShotDataset& split(Split s) const;
};

struct SyntheticConfig {
  std::size_t train_classes = 20;
  std::size_t val_classes = 5;
  std::size_t test_classes = 10;
  std::size_t images_per_class = 40;
  ImageShape shape{1, 32, 32};
  double separation = 0.6;
  double noise = 0.05;
  std::uint64_t seed = 1;
};

/// Procedural classes: each class template is a sum of 2-4 anisotropic
/// Gaussian blobs with a random centre, orientation and per-channel colour,
/// rescaled to [0,1]. An image is 0.5 + separation*(template - 0.5) plus
/// i.i.d. Gaussian pixel noise of std `noise`, clamped to [0,1] and quantised
/// to 8 bits. `first_class` offsets the class ids so that separately
/// generated splits are class-disjoint.
FewShotDataset make_synthetic_dataset(std::size_t num_classes, std::size_t images_per_class, ImageShape shape,
                                      double class_separation, double noise, std::uint64_t seed,
                                      std::size_t first_class = 0, Split split = Split::Train);

/// All three splits from one seed; classes never repeat across splits.
DatasetBundle make_synthetic_bundle(const SyntheticConfig& config);

/// Writes `root/manifest.txt` and `root/<split>/<class>/<index>.pgm|ppm`.
void save_dataset(const DatasetBundle& bundle, const std::filesystem::path& root);
DatasetBundle load_dataset(const std::filesystem::path& root);

std::map<std::string, std::string> read_manifest(const std::filesystem::path& file);

}  // namespace crnet
