#include "crnet/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <numbers>
#include <sstream>
#include <stdexcept>

#include "crnet/rng.hpp"

namespace crnet {

namespace fs = std::filesystem;

std::string to_string(Split split) {
  switch (split) {
    case Split::Train: return "train";
    case Split::Val: return "val";
    case Split::Test: return "test";
  }
  return "train";
}

Split split_from_string(const std::string& s) {
  if (s == "train") return Split::Train;
  if (s == "val") return Split::Val;
  if (s == "test") return Split::Test;
  throw std::invalid_argument("unknown split '" + s + "'");
}

std::size_t FewShotDataset::total_images() const {
  std::size_t n = 0;
  for (const auto& c : classes) n += c.images.size();
  return n;
}

const FewShotDataset& DatasetBundle::split(Split s) const {
  switch (s) {
    case Split::Train: return train;
    case Split::Val: return val;
    case Split::Test: return test;
  }
  return train;
}

ImageBatch make_batch(const FewShotDataset& data, const std::vector<ImageRef>& refs) {
  const std::size_t n = data.shape.size();
  std::vector<double> values;
  values.reserve(refs.size() * n);
  ImageBatch batch;
  for (const auto& [cls, idx] : refs) {
    const auto& img = data.classes.at(cls).images.at(idx);
    values.insert(values.end(), img.begin(), img.end());
    batch.labels.push_back(cls);
  }
  batch.images = Array::constant({refs.size(), data.shape.channels, data.shape.height, data.shape.width},
                                 std::move(values));
  return batch;
}

namespace {

std::string class_name(std::size_t global_id) {
  std::ostringstream os;
  os << "class_" << std::setw(4) << std::setfill('0') << global_id;
  return os.str();
}

std::vector<double> class_template(std::uint64_t seed, std::size_t global_id, const ImageShape& shape) {
  Rng rng = Rng::stream(seed, "class-template", global_id);
  const std::size_t blobs = 2 + rng.uniform_index(3);
  const double H = static_cast<double>(shape.height), W = static_cast<double>(shape.width);
  std::vector<double> t(shape.size(), 0.0);
  for (std::size_t b = 0; b < blobs; ++b) {
    const double cy = (0.15 + 0.7 * rng.uniform()) * H;
    const double cx = (0.15 + 0.7 * rng.uniform()) * W;
    const double sy = (0.06 + 0.14 * rng.uniform()) * H;
    const double sx = (0.06 + 0.14 * rng.uniform()) * W;
    const double theta = rng.uniform() * std::numbers::pi;
    double amp = 0.4 + 0.6 * rng.uniform();
    if (rng.uniform() < 0.3) amp = -amp;
    std::vector<double> colour(shape.channels);
    for (auto& c : colour) c = 0.3 + 0.7 * rng.uniform();
    const double ct = std::cos(theta), st = std::sin(theta);
    for (std::size_t y = 0; y < shape.height; ++y)
      for (std::size_t x = 0; x < shape.width; ++x) {
        const double dy = static_cast<double>(y) + 0.5 - cy, dx = static_cast<double>(x) + 0.5 - cx;
        const double u = ct * dx + st * dy, v = -st * dx + ct * dy;
        const double g = amp * std::exp(-0.5 * (u * u / (sx * sx) + v * v / (sy * sy)));
        for (std::size_t c = 0; c < shape.channels; ++c) t[(c * shape.height + y) * shape.width + x] += colour[c] * g;
      }
  }
  const auto [lo, hi] = std::minmax_element(t.begin(), t.end());
  const double l = *lo, range = *hi - *lo;
  for (auto& v : t) v = range > 0.0 ? (v - l) / range : 0.5;
  return t;
}

double quantize(double v) { return std::round(std::clamp(v, 0.0, 1.0) * 255.0) / 255.0; }

}  // namespace

FewShotDataset make_synthetic_dataset(std::size_t num_classes, std::size_t images_per_class, ImageShape shape,
                                      double class_separation, double noise, std::uint64_t seed,
                                      std::size_t first_class, Split split) {
  if (!(class_separation > 0.0)) throw std::invalid_argument("class_separation must be positive");
  if (noise < 0.0) throw std::invalid_argument("noise must be non-negative");
  if (shape.size() == 0) throw std::invalid_argument("image shape must be non-empty");
  FewShotDataset data;
  data.split = split;
  data.shape = shape;
  for (std::size_t c = 0; c < num_classes; ++c) {
    const std::size_t gid = first_class + c;
    const auto tmpl = class_template(seed, gid, shape);
    Rng rng = Rng::stream(seed, "class-noise", gid);
    ClassImages cls;
    cls.name = class_name(gid);
    for (std::size_t i = 0; i < images_per_class; ++i) {
      std::vector<double> img(tmpl.size());
      for (std::size_t p = 0; p < img.size(); ++p) {
        const double n = noise > 0.0 ? noise * rng.normal() : 0.0;
        img[p] = quantize(0.5 + class_separation * (tmpl[p] - 0.5) + n);
      }
      cls.images.push_back(std::move(img));
    }
    data.classes.push_back(std::move(cls));
  }
  return data;
}

DatasetBundle make_synthetic_bundle(const SyntheticConfig& cfg) {
  DatasetBundle b;
  b.shape = cfg.shape;
  b.train = make_synthetic_dataset(cfg.train_classes, cfg.images_per_class, cfg.shape, cfg.separation, cfg.noise,
                                   cfg.seed, 0, Split::Train);
  b.val = make_synthetic_dataset(cfg.val_classes, cfg.images_per_class, cfg.shape, cfg.separation, cfg.noise,
                                 cfg.seed, cfg.train_classes, Split::Val);
  b.test = make_synthetic_dataset(cfg.test_classes, cfg.images_per_class, cfg.shape, cfg.separation, cfg.noise,
                                  cfg.seed, cfg.train_classes + cfg.val_classes, Split::Test);
  std::ostringstream sep, noise;
  sep << std::setprecision(17) << cfg.separation;
  noise << std::setprecision(17) << cfg.noise;
  b.info["generator"] = "synthetic-blobs";
  b.info["generator.seed"] = std::to_string(cfg.seed);
  b.info["generator.separation"] = sep.str();
  b.info["generator.noise"] = noise.str();
  b.info["generator.images_per_class"] = std::to_string(cfg.images_per_class);
  return b;
}

namespace {

void write_image(const fs::path& file, const ImageShape& shape, const std::vector<double>& img) {
  std::ofstream out(file, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + file.string());
  out << (shape.channels == 1 ? "P5" : "P6") << '\n' << shape.width << ' ' << shape.height << "\n255\n";
  const std::size_t plane = shape.height * shape.width;
  for (std::size_t p = 0; p < plane; ++p)
    for (std::size_t c = 0; c < shape.channels; ++c) {
      const auto byte = static_cast<unsigned char>(std::lround(std::clamp(img[c * plane + p], 0.0, 1.0) * 255.0));
      out.put(static_cast<char>(byte));
    }
}

std::vector<double> read_image(const fs::path& file, const ImageShape& shape) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + file.string());
  std::string magic;
  std::size_t w = 0, h = 0, maxval = 0;
  in >> magic >> w >> h >> maxval;
  in.get();
  const std::size_t channels = magic == "P5" ? 1 : magic == "P6" ? 3 : 0;
  if (channels == 0 || maxval != 255) throw std::runtime_error(file.string() + ": not an 8-bit PGM/PPM image");
  if (channels != shape.channels || w != shape.width || h != shape.height) {
    throw std::runtime_error(file.string() + ": image size does not match the manifest");
  }
  const std::size_t plane = h * w;
  std::vector<double> img(shape.size());
  for (std::size_t p = 0; p < plane; ++p)
    for (std::size_t c = 0; c < channels; ++c) {
      const int byte = in.get();
      if (byte == EOF) throw std::runtime_error(file.string() + ": truncated image");
      img[c * plane + p] = static_cast<double>(byte) / 255.0;
    }
  return img;
}

std::string join(const FewShotDataset& d) {
  std::string out;
  for (std::size_t i = 0; i < d.classes.size(); ++i) {
    if (i) out += ',';
    out += d.classes[i].name;
  }
  return out;
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream is(s);
  while (std::getline(is, cur, ','))
    if (!cur.empty()) out.push_back(cur);
  return out;
}

}  // namespace

void save_dataset(const DatasetBundle& bundle, const fs::path& root) {
  fs::create_directories(root);
  const char* ext = bundle.shape.channels == 1 ? ".pgm" : ".ppm";
  for (Split s : {Split::Train, Split::Val, Split::Test}) {
    const auto& d = bundle.split(s);
    for (const auto& cls : d.classes) {
      const fs::path dir = root / to_string(s) / cls.name;
      fs::create_directories(dir);
      for (std::size_t i = 0; i < cls.images.size(); ++i) {
        std::ostringstream name;
        name << std::setw(5) << std::setfill('0') << i << ext;
        write_image(dir / name.str(), bundle.shape, cls.images[i]);
      }
    }
  }
  std::ofstream m(root / "manifest.txt");
  if (!m) throw std::runtime_error("cannot write manifest in " + root.string());
  m << "format=crnet-fewshot-v1\n";
  m << "channels=" << bundle.shape.channels << "\nheight=" << bundle.shape.height << "\nwidth=" << bundle.shape.width
    << '\n';
  for (Split s : {Split::Train, Split::Val, Split::Test}) {
    const auto& d = bundle.split(s);
    m << "split." << to_string(s) << ".classes=" << join(d) << '\n';
    m << "split." << to_string(s) << ".num_classes=" << d.num_classes() << '\n';
    m << "split." << to_string(s) << ".num_images=" << d.total_images() << '\n';
  }
  for (const auto& [k, v] : bundle.info) m << k << '=' << v << '\n';
}

std::map<std::string, std::string> read_manifest(const fs::path& file) {
  std::ifstream in(file);
  if (!in) throw std::runtime_error("cannot read manifest " + file.string());
  std::map<std::string, std::string> kv;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw std::runtime_error("malformed manifest line: " + line);
    kv[line.substr(0, eq)] = line.substr(eq + 1);
  }
  return kv;
}

DatasetBundle load_dataset(const fs::path& root) {
  const auto kv = read_manifest(root / "manifest.txt");
  const auto get = [&](const std::string& key) {
    auto it = kv.find(key);
    if (it == kv.end()) throw std::runtime_error("manifest missing key '" + key + "'");
    return it->second;
  };
  if (get("format") != "crnet-fewshot-v1") throw std::runtime_error("unsupported dataset format " + get("format"));
  DatasetBundle b;
  b.shape = {std::stoul(get("channels")), std::stoul(get("height")), std::stoul(get("width"))};
  for (const auto& [k, v] : kv)
    if (k.rfind("generator", 0) == 0) b.info[k] = v;
  for (Split s : {Split::Train, Split::Val, Split::Test}) {
    FewShotDataset d;
    d.split = s;
    d.shape = b.shape;
    for (const auto& name : split_list(get("split." + to_string(s) + ".classes"))) {
      const fs::path dir = root / to_string(s) / name;
      if (!fs::is_directory(dir)) throw std::runtime_error("missing class directory " + dir.string());
      std::vector<fs::path> files;
      for (const auto& e : fs::directory_iterator(dir))
        if (e.is_regular_file()) files.push_back(e.path());
      std::sort(files.begin(), files.end());
      ClassImages cls;
      cls.name = name;
      for (const auto& f : files) cls.images.push_back(read_image(f, b.shape));
      d.classes.push_back(std::move(cls));
    }
    (s == Split::Train ? b.train : s == Split::Val ? b.val : b.test) = std::move(d);
  }
  return b;
}

}  // namespace crnet
