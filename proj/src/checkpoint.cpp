#include "crnet/checkpoint.hpp"

#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <stdexcept>

namespace crnet {

namespace {

constexpr char kMagic[8] = {'C', 'R', 'N', 'E', 'T', 'C', 'K', 'P'};

class Writer {
 public:
  explicit Writer(std::ostream& out) : out_(out) {}

  void u32(std::uint32_t v) { le(v, 4); }
  void u64(std::uint64_t v) { le(v, 8); }
  void f64(double v) { le(std::bit_cast<std::uint64_t>(v), 8); }
  void str(const std::string& s) {
    u64(s.size());
    out_.write(s.data(), static_cast<std::streamsize>(s.size()));
  }
  void array(const Array& a) {
    u32(static_cast<std::uint32_t>(a.rank()));
    for (auto d : a.shape()) u64(d);
    for (double v : a.values()) f64(v);
  }

 private:
  void le(std::uint64_t v, int bytes) {
    std::array<char, 8> b{};
    for (int i = 0; i < bytes; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xff);
    out_.write(b.data(), bytes);
  }
  std::ostream& out_;
};

class Reader {
 public:
  explicit Reader(std::istream& in) : in_(in) {}

  std::uint32_t u32() { return static_cast<std::uint32_t>(le(4)); }
  std::uint64_t u64() { return le(8); }
  double f64() { return std::bit_cast<double>(le(8)); }
  std::string str() {
    const std::uint64_t n = u64();
    if (n > (1u << 30)) fail("string length out of range");
    std::string s(n, '\0');
    read(s.data(), n);
    return s;
  }
  void bytes(char* dst, std::size_t n) { read(dst, n); }

  /// Reads shape and values into a leaf with the expected shape.
  void array_into(const std::string& name, Array& target) {
    const std::uint32_t rank = u32();
    if (rank > 8) fail("rank out of range for '" + name + "'");
    Shape shape(rank);
    for (auto& d : shape) d = u64();
    if (shape != target.shape()) {
      fail("'" + name + "' has shape " + shape_string(shape) + ", model expects " + shape_string(target.shape()));
    }
    auto dst = target.mutable_values();
    for (auto& v : dst) v = f64();
  }

  [[noreturn]] static void fail(const std::string& what) { throw std::runtime_error("checkpoint: " + what); }

 private:
  void read(char* dst, std::size_t n) {
    in_.read(dst, static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(in_.gcount()) != n) fail("unexpected end of file");
  }
  std::uint64_t le(int bytes) {
    std::array<unsigned char, 8> b{};
    read(reinterpret_cast<char*>(b.data()), static_cast<std::size_t>(bytes));
    std::uint64_t v = 0;
    for (int i = 0; i < bytes; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
    return v;
  }
  std::istream& in_;
};

}  // namespace

TrainState initial_state(const RunConfig& config) {
  config.validate();
  return TrainState(ClassRegNet(config.model(), config.seed), config.optimizer, config.seed);
}

void save_checkpoint(const TrainState& state, const RunConfig& config, std::ostream& out) {
  Writer w(out);
  out.write(kMagic, sizeof kMagic);
  w.u32(kCheckpointVersion);
  w.str(canonical_config(config));
  w.u64(state.episode);
  w.str(state.rng.serialize());
  const RunningMetrics& m = state.metrics;
  w.f64(m.mean_total);
  w.f64(m.mean_accuracy_euclidean);
  w.f64(m.mean_accuracy_relation);
  w.f64(m.best_val_accuracy);
  w.u64(m.tasks_seen);
  w.u64(m.best_episode);

  const ParameterSet& params = state.model.params();
  w.u64(params.size());
  for (const auto& [name, entry] : params) {
    w.str(name);
    w.f64(entry.lr_multiplier);
    w.array(entry.value);
  }
  const BufferSet& buffers = state.model.buffers();
  w.u64(buffers.size());
  for (const auto& [name, value] : buffers) {
    w.str(name);
    w.array(value);
  }
  const OptimizerState& opt = state.optimizer.state();
  w.u64(opt.step);
  w.u64(opt.slots.size());
  for (const auto& [name, values] : opt.slots) {
    w.str(name);
    w.u64(values.size());
    for (double v : values) w.f64(v);
  }
  if (!out) throw std::runtime_error("checkpoint: write failed");
}

void save_checkpoint(const TrainState& state, const RunConfig& config, const std::filesystem::path& file) {
  if (file.has_parent_path()) std::filesystem::create_directories(file.parent_path());
  std::ofstream out(file, std::ios::binary);
  if (!out) throw std::runtime_error("checkpoint: cannot write " + file.string());
  save_checkpoint(state, config, out);
}

LoadedCheckpoint load_checkpoint(std::istream& in) {
  Reader r(in);
  char magic[sizeof kMagic];
  r.bytes(magic, sizeof magic);
  if (std::memcmp(magic, kMagic, sizeof kMagic) != 0) Reader::fail("not a checkpoint file");
  const std::uint32_t version = r.u32();
  if (version != kCheckpointVersion) {
    Reader::fail("format version " + std::to_string(version) + " is not supported (expected " +
                 std::to_string(kCheckpointVersion) + ")");
  }
  RunConfig config;
  try {
    config = config_from_json(nlohmann::json::parse(r.str()));
  } catch (const std::exception& e) {
    Reader::fail(std::string("stored config is invalid: ") + e.what());
  }
  LoadedCheckpoint out{config, initial_state(config)};
  TrainState& s = out.state;
  s.episode = r.u64();
  s.rng.deserialize(r.str());
  RunningMetrics& m = s.metrics;
  m.mean_total = r.f64();
  m.mean_accuracy_euclidean = r.f64();
  m.mean_accuracy_relation = r.f64();
  m.best_val_accuracy = r.f64();
  m.tasks_seen = r.u64();
  m.best_episode = r.u64();

  ParameterSet& params = s.model.params();
  const std::uint64_t n_params = r.u64();
  if (n_params != params.size()) {
    Reader::fail(std::to_string(n_params) + " parameters stored, model has " + std::to_string(params.size()));
  }
  for (std::uint64_t i = 0; i < n_params; ++i) {
    const std::string name = r.str();
    if (!params.contains(name)) Reader::fail("unknown parameter '" + name + "'");
    r.f64();  // lr multiplier is a property of the model definition
    r.array_into(name, params.at(name));
  }
  BufferSet& buffers = s.model.buffers();
  const std::uint64_t n_buffers = r.u64();
  if (n_buffers != buffers.size()) {
    Reader::fail(std::to_string(n_buffers) + " buffers stored, model has " + std::to_string(buffers.size()));
  }
  for (std::uint64_t i = 0; i < n_buffers; ++i) {
    const std::string name = r.str();
    auto it = buffers.find(name);
    if (it == buffers.end()) Reader::fail("unknown buffer '" + name + "'");
    r.array_into(name, it->second);
  }
  OptimizerState opt;
  opt.step = r.u64();
  const std::uint64_t n_slots = r.u64();
  for (std::uint64_t i = 0; i < n_slots; ++i) {
    const std::string name = r.str();
    const std::uint64_t n = r.u64();
    if (n > (1u << 30)) Reader::fail("slot '" + name + "' too large");
    std::vector<double> v(n);
    for (auto& x : v) x = r.f64();
    opt.slots.emplace(name, std::move(v));
  }
  s.optimizer.set_state(std::move(opt));
  return out;
}

LoadedCheckpoint load_checkpoint(const std::filesystem::path& file) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw std::runtime_error("checkpoint: cannot open " + file.string());
  return load_checkpoint(in);
}

}  // namespace crnet
