#include "crnet/config.hpp"

#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>

#include "crnet/rng.hpp"

namespace crnet {

using nlohmann::json;

void RunConfig::validate() const {
  embedding.validate();
  if (embedding.input != synthetic.shape && paths.data_dir.empty()) {
    throw std::invalid_argument("config: embedding.input does not match synthetic.shape");
  }
  if (encoder.num_bases == 0) throw std::invalid_argument("config: encoder.num_bases must be at least 1");
  if (!(encoder.init_alpha > 0.0)) throw std::invalid_argument("config: encoder.init_alpha must be positive");
  loss.validate();
  episode.validate();
  if (episode.ways < 2) throw std::invalid_argument("config: episode.ways must be at least 2");
  if (optimizer.lr < 0.0) throw std::invalid_argument("config: optimizer.lr must be non-negative");
  if (pretrain.lr < 0.0) throw std::invalid_argument("config: pretrain.lr must be non-negative");
  if (pretrain.batch_size == 0) throw std::invalid_argument("config: pretrain.batch_size must be positive");
  if (eval.num_tasks == 0) throw std::invalid_argument("config: eval.num_tasks must be at least 1");
  metric_head_from_string(eval.head);
  if (!(synthetic.separation > 0.0)) throw std::invalid_argument("config: synthetic.separation must be positive");
  if (synthetic.noise < 0.0) throw std::invalid_argument("config: synthetic.noise must be non-negative");
  for (auto n : analysis.sweep_bases)
    if (n == 0) throw std::invalid_argument("config: analysis.sweep_bases entries must be positive");
}

RunConfig reference_config(EmbeddingVariant variant) {
  RunConfig c;
  c.embedding.variant = variant;
  c.embedding.widths = EmbeddingConfig::default_widths(variant);
  c.optimizer.lr = 1e-3;
  c.pretrain.lr = 1e-4;
  c.loss.relation = 1.0;
  c.loss.regularization = 1.0;
  if (variant == EmbeddingVariant::ResidualMini) {
    c.embedding.input = {3, 80, 80};
    c.encoder.num_bases = 16;
    c.optimizer.kind = OptimizerKind::Sgd;
    c.loss.euclidean = 1.0 / 8.0;
  } else {
    c.embedding.input = {3, 84, 84};
    c.encoder.num_bases = 8;
    c.optimizer.kind = OptimizerKind::Adam;
    c.loss.euclidean = 1.0 / 2.0;
  }
  c.synthetic.shape = c.embedding.input;
  return c;
}

namespace {

json shape_json(const ImageShape& s) { return {{"channels", s.channels}, {"height", s.height}, {"width", s.width}}; }

/// Reads fields out of one JSON object and remembers which keys were used.
class ObjectReader {
 public:
  ObjectReader(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw std::invalid_argument("config: '" + display() + "' must be an object");
  }

  template <typename T>
  void get(const char* key, T& out) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    try {
      out = j_.at(key).get<T>();
    } catch (const json::exception& e) {
      throw std::invalid_argument("config: bad value for '" + child(key) + "': " + e.what());
    }
  }

  template <typename F>
  void object(const char* key, F&& read) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    ObjectReader sub(j_.at(key), child(key));
    read(sub);
    sub.finish();
  }

  template <typename E>
  void enumeration(const char* key, E& out, E (*parse)(const std::string&)) {
    std::string s;
    get(key, s);
    if (!j_.contains(key)) return;
    try {
      out = parse(s);
    } catch (const std::invalid_argument& e) {
      throw std::invalid_argument("config: '" + child(key) + "': " + e.what());
    }
  }

  void finish() const {
    for (const auto& [k, _] : j_.items())
      if (!seen_.count(k)) throw std::invalid_argument("config: unknown key '" + child(k) + "'");
  }

 private:
  std::string child(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }
  std::string display() const { return path_.empty() ? "<root>" : path_; }

  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

void read_shape(ObjectReader& r, ImageShape& s) {
  r.get("channels", s.channels);
  r.get("height", s.height);
  r.get("width", s.width);
}

}  // namespace

json to_json(const RunConfig& c) {
  json j;
  j["seed"] = c.seed;
  j["synthetic"] = {{"train_classes", c.synthetic.train_classes},
                    {"val_classes", c.synthetic.val_classes},
                    {"test_classes", c.synthetic.test_classes},
                    {"images_per_class", c.synthetic.images_per_class},
                    {"shape", shape_json(c.synthetic.shape)},
                    {"separation", c.synthetic.separation},
                    {"noise", c.synthetic.noise},
                    {"seed", c.synthetic.seed}};
  j["embedding"] = {{"variant", to_string(c.embedding.variant)},
                    {"input", shape_json(c.embedding.input)},
                    {"widths", c.embedding.widths},
                    {"bn_momentum", c.embedding.bn_momentum}};
  j["encoder"] = {{"num_bases", c.encoder.num_bases},
                  {"parameterization", to_string(c.encoder.parameterization)},
                  {"normalization", to_string(c.encoder.normalization)},
                  {"init_alpha", c.encoder.init_alpha}};
  j["decoder"] = {{"relu", c.decoder.relu}, {"init_weight", c.decoder.init_weight}};
  j["relation"] = {{"hidden", c.relation.hidden}};
  j["loss"] = {{"euclidean", c.loss.euclidean},
               {"relation", c.loss.relation},
               {"regularization", c.loss.regularization},
               {"reduction", to_string(c.loss.reduction)}};
  j["episode"] = {{"ways", c.episode.ways},
                  {"shots", c.episode.shots},
                  {"queries_per_class", c.episode.queries_per_class},
                  {"episodes", c.episode.episodes},
                  {"tasks_per_episode", c.episode.tasks_per_episode}};
  j["optimizer"] = {{"kind", to_string(c.optimizer.kind)},
                    {"lr", c.optimizer.lr},
                    {"momentum", c.optimizer.momentum},
                    {"beta1", c.optimizer.beta1},
                    {"beta2", c.optimizer.beta2},
                    {"eps", c.optimizer.eps},
                    {"weight_decay", c.optimizer.weight_decay},
                    {"decay_prefixes", c.optimizer.decay_prefixes}};
  j["pretrain"] = {{"epochs", c.pretrain.epochs},
                   {"lr", c.pretrain.lr},
                   {"batch_size", c.pretrain.batch_size},
                   {"seed", c.pretrain.seed}};
  j["training"] = {{"val_every", c.training.val_every}, {"val_tasks", c.training.val_tasks}};
  j["eval"] = {{"num_tasks", c.eval.num_tasks}, {"head", c.eval.head}, {"threads", c.eval.threads}};
  j["analysis"] = {{"metashift_tests", c.analysis.metashift_tests},
                   {"metashift_shots", c.analysis.metashift_shots},
                   {"fid_tests", c.analysis.fid_tests},
                   {"export_samples_per_class", c.analysis.export_samples_per_class},
                   {"sweep_bases", c.analysis.sweep_bases}};
  j["paths"] = {{"data_dir", c.paths.data_dir}, {"out_dir", c.paths.out_dir}};
  return j;
}

RunConfig config_from_json(const json& j) {
  RunConfig c;
  ObjectReader r(j, "");
  r.get("seed", c.seed);
  r.object("synthetic", [&](ObjectReader& s) {
    s.get("train_classes", c.synthetic.train_classes);
    s.get("val_classes", c.synthetic.val_classes);
    s.get("test_classes", c.synthetic.test_classes);
    s.get("images_per_class", c.synthetic.images_per_class);
    s.object("shape", [&](ObjectReader& x) { read_shape(x, c.synthetic.shape); });
    s.get("separation", c.synthetic.separation);
    s.get("noise", c.synthetic.noise);
    s.get("seed", c.synthetic.seed);
  });
  r.object("embedding", [&](ObjectReader& s) {
    s.enumeration("variant", c.embedding.variant, &embedding_variant_from_string);
    s.object("input", [&](ObjectReader& x) { read_shape(x, c.embedding.input); });
    s.get("widths", c.embedding.widths);
    s.get("bn_momentum", c.embedding.bn_momentum);
  });
  r.object("encoder", [&](ObjectReader& s) {
    s.get("num_bases", c.encoder.num_bases);
    s.enumeration("parameterization", c.encoder.parameterization, &parameterization_from_string);
    s.enumeration("normalization", c.encoder.normalization, &normalization_from_string);
    s.get("init_alpha", c.encoder.init_alpha);
  });
  r.object("decoder", [&](ObjectReader& s) {
    s.get("relu", c.decoder.relu);
    s.get("init_weight", c.decoder.init_weight);
  });
  r.object("relation", [&](ObjectReader& s) { s.get("hidden", c.relation.hidden); });
  r.object("loss", [&](ObjectReader& s) {
    s.get("euclidean", c.loss.euclidean);
    s.get("relation", c.loss.relation);
    s.get("regularization", c.loss.regularization);
    s.enumeration("reduction", c.loss.reduction, &query_reduction_from_string);
  });
  r.object("episode", [&](ObjectReader& s) {
    s.get("ways", c.episode.ways);
    s.get("shots", c.episode.shots);
    s.get("queries_per_class", c.episode.queries_per_class);
    s.get("episodes", c.episode.episodes);
    s.get("tasks_per_episode", c.episode.tasks_per_episode);
  });
  r.object("optimizer", [&](ObjectReader& s) {
    s.enumeration("kind", c.optimizer.kind, &optimizer_kind_from_string);
    s.get("lr", c.optimizer.lr);
    s.get("momentum", c.optimizer.momentum);
    s.get("beta1", c.optimizer.beta1);
    s.get("beta2", c.optimizer.beta2);
    s.get("eps", c.optimizer.eps);
    s.get("weight_decay", c.optimizer.weight_decay);
    s.get("decay_prefixes", c.optimizer.decay_prefixes);
  });
  r.object("pretrain", [&](ObjectReader& s) {
    s.get("epochs", c.pretrain.epochs);
    s.get("lr", c.pretrain.lr);
    s.get("batch_size", c.pretrain.batch_size);
    s.get("seed", c.pretrain.seed);
  });
  r.object("training", [&](ObjectReader& s) {
    s.get("val_every", c.training.val_every);
    s.get("val_tasks", c.training.val_tasks);
  });
  r.object("eval", [&](ObjectReader& s) {
    s.get("num_tasks", c.eval.num_tasks);
    s.get("head", c.eval.head);
    s.get("threads", c.eval.threads);
  });
  r.object("analysis", [&](ObjectReader& s) {
    s.get("metashift_tests", c.analysis.metashift_tests);
    s.get("metashift_shots", c.analysis.metashift_shots);
    s.get("fid_tests", c.analysis.fid_tests);
    s.get("export_samples_per_class", c.analysis.export_samples_per_class);
    s.get("sweep_bases", c.analysis.sweep_bases);
  });
  r.object("paths", [&](ObjectReader& s) {
    s.get("data_dir", c.paths.data_dir);
    s.get("out_dir", c.paths.out_dir);
  });
  r.finish();
  return c;
}

RunConfig load_config(const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) throw std::invalid_argument("config: cannot open " + file.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw std::invalid_argument("config: " + file.string() + ": " + e.what());
  }
  return config_from_json(j);
}

void save_config(const RunConfig& config, const std::filesystem::path& file) {
  std::ofstream out(file);
  if (!out) throw std::runtime_error("cannot write " + file.string());
  out << to_json(config).dump(2) << "\n";
}

std::string canonical_config(const RunConfig& config) { return to_json(config).dump(); }

std::string config_hash(const RunConfig& config) {
  std::ostringstream s;
  s << std::hex;
  s.width(16);
  s.fill('0');
  RunConfig hashed = config;
  hashed.paths.out_dir.clear();
  s << fnv1a64(canonical_config(hashed));
  return s.str();
}

}  // namespace crnet
