#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "crnet/class_codec.hpp"
#include "crnet/dataset.hpp"
#include "crnet/embedding.hpp"
#include "crnet/episode.hpp"
#include "crnet/evaluate.hpp"
#include "crnet/metric.hpp"
#include "crnet/model.hpp"
#include "crnet/optim.hpp"
#include "crnet/pretrain.hpp"

namespace crnet {

struct PathsConfig {
  /// Dataset root written by `generate`; empty means build the synthetic
  /// dataset in memory.
  std::string data_dir;
  std::string out_dir = "out";
};

struct TrainingConfig {
  std::size_t val_every = 0;
  std::size_t val_tasks = 50;
};

struct EvalSettings {
  std::size_t num_tasks = 600;
  std::string head = "both";
  std::size_t threads = 1;
};

struct AnalysisConfig {
  std::size_t metashift_tests = 500;
  std::size_t metashift_shots = 5;
  std::size_t fid_tests = 500;
  std::size_t export_samples_per_class = 50;
  std::vector<std::size_t> sweep_bases{1, 2, 4, 8, 16};
};

struct RunConfig {
  SyntheticConfig synthetic;
  EmbeddingConfig embedding;
  EncoderConfig encoder;
  DecoderConfig decoder;
  RelationConfig relation;
  LossWeights loss;
  EpisodeConfig episode;
  OptimizerConfig optimizer;
  PretrainConfig pretrain;
  TrainingConfig training;
  EvalSettings eval;
  AnalysisConfig analysis;
  PathsConfig paths;
  std::uint64_t seed = 1;

  ModelConfig model() const { return {embedding, encoder, decoder, relation}; }
  /// Throws std::invalid_argument on inconsistent settings.
  void validate() const;
};

/// Desk-scale configuration with the per-variant settings of the reference
/// training table (basis count, learning rates, optimizer, loss weights and
/// the original image size).
RunConfig reference_config(EmbeddingVariant variant);

nlohmann::json to_json(const RunConfig& config);
/// Missing keys keep their defaults; unknown keys throw std::invalid_argument
/// naming the full key path.
RunConfig config_from_json(const nlohmann::json& j);
RunConfig load_config(const std::filesystem::path& file);
void save_config(const RunConfig& config, const std::filesystem::path& file);

/// Canonical (sorted-key, compact) serialization and its 64-bit FNV-1a hash.
/// The hash leaves out paths.out_dir, which does not affect any result.
std::string canonical_config(const RunConfig& config);
std::string config_hash(const RunConfig& config);

}  // namespace crnet
