#pragma once

#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>

#include "crnet/checkpoint.hpp"
#include "crnet/config.hpp"
#include "crnet/dataset.hpp"
#include "crnet/evaluate.hpp"

namespace crnet {

/// Inputs shared by every subcommand. Outputs go under `out_dir`.
struct CommandContext {
  RunConfig config;
  std::filesystem::path out_dir;
  std::optional<std::filesystem::path> checkpoint;
  std::ostream* log = nullptr;  // progress and summaries; null = quiet
};

/// Dataset named by paths.data_dir, or the in-memory synthetic set.
DatasetBundle load_data(const RunConfig& config);

/// `#` header fields for every CSV: seed and config hash.
std::map<std::string, std::string> output_metadata(const RunConfig& config, const std::string& command);

/// Writes the synthetic dataset to paths.data_dir (or out_dir/data); returns the root.
std::filesystem::path cmd_generate(const CommandContext& ctx);
/// out_dir/pretrain.ckpt, out_dir/pretrain_log.csv
std::filesystem::path cmd_pretrain(const CommandContext& ctx);
/// out_dir/train.ckpt, out_dir/train_log.csv and, with validation enabled, out_dir/best.ckpt
std::filesystem::path cmd_train(const CommandContext& ctx);
/// out_dir/eval.csv and out_dir/eval_tasks.csv on the test split.
EvalReport cmd_eval(const CommandContext& ctx);
/// out_dir/metashift/<class>_<source>.csv per test class plus out_dir/metashift_summary.csv.
/// Returns the number of classes whose decoded mean distance is below the prototype one.
std::size_t cmd_metashift(const CommandContext& ctx);
/// out_dir/fid.csv
std::filesystem::path cmd_fid(const CommandContext& ctx);
/// out_dir/embeddings.csv
std::filesystem::path cmd_export(const CommandContext& ctx);
/// out_dir/sweep_basis.csv and out_dir/sweep/bases_<N>.ckpt
std::filesystem::path cmd_sweep_basis(const CommandContext& ctx);

}  // namespace crnet
