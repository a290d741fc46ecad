#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>

#include "crnet/config.hpp"
#include "crnet/trainer.hpp"

namespace crnet {

inline constexpr std::uint32_t kCheckpointVersion = 1;

/// Binary layout, integers and floats little-endian:
///   "CRNETCKP" u32 version
///   str config_json
///   u64 episode  str rng_state
///   f64 x4 running metrics, u64 tasks_seen, u64 best_episode
///   u64 n_params   { str name, f64 lr_multiplier, u32 rank, u64 dims[rank], f64 values[] }
///   u64 n_buffers  { str name, u32 rank, u64 dims[rank], f64 values[] }
///   u64 opt_step   u64 n_slots { str name, u64 n, f64 values[n] }
/// where str is u64 length + bytes.
void save_checkpoint(const TrainState& state, const RunConfig& config, std::ostream& out);
void save_checkpoint(const TrainState& state, const RunConfig& config, const std::filesystem::path& file);

struct LoadedCheckpoint {
  RunConfig config;
  TrainState state;
};

/// Rebuilds the model from the stored config, then overwrites every
/// parameter and buffer. Throws std::runtime_error on a bad magic, version
/// mismatch, truncated file or name/shape mismatch.
LoadedCheckpoint load_checkpoint(std::istream& in);
LoadedCheckpoint load_checkpoint(const std::filesystem::path& file);

/// Fresh state for `config`.
TrainState initial_state(const RunConfig& config);

}  // namespace crnet
