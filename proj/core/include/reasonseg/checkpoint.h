#pragma once

#include <filesystem>
#include <memory>
#include <optional>
#include <string>

#include <nlohmann/json.hpp>

#include "reasonseg/model.h"

namespace reasonseg {

class AdamW;

struct CheckpointState {
  int stage = 0;
  int step = 0;
  std::string rng;  // textual mt19937_64 state
};

/// Raw little-endian float64 tensors keyed by name.
void save_params(const nn::ParameterStore& store, const std::filesystem::path& path);
/// Names and shapes must match the store exactly.
void load_params(nn::ParameterStore& store, const std::filesystem::path& path);

/// Writes `dir/params.bin`, `config.snapshot`, `vocab.txt`, `state.json` and,
/// when given, `optimizer.bin`.
void save_checkpoint(const std::filesystem::path& dir, const ReasoningSegModel& model,
                     const nlohmann::json& train_config, const CheckpointState& state,
                     const AdamW* optimizer = nullptr);

struct Checkpoint {
  std::filesystem::path dir;
  std::unique_ptr<ReasoningSegModel> model;
  nlohmann::json train_config;
  CheckpointState state;
  bool has_optimizer = false;
};

/// Accepts a `step_N` directory or a run directory (newest step wins).
/// Throws NotFound when nothing loadable is there.
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Newest `step_N` directory under `run_dir`, if any.
std::optional<std::filesystem::path> latest_checkpoint(const std::filesystem::path& run_dir);

std::string step_dir_name(int step);

}  // namespace reasonseg
