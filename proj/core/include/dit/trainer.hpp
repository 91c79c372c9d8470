#pragma once

// Training loop: AdamW on the hybrid objective with an EMA shadow, periodic
// checkpoints and a per-step loss log.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "dit/config.hpp"
#include "dit/dataset.hpp"
#include "dit/parameters.hpp"
#include "dit/schedule.hpp"
#include "dit/tensor_io.hpp"

namespace dit {

struct TrainConfig {
  double learning_rate = 1e-4;
  double weight_decay = 0.0;
  int batch_size = 32;
  std::int64_t steps = 2000;
  double ema_decay = 0.9999;
  std::uint64_t seed = 0;
  std::uint64_t data_seed = 0;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  double vlb_weight = 1.0;
  std::int64_t checkpoint_every = 500;  // 0 disables periodic checkpoints
  int keep_checkpoints = 3;
  // Diffusion process used for training.
  int diffusion_steps = 1000;
  double beta_start = 1e-4;
  double beta_end = 2e-2;

  void validate() const;
  DiffusionSchedule schedule() const { return DiffusionSchedule::linear(diffusion_steps, beta_start, beta_end); }
  bool operator==(const TrainConfig&) const = default;
};

void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);

/// First and second Adam moments, one tensor per parameter.
struct AdamMoments {
  ParameterStore<float> m;
  ParameterStore<float> v;

  static AdamMoments zeros_like(const ParameterStore<float>& params);
};

/// One AdamW update using the gradients held by `params` (a parameter without
/// a gradient is treated as having a zero gradient). `step` is 1-based and
/// drives the bias correction.
void adamw_step(ParameterStore<float>& params, AdamMoments& moments, const TrainConfig& config, std::int64_t step);

/// ema <- decay * ema + (1 - decay) * params, elementwise.
void ema_update(ParameterStore<float>& ema, const ParameterStore<float>& params, double decay);

struct TrainState {
  DiTConfig model;
  TrainConfig train;
  ParameterStore<float> params;
  ParameterStore<float> ema;
  AdamMoments moments;
  std::int64_t step = 0;  // completed steps

  static TrainState fresh(const DiTConfig& model, const TrainConfig& train);
};

/// Checkpoint contents as a named-tensor archive. Tensors are stored under
/// "params/", "ema/", "adam_m/" and "adam_v/"; the metadata holds both configs
/// and the step counter. The per-step random state is a pure function of
/// (seed, step), so the counter is the complete RNG state.
TensorArchive checkpoint_archive(const TrainState& state);
TrainState restore_checkpoint(const TensorArchive& archive);
void save_checkpoint(const std::filesystem::path& path, const TrainState& state);
TrainState load_checkpoint(const std::filesystem::path& path);

struct StepLog {
  std::int64_t step = 0;
  double l_simple = 0.0;
  double l_vlb = 0.0;
  double wall_seconds = 0.0;
};

/// Random choices made by a step; exposed for the sampling-distribution tests.
struct StepDraws {
  std::vector<std::uint64_t> indices;
  std::vector<int> timesteps;
  std::vector<bool> flips;
};
StepDraws step_draws(const TrainConfig& config, std::int64_t step);

class Trainer {
 public:
  Trainer(TrainState state, ToyDataset dataset);

  /// Runs one step. Throws NumericError on a non-finite loss after writing a
  /// snapshot to the diagnostics directory, if one is set.
  StepLog step();

  const TrainState& state() const { return state_; }
  TrainState& state() { return state_; }
  const ToyDataset& dataset() const { return dataset_; }
  void set_diagnostics_dir(std::filesystem::path dir) { diagnostics_dir_ = std::move(dir); }

 private:
  TrainState state_;
  ToyDataset dataset_;
  DiffusionSchedule schedule_;
  std::optional<std::filesystem::path> diagnostics_dir_;
};

struct TrainRunOptions {
  /// Checkpoints, loss.csv and diagnostics go here; empty keeps everything in memory.
  std::filesystem::path out_dir;
  /// Stop after this many total steps instead of train.steps, if set.
  std::optional<std::int64_t> stop_at;
  std::function<void(const StepLog&)> on_step;
};

struct TrainResult {
  TrainState state;
  std::vector<StepLog> log;
  std::vector<std::filesystem::path> checkpoints;  // retained files, oldest first
};

ToyDataset make_dataset(const DiTConfig& model, const TrainConfig& train);

/// Trains from `state` (fresh or restored) up to train.steps.
TrainResult train(TrainState state, const ToyDataset& dataset, const TrainRunOptions& options = {});
TrainResult train(const DiTConfig& model, const TrainConfig& train_config, const TrainRunOptions& options = {});

std::string checkpoint_filename(std::int64_t step);
void write_loss_csv(const std::filesystem::path& path, const std::vector<StepLog>& log, bool append = false);

}  // namespace dit
