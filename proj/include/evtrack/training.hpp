#pragma once

#include <array>
#include <optional>
#include <string>
#include <vector>

#include "evtrack/frames.hpp"
#include "evtrack/model.hpp"

namespace evtrack {

struct TrainConfig {
  double learning_rate = 0.001;
  int64_t batch_size = 20;
  int64_t epochs = 200;
  std::array<double, 2> loss_weights = {1.0, 1.0};  // (x, y)
  double dropout_p = 0.2;
  uint64_t seed = 42;
  int64_t checkpoint_every = 0;  // epochs; 0 = final checkpoint only
  bool use_close_mask = false;
  double grad_clip_norm = 5.0;
  std::vector<double> tolerances = {5.0, 10.0, 15.0};

  void validate() const;
};

struct EpochStats {
  int64_t epoch = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;
  std::vector<double> val_p_acc;  // one per tolerance, percent
  double seconds = 0.0;
};

struct TrainReport {
  std::vector<double> tolerances;
  std::vector<EpochStats> epochs;

  std::string to_csv() const;
};

// (1/N) * sum of w_c * (pred - target)^2 over unmasked scalar components,
// where N counts unmasked scalars. mask (optional, [L,B]) keeps entries with
// value 1 and excludes both components where it is 0.
ad::TensorPtr weighted_mse(ad::Tape& tape, const ad::TensorPtr& pred,
                           const ad::TensorPtr& target,
                           const std::array<double, 2>& weights,
                           const ad::TensorPtr& mask = nullptr);

struct AdamState {
  uint64_t step = 0;
  std::vector<std::vector<double>> m, v;  // per parameter, store order
};

// Bias-corrected Adam over every parameter in the store. Grads must be
// populated; call store.zero_grads() between steps.
void adam_step(ad::ParameterStore& store, AdamState& state, double lr,
               double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);

// Scales all gradients so their global L2 norm is at most max_norm.
void clip_gradients(ad::ParameterStore& store, double max_norm);

struct TrainState {
  AdamState adam;
  uint64_t epochs_done = 0;
  TrainReport report;
};

struct Checkpoint {
  ModelConfig model_cfg;
  ad::ParameterStore store;
  Model model;
  TrainState state;
  bool has_train_state = false;
};

// 'EVTK' container: magic, u32 version, model-config echo, named parameter
// arrays, named buffer arrays (batch-norm running stats), then an optional
// train-state section with the Adam step count and moment arrays.
void save_checkpoint(const std::string& path, const Model& model,
                     const ad::ParameterStore& store,
                     const TrainState* state = nullptr);
Checkpoint load_checkpoint(const std::string& path);

struct TrainResult {
  Model model;
  ad::ParameterStore store;
  TrainState state;
};

// Seeded shuffle each epoch; per batch: forward(train) -> weighted_mse ->
// backward -> clip -> adam. A validation pass in eval mode follows each
// epoch. Checkpoints are written under checkpoint_dir at the configured
// cadence plus a final `checkpoint.evtk`; empty dir disables writing.
// `resume` continues a loaded checkpoint's state through cfg.epochs.
TrainResult train(const ModelConfig& model_cfg,
                  const std::vector<SampleWindow>& data, const TrainConfig& cfg,
                  double val_split, const std::string& checkpoint_dir = "",
                  Checkpoint* resume = nullptr);

}  // namespace evtrack
