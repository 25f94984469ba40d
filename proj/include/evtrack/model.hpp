#pragma once

#include <string>
#include <vector>

#include "evtrack/params.hpp"
#include "evtrack/rnn.hpp"

namespace evtrack {

enum class ModelVariant { cnn_gru, cnn_bilstm, cnn_lstm };
ModelVariant parse_model_variant(const std::string& s);
std::string to_string(ModelVariant v);

struct ModelConfig {
  ModelVariant variant = ModelVariant::cnn_lstm;
  int64_t in_channels = 2;
  int64_t in_height = 60;
  int64_t in_width = 80;
  std::vector<int64_t> conv_channels = {16, 32, 64};
  int64_t kernel = 3;
  int64_t feature_dim = 128;
  int64_t hidden = 128;
  int64_t rnn_layers = 2;  // must be 1 for cnn_gru/cnn_bilstm, >= 2 for cnn_lstm
  double dropout_p = 0.2;
  uint64_t seed = 42;

  void validate() const;
  std::string serialize() const;  // key=value lines
  static ModelConfig deserialize(const std::string& text);
};

// One conv block: conv(k, pad k/2) -> batch norm -> relu -> crop to even
// dims -> avg pool 2.
struct ConvBlock {
  ad::TensorPtr w, b;
  ad::TensorPtr gamma, beta;
  ad::BatchNormState bn;
  int64_t c_in = 0, c_out = 0;
  int64_t in_h = 0, in_w = 0;      // entering dims
  int64_t crop_h = 0, crop_w = 0;  // pre-pool dims, floored to even
  int64_t out_h = 0, out_w = 0;    // after pooling
};

struct Model {
  ModelConfig cfg;
  std::vector<ConvBlock> blocks;
  int64_t flat_dim = 0;
  ad::TensorPtr feat_w, feat_b;
  ad::RecurrentStack rnn;
  ad::TensorPtr head_w, head_b;

  int64_t rnn_out_dim() const { return cfg.hidden * rnn.directions(); }
};

// Per-frame normalized pupil coordinates in [0,1]^2.
struct Prediction {
  ad::TensorPtr coords;  // [L, B, 2]
};

// Creates and initializes all parameters in `store` (names are stable across
// runs) and assembles the layer plan. Seeded by cfg.seed.
Model build_model(const ModelConfig& cfg, ad::ParameterStore& store);

// frames: [L,B,2,H,W]. The encoder runs with weights shared across time by
// folding L into the batch dimension; train mode uses batch statistics and
// dropout (rng required), eval mode is a deterministic pure function.
Prediction forward(ad::Tape& tape, Model& model, const ad::TensorPtr& frames,
                   ad::Mode mode, std::mt19937_64* dropout_rng = nullptr);

constexpr double kBatchNormEps = 1e-5;
constexpr double kBatchNormMomentum = 0.1;

}  // namespace evtrack
