#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>

#include "evtrack/model.hpp"

using namespace evtrack;
using namespace evtrack::ad;

namespace {

ModelConfig tiny_cfg(ModelVariant variant) {
  ModelConfig cfg;
  cfg.variant = variant;
  cfg.in_height = 16;
  cfg.in_width = 16;
  cfg.conv_channels = {4, 8};
  cfg.feature_dim = 8;
  cfg.hidden = 8;
  cfg.rnn_layers = variant == ModelVariant::cnn_lstm ? 2 : 1;
  cfg.dropout_p = 0.0;
  cfg.seed = 5;
  return cfg;
}

TensorPtr random_frames(int64_t len, int64_t batch, const ModelConfig& cfg,
                        uint64_t seed) {
  auto t = make_tensor({len, batch, cfg.in_channels, cfg.in_height, cfg.in_width});
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> uni(0.0, 2.0);
  for (auto& v : t->values) v = uni(rng);
  return t;
}

}  // namespace

TEST_CASE("default config shape walk gives the documented flat size") {
  ModelConfig cfg;  // 80x60 input, channels 16/32/64
  ParameterStore store;
  auto model = build_model(cfg, store);
  REQUIRE(model.blocks.size() == 3);
  CHECK(model.blocks[0].out_h == 30);
  CHECK(model.blocks[0].out_w == 40);
  CHECK(model.blocks[1].out_h == 15);
  CHECK(model.blocks[1].out_w == 20);
  CHECK(model.blocks[2].crop_h == 14);  // 15 floors to 14 before pooling
  CHECK(model.blocks[2].out_h == 7);
  CHECK(model.blocks[2].out_w == 10);
  CHECK(model.flat_dim == 64 * 7 * 10);
}

TEST_CASE("single-layer variants reject extra recurrent layers") {
  ModelConfig cfg = tiny_cfg(ModelVariant::cnn_gru);
  cfg.rnn_layers = 2;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);

  ModelConfig lstm = tiny_cfg(ModelVariant::cnn_lstm);
  lstm.rnn_layers = 1;
  CHECK_THROWS_AS(lstm.validate(), ConfigError);

  ModelConfig bil = tiny_cfg(ModelVariant::cnn_bilstm);
  bil.rnn_layers = 1;
  CHECK_NOTHROW(bil.validate());
}

TEST_CASE("identical seeds build identical parameters") {
  auto cfg = tiny_cfg(ModelVariant::cnn_lstm);
  ParameterStore a, b;
  build_model(cfg, a);
  build_model(cfg, b);
  REQUIRE(a.names() == b.names());
  for (const auto& name : a.names()) {
    CHECK(a.get(name)->values == b.get(name)->values);
  }
}

TEST_CASE("model config serialization round trips") {
  auto cfg = tiny_cfg(ModelVariant::cnn_bilstm);
  cfg.conv_channels = {4, 8};
  auto copy = ModelConfig::deserialize(cfg.serialize());
  CHECK(copy.serialize() == cfg.serialize());
  CHECK(copy.variant == ModelVariant::cnn_bilstm);
  CHECK(copy.conv_channels == std::vector<int64_t>{4, 8});
}

TEST_CASE("eval forward is deterministic and batch-composition invariant") {
  auto cfg = tiny_cfg(ModelVariant::cnn_gru);
  ParameterStore store;
  auto model = build_model(cfg, store);

  auto zero = make_tensor({3, 1, 2, 16, 16});
  Tape t1, t2;
  auto p1 = forward(t1, model, zero, Mode::eval);
  auto p2 = forward(t2, model, zero, Mode::eval);
  CHECK(p1.coords->values == p2.coords->values);

  auto frames = random_frames(3, 3, cfg, 9);
  Tape t3;
  auto batch_pred = forward(t3, model, frames, Mode::eval);
  // sample 1 alone
  auto solo = make_tensor({3, 1, 2, 16, 16});
  for (int64_t t = 0; t < 3; ++t) {
    const int64_t frame_n = 2 * 16 * 16;
    std::copy(frames->values.begin() + (t * 3 + 1) * frame_n,
              frames->values.begin() + (t * 3 + 2) * frame_n,
              solo->values.begin() + t * frame_n);
  }
  Tape t4;
  auto solo_pred = forward(t4, model, solo, Mode::eval);
  for (int64_t t = 0; t < 3; ++t) {
    for (int64_t c = 0; c < 2; ++c) {
      CHECK(solo_pred.coords->values[t * 2 + c] ==
            doctest::Approx(batch_pred.coords->values[(t * 3 + 1) * 2 + c]).epsilon(1e-12));
    }
  }
}

TEST_CASE("outputs stay inside the unit square for wild inputs") {
  auto cfg = tiny_cfg(ModelVariant::cnn_lstm);
  ParameterStore store;
  auto model = build_model(cfg, store);
  auto frames = random_frames(4, 2, cfg, 13);
  for (auto& v : frames->values) v *= 50.0;
  Tape tape;
  auto pred = forward(tape, model, frames, Mode::eval);
  for (double v : pred.coords->values) {
    CHECK(v >= 0.0);
    CHECK(v <= 1.0);
  }
}

TEST_CASE("L = 1 cnn_lstm forward equals a hand-composed encoder/lstm/head") {
  auto cfg = tiny_cfg(ModelVariant::cnn_lstm);
  ParameterStore store;
  auto model = build_model(cfg, store);
  auto frames = random_frames(1, 1, cfg, 21);

  Tape tape;
  auto pred = forward(tape, model, frames, Mode::eval);

  // hand composition, written against the ops directly
  Tape hand;
  auto x = reshape(hand, frames, {1, 2, 16, 16});
  for (auto& blk : model.blocks) {
    x = conv2d(hand, x, blk.w, blk.b, 1, cfg.kernel / 2);
    x = batch_norm(hand, x, blk.gamma, blk.beta, blk.bn, Mode::eval, kBatchNormMomentum,
                   kBatchNormEps);
    x = activation(hand, x, Activation::relu);
    x = avg_pool2d(hand, x, 2);  // 16x16 halves cleanly, no crop needed
  }
  x = reshape(hand, x, {1, model.flat_dim});
  x = linear(hand, x, model.feat_w, model.feat_b);
  RecurrentState s0{make_tensor({1, cfg.hidden}), make_tensor({1, cfg.hidden})};
  auto [h1, s1] = lstm_cell(hand, x, s0, model.rnn.cell(0, 0));
  auto [h2, s2] = lstm_cell(hand, h1, RecurrentState{make_tensor({1, cfg.hidden}),
                                                     make_tensor({1, cfg.hidden})},
                            model.rnn.cell(1, 0));
  auto scores = linear(hand, h2, model.head_w, model.head_b);
  auto coords = activation(hand, scores, Activation::sigmoid);

  REQUIRE(pred.coords->size() == 2);
  CHECK(pred.coords->values[0] == doctest::Approx(coords->values[0]).epsilon(1e-12));
  CHECK(pred.coords->values[1] == doctest::Approx(coords->values[1]).epsilon(1e-12));
}

TEST_CASE("causal variants ignore future frames; bilstm does not") {
  const int64_t len = 5;
  for (auto variant : {ModelVariant::cnn_gru, ModelVariant::cnn_lstm,
                       ModelVariant::cnn_bilstm}) {
    auto cfg = tiny_cfg(variant);
    ParameterStore store;
    auto model = build_model(cfg, store);
    auto frames = random_frames(len, 1, cfg, 31);

    Tape t1;
    auto base = forward(t1, model, frames, Mode::eval);

    auto perturbed = make_tensor(frames->shape, frames->values);
    const int64_t frame_n = 2 * 16 * 16;
    for (int64_t i = 0; i < frame_n; ++i) {
      perturbed->values[(len - 1) * frame_n + i] += 3.0;  // touch only the last frame
    }
    Tape t2;
    auto changed = forward(t2, model, perturbed, Mode::eval);

    double early_delta = 0.0;
    for (int64_t t = 0; t < len - 1; ++t) {
      for (int64_t c = 0; c < 2; ++c) {
        early_delta = std::max(early_delta,
                               std::abs(changed.coords->values[t * 2 + c] -
                                        base.coords->values[t * 2 + c]));
      }
    }
    double last_delta = 0.0;
    for (int64_t c = 0; c < 2; ++c) {
      last_delta = std::max(last_delta, std::abs(changed.coords->values[(len - 1) * 2 + c] -
                                                 base.coords->values[(len - 1) * 2 + c]));
    }
    if (variant == ModelVariant::cnn_bilstm) {
      CHECK(early_delta > 1e-9);  // future dependence witness at step 0
    } else {
      CHECK(early_delta <= 1e-12);
      CHECK(last_delta > 1e-9);
    }
  }
}

TEST_CASE("encoder weights are shared across time: one conv weight moves all steps") {
  auto cfg = tiny_cfg(ModelVariant::cnn_lstm);
  ParameterStore store;
  auto model = build_model(cfg, store);
  auto frames = random_frames(4, 1, cfg, 37);

  // gradient of the sum of outputs at each single step w.r.t. conv0 weights
  for (int64_t t = 0; t < 4; ++t) {
    Tape tape;
    auto pred = forward(tape, model, frames, Mode::eval);
    auto step = select_row(tape, pred.coords, t);
    auto loss = sum(tape, step);
    store.zero_grads();
    tape.backward(loss);
    double norm = 0.0;
    for (double g : model.blocks[0].w->grad) norm += g * g;
    CHECK(norm > 0.0);
  }
}
