#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

#include "evtrack/events.hpp"
#include "evtrack/synth.hpp"
#include "evtrack/training.hpp"

using namespace evtrack;
using namespace evtrack::ad;

namespace {

std::string temp_dir(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / name;
  std::filesystem::create_directories(p);
  return p.string();
}

std::string slurp(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  return std::string(std::istreambuf_iterator<char>(is), {});
}

ModelConfig tiny_cfg() {
  ModelConfig cfg;
  cfg.variant = ModelVariant::cnn_lstm;
  cfg.in_height = 32;
  cfg.in_width = 48;
  cfg.conv_channels = {4, 8};
  cfg.feature_dim = 16;
  cfg.hidden = 16;
  cfg.rnn_layers = 2;
  cfg.dropout_p = 0.1;
  cfg.seed = 7;
  return cfg;
}

// Short pursuit scene binned and windowed, the learnability fixture at
// unit-test scale.
std::vector<SampleWindow> tiny_windows(uint64_t seed, double seconds = 8.0) {
  synth::TrajectoryConfig scfg;
  scfg.kind = synth::TrajectoryKind::smooth_pursuit;
  scfg.seconds = seconds;
  scfg.width = 48;
  scfg.height = 32;
  scfg.radius_px = 4.0;
  scfg.amplitude_px = 14.0;
  scfg.speed_px_s = 60.0;
  scfg.seed = seed;
  auto scene = synth::gen_trajectory(scfg);
  auto [stream, labels] = synth::render_events(scene, scfg);
  auto frames = std::make_shared<FrameSequence>(
      normalize_frames(bin_to_frames(stream, 50000), NormalizeMode::log1p));
  auto track = downsample_labels(labels, 0.2);
  return make_windows(frames, track, 6, 6, false);
}

TensorPtr make_pred(std::vector<double> v, int64_t steps) {
  return make_tensor({steps, 1, 2}, std::move(v));
}

}  // namespace

TEST_CASE("weighted_mse reproduces the tagged hand computations") {
  Tape tape;
  auto pred = make_pred({0.5, 0.25}, 1);
  auto same = make_pred({0.5, 0.25}, 1);
  CHECK(weighted_mse(tape, pred, same, {3.0, 2.0})->values[0] == 0.0);

  auto target = make_pred({0.5 - 2.0, 0.25}, 1);  // residuals (2, 0)
  CHECK(weighted_mse(tape, pred, target, {1.0, 1.0})->values[0] == doctest::Approx(2.0));

  auto target2 = make_pred({0.5 - 1.0, 0.25 - 2.0}, 1);  // residuals (1, 2)
  CHECK(weighted_mse(tape, pred, target2, {2.0, 1.0})->values[0] == doctest::Approx(3.0));
}

TEST_CASE("weighted_mse is homogeneous in the weights and symmetric in the args") {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> uni(0.0, 1.0);
  std::vector<double> a(12), b(12);
  for (auto& v : a) v = uni(rng);
  for (auto& v : b) v = uni(rng);
  Tape tape;
  auto pred = make_tensor({6, 1, 2}, a);
  auto target = make_tensor({6, 1, 2}, b);
  const double base = weighted_mse(tape, pred, target, {1.5, 0.5})->values[0];
  const double scaled = weighted_mse(tape, pred, target, {4.5, 1.5})->values[0];
  CHECK(scaled == doctest::Approx(3.0 * base).epsilon(1e-12));
  const double swapped = weighted_mse(tape, target, pred, {1.5, 0.5})->values[0];
  CHECK(swapped == base);
  CHECK(base >= 0.0);
}

TEST_CASE("weighted_mse close mask excludes whole steps") {
  Tape tape;
  auto pred = make_pred({1.0, 1.0, 0.0, 0.0}, 2);
  auto target = make_pred({0.0, 0.0, 0.0, 0.0}, 2);
  auto mask = make_tensor({2, 1}, std::vector<double>{0.0, 1.0});  // step 0 closed
  CHECK(weighted_mse(tape, pred, target, {1.0, 1.0}, mask)->values[0] == 0.0);

  auto all_masked = make_tensor({2, 1}, std::vector<double>{0.0, 0.0});
  CHECK_THROWS_AS(weighted_mse(tape, pred, target, {1.0, 1.0}, all_masked),
                  ContractError);
}

TEST_CASE("weighted_mse gradient matches its closed form") {
  auto pred = make_tensor({2, 1, 2}, std::vector<double>{0.6, 0.2, 0.9, 0.4}, true);
  auto target = make_tensor({2, 1, 2}, std::vector<double>{0.5, 0.5, 0.5, 0.5});
  Tape tape;
  auto loss = weighted_mse(tape, pred, target, {2.0, 1.0});
  pred->zero_grad();
  tape.backward(loss);
  // dL/dpred = 2 w_c (pred - target) / N with N = 4
  CHECK(pred->grad[0] == doctest::Approx(2.0 * 2.0 * 0.1 / 4.0));
  CHECK(pred->grad[1] == doctest::Approx(2.0 * 1.0 * (-0.3) / 4.0));
}

TEST_CASE("adam leaves parameters untouched on zero gradients") {
  ParameterStore store;
  auto w = store.create("w", {4});
  w->values = {1.0, 2.0, 3.0, 4.0};
  w->zero_grad();
  AdamState state;
  adam_step(store, state, 0.01);
  CHECK(w->values == std::vector<double>{1.0, 2.0, 3.0, 4.0});
  CHECK(state.step == 1);
}

TEST_CASE("adam first step from zero moments is a bias-corrected signed step") {
  ParameterStore store;
  auto w = store.create("w", {2});
  w->values = {0.0, 0.0};
  w->ensure_grad();
  w->grad = {0.3, -4.0};
  AdamState state;
  adam_step(store, state, 0.01);
  // mhat = g, vhat = g^2 -> update = -lr * g/(|g| + eps) ~ -lr * sign(g)
  CHECK(w->values[0] == doctest::Approx(-0.01).epsilon(1e-6));
  CHECK(w->values[1] == doctest::Approx(0.01).epsilon(1e-6));
}

TEST_CASE("adam requires gradients for every parameter") {
  ParameterStore store;
  store.create("w", {2});
  AdamState state;
  CHECK_THROWS_AS(adam_step(store, state, 0.01), ContractError);
}

TEST_CASE("adam is deterministic across identical runs") {
  auto run = [] {
    ParameterStore store;
    auto w = store.create("w", {3});
    w->values = {0.5, -0.5, 1.0};
    AdamState state;
    std::mt19937_64 rng(11);
    std::uniform_real_distribution<double> uni(-1.0, 1.0);
    for (int i = 0; i < 10; ++i) {
      w->grad.assign(3, 0.0);
      for (auto& g : w->grad) g = uni(rng);
      adam_step(store, state, 0.05);
    }
    return w->values;
  };
  CHECK(run() == run());
}

TEST_CASE("gradient clipping rescales to the global norm bound") {
  ParameterStore store;
  auto a = store.create("a", {2});
  auto b = store.create("b", {1});
  a->ensure_grad();
  b->ensure_grad();
  a->grad = {3.0, 0.0};
  b->grad = {4.0};  // global norm 5
  clip_gradients(store, 5.0);
  CHECK(a->grad[0] == doctest::Approx(3.0));
  clip_gradients(store, 2.5);
  CHECK(a->grad[0] == doctest::Approx(1.5));
  CHECK(b->grad[0] == doctest::Approx(2.0));
}

TEST_CASE("train produces one report entry per epoch and writes a checkpoint") {
  auto windows = tiny_windows(1, 3.0);
  REQUIRE(!windows.empty());
  TrainConfig cfg;
  cfg.epochs = 1;
  cfg.batch_size = 4;
  cfg.dropout_p = 0.0;
  cfg.seed = 3;
  const auto dir = temp_dir("evtk_train_one");
  auto result = train(tiny_cfg(), windows, cfg, 0.25, dir);
  CHECK(result.state.report.epochs.size() == 1);
  CHECK(std::filesystem::exists(dir + "/checkpoint.evtk"));
  CHECK(std::isfinite(result.state.report.epochs[0].train_loss));
  CHECK(std::isfinite(result.state.report.epochs[0].val_loss));
}

TEST_CASE("training is bit-deterministic for a fixed seed") {
  auto windows = tiny_windows(2, 3.0);
  TrainConfig cfg;
  cfg.epochs = 2;
  cfg.batch_size = 4;
  cfg.seed = 9;
  const auto dir_a = temp_dir("evtk_det_a");
  const auto dir_b = temp_dir("evtk_det_b");
  train(tiny_cfg(), windows, cfg, 0.2, dir_a);
  train(tiny_cfg(), windows, cfg, 0.2, dir_b);
  CHECK(slurp(dir_a + "/checkpoint.evtk") == slurp(dir_b + "/checkpoint.evtk"));
}

TEST_CASE("checkpoints round trip exactly and reject truncation") {
  auto windows = tiny_windows(3, 3.0);
  TrainConfig cfg;
  cfg.epochs = 1;
  cfg.batch_size = 4;
  const auto dir = temp_dir("evtk_roundtrip");
  auto result = train(tiny_cfg(), windows, cfg, 0.0, dir);

  auto loaded = load_checkpoint(dir + "/checkpoint.evtk");
  REQUIRE(loaded.store.names() == result.store.names());
  for (const auto& name : result.store.names()) {
    CHECK(loaded.store.get(name)->values == result.store.get(name)->values);
  }
  for (size_t i = 0; i < result.model.blocks.size(); ++i) {
    CHECK(loaded.model.blocks[i].bn.running_mean == result.model.blocks[i].bn.running_mean);
    CHECK(loaded.model.blocks[i].bn.running_var == result.model.blocks[i].bn.running_var);
  }
  CHECK(loaded.has_train_state);
  CHECK(loaded.state.epochs_done == 1);
  CHECK(loaded.state.adam.step == result.state.adam.step);

  const auto trunc = dir + "/truncated.evtk";
  std::filesystem::copy_file(dir + "/checkpoint.evtk", trunc,
                             std::filesystem::copy_options::overwrite_existing);
  std::filesystem::resize_file(trunc, std::filesystem::file_size(trunc) / 2);
  CHECK_THROWS_AS(load_checkpoint(trunc), FormatError);
}

TEST_CASE("resuming at epoch 2 of 4 concatenates the report to 4 entries") {
  auto windows = tiny_windows(4, 3.0);
  TrainConfig cfg;
  cfg.epochs = 2;
  cfg.batch_size = 4;
  cfg.seed = 21;
  const auto dir = temp_dir("evtk_resume");
  train(tiny_cfg(), windows, cfg, 0.0, dir);

  auto ckpt = load_checkpoint(dir + "/checkpoint.evtk");
  TrainConfig more = cfg;
  more.epochs = 4;
  auto resumed = train(tiny_cfg(), windows, more, 0.0, "", &ckpt);
  CHECK(resumed.state.report.epochs.size() == 4);
  CHECK(resumed.state.epochs_done == 4);

  // and it matches an uninterrupted 4-epoch run bit for bit
  auto straight = train(tiny_cfg(), windows, more, 0.0, "");
  for (const auto& name : straight.store.names()) {
    CHECK(resumed.store.get(name)->values == straight.store.get(name)->values);
  }
}

TEST_CASE("one step with small lr decreases the loss proportionally to lr") {
  auto windows = tiny_windows(5, 3.0);
  REQUIRE(windows.size() >= 2);
  std::vector<SampleWindow> one{windows[0]};

  auto loss_after = [&](double lr) {
    TrainConfig cfg;
    cfg.epochs = 1;
    cfg.batch_size = 2;
    cfg.learning_rate = lr;
    cfg.dropout_p = 0.0;
    cfg.seed = 33;
    cfg.grad_clip_norm = 0.0;  // pure adam step for the first-order check
    auto result = train(tiny_cfg(), one, cfg, 0.0);
    // loss of the trained model on the same window, eval mode
    auto frames = make_tensor({one[0].length, 1, 2, 32, 48});
    one[0].copy_frames(frames->values.data());
    auto target = make_tensor({one[0].length, 1, 2});
    for (int64_t t = 0; t < one[0].length; ++t) {
      target->values[t * 2] = one[0].targets[t][0];
      target->values[t * 2 + 1] = one[0].targets[t][1];
    }
    Tape tape;
    auto pred = forward(tape, result.model, frames, Mode::eval);
    return weighted_mse(tape, pred.coords, target, {1.0, 1.0})->values[0];
  };

  const double base = loss_after(0.0000001);  // effectively untrained
  const double d1 = base - loss_after(0.0005);
  const double d2 = base - loss_after(0.00005);
  CHECK(d1 > 0.0);
  CHECK(d2 > 0.0);
  // first-order regime: deltas scale ~10x within a factor of 0.2
  CHECK(d1 / d2 == doctest::Approx(10.0).epsilon(0.2));
}

TEST_CASE("thirty epochs on the synthetic fixture at least halve the loss") {
  auto windows = tiny_windows(42, 8.0);
  REQUIRE(windows.size() >= 10);
  TrainConfig cfg;
  cfg.epochs = 30;
  cfg.batch_size = 8;
  cfg.dropout_p = 0.0;
  cfg.seed = 42;
  auto result = train(tiny_cfg(), windows, cfg, 0.0);
  const auto& report = result.state.report.epochs;
  CHECK(report.back().train_loss < 0.5 * report.front().train_loss);
}

TEST_CASE("train rejects bad configs and empty data") {
  TrainConfig cfg;
  cfg.batch_size = 1;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg.batch_size = 4;
  cfg.loss_weights = {0.0, 0.0};
  CHECK_THROWS_AS(cfg.validate(), ConfigError);

  TrainConfig ok;
  std::vector<SampleWindow> none;
  CHECK_THROWS_AS(train(tiny_cfg(), none, ok, 0.2), ContractError);

  auto windows = tiny_windows(6, 3.0);
  CHECK_THROWS_AS(train(tiny_cfg(), windows, ok, 0.7), ConfigError);
}
