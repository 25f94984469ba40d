#include "evtrack/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>

namespace evtrack {

void TrainConfig::validate() const {
  if (learning_rate <= 0.0) throw ConfigError("learning rate must be positive");
  if (batch_size < 2) throw ConfigError("batch size must be at least 2");
  if (epochs < 1) throw ConfigError("epochs must be at least 1");
  if (loss_weights[0] < 0.0 || loss_weights[1] < 0.0 ||
      (loss_weights[0] == 0.0 && loss_weights[1] == 0.0)) {
    throw ConfigError("loss weights must be non-negative and not both zero");
  }
  if (dropout_p < 0.0 || dropout_p >= 1.0) throw ConfigError("dropout must be in [0, 1)");
  if (checkpoint_every < 0) throw ConfigError("checkpoint cadence must be non-negative");
}

std::string TrainReport::to_csv() const {
  std::ostringstream os;
  os << "epoch,train_loss,val_loss";
  for (double t : tolerances) {
    os << ",p_acc_" << t;
  }
  os << ",seconds\n";
  char buf[64];
  for (const auto& e : epochs) {
    os << e.epoch;
    std::snprintf(buf, sizeof buf, ",%.9g,%.9g", e.train_loss, e.val_loss);
    os << buf;
    for (double p : e.val_p_acc) {
      std::snprintf(buf, sizeof buf, ",%.6g", p);
      os << buf;
    }
    std::snprintf(buf, sizeof buf, ",%.3f", e.seconds);
    os << buf << "\n";
  }
  return os.str();
}

ad::TensorPtr weighted_mse(ad::Tape& tape, const ad::TensorPtr& pred,
                           const ad::TensorPtr& target,
                           const std::array<double, 2>& weights,
                           const ad::TensorPtr& mask) {
  using namespace ad;
  require_same_shape(*pred, *target, "weighted_mse");
  if (pred->rank() != 3 || pred->dim(2) != 2) {
    throw ShapeError("weighted_mse: expected [L,B,2], got " + shape_str(pred->shape));
  }
  const int64_t steps = pred->dim(0) * pred->dim(1);
  if (mask) {
    if (mask->size() != steps) {
      throw ShapeError("weighted_mse: mask size " + std::to_string(mask->size()) +
                       " vs steps " + std::to_string(steps));
    }
  }
  int64_t kept = 0;
  if (mask) {
    for (int64_t i = 0; i < steps; ++i) kept += mask->values[i] != 0.0 ? 1 : 0;
  } else {
    kept = steps;
  }
  if (kept == 0) throw ContractError("weighted_mse: all entries masked, loss undefined");
  const double n = static_cast<double>(2 * kept);

  auto out = make_tensor({1});
  double acc = 0.0;
  for (int64_t i = 0; i < steps; ++i) {
    if (mask && mask->values[i] == 0.0) continue;
    for (int64_t c = 0; c < 2; ++c) {
      const double d = pred->values[i * 2 + c] - target->values[i * 2 + c];
      acc += weights[static_cast<size_t>(c)] * d * d;
    }
  }
  out->values[0] = acc / n;

  tape.record([pred, target, mask, out, weights, steps, n](Adjoints& adj) {
    const auto* dout = adj.find(out.get());
    if (!dout) return;
    const double g = (*dout)[0];
    auto& dpred = adj.of(pred);
    auto& dtarget = adj.of(target);
    for (int64_t i = 0; i < steps; ++i) {
      if (mask && mask->values[i] == 0.0) continue;
      for (int64_t c = 0; c < 2; ++c) {
        const double d = pred->values[i * 2 + c] - target->values[i * 2 + c];
        const double contrib = g * 2.0 * weights[static_cast<size_t>(c)] * d / n;
        dpred[i * 2 + c] += contrib;
        dtarget[i * 2 + c] -= contrib;
      }
    }
  });
  return out;
}

void adam_step(ad::ParameterStore& store, AdamState& state, double lr,
               double beta1, double beta2, double eps) {
  const auto& names = store.names();
  if (state.m.empty()) {
    state.m.resize(names.size());
    state.v.resize(names.size());
    for (size_t i = 0; i < names.size(); ++i) {
      const auto t = store.get(names[i]);
      state.m[i].assign(t->values.size(), 0.0);
      state.v[i].assign(t->values.size(), 0.0);
    }
  }
  if (state.m.size() != names.size()) {
    throw ContractError("adam_step: moment arrays do not match parameter count");
  }
  state.step += 1;
  const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(state.step));
  for (size_t pi = 0; pi < names.size(); ++pi) {
    auto t = store.get(names[pi]);
    if (t->grad.size() != t->values.size()) {
      throw ContractError("adam_step: gradient missing for parameter '" + names[pi] + "'");
    }
    auto& m = state.m[pi];
    auto& v = state.v[pi];
    for (size_t i = 0; i < t->values.size(); ++i) {
      const double g = t->grad[i];
      m[i] = beta1 * m[i] + (1.0 - beta1) * g;
      v[i] = beta2 * v[i] + (1.0 - beta2) * g * g;
      const double mhat = m[i] / bc1;
      const double vhat = v[i] / bc2;
      t->values[i] -= lr * mhat / (std::sqrt(vhat) + eps);
    }
  }
}

void clip_gradients(ad::ParameterStore& store, double max_norm) {
  if (max_norm <= 0.0) return;
  double sq = 0.0;
  for (const auto& name : store.names()) {
    const auto t = store.get(name);
    for (double g : t->grad) sq += g * g;
  }
  const double norm = std::sqrt(sq);
  if (norm <= max_norm) return;
  const double scale = max_norm / norm;
  for (const auto& name : store.names()) {
    auto t = store.get(name);
    for (double& g : t->grad) g *= scale;
  }
}

namespace {

constexpr char kCheckpointMagic[4] = {'E', 'V', 'T', 'K'};
constexpr uint32_t kCheckpointVersion = 1;

struct Batch {
  ad::TensorPtr frames;   // [L,B,2,H,W]
  ad::TensorPtr targets;  // [L,B,2]
  ad::TensorPtr mask;     // [L,B] of 0/1, or null
};

Batch assemble_batch(const std::vector<SampleWindow>& data,
                     const std::vector<size_t>& indices, size_t first, size_t count,
                     bool with_mask) {
  const auto& w0 = data[indices[first]];
  const int64_t len = w0.length;
  const int64_t h = w0.source->height, w = w0.source->width;
  const int64_t b = static_cast<int64_t>(count);
  Batch batch;
  batch.frames = ad::make_tensor({len, b, 2, h, w});
  batch.targets = ad::make_tensor({len, b, 2});
  if (with_mask) batch.mask = ad::make_tensor({len, b});
  const int64_t frame_sz = 2 * h * w;
  std::vector<double> tmp(static_cast<size_t>(len * frame_sz));
  for (size_t bi = 0; bi < count; ++bi) {
    const auto& win = data[indices[first + bi]];
    if (win.length != len || win.source->height != h || win.source->width != w) {
      throw ContractError("train: windows disagree on shape");
    }
    win.copy_frames(tmp.data());
    for (int64_t t = 0; t < len; ++t) {
      std::copy(tmp.begin() + t * frame_sz, tmp.begin() + (t + 1) * frame_sz,
                batch.frames->values.begin() + (t * b + static_cast<int64_t>(bi)) * frame_sz);
      batch.targets->values[(t * b + static_cast<int64_t>(bi)) * 2 + 0] = win.targets[t][0];
      batch.targets->values[(t * b + static_cast<int64_t>(bi)) * 2 + 1] = win.targets[t][1];
      if (with_mask) {
        batch.mask->values[t * b + static_cast<int64_t>(bi)] =
            win.close_mask[t] != 0 ? 0.0 : 1.0;
      }
    }
  }
  return batch;
}

}  // namespace

void save_checkpoint(const std::string& path, const Model& model,
                     const ad::ParameterStore& store, const TrainState* state) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw FormatError("cannot write checkpoint: " + path);
  os.write(kCheckpointMagic, 4);
  ad::write_u32(os, kCheckpointVersion);
  ad::write_string(os, model.cfg.serialize());

  ad::write_u32(os, static_cast<uint32_t>(store.count()));
  for (const auto& name : store.names()) {
    const auto t = store.get(name);
    ad::write_named_array(os, name, t->shape, t->values);
  }

  ad::write_u32(os, static_cast<uint32_t>(2 * model.blocks.size()));
  for (size_t i = 0; i < model.blocks.size(); ++i) {
    const auto& blk = model.blocks[i];
    const std::string tag = "bn" + std::to_string(i);
    ad::write_named_array(os, tag + ".running_mean", {blk.c_out}, blk.bn.running_mean);
    ad::write_named_array(os, tag + ".running_var", {blk.c_out}, blk.bn.running_var);
  }

  os.put(state ? 1 : 0);
  if (state) {
    ad::write_u64(os, state->adam.step);
    ad::write_u64(os, state->epochs_done);
    for (size_t pi = 0; pi < store.count(); ++pi) {
      ad::write_bytes(os, state->adam.m[pi].data(), state->adam.m[pi].size() * sizeof(double));
      ad::write_bytes(os, state->adam.v[pi].data(), state->adam.v[pi].size() * sizeof(double));
    }
    // wall-clock stays out of the checkpoint so identical runs produce
    // identical bytes; timings live in the separately written report csv
    TrainReport stable = state->report;
    for (auto& e : stable.epochs) e.seconds = 0.0;
    ad::write_string(os, stable.to_csv());
  }
  if (!os) throw FormatError("checkpoint write failed: " + path);
}

namespace {

TrainReport parse_report_csv(const std::string& csv) {
  TrainReport report;
  std::istringstream is(csv);
  std::string line;
  if (!std::getline(is, line)) return report;
  {
    std::istringstream hs(line);
    std::string col;
    while (std::getline(hs, col, ',')) {
      if (col.rfind("p_acc_", 0) == 0) report.tolerances.push_back(std::stod(col.substr(6)));
    }
  }
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string field;
    EpochStats e;
    std::getline(ls, field, ',');
    e.epoch = std::stoll(field);
    std::getline(ls, field, ',');
    e.train_loss = std::stod(field);
    std::getline(ls, field, ',');
    e.val_loss = std::stod(field);
    for (size_t i = 0; i < report.tolerances.size(); ++i) {
      std::getline(ls, field, ',');
      e.val_p_acc.push_back(std::stod(field));
    }
    std::getline(ls, field, ',');
    e.seconds = std::stod(field);
    report.epochs.push_back(std::move(e));
  }
  return report;
}

}  // namespace

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw FormatError("cannot open checkpoint: " + path);
  char magic[4];
  is.read(magic, 4);
  if (is.gcount() != 4 || std::memcmp(magic, kCheckpointMagic, 4) != 0) {
    throw FormatError(path + ": not an EVTK checkpoint (bad magic)");
  }
  const uint32_t version = ad::read_u32(is);
  if (version != kCheckpointVersion) {
    throw FormatError(path + ": unsupported checkpoint version " + std::to_string(version));
  }
  Checkpoint ckpt;
  ckpt.model_cfg = ModelConfig::deserialize(ad::read_string(is));
  ckpt.model = build_model(ckpt.model_cfg, ckpt.store);

  const uint32_t param_count = ad::read_u32(is);
  if (param_count != ckpt.store.count()) {
    throw FormatError(path + ": parameter count " + std::to_string(param_count) +
                      " does not match config (" + std::to_string(ckpt.store.count()) + ")");
  }
  for (uint32_t i = 0; i < param_count; ++i) {
    auto rec = ad::read_named_array(is);
    if (!ckpt.store.has(rec.name)) {
      throw FormatError(path + ": unexpected parameter '" + rec.name + "'");
    }
    auto t = ckpt.store.get(rec.name);
    if (rec.shape != t->shape) {
      throw FormatError(path + ": parameter '" + rec.name + "' shape " +
                        ad::shape_str(rec.shape) + " does not match config " +
                        ad::shape_str(t->shape));
    }
    t->values = std::move(rec.values);
  }

  const uint32_t buffer_count = ad::read_u32(is);
  for (uint32_t i = 0; i < buffer_count; ++i) {
    auto rec = ad::read_named_array(is);
    bool matched = false;
    for (size_t bi = 0; bi < ckpt.model.blocks.size(); ++bi) {
      const std::string tag = "bn" + std::to_string(bi);
      if (rec.name == tag + ".running_mean") {
        ckpt.model.blocks[bi].bn.running_mean = std::move(rec.values);
        matched = true;
      } else if (rec.name == tag + ".running_var") {
        ckpt.model.blocks[bi].bn.running_var = std::move(rec.values);
        matched = true;
      }
    }
    if (!matched) throw FormatError(path + ": unexpected buffer '" + rec.name + "'");
  }

  int state_flag = is.get();
  if (state_flag == std::char_traits<char>::eof()) {
    throw FormatError(path + ": truncated before train-state flag");
  }
  if (state_flag == 1) {
    ckpt.has_train_state = true;
    ckpt.state.adam.step = ad::read_u64(is);
    ckpt.state.epochs_done = ad::read_u64(is);
    ckpt.state.adam.m.resize(ckpt.store.count());
    ckpt.state.adam.v.resize(ckpt.store.count());
    const auto& names = ckpt.store.names();
    for (size_t pi = 0; pi < names.size(); ++pi) {
      const size_t n = ckpt.store.get(names[pi])->values.size();
      ckpt.state.adam.m[pi].resize(n);
      ckpt.state.adam.v[pi].resize(n);
      is.read(reinterpret_cast<char*>(ckpt.state.adam.m[pi].data()),
              static_cast<std::streamsize>(n * sizeof(double)));
      is.read(reinterpret_cast<char*>(ckpt.state.adam.v[pi].data()),
              static_cast<std::streamsize>(n * sizeof(double)));
      if (!is) throw FormatError(path + ": truncated train state");
    }
    ckpt.state.report = parse_report_csv(ad::read_string(is));
  }
  return ckpt;
}

TrainResult train(const ModelConfig& model_cfg_in,
                  const std::vector<SampleWindow>& data, const TrainConfig& cfg,
                  double val_split, const std::string& checkpoint_dir,
                  Checkpoint* resume) {
  cfg.validate();
  if (data.empty()) throw ContractError("train: no training windows");
  if (val_split < 0.0 || val_split > 0.5) throw ConfigError("val split must be in [0, 0.5]");

  ModelConfig model_cfg = model_cfg_in;
  model_cfg.dropout_p = cfg.dropout_p;

  TrainResult result;
  if (resume) {
    if (resume->model_cfg.serialize() != model_cfg.serialize()) {
      throw ConfigError("resume checkpoint was trained with a different model config");
    }
    result.model = resume->model;
    result.store = resume->store;
    result.state = resume->state;
  } else {
    result.model = build_model(model_cfg, result.store);
  }
  result.state.report.tolerances = cfg.tolerances;

  // Deterministic split; the permutation depends only on the seed.
  std::vector<size_t> perm(data.size());
  std::iota(perm.begin(), perm.end(), 0);
  std::mt19937_64 split_rng(ad::mix_seed(cfg.seed, 0x5EED5ULL));
  std::shuffle(perm.begin(), perm.end(), split_rng);
  const size_t n_val = static_cast<size_t>(std::llround(val_split * static_cast<double>(data.size())));
  std::vector<size_t> val_idx(perm.begin(), perm.begin() + static_cast<int64_t>(n_val));
  std::vector<size_t> train_idx(perm.begin() + static_cast<int64_t>(n_val), perm.end());
  if (train_idx.empty()) throw ContractError("train: validation split leaves no training data");

  const double w = static_cast<double>(data[0].source->width);
  const double h = static_cast<double>(data[0].source->height);

  for (int64_t epoch = static_cast<int64_t>(result.state.epochs_done); epoch < cfg.epochs;
       ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    // All intra-epoch randomness derives from (seed, epoch) so a resumed run
    // replays the same schedule as an uninterrupted one.
    std::mt19937_64 epoch_rng(ad::mix_seed(cfg.seed, 0xE90C000ULL + static_cast<uint64_t>(epoch)));
    std::vector<size_t> order = train_idx;
    std::shuffle(order.begin(), order.end(), epoch_rng);

    double loss_sum = 0.0;
    int64_t loss_windows = 0;
    for (size_t first = 0; first < order.size(); first += static_cast<size_t>(cfg.batch_size)) {
      const size_t count = std::min(static_cast<size_t>(cfg.batch_size), order.size() - first);
      auto batch = assemble_batch(data, order, first, count, cfg.use_close_mask);
      ad::Tape tape;
      auto pred = forward(tape, result.model, batch.frames, ad::Mode::train, &epoch_rng);
      auto loss = weighted_mse(tape, pred.coords, batch.targets, cfg.loss_weights,
                               batch.mask);
      result.store.zero_grads();
      tape.backward(loss);
      clip_gradients(result.store, cfg.grad_clip_norm);
      adam_step(result.store, result.state.adam, cfg.learning_rate);
      loss_sum += loss->values[0] * static_cast<double>(count);
      loss_windows += static_cast<int64_t>(count);
    }

    EpochStats stats;
    stats.epoch = epoch + 1;
    stats.train_loss = loss_sum / static_cast<double>(loss_windows);
    stats.val_p_acc.assign(cfg.tolerances.size(), std::nan(""));
    stats.val_loss = std::nan("");
    if (!val_idx.empty()) {
      double val_sum = 0.0;
      int64_t val_windows = 0;
      std::vector<int64_t> correct(cfg.tolerances.size(), 0);
      int64_t total = 0;
      for (size_t vi = 0; vi < val_idx.size(); ++vi) {
        std::vector<size_t> one{val_idx[vi]};
        auto batch = assemble_batch(data, one, 0, 1, cfg.use_close_mask);
        ad::Tape tape;
        auto pred = forward(tape, result.model, batch.frames, ad::Mode::eval);
        auto loss = weighted_mse(tape, pred.coords, batch.targets, cfg.loss_weights,
                                 batch.mask);
        val_sum += loss->values[0];
        val_windows += 1;
        for (int64_t t = 0; t < batch.targets->dim(0); ++t) {
          if (batch.mask && batch.mask->values[t] == 0.0) continue;
          const double dx = (pred.coords->values[t * 2] - batch.targets->values[t * 2]) * w;
          const double dy = (pred.coords->values[t * 2 + 1] - batch.targets->values[t * 2 + 1]) * h;
          const double dist = std::hypot(dx, dy);
          for (size_t ti = 0; ti < cfg.tolerances.size(); ++ti) {
            if (dist <= cfg.tolerances[ti]) correct[ti] += 1;
          }
          total += 1;
        }
      }
      stats.val_loss = val_sum / static_cast<double>(val_windows);
      if (total > 0) {
        for (size_t ti = 0; ti < cfg.tolerances.size(); ++ti) {
          stats.val_p_acc[ti] = 100.0 * static_cast<double>(correct[ti]) /
                                static_cast<double>(total);
        }
      }
    }
    stats.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    result.state.report.epochs.push_back(stats);
    result.state.epochs_done = static_cast<uint64_t>(epoch + 1);

    if (!checkpoint_dir.empty() && cfg.checkpoint_every > 0 &&
        (epoch + 1) % cfg.checkpoint_every == 0 && epoch + 1 < cfg.epochs) {
      const auto path = std::filesystem::path(checkpoint_dir) /
                        ("checkpoint_epoch" + std::to_string(epoch + 1) + ".evtk");
      save_checkpoint(path.string(), result.model, result.store, &result.state);
    }
  }

  if (!checkpoint_dir.empty()) {
    const auto path = std::filesystem::path(checkpoint_dir) / "checkpoint.evtk";
    save_checkpoint(path.string(), result.model, result.store, &result.state);
  }
  return result;
}

}  // namespace evtrack
