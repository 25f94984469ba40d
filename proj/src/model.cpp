#include "evtrack/model.hpp"

#include <sstream>

namespace evtrack {

ModelVariant parse_model_variant(const std::string& s) {
  if (s == "cnn_gru") return ModelVariant::cnn_gru;
  if (s == "cnn_bilstm") return ModelVariant::cnn_bilstm;
  if (s == "cnn_lstm") return ModelVariant::cnn_lstm;
  throw ConfigError("unknown model variant '" + s + "'");
}

std::string to_string(ModelVariant v) {
  switch (v) {
    case ModelVariant::cnn_gru: return "cnn_gru";
    case ModelVariant::cnn_bilstm: return "cnn_bilstm";
    case ModelVariant::cnn_lstm: return "cnn_lstm";
  }
  return "cnn_lstm";
}

void ModelConfig::validate() const {
  if (variant != ModelVariant::cnn_lstm && rnn_layers != 1) {
    throw ConfigError(to_string(variant) + " uses a single recurrent layer, got " +
                      std::to_string(rnn_layers));
  }
  if (variant == ModelVariant::cnn_lstm && rnn_layers < 2) {
    throw ConfigError("cnn_lstm requires at least 2 recurrent layers, got " +
                      std::to_string(rnn_layers));
  }
  if (in_channels < 1 || in_height < 2 || in_width < 2) {
    throw ConfigError("input dims too small: " + std::to_string(in_channels) + "x" +
                      std::to_string(in_height) + "x" + std::to_string(in_width));
  }
  if (conv_channels.empty()) throw ConfigError("conv channel plan is empty");
  if (kernel < 1 || kernel % 2 == 0) {
    throw ConfigError("kernel must be odd and positive, got " + std::to_string(kernel));
  }
  if (feature_dim < 1 || hidden < 1) throw ConfigError("feature/hidden dims must be positive");
  if (dropout_p < 0.0 || dropout_p >= 1.0) throw ConfigError("dropout must be in [0, 1)");
  // Shape walk: each block halves spatial dims (odd dims floored via crop).
  int64_t h = in_height, w = in_width;
  for (size_t i = 0; i < conv_channels.size(); ++i) {
    h = (h - h % 2) / 2;
    w = (w - w % 2) / 2;
    if (h < 1 || w < 1) {
      throw ConfigError("input " + std::to_string(in_height) + "x" + std::to_string(in_width) +
                        " collapses to nothing after " + std::to_string(i + 1) + " pool stages");
    }
  }
}

std::string ModelConfig::serialize() const {
  std::ostringstream os;
  os << "variant=" << to_string(variant) << "\n";
  os << "in_channels=" << in_channels << "\n";
  os << "in_height=" << in_height << "\n";
  os << "in_width=" << in_width << "\n";
  os << "conv_channels=";
  for (size_t i = 0; i < conv_channels.size(); ++i) {
    if (i) os << ",";
    os << conv_channels[i];
  }
  os << "\n";
  os << "kernel=" << kernel << "\n";
  os << "feature_dim=" << feature_dim << "\n";
  os << "hidden=" << hidden << "\n";
  os << "rnn_layers=" << rnn_layers << "\n";
  os << "dropout=" << dropout_p << "\n";
  os << "seed=" << seed << "\n";
  return os.str();
}

ModelConfig ModelConfig::deserialize(const std::string& text) {
  ModelConfig cfg;
  cfg.conv_channels.clear();
  std::istringstream is(text);
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw FormatError("model config line without '=': " + line);
    const std::string key = line.substr(0, eq);
    const std::string val = line.substr(eq + 1);
    if (key == "variant") cfg.variant = parse_model_variant(val);
    else if (key == "in_channels") cfg.in_channels = std::stoll(val);
    else if (key == "in_height") cfg.in_height = std::stoll(val);
    else if (key == "in_width") cfg.in_width = std::stoll(val);
    else if (key == "conv_channels") {
      std::istringstream vs(val);
      std::string tok;
      while (std::getline(vs, tok, ',')) cfg.conv_channels.push_back(std::stoll(tok));
    } else if (key == "kernel") cfg.kernel = std::stoll(val);
    else if (key == "feature_dim") cfg.feature_dim = std::stoll(val);
    else if (key == "hidden") cfg.hidden = std::stoll(val);
    else if (key == "rnn_layers") cfg.rnn_layers = std::stoll(val);
    else if (key == "dropout") cfg.dropout_p = std::stod(val);
    else if (key == "seed") cfg.seed = std::stoull(val);
    else throw FormatError("unknown model config key '" + key + "'");
  }
  cfg.validate();
  return cfg;
}

Model build_model(const ModelConfig& cfg, ad::ParameterStore& store) {
  cfg.validate();
  Model model;
  model.cfg = cfg;
  store.rng_seed = cfg.seed;
  std::mt19937_64 rng(ad::mix_seed(cfg.seed, 0x1817ULL));

  int64_t c_in = cfg.in_channels;
  int64_t h = cfg.in_height, w = cfg.in_width;
  for (size_t i = 0; i < cfg.conv_channels.size(); ++i) {
    ConvBlock blk;
    blk.c_in = c_in;
    blk.c_out = cfg.conv_channels[i];
    blk.in_h = h;
    blk.in_w = w;
    blk.crop_h = h - h % 2;
    blk.crop_w = w - w % 2;
    blk.out_h = blk.crop_h / 2;
    blk.out_w = blk.crop_w / 2;
    const std::string tag = std::to_string(i);
    blk.w = store.create("conv" + tag + ".w", {blk.c_out, blk.c_in, cfg.kernel, cfg.kernel});
    blk.b = store.create("conv" + tag + ".b", {blk.c_out});
    glorot_uniform(*blk.w, blk.c_in * cfg.kernel * cfg.kernel,
                   blk.c_out * cfg.kernel * cfg.kernel, rng);
    blk.gamma = store.create("bn" + tag + ".gamma", {blk.c_out});
    blk.beta = store.create("bn" + tag + ".beta", {blk.c_out});
    std::fill(blk.gamma->values.begin(), blk.gamma->values.end(), 1.0);
    blk.bn = ad::BatchNormState(blk.c_out);
    model.blocks.push_back(std::move(blk));
    c_in = cfg.conv_channels[i];
    h = model.blocks.back().out_h;
    w = model.blocks.back().out_w;
  }
  model.flat_dim = c_in * h * w;

  model.feat_w = store.create("feat.w", {cfg.feature_dim, model.flat_dim});
  model.feat_b = store.create("feat.b", {cfg.feature_dim});
  glorot_uniform(*model.feat_w, model.flat_dim, cfg.feature_dim, rng);

  model.rnn.kind = cfg.variant == ModelVariant::cnn_gru ? ad::CellKind::gru
                                                        : ad::CellKind::lstm;
  model.rnn.layers = cfg.rnn_layers;
  model.rnn.bidirectional = cfg.variant == ModelVariant::cnn_bilstm;
  model.rnn.hidden = cfg.hidden;
  const int64_t gates = model.rnn.kind == ad::CellKind::lstm ? 4 : 3;
  for (int64_t layer = 0; layer < model.rnn.layers; ++layer) {
    const int64_t in_dim = layer == 0 ? cfg.feature_dim
                                      : cfg.hidden * model.rnn.directions();
    for (int64_t dir = 0; dir < model.rnn.directions(); ++dir) {
      const std::string tag = "rnn.l" + std::to_string(layer) +
                              (dir == 0 ? ".fwd" : ".bwd");
      ad::CellParams p;
      p.w_in = store.create(tag + ".w_in", {gates * cfg.hidden, in_dim});
      p.w_rec = store.create(tag + ".w_rec", {gates * cfg.hidden, cfg.hidden});
      p.bias = store.create(tag + ".b", {gates * cfg.hidden});
      glorot_uniform(*p.w_in, in_dim, cfg.hidden, rng);
      glorot_uniform(*p.w_rec, cfg.hidden, cfg.hidden, rng);
      if (model.rnn.kind == ad::CellKind::lstm) {
        // forget gate bias starts at 1 so early training keeps memory open
        for (int64_t j = cfg.hidden; j < 2 * cfg.hidden; ++j) p.bias->values[j] = 1.0;
      }
      model.rnn.cells.push_back(std::move(p));
    }
  }

  model.head_w = store.create("head.w", {2, model.rnn_out_dim()});
  model.head_b = store.create("head.b", {2});
  glorot_uniform(*model.head_w, model.rnn_out_dim(), 2, rng);
  return model;
}

Prediction forward(ad::Tape& tape, Model& model, const ad::TensorPtr& frames,
                   ad::Mode mode, std::mt19937_64* dropout_rng) {
  using namespace ad;
  if (frames->rank() != 5 || frames->dim(2) != model.cfg.in_channels ||
      frames->dim(3) != model.cfg.in_height || frames->dim(4) != model.cfg.in_width) {
    throw ShapeError("forward: frames " + shape_str(frames->shape) +
                     " do not match model input " + std::to_string(model.cfg.in_channels) +
                     "x" + std::to_string(model.cfg.in_height) + "x" +
                     std::to_string(model.cfg.in_width));
  }
  if (mode == Mode::train && model.cfg.dropout_p > 0.0 && !dropout_rng) {
    throw ContractError("forward: train mode with dropout needs an rng");
  }
  const int64_t len = frames->dim(0);
  const int64_t batch = frames->dim(1);

  // Time folds into the batch axis so every frame shares the encoder weights.
  auto x = reshape(tape, frames,
                   {len * batch, model.cfg.in_channels, model.cfg.in_height,
                    model.cfg.in_width});
  for (auto& blk : model.blocks) {
    x = conv2d(tape, x, blk.w, blk.b, 1, model.cfg.kernel / 2);
    x = batch_norm(tape, x, blk.gamma, blk.beta, blk.bn, mode, kBatchNormMomentum,
                   kBatchNormEps);
    x = activation(tape, x, Activation::relu);
    if (blk.crop_h != blk.in_h || blk.crop_w != blk.in_w) {
      x = crop2d(tape, x, blk.crop_h, blk.crop_w);
    }
    x = avg_pool2d(tape, x, 2);
  }
  x = reshape(tape, x, {len * batch, model.flat_dim});
  x = linear(tape, x, model.feat_w, model.feat_b);
  if (mode == Mode::train && model.cfg.dropout_p > 0.0) {
    x = dropout(tape, x, model.cfg.dropout_p, mode, *dropout_rng);
  }
  auto seq = reshape(tape, x, {len, batch, model.cfg.feature_dim});
  auto rnn_out = run_recurrent(tape, seq, model.rnn);
  auto flat = reshape(tape, rnn_out, {len * batch, model.rnn_out_dim()});
  auto scores = linear(tape, flat, model.head_w, model.head_b);
  auto coords = activation(tape, scores, Activation::sigmoid);
  return Prediction{reshape(tape, coords, {len, batch, 2})};
}

}  // namespace evtrack
