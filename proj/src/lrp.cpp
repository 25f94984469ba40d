#include "evtrack/lrp.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>

namespace evtrack::lrp {

namespace {

// Denominators smaller than this are singular for the epsilon-free rules.
constexpr double kSingularFloor = 1e-15;

double stab_eps(double s, double epsilon) {
  return s >= 0.0 ? s + epsilon : s - epsilon;
}

// t_k = R_k / denominator(s_k); zero-relevance outputs distribute nothing.
std::vector<double> ratios(const std::vector<double>& R, const std::vector<double>& s,
                           Rule rule, double epsilon, const std::string& layer_name) {
  std::vector<double> t(R.size(), 0.0);
  for (size_t k = 0; k < R.size(); ++k) {
    if (R[k] == 0.0) continue;
    if (rule == Rule::epsilon) {
      t[k] = R[k] / stab_eps(s[k], epsilon);
    } else {
      if (std::abs(s[k]) < kSingularFloor) {
        throw SingularDenominatorError(
            "relevance denominator vanished in layer '" + layer_name +
            "' (output " + std::to_string(k) + "); the epsilon rule resolves this");
      }
      t[k] = R[k] / s[k];
    }
  }
  return t;
}

std::vector<double> apply_gamma_w(const std::vector<double>& w, double gamma) {
  std::vector<double> out(w.size());
  for (size_t i = 0; i < w.size(); ++i) {
    out[i] = w[i] + (w[i] > 0.0 ? gamma * w[i] : 0.0);
  }
  return out;
}

}  // namespace

Rule parse_rule(const std::string& s) {
  if (s == "lrp0") return Rule::lrp0;
  if (s == "epsilon") return Rule::epsilon;
  if (s == "gamma") return Rule::gamma;
  throw ConfigError("unknown LRP rule '" + s + "'");
}

std::string to_string(Rule r) {
  switch (r) {
    case Rule::lrp0: return "lrp0";
    case Rule::epsilon: return "epsilon";
    case Rule::gamma: return "gamma";
  }
  return "lrp0";
}

ExplainTarget parse_explain_target(const std::string& s) {
  if (s == "x") return ExplainTarget::x_output;
  if (s == "y") return ExplainTarget::y_output;
  if (s == "sum") return ExplainTarget::sum;
  throw ConfigError("unknown explain target '" + s + "' (expected x, y, or sum)");
}

std::string to_string(ExplainTarget t) {
  switch (t) {
    case ExplainTarget::x_output: return "x";
    case ExplainTarget::y_output: return "y";
    case ExplainTarget::sum: return "sum";
  }
  return "sum";
}

double RelevanceMap::total() const {
  double s = 0.0;
  for (double v : data) s += v;
  return s;
}

std::vector<double> lrp_linear(const std::vector<double>& R_out,
                               const std::vector<double>& x, const double* w,
                               const double* bias, int64_t m, int64_t n, Rule rule,
                               double epsilon, double gamma,
                               const std::string& layer_name) {
  if (static_cast<int64_t>(R_out.size()) != m || static_cast<int64_t>(x.size()) != n) {
    throw ShapeError("lrp_linear: R_out/x sizes do not match layer " + layer_name);
  }
  const double* weights = w;
  std::vector<double> reweighted;
  std::vector<double> bias_r;
  if (rule == Rule::gamma) {
    reweighted.assign(w, w + m * n);
    reweighted = apply_gamma_w(reweighted, gamma);
    weights = reweighted.data();
    if (bias) {
      bias_r.assign(bias, bias + m);
      bias_r = apply_gamma_w(bias_r, gamma);
      bias = bias_r.data();
    }
  }
  std::vector<double> s(static_cast<size_t>(m));
  kernels::linear_forward(x.data(), weights, bias, s.data(), 1, n, m);
  const auto t = ratios(R_out, s, rule, epsilon, layer_name);
  std::vector<double> back(static_cast<size_t>(n), 0.0);
  kernels::linear_backward_input(t.data(), weights, back.data(), 1, n, m);
  for (int64_t j = 0; j < n; ++j) back[j] *= x[j];
  return back;
}

std::vector<double> lrp_conv(const std::vector<double>& R_out,
                             const std::vector<double>& x,
                             const std::vector<double>& w, const double* bias,
                             const kernels::Conv2dDims& dims, Rule rule,
                             double epsilon, double gamma,
                             const std::string& layer_name) {
  if (dims.batch != 1) throw ContractError("lrp_conv: single-sample propagation only");
  const int64_t out_n = dims.c_out * dims.h_out * dims.w_out;
  const int64_t in_n = dims.c_in * dims.h_in * dims.w_in;
  if (static_cast<int64_t>(R_out.size()) != out_n || static_cast<int64_t>(x.size()) != in_n) {
    throw ShapeError("lrp_conv: R_out/x sizes do not match layer " + layer_name);
  }
  const std::vector<double>* weights = &w;
  std::vector<double> reweighted;
  std::vector<double> bias_r;
  if (rule == Rule::gamma) {
    reweighted = apply_gamma_w(w, gamma);
    weights = &reweighted;
    if (bias) {
      bias_r.assign(bias, bias + dims.c_out);
      bias_r = apply_gamma_w(bias_r, gamma);
      bias = bias_r.data();
    }
  }
  std::vector<double> s(static_cast<size_t>(out_n));
  kernels::conv2d_forward(x.data(), weights->data(), bias, s.data(), dims);
  const auto t = ratios(R_out, s, rule, epsilon, layer_name);
  std::vector<double> back(static_cast<size_t>(in_n), 0.0);
  kernels::conv2d_backward_input(t.data(), weights->data(), back.data(), dims);
  for (int64_t j = 0; j < in_n; ++j) back[j] *= x[j];
  return back;
}

std::vector<double> lrp_avg_pool(const std::vector<double>& R_out,
                                 const std::vector<double>& x, int64_t c, int64_t h,
                                 int64_t w, int64_t k, Rule rule, double epsilon,
                                 const std::string& layer_name) {
  const int64_t oh = h / k, ow = w / k;
  if (static_cast<int64_t>(x.size()) != c * h * w ||
      static_cast<int64_t>(R_out.size()) != c * oh * ow) {
    throw ShapeError("lrp_avg_pool: sizes do not match layer " + layer_name);
  }
  std::vector<double> s(static_cast<size_t>(c * oh * ow));
  kernels::avg_pool_forward(x.data(), s.data(), 1, c, h, w, k);
  const auto t = ratios(R_out, s, rule, epsilon, layer_name);
  std::vector<double> back(x.size(), 0.0);
  kernels::avg_pool_backward(t.data(), back.data(), 1, c, h, w, k);
  for (size_t j = 0; j < back.size(); ++j) back[j] *= x[j];
  return back;
}

FoldedAffine canonize_batch_norm(const std::vector<double>& w,
                                 const std::vector<double>& b, int64_t out_channels,
                                 const std::vector<double>& gamma,
                                 const std::vector<double>& beta,
                                 const std::vector<double>& running_mean,
                                 const std::vector<double>& running_var, double eps) {
  if (running_mean.empty() || running_var.empty()) {
    throw ContractError("canonize_batch_norm: running statistics unavailable");
  }
  if (static_cast<int64_t>(gamma.size()) != out_channels ||
      static_cast<int64_t>(beta.size()) != out_channels ||
      static_cast<int64_t>(running_mean.size()) != out_channels ||
      static_cast<int64_t>(running_var.size()) != out_channels ||
      w.size() % static_cast<size_t>(out_channels) != 0) {
    throw ShapeError("canonize_batch_norm: inconsistent channel counts");
  }
  const size_t row = w.size() / static_cast<size_t>(out_channels);
  FoldedAffine folded;
  folded.w.resize(w.size());
  folded.b.resize(static_cast<size_t>(out_channels));
  for (int64_t ch = 0; ch < out_channels; ++ch) {
    const double scale = gamma[ch] / std::sqrt(running_var[ch] + eps);
    for (size_t j = 0; j < row; ++j) {
      folded.w[static_cast<size_t>(ch) * row + j] = w[static_cast<size_t>(ch) * row + j] * scale;
    }
    const double bias_in = b.empty() ? 0.0 : b[static_cast<size_t>(ch)];
    folded.b[static_cast<size_t>(ch)] = (bias_in - running_mean[ch]) * scale + beta[ch];
  }
  return folded;
}

StepRelevance lrp_lstm_step(const LstmStepTrace& trace, const double* w_in,
                            const double* w_rec, int64_t hidden, int64_t in_dim,
                            const std::vector<double>& R_h,
                            const std::vector<double>& R_c, double epsilon) {
  StepRelevance rel;
  rel.x.assign(static_cast<size_t>(in_dim), 0.0);
  rel.h_prev.assign(static_cast<size_t>(hidden), 0.0);
  rel.c_prev.assign(static_cast<size_t>(hidden), 0.0);

  // h = o . tanh(c): the output gate takes nothing, everything lands on c.
  std::vector<double> R_cell(static_cast<size_t>(hidden));
  for (int64_t j = 0; j < hidden; ++j) R_cell[j] = R_h[j] + R_c[j];

  // c = f.c_prev + i.g: split per unit against the cell value itself.
  std::vector<double> R_g(static_cast<size_t>(hidden), 0.0);
  for (int64_t j = 0; j < hidden; ++j) {
    if (R_cell[j] == 0.0) continue;
    const double denom = stab_eps(trace.c[j], epsilon);
    rel.c_prev[j] = R_cell[j] * (trace.gate_f[j] * trace.c_prev[j]) / denom;
    R_g[j] = R_cell[j] * (trace.gate_i[j] * trace.gate_g[j]) / denom;
  }

  // g = tanh(Wg x + Ug h_prev + bg): tanh passes relevance; the linear part
  // splits over x and h_prev contributions against the cached pre-activation
  // (which already includes the bias, so the bias share is absorbed).
  const double* wg = w_in + 2 * hidden * in_dim;   // rows [2H, 3H)
  const double* ug = w_rec + 2 * hidden * hidden;
  for (int64_t j = 0; j < hidden; ++j) {
    if (R_g[j] == 0.0) continue;
    const double t = R_g[j] / stab_eps(trace.pre_g[j], epsilon);
    const double* wrow = wg + j * in_dim;
    for (int64_t i = 0; i < in_dim; ++i) rel.x[i] += t * wrow[i] * trace.x[i];
    const double* urow = ug + j * hidden;
    for (int64_t i = 0; i < hidden; ++i) rel.h_prev[i] += t * urow[i] * trace.h_prev[i];
  }
  return rel;
}

StepRelevance lrp_gru_step(const GruStepTrace& trace, const double* w_in,
                           const double* w_rec, int64_t hidden, int64_t in_dim,
                           const std::vector<double>& R_h, double epsilon) {
  StepRelevance rel;
  rel.x.assign(static_cast<size_t>(in_dim), 0.0);
  rel.h_prev.assign(static_cast<size_t>(hidden), 0.0);

  // h = (1-z).n + z.h_prev: per-unit split against h itself; z takes nothing.
  std::vector<double> R_n(static_cast<size_t>(hidden), 0.0);
  for (int64_t j = 0; j < hidden; ++j) {
    if (R_h[j] == 0.0) continue;
    const double denom = stab_eps(trace.h[j], epsilon);
    R_n[j] = R_h[j] * ((1.0 - trace.gate_z[j]) * trace.n[j]) / denom;
    rel.h_prev[j] += R_h[j] * (trace.gate_z[j] * trace.h_prev[j]) / denom;
  }

  // n = tanh(Wn x + r.(Un h_prev) + bn): x contributions split per weight,
  // the gated recurrent term is one lumped signal whose share then flows
  // through Un to h_prev (r takes nothing).
  const double* wn = w_in + 2 * hidden * in_dim;  // rows [2H, 3H)
  const double* un = w_rec + 2 * hidden * hidden;
  std::vector<double> R_un(static_cast<size_t>(hidden), 0.0);
  for (int64_t j = 0; j < hidden; ++j) {
    if (R_n[j] == 0.0) continue;
    const double t = R_n[j] / stab_eps(trace.pre_n[j], epsilon);
    const double* wrow = wn + j * in_dim;
    for (int64_t i = 0; i < in_dim; ++i) rel.x[i] += t * wrow[i] * trace.x[i];
    R_un[j] = t * trace.gate_r[j] * trace.un_h[j];
  }
  // (Un h_prev)_j relevance splits over h_prev against its own pre-sum.
  for (int64_t j = 0; j < hidden; ++j) {
    if (R_un[j] == 0.0) continue;
    const double t = R_un[j] / stab_eps(trace.un_h[j], epsilon);
    const double* urow = un + j * hidden;
    for (int64_t i = 0; i < hidden; ++i) rel.h_prev[i] += t * urow[i] * trace.h_prev[i];
  }
  return rel;
}

// ---------------------------------------------------------------------------
// explain: cached eval forward, then relevance propagation.
// ---------------------------------------------------------------------------

namespace {

struct BlockTrace {
  kernels::Conv2dDims dims;
  std::vector<double> x;        // block input
  std::vector<double> relu;     // post-relu activations
  std::vector<double> cropped;  // pool input
};

struct FrameTrace {
  std::vector<BlockTrace> blocks;
  std::vector<double> flat;     // encoder output, feature linear input
  std::vector<double> feature;  // feature linear output
};

void matvec(const double* w, const std::vector<double>& x, const double* bias,
            std::vector<double>& y, int64_t m, int64_t n) {
  y.resize(static_cast<size_t>(m));
  kernels::linear_forward(x.data(), w, bias, y.data(), 1, n, m);
}

double sigmoid(double v) { return 1.0 / (1.0 + std::exp(-v)); }

}  // namespace

RelevanceMap explain(const Model& model, const std::vector<double>& window_frames,
                     int64_t length, ExplainTarget target, double seed_scale,
                     const RuleConfig& rules) {
  const auto& cfg = model.cfg;
  const int64_t frame_n = cfg.in_channels * cfg.in_height * cfg.in_width;
  if (static_cast<int64_t>(window_frames.size()) != length * frame_n || length < 1) {
    throw ShapeError("explain: window does not match model input dims");
  }
  if (rules.epsilon <= 0.0 || rules.gamma < 0.0) {
    throw ConfigError("explain: epsilon must be positive and gamma non-negative");
  }
  const int64_t hidden = cfg.hidden;
  const int64_t dirs = model.rnn.directions();

  // Batch norm folds into each conv so the encoder is a plain conv chain.
  std::vector<FoldedAffine> folded;
  for (const auto& blk : model.blocks) {
    folded.push_back(canonize_batch_norm(blk.w->values, blk.b->values, blk.c_out,
                                         blk.gamma->values, blk.beta->values,
                                         blk.bn.running_mean, blk.bn.running_var,
                                         kBatchNormEps));
  }

  // Encoder forward per frame.
  std::vector<FrameTrace> frames(static_cast<size_t>(length));
  for (int64_t t = 0; t < length; ++t) {
    auto& ft = frames[static_cast<size_t>(t)];
    std::vector<double> x(window_frames.begin() + t * frame_n,
                          window_frames.begin() + (t + 1) * frame_n);
    for (size_t bi = 0; bi < model.blocks.size(); ++bi) {
      const auto& blk = model.blocks[bi];
      BlockTrace bt;
      bt.dims = kernels::conv2d_dims(1, blk.c_in, blk.in_h, blk.in_w, blk.c_out,
                                     cfg.kernel, cfg.kernel, 1, cfg.kernel / 2);
      bt.x = std::move(x);
      std::vector<double> conv_out(static_cast<size_t>(blk.c_out * blk.in_h * blk.in_w));
      kernels::conv2d_forward(bt.x.data(), folded[bi].w.data(), folded[bi].b.data(),
                              conv_out.data(), bt.dims);
      bt.relu.resize(conv_out.size());
      for (size_t i = 0; i < conv_out.size(); ++i) {
        bt.relu[i] = conv_out[i] > 0.0 ? conv_out[i] : 0.0;
      }
      if (blk.crop_h != blk.in_h || blk.crop_w != blk.in_w) {
        bt.cropped.resize(static_cast<size_t>(blk.c_out * blk.crop_h * blk.crop_w));
        for (int64_t ch = 0; ch < blk.c_out; ++ch)
          for (int64_t yy = 0; yy < blk.crop_h; ++yy)
            for (int64_t xx = 0; xx < blk.crop_w; ++xx) {
              bt.cropped[(ch * blk.crop_h + yy) * blk.crop_w + xx] =
                  bt.relu[(ch * blk.in_h + yy) * blk.in_w + xx];
            }
      } else {
        bt.cropped = bt.relu;
      }
      std::vector<double> pooled(static_cast<size_t>(blk.c_out * blk.out_h * blk.out_w));
      kernels::avg_pool_forward(bt.cropped.data(), pooled.data(), 1, blk.c_out,
                                blk.crop_h, blk.crop_w, 2);
      x = std::move(pooled);
      ft.blocks.push_back(std::move(bt));
    }
    ft.flat = std::move(x);
    matvec(model.feat_w->values.data(), ft.flat, model.feat_b->values.data(),
           ft.feature, cfg.feature_dim, model.flat_dim);
  }

  // Recurrent forward with per-step traces. layer_inputs[t] feeds layer 0.
  std::vector<std::vector<double>> layer_inputs(static_cast<size_t>(length));
  for (int64_t t = 0; t < length; ++t) layer_inputs[static_cast<size_t>(t)] = frames[t].feature;

  const bool is_lstm = model.rnn.kind == ad::CellKind::lstm;
  const int64_t gates = is_lstm ? 4 : 3;
  // traces[layer][dir][original time]
  std::vector<std::vector<std::vector<LstmStepTrace>>> lstm_traces;
  std::vector<std::vector<std::vector<GruStepTrace>>> gru_traces;
  if (is_lstm) lstm_traces.resize(static_cast<size_t>(model.rnn.layers));
  else gru_traces.resize(static_cast<size_t>(model.rnn.layers));

  for (int64_t layer = 0; layer < model.rnn.layers; ++layer) {
    const int64_t in_dim = static_cast<int64_t>(layer_inputs[0].size());
    std::vector<std::vector<double>> outputs(static_cast<size_t>(length));
    if (is_lstm) lstm_traces[layer].resize(static_cast<size_t>(dirs));
    else gru_traces[layer].resize(static_cast<size_t>(dirs));
    for (int64_t dir = 0; dir < dirs; ++dir) {
      const auto& cp = model.rnn.cell(layer, dir);
      std::vector<double> h(static_cast<size_t>(hidden), 0.0);
      std::vector<double> c(static_cast<size_t>(hidden), 0.0);
      if (is_lstm) lstm_traces[layer][dir].resize(static_cast<size_t>(length));
      else gru_traces[layer][dir].resize(static_cast<size_t>(length));
      for (int64_t s = 0; s < length; ++s) {
        const int64_t t = dir == 0 ? s : length - 1 - s;
        const auto& x = layer_inputs[static_cast<size_t>(t)];
        std::vector<double> pre_x, pre_h;
        matvec(cp.w_in->values.data(), x, cp.bias->values.data(), pre_x,
               gates * hidden, in_dim);
        matvec(cp.w_rec->values.data(), h, nullptr, pre_h, gates * hidden, hidden);
        if (is_lstm) {
          LstmStepTrace tr;
          tr.x = x;
          tr.h_prev = h;
          tr.c_prev = c;
          tr.gate_i.resize(hidden);
          tr.gate_f.resize(hidden);
          tr.gate_g.resize(hidden);
          tr.gate_o.resize(hidden);
          tr.pre_g.resize(hidden);
          tr.c.resize(hidden);
          tr.h.resize(hidden);
          for (int64_t j = 0; j < hidden; ++j) {
            tr.gate_i[j] = sigmoid(pre_x[j] + pre_h[j]);
            tr.gate_f[j] = sigmoid(pre_x[hidden + j] + pre_h[hidden + j]);
            tr.pre_g[j] = pre_x[2 * hidden + j] + pre_h[2 * hidden + j];
            tr.gate_g[j] = std::tanh(tr.pre_g[j]);
            tr.gate_o[j] = sigmoid(pre_x[3 * hidden + j] + pre_h[3 * hidden + j]);
            tr.c[j] = tr.gate_f[j] * c[j] + tr.gate_i[j] * tr.gate_g[j];
            tr.h[j] = tr.gate_o[j] * std::tanh(tr.c[j]);
          }
          h = tr.h;
          c = tr.c;
          lstm_traces[layer][dir][static_cast<size_t>(t)] = std::move(tr);
        } else {
          GruStepTrace tr;
          tr.x = x;
          tr.h_prev = h;
          tr.gate_z.resize(hidden);
          tr.gate_r.resize(hidden);
          tr.n.resize(hidden);
          tr.pre_n.resize(hidden);
          tr.un_h.resize(hidden);
          tr.h.resize(hidden);
          for (int64_t j = 0; j < hidden; ++j) {
            tr.gate_z[j] = sigmoid(pre_x[j] + pre_h[j]);
            tr.gate_r[j] = sigmoid(pre_x[hidden + j] + pre_h[hidden + j]);
            tr.un_h[j] = pre_h[2 * hidden + j];
            tr.pre_n[j] = pre_x[2 * hidden + j] + tr.gate_r[j] * tr.un_h[j];
            tr.n[j] = std::tanh(tr.pre_n[j]);
            tr.h[j] = (1.0 - tr.gate_z[j]) * tr.n[j] + tr.gate_z[j] * h[j];
          }
          h = tr.h;
          gru_traces[layer][dir][static_cast<size_t>(t)] = std::move(tr);
        }
        auto& out_t = outputs[static_cast<size_t>(t)];
        if (dir == 0) {
          out_t = h;
        } else {
          out_t.insert(out_t.end(), h.begin(), h.end());
        }
      }
    }
    layer_inputs = std::move(outputs);
  }

  // Head scores at the final step, pre-sigmoid.
  const auto& h_last = layer_inputs[static_cast<size_t>(length - 1)];
  std::vector<double> scores;
  matvec(model.head_w->values.data(), h_last, model.head_b->values.data(), scores, 2,
         model.rnn_out_dim());

  RelevanceMap map;
  map.length = length;
  map.height = cfg.in_height;
  map.width = cfg.in_width;
  map.data.assign(window_frames.size(), 0.0);
  map.head_scores = {scores[0], scores[1]};

  std::vector<double> seed(2, 0.0);
  switch (target) {
    case ExplainTarget::x_output: seed[0] = scores[0] * seed_scale; break;
    case ExplainTarget::y_output: seed[1] = scores[1] * seed_scale; break;
    case ExplainTarget::sum:
      seed[0] = scores[0] * seed_scale;
      seed[1] = scores[1] * seed_scale;
      break;
  }
  map.output_relevance = seed[0] + seed[1];
  map.stage_sums.emplace_back("seed", map.output_relevance);

  // Head linear back to the final hidden state.
  auto R_h_last = lrp_linear(seed, h_last, model.head_w->values.data(),
                             model.head_b->values.data(), 2, model.rnn_out_dim(),
                             rules.dense_rule, rules.epsilon, rules.gamma, "head");
  {
    double s = 0.0;
    for (double v : R_h_last) s += v;
    map.stage_sums.emplace_back("head_in", s);
  }

  // Relevance injections on each layer's per-step outputs, top layer first.
  // injections[dir][t] covers that direction's hidden slice.
  std::vector<std::vector<std::vector<double>>> injections(
      static_cast<size_t>(dirs),
      std::vector<std::vector<double>>(static_cast<size_t>(length),
                                       std::vector<double>(static_cast<size_t>(hidden), 0.0)));
  for (int64_t dir = 0; dir < dirs; ++dir) {
    for (int64_t j = 0; j < hidden; ++j) {
      injections[dir][static_cast<size_t>(length - 1)][j] = R_h_last[dir * hidden + j];
    }
  }

  for (int64_t layer = model.rnn.layers - 1; layer >= 0; --layer) {
    const int64_t in_dim = layer == 0 ? cfg.feature_dim : hidden * dirs;
    std::vector<std::vector<double>> R_x(static_cast<size_t>(length),
                                         std::vector<double>(static_cast<size_t>(in_dim), 0.0));
    for (int64_t dir = 0; dir < dirs; ++dir) {
      const auto& cp = model.rnn.cell(layer, dir);
      std::vector<double> R_c_carry(static_cast<size_t>(hidden), 0.0);
      std::vector<double> R_h_carry(static_cast<size_t>(hidden), 0.0);
      for (int64_t s = length - 1; s >= 0; --s) {
        const int64_t t = dir == 0 ? s : length - 1 - s;
        std::vector<double> R_h(static_cast<size_t>(hidden));
        for (int64_t j = 0; j < hidden; ++j) {
          R_h[j] = injections[dir][static_cast<size_t>(t)][j] + R_h_carry[j];
        }
        StepRelevance rel;
        if (is_lstm) {
          rel = lrp_lstm_step(lstm_traces[layer][dir][static_cast<size_t>(t)],
                              cp.w_in->values.data(), cp.w_rec->values.data(), hidden,
                              in_dim, R_h, R_c_carry, rules.epsilon);
        } else {
          rel = lrp_gru_step(gru_traces[layer][dir][static_cast<size_t>(t)],
                             cp.w_in->values.data(), cp.w_rec->values.data(), hidden,
                             in_dim, R_h, rules.epsilon);
          rel.c_prev.assign(static_cast<size_t>(hidden), 0.0);
        }
        for (int64_t i = 0; i < in_dim; ++i) R_x[static_cast<size_t>(t)][i] += rel.x[i];
        R_h_carry = std::move(rel.h_prev);
        R_c_carry = std::move(rel.c_prev);
      }
    }
    if (layer > 0) {
      for (int64_t dir = 0; dir < dirs; ++dir)
        for (int64_t t = 0; t < length; ++t)
          for (int64_t j = 0; j < hidden; ++j)
            injections[dir][static_cast<size_t>(t)][j] = R_x[static_cast<size_t>(t)][dir * hidden + j];
    } else {
      double s = 0.0;
      for (const auto& r : R_x)
        for (double v : r) s += v;
      map.stage_sums.emplace_back("rnn_in", s);
      // Feature linear, then the conv stack, frame by frame.
      double flat_sum = 0.0;
      std::vector<double> block_sums(model.blocks.size() + 1, 0.0);
      for (int64_t t = 0; t < length; ++t) {
        const auto& ft = frames[static_cast<size_t>(t)];
        auto R = lrp_linear(R_x[static_cast<size_t>(t)], ft.flat,
                            model.feat_w->values.data(), model.feat_b->values.data(),
                            cfg.feature_dim, model.flat_dim, rules.dense_rule,
                            rules.epsilon, rules.gamma, "feat");
        for (double v : R) flat_sum += v;
        for (int64_t bi = static_cast<int64_t>(model.blocks.size()) - 1; bi >= 0; --bi) {
          const auto& blk = model.blocks[static_cast<size_t>(bi)];
          const auto& bt = ft.blocks[static_cast<size_t>(bi)];
          R = lrp_avg_pool(R, bt.cropped, blk.c_out, blk.crop_h, blk.crop_w, 2,
                           rules.conv_rule, rules.epsilon, "pool" + std::to_string(bi));
          if (blk.crop_h != blk.in_h || blk.crop_w != blk.in_w) {
            std::vector<double> full(static_cast<size_t>(blk.c_out * blk.in_h * blk.in_w), 0.0);
            for (int64_t ch = 0; ch < blk.c_out; ++ch)
              for (int64_t yy = 0; yy < blk.crop_h; ++yy)
                for (int64_t xx = 0; xx < blk.crop_w; ++xx) {
                  full[(ch * blk.in_h + yy) * blk.in_w + xx] =
                      R[(ch * blk.crop_h + yy) * blk.crop_w + xx];
                }
            R = std::move(full);
          }
          // relu passes relevance through; conv propagates with folded weights
          R = lrp_conv(R, bt.x, folded[static_cast<size_t>(bi)].w,
                       folded[static_cast<size_t>(bi)].b.data(), bt.dims,
                       rules.conv_rule, rules.epsilon, rules.gamma,
                       "conv" + std::to_string(bi));
          double bs = 0.0;
          for (double v : R) bs += v;
          block_sums[static_cast<size_t>(bi)] += bs;
        }
        std::copy(R.begin(), R.end(), map.data.begin() + t * frame_n);
      }
      map.stage_sums.emplace_back("flat", flat_sum);
      for (int64_t bi = static_cast<int64_t>(model.blocks.size()) - 1; bi >= 0; --bi) {
        map.stage_sums.emplace_back("block" + std::to_string(bi) + "_in",
                                    block_sums[static_cast<size_t>(bi)]);
      }
      map.stage_sums.emplace_back("input", map.total());
    }
  }
  return map;
}

void export_heatmap_pgm(const RelevanceMap& map, int64_t frame_index,
                        const std::string& path) {
  if (frame_index < 0 || frame_index >= map.length) {
    throw ContractError("export_heatmap: frame index " + std::to_string(frame_index) +
                        " out of range [0, " + std::to_string(map.length) + ")");
  }
  const int64_t h = map.height, w = map.width;
  const double* f = map.frame(frame_index);
  std::vector<double> summed(static_cast<size_t>(h * w));
  double peak = 0.0;
  for (int64_t i = 0; i < h * w; ++i) {
    summed[i] = f[i] + f[h * w + i];
    peak = std::max(peak, std::abs(summed[i]));
  }
  std::ofstream os(path, std::ios::binary);
  if (!os) throw FormatError("cannot write heatmap: " + path);
  os << "P5\n" << w << " " << h << "\n255\n";
  for (int64_t i = 0; i < h * w; ++i) {
    double v = 128.0;
    if (peak > 0.0) v = std::round(127.5 + 127.5 * summed[i] / peak);
    v = std::clamp(v, 0.0, 255.0);
    os.put(static_cast<char>(static_cast<unsigned char>(v)));
  }
  if (!os) throw FormatError("heatmap write failed: " + path);
}

void export_heatmap_csv(const RelevanceMap& map, int64_t frame_index,
                        const std::string& path) {
  if (frame_index < 0 || frame_index >= map.length) {
    throw ContractError("export_heatmap: frame index " + std::to_string(frame_index) +
                        " out of range [0, " + std::to_string(map.length) + ")");
  }
  std::ofstream os(path);
  if (!os) throw FormatError("cannot write heatmap: " + path);
  const double* f = map.frame(frame_index);
  char buf[40];
  for (int64_t row = 0; row < 2 * map.height; ++row) {
    for (int64_t col = 0; col < map.width; ++col) {
      std::snprintf(buf, sizeof buf, "%.17g", f[row * map.width + col]);
      os << (col ? "," : "") << buf;
    }
    os << "\n";
  }
  if (!os) throw FormatError("heatmap write failed: " + path);
}

}  // namespace evtrack::lrp
