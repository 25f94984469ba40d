#pragma once

#include <array>
#include <string>
#include <utility>
#include <vector>

#include "evtrack/kernels.hpp"
#include "evtrack/model.hpp"

namespace evtrack::lrp {

enum class Rule { lrp0, epsilon, gamma };
Rule parse_rule(const std::string& s);
std::string to_string(Rule r);

// Per-layer-class rule assignment. Convolution blocks follow conv_rule,
// the feature and head linears follow dense_rule; the recurrent interior
// (gate splits and cell linear parts) always uses the epsilon rule. The
// composite preset puts epsilon near the output and gamma on the convs.
struct RuleConfig {
  Rule conv_rule = Rule::gamma;
  Rule dense_rule = Rule::epsilon;
  double epsilon = 1e-6;
  double gamma = 0.25;

  static RuleConfig composite() { return RuleConfig{}; }
  static RuleConfig uniform(Rule r) { return RuleConfig{r, r, 1e-6, 0.25}; }
};

struct RelevanceMap {
  int64_t length = 0;
  int64_t height = 0;
  int64_t width = 0;
  std::vector<double> data;  // [L, 2, H, W], signed
  double output_relevance = 0.0;
  std::array<double, 2> head_scores{};  // pre-sigmoid, final step
  // Total relevance at successive cuts through the network, for
  // conservation checks ("seed" first, "input" last).
  std::vector<std::pair<std::string, double>> stage_sums;

  double total() const;
  const double* frame(int64_t i) const { return data.data() + i * 2 * height * width; }
};

// R_out: [m], x: [n], w: [m,n] row-major, bias: [m] or null -> R_in: [n].
// Distributes each output's relevance over its inputs proportionally to
// z_jk = x_j * w_kj (gamma reweights w before computing z); bias acts as an
// extra contributor whose share is dropped.
std::vector<double> lrp_linear(const std::vector<double>& R_out,
                               const std::vector<double>& x, const double* w,
                               const double* bias, int64_t m, int64_t n, Rule rule,
                               double epsilon, double gamma,
                               const std::string& layer_name);

// Convolution treated as its equivalent linear map with shared kernel
// weights; overlapping receptive fields sum into R_in. Single sample.
std::vector<double> lrp_conv(const std::vector<double>& R_out,
                             const std::vector<double>& x,
                             const std::vector<double>& w, const double* bias,
                             const kernels::Conv2dDims& dims, Rule rule,
                             double epsilon, double gamma,
                             const std::string& layer_name);

// Mean pooling as a fixed-weight linear layer: each window's relevance is
// redistributed proportionally to the cell values.
std::vector<double> lrp_avg_pool(const std::vector<double>& R_out,
                                 const std::vector<double>& x, int64_t c, int64_t h,
                                 int64_t w, int64_t k, Rule rule, double epsilon,
                                 const std::string& layer_name);

// Folds eval-mode batch norm into the preceding conv/linear: w' = w * g/sd,
// b' = (b - mean) * g/sd + beta. w has out_channels row blocks.
struct FoldedAffine {
  std::vector<double> w, b;
};
FoldedAffine canonize_batch_norm(const std::vector<double>& w,
                                 const std::vector<double>& b, int64_t out_channels,
                                 const std::vector<double>& gamma,
                                 const std::vector<double>& beta,
                                 const std::vector<double>& running_mean,
                                 const std::vector<double>& running_var, double eps);

// Cached forward state of one LSTM step (single sample).
struct LstmStepTrace {
  std::vector<double> x, h_prev, c_prev;
  std::vector<double> gate_i, gate_f, gate_g, gate_o;
  std::vector<double> pre_g;  // tanh pre-activation of the cell input
  std::vector<double> c, h;
};

struct StepRelevance {
  std::vector<double> x, h_prev, c_prev;
};

// Signal-take-all backward step: all relevance on h flows to c (the o gate
// gets none); c's relevance splits between f.c_prev and i.g per unit; the
// g branch propagates through its linear pre-activation to x and h_prev via
// the epsilon rule. R_c carries relevance arriving from the next step.
StepRelevance lrp_lstm_step(const LstmStepTrace& trace, const double* w_in,
                            const double* w_rec, int64_t hidden, int64_t in_dim,
                            const std::vector<double>& R_h,
                            const std::vector<double>& R_c, double epsilon);

struct GruStepTrace {
  std::vector<double> x, h_prev;
  std::vector<double> gate_z, gate_r, n;
  std::vector<double> pre_n;
  std::vector<double> un_h;  // U_n h_prev, the gated recurrent signal
  std::vector<double> h;
};

// GRU analog: h splits between (1-z).n and z.h_prev; n's linear part splits
// between the x side and the lumped r.(U_n h_prev) signal, which then flows
// through U_n to h_prev. Gates z and r receive nothing.
StepRelevance lrp_gru_step(const GruStepTrace& trace, const double* w_in,
                           const double* w_rec, int64_t hidden, int64_t in_dim,
                           const std::vector<double>& R_h, double epsilon);

enum class ExplainTarget { x_output, y_output, sum };
ExplainTarget parse_explain_target(const std::string& s);
std::string to_string(ExplainTarget t);

// Runs a cached eval-mode forward of the window (frames: [L,2,H,W] values)
// through the batch-norm-canonized model, seeds the chosen pre-sigmoid head
// score(s) at the final step scaled by seed_scale, and propagates relevance
// to the input pixels.
RelevanceMap explain(const Model& model, const std::vector<double>& window_frames,
                     int64_t length, ExplainTarget target, double seed_scale,
                     const RuleConfig& rules);

// PGM P5 heatmap: relevance summed over channels, symmetric-max normalized
// around 128. CSV: raw signed values, row-major, channel 0 block then 1.
void export_heatmap_pgm(const RelevanceMap& map, int64_t frame_index,
                        const std::string& path);
void export_heatmap_csv(const RelevanceMap& map, int64_t frame_index,
                        const std::string& path);

}  // namespace evtrack::lrp
