// evtrack: synthesize event data, bin frames, train pupil-center models,
// evaluate them, and explain predictions with relevance heatmaps.

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "evtrack/gradcheck.hpp"
#include "evtrack/lrp.hpp"
#include "evtrack/metrics.hpp"
#include "evtrack/synth.hpp"
#include "evtrack/training.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace evtrack;

namespace {

constexpr const char* kToolVersion = "evtrack 1.0.0";

// ---------------------------------------------------------------------------
// shared plumbing
// ---------------------------------------------------------------------------

void write_text(const std::string& path, const std::string& text) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw FormatError("cannot write " + path);
  os << text;
}

void write_manifest(const std::string& out_dir, const std::string& subcommand,
                    uint64_t seed, const json& config, const json& inputs,
                    const json& outputs) {
  json m;
  m["tool"] = "evtrack";
  m["version"] = kToolVersion;
  m["subcommand"] = subcommand;
  m["seed"] = seed;
  m["config"] = config;
  m["inputs"] = inputs;
  m["outputs"] = outputs;
  write_text((fs::path(out_dir) / "manifest.json").string(), m.dump(2) + "\n");
}

json load_manifest(const std::string& path, const std::string& expect_subcommand) {
  std::ifstream is(path);
  if (!is) throw FormatError("cannot open manifest: " + path);
  json m = json::parse(is, nullptr, true);
  if (m.value("subcommand", "") != expect_subcommand) {
    throw ConfigError("manifest " + path + " was written by subcommand '" +
                      m.value("subcommand", "?") + "', not '" + expect_subcommand + "'");
  }
  return m;
}

std::vector<int64_t> parse_int_list(const std::string& csv) {
  std::vector<int64_t> out;
  std::istringstream is(csv);
  std::string tok;
  while (std::getline(is, tok, ',')) out.push_back(std::stoll(tok));
  if (out.empty()) throw ConfigError("empty integer list");
  return out;
}

std::vector<double> parse_double_list(const std::string& csv) {
  std::vector<double> out;
  std::istringstream is(csv);
  std::string tok;
  while (std::getline(is, tok, ',')) out.push_back(std::stod(tok));
  if (out.empty()) throw ConfigError("empty number list");
  return out;
}

std::string join_list(const std::vector<double>& v) {
  std::ostringstream os;
  for (size_t i = 0; i < v.size(); ++i) os << (i ? "," : "") << v[i];
  return os.str();
}

struct PipelineOptions {
  double spatial = 0.125;
  double temporal = 0.2;
  double label_rate = 100.0;
  int64_t frame_us = 50000;
  int64_t seq_len = 30;
  int64_t stride = 30;
  std::string normalize = "log1p";
  bool drop_closed = false;

  json to_json() const {
    return json{{"spatial", spatial},     {"temporal", temporal},
                {"label_rate", label_rate}, {"frame_us", frame_us},
                {"seq_len", seq_len},      {"stride", stride},
                {"normalize", normalize},  {"drop_closed", drop_closed}};
  }
  static PipelineOptions from_json(const json& j) {
    PipelineOptions p;
    p.spatial = j.at("spatial");
    p.temporal = j.at("temporal");
    p.label_rate = j.at("label_rate");
    p.frame_us = j.at("frame_us");
    p.seq_len = j.at("seq_len");
    p.stride = j.at("stride");
    p.normalize = j.at("normalize");
    p.drop_closed = j.at("drop_closed");
    return p;
  }
};

// Every <name>.evt1 in the directory pairs with <name>.csv.
std::vector<std::pair<std::string, std::string>> find_sessions(const std::string& dir) {
  std::vector<std::pair<std::string, std::string>> sessions;
  if (!fs::is_directory(dir)) throw FormatError("data directory not found: " + dir);
  std::vector<fs::path> evt_files;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (entry.path().extension() == ".evt1") evt_files.push_back(entry.path());
  }
  std::sort(evt_files.begin(), evt_files.end());
  for (const auto& evt : evt_files) {
    fs::path csv = evt;
    csv.replace_extension(".csv");
    if (!fs::exists(csv)) {
      throw FormatError("labels file missing for " + evt.string() + " (expected " +
                        csv.string() + ")");
    }
    sessions.emplace_back(evt.string(), csv.string());
  }
  if (sessions.empty()) throw FormatError("no .evt1 files under " + dir);
  return sessions;
}

struct LoadedData {
  std::vector<SampleWindow> windows;
  int64_t frame_height = 0;
  int64_t frame_width = 0;
  json inputs;
};

LoadedData load_windows(const std::string& data_dir, const PipelineOptions& opt) {
  LoadedData out;
  const auto mode = parse_normalize_mode(opt.normalize);
  for (const auto& [evt_path, csv_path] : find_sessions(data_dir)) {
    auto stream = load_events(evt_path);
    auto labels = load_labels(csv_path, opt.label_rate);
    auto [ds_stream, ds_labels] = spatial_downscale(stream, labels, opt.spatial);
    auto frames = std::make_shared<FrameSequence>(
        normalize_frames(bin_to_frames(ds_stream, opt.frame_us), mode));
    auto track = downsample_labels(ds_labels, opt.temporal);
    if (out.frame_width == 0) {
      out.frame_height = frames->height;
      out.frame_width = frames->width;
    } else if (out.frame_height != frames->height || out.frame_width != frames->width) {
      throw ValidationError("sessions disagree on sensor dimensions under " + data_dir);
    }
    auto windows = make_windows(frames, track, opt.seq_len, opt.stride, opt.drop_closed);
    out.windows.insert(out.windows.end(), windows.begin(), windows.end());
    out.inputs.push_back(json{{"events", evt_path}, {"labels", csv_path}});
  }
  if (out.windows.empty()) {
    throw ValidationError("no usable windows from " + data_dir +
                          " (too little data for seq_len?)");
  }
  return out;
}

uint64_t resolve_seed(const CLI::App* cmd, uint64_t flag_value) {
  if (cmd->count("--seed") > 0) return flag_value;
  if (const char* env = std::getenv("EVTRACK_SEED")) {
    return std::strtoull(env, nullptr, 10);
  }
  return flag_value;
}

// ---------------------------------------------------------------------------
// synth
// ---------------------------------------------------------------------------

struct SynthOptions {
  std::string kind = "smooth_pursuit";
  double seconds = 2.0;
  int64_t width = 640;
  int64_t height = 480;
  double radius = 48.0;
  double jitter = 0.35;
  double amplitude = 120.0;
  double speed = 250.0;
  double saccade_peak = 12000.0;
  double blink_period = 1.5;
  double noise_rate = 0.0;
  uint64_t seed = 42;
  std::string out;

  json to_json() const {
    return json{{"kind", kind},         {"seconds", seconds},
                {"width", width},       {"height", height},
                {"radius", radius},     {"jitter", jitter},
                {"amplitude", amplitude}, {"speed", speed},
                {"saccade_peak", saccade_peak}, {"blink_period", blink_period},
                {"noise_rate", noise_rate}, {"seed", seed}};
  }
  static SynthOptions from_json(const json& j) {
    SynthOptions o;
    o.kind = j.at("kind");
    o.seconds = j.at("seconds");
    o.width = j.at("width");
    o.height = j.at("height");
    o.radius = j.at("radius");
    o.jitter = j.at("jitter");
    o.amplitude = j.at("amplitude");
    o.speed = j.at("speed");
    o.saccade_peak = j.at("saccade_peak");
    o.blink_period = j.at("blink_period");
    o.noise_rate = j.at("noise_rate");
    o.seed = j.at("seed");
    return o;
  }
};

synth::TrajectoryConfig to_trajectory(const SynthOptions& o) {
  synth::TrajectoryConfig cfg;
  cfg.kind = synth::parse_trajectory_kind(o.kind);
  cfg.seconds = o.seconds;
  cfg.width = o.width;
  cfg.height = o.height;
  cfg.radius_px = o.radius;
  cfg.jitter_rms_px = o.jitter;
  cfg.amplitude_px = o.amplitude;
  cfg.speed_px_s = o.speed;
  cfg.saccade_peak_px_s = o.saccade_peak;
  cfg.blink_period_s = o.blink_period;
  cfg.noise_events_per_s = o.noise_rate;
  cfg.seed = o.seed;
  return cfg;
}

json session_json(const synth::TrajectoryConfig& cfg, const std::string& events,
                  const std::string& labels) {
  return json{{"events", events},
              {"labels", labels},
              {"kind", synth::to_string(cfg.kind)},
              {"seconds", cfg.seconds},
              {"width", cfg.width},
              {"height", cfg.height},
              {"radius", cfg.radius_px},
              {"jitter", cfg.jitter_rms_px},
              {"amplitude", cfg.amplitude_px},
              {"speed", cfg.speed_px_s},
              {"saccade_peak", cfg.saccade_peak_px_s},
              {"blink_period", cfg.blink_period_s},
              {"noise_rate", cfg.noise_events_per_s},
              {"seed", cfg.seed}};
}

int cmd_synth(const SynthOptions& opt) {
  fs::create_directories(opt.out);
  json outputs = json::array();
  if (opt.kind == "fixture13") {
    json fixture = json::array();
    auto sessions = synth::fixture_sessions(opt.seed);
    for (size_t i = 0; i < sessions.size(); ++i) {
      auto scene = synth::gen_trajectory(sessions[i]);
      auto [stream, labels] = synth::render_events(scene, sessions[i]);
      char name[32];
      std::snprintf(name, sizeof name, "session_%02zu", i);
      const auto evt = (fs::path(opt.out) / (std::string(name) + ".evt1")).string();
      const auto csv = (fs::path(opt.out) / (std::string(name) + ".csv")).string();
      write_events(evt, stream);
      write_labels(csv, labels);
      fixture.push_back(session_json(sessions[i], evt, csv));
      outputs.push_back(evt);
      outputs.push_back(csv);
      std::cout << name << ": " << stream.events.size() << " events, "
                << labels.samples.size() << " labels ("
                << synth::to_string(sessions[i].kind) << ")\n";
    }
    const auto fixture_path = (fs::path(opt.out) / "fixture.json").string();
    write_text(fixture_path, fixture.dump(2) + "\n");
    outputs.push_back(fixture_path);
  } else {
    auto cfg = to_trajectory(opt);
    auto scene = synth::gen_trajectory(cfg);
    auto [stream, labels] = synth::render_events(scene, cfg);
    const auto evt = (fs::path(opt.out) / "events.evt1").string();
    const auto csv = (fs::path(opt.out) / "events.csv").string();
    write_events(evt, stream);
    write_labels(csv, labels);
    outputs.push_back(evt);
    outputs.push_back(csv);
    std::cout << stream.events.size() << " events, " << labels.samples.size()
              << " labels -> " << opt.out << "\n";
  }
  write_manifest(opt.out, "synth", opt.seed, opt.to_json(), json::array(), outputs);
  return 0;
}

// ---------------------------------------------------------------------------
// bin
// ---------------------------------------------------------------------------

struct BinOptions {
  std::string events;
  int64_t frame_us = 50000;
  std::string normalize = "none";
  double spatial = 1.0;
  std::string out;

  json to_json() const {
    return json{{"events", events},
                {"frame_us", frame_us},
                {"normalize", normalize},
                {"spatial", spatial}};
  }
  static BinOptions from_json(const json& j) {
    BinOptions o;
    o.events = j.at("events");
    o.frame_us = j.at("frame_us");
    o.normalize = j.at("normalize");
    o.spatial = j.at("spatial");
    return o;
  }
};

int cmd_bin(const BinOptions& opt) {
  auto stream = load_events(opt.events);
  if (opt.spatial != 1.0) {
    LabelTrack dummy;
    dummy.rate_hz = 100.0;
    stream = spatial_downscale(stream, dummy, opt.spatial).first;
  }
  auto frames = normalize_frames(bin_to_frames(stream, opt.frame_us),
                                 parse_normalize_mode(opt.normalize));
  fs::create_directories(opt.out);
  const auto path = (fs::path(opt.out) / "frames.evtf").string();
  {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw FormatError("cannot write " + path);
    os.write("EVTF", 4);
    ad::write_u32(os, 1);
    ad::write_u64(os, static_cast<uint64_t>(frames.count));
    ad::write_u32(os, 2);
    ad::write_u32(os, static_cast<uint32_t>(frames.height));
    ad::write_u32(os, static_cast<uint32_t>(frames.width));
    ad::write_u64(os, static_cast<uint64_t>(frames.frame_duration_us));
    ad::write_bytes(os, frames.data.data(), frames.data.size() * sizeof(double));
  }
  double total = 0.0;
  for (double v : frames.data) total += v;
  std::cout << frames.count << " frames of 2x" << frames.height << "x" << frames.width
            << ", value total " << total << " -> " << path << "\n";
  write_manifest(opt.out, "bin", 0, opt.to_json(), json::array({opt.events}),
                 json::array({path}));
  return 0;
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

struct TrainOptions {
  std::string data;
  std::string model = "cnn_lstm";
  int64_t epochs = 200;
  double lr = 0.001;
  int64_t batch = 20;
  std::string channels = "16,32,64";
  int64_t kernel = 3;
  int64_t feature = 128;
  int64_t hidden = 128;
  int64_t rnn_layers = 0;  // 0 = per-variant default
  double dropout = 0.2;
  double wx = 1.0, wy = 1.0;
  bool use_close_mask = false;
  double val_split = 0.2;
  std::string tolerances = "5,10,15";
  int64_t ckpt_every = 0;
  uint64_t seed = 42;
  std::string out;
  std::string resume;
  PipelineOptions pipe;

  json to_json() const {
    json j{{"data", data},       {"model", model},       {"epochs", epochs},
           {"lr", lr},           {"batch", batch},       {"channels", channels},
           {"kernel", kernel},   {"feature", feature},   {"hidden", hidden},
           {"rnn_layers", rnn_layers}, {"dropout", dropout}, {"wx", wx},
           {"wy", wy},           {"use_close_mask", use_close_mask},
           {"val_split", val_split}, {"tolerances", tolerances},
           {"ckpt_every", ckpt_every}, {"seed", seed}, {"resume", resume}};
    j["pipeline"] = pipe.to_json();
    return j;
  }
  static TrainOptions from_json(const json& j) {
    TrainOptions o;
    o.data = j.at("data");
    o.model = j.at("model");
    o.epochs = j.at("epochs");
    o.lr = j.at("lr");
    o.batch = j.at("batch");
    o.channels = j.at("channels");
    o.kernel = j.at("kernel");
    o.feature = j.at("feature");
    o.hidden = j.at("hidden");
    o.rnn_layers = j.at("rnn_layers");
    o.dropout = j.at("dropout");
    o.wx = j.at("wx");
    o.wy = j.at("wy");
    o.use_close_mask = j.at("use_close_mask");
    o.val_split = j.at("val_split");
    o.tolerances = j.at("tolerances");
    o.ckpt_every = j.at("ckpt_every");
    o.seed = j.at("seed");
    o.resume = j.value("resume", "");
    o.pipe = PipelineOptions::from_json(j.at("pipeline"));
    return o;
  }
};

ModelConfig model_config_from(const TrainOptions& opt, int64_t frame_h, int64_t frame_w) {
  ModelConfig cfg;
  cfg.variant = parse_model_variant(opt.model);
  cfg.in_height = frame_h;
  cfg.in_width = frame_w;
  cfg.conv_channels = parse_int_list(opt.channels);
  cfg.kernel = opt.kernel;
  cfg.feature_dim = opt.feature;
  cfg.hidden = opt.hidden;
  cfg.rnn_layers = opt.rnn_layers != 0
                       ? opt.rnn_layers
                       : (cfg.variant == ModelVariant::cnn_lstm ? 2 : 1);
  cfg.dropout_p = opt.dropout;
  cfg.seed = opt.seed;
  cfg.validate();
  return cfg;
}

int cmd_train(const TrainOptions& opt) {
  auto data = load_windows(opt.data, opt.pipe);
  auto model_cfg = model_config_from(opt, data.frame_height, data.frame_width);

  TrainConfig cfg;
  cfg.learning_rate = opt.lr;
  cfg.batch_size = opt.batch;
  cfg.epochs = opt.epochs;
  cfg.loss_weights = {opt.wx, opt.wy};
  cfg.dropout_p = opt.dropout;
  cfg.seed = opt.seed;
  cfg.checkpoint_every = opt.ckpt_every;
  cfg.use_close_mask = opt.use_close_mask;
  cfg.tolerances = parse_double_list(opt.tolerances);
  cfg.validate();

  fs::create_directories(opt.out);
  std::optional<Checkpoint> resume;
  if (!opt.resume.empty()) resume = load_checkpoint(opt.resume);

  std::cout << "training " << opt.model << " on " << data.windows.size()
            << " windows of " << opt.pipe.seq_len << "x2x" << data.frame_height << "x"
            << data.frame_width << "\n";
  auto result = train(model_cfg, data.windows, cfg, opt.val_split, opt.out,
                      resume ? &*resume : nullptr);

  const auto report_path = (fs::path(opt.out) / "report.csv").string();
  write_text(report_path, result.state.report.to_csv());
  const auto& last = result.state.report.epochs.back();
  std::cout << "epoch " << last.epoch << ": train_loss " << last.train_loss
            << " val_loss " << last.val_loss << "\n";

  write_manifest(opt.out, "train", opt.seed, opt.to_json(), data.inputs,
                 json::array({(fs::path(opt.out) / "checkpoint.evtk").string(),
                              report_path}));
  return 0;
}

// ---------------------------------------------------------------------------
// eval
// ---------------------------------------------------------------------------

struct EvalOptions {
  std::string ckpt;
  std::string data;
  std::string tolerances = "5,10,15";
  std::string pixel_space = "downsampled";
  bool exclude_closed = false;
  uint64_t seed = 42;
  std::string out;
  PipelineOptions pipe;

  json to_json() const {
    json j{{"ckpt", ckpt},
           {"data", data},
           {"tolerances", tolerances},
           {"pixel_space", pixel_space},
           {"exclude_closed", exclude_closed},
           {"seed", seed}};
    j["pipeline"] = pipe.to_json();
    return j;
  }
  static EvalOptions from_json(const json& j) {
    EvalOptions o;
    o.ckpt = j.at("ckpt");
    o.data = j.at("data");
    o.tolerances = j.at("tolerances");
    o.pixel_space = j.at("pixel_space");
    o.exclude_closed = j.at("exclude_closed");
    o.seed = j.at("seed");
    o.pipe = PipelineOptions::from_json(j.at("pipeline"));
    return o;
  }
};

void check_dims(const ModelConfig& cfg, const LoadedData& data, const std::string& ckpt) {
  if (cfg.in_height != data.frame_height || cfg.in_width != data.frame_width) {
    throw FormatError("checkpoint " + ckpt + " expects " + std::to_string(cfg.in_width) +
                      "x" + std::to_string(cfg.in_height) + " frames but the data yields " +
                      std::to_string(data.frame_width) + "x" +
                      std::to_string(data.frame_height));
  }
}

int cmd_eval(const EvalOptions& opt) {
  auto ckpt = load_checkpoint(opt.ckpt);
  auto data = load_windows(opt.data, opt.pipe);
  check_dims(ckpt.model_cfg, data, opt.ckpt);

  auto report = evaluate(ckpt.model, data.windows, parse_double_list(opt.tolerances),
                         parse_pixel_space(opt.pixel_space), opt.pipe.spatial,
                         opt.exclude_closed);
  std::cout << report.to_table();

  fs::create_directories(opt.out);
  const auto csv_path = (fs::path(opt.out) / "eval.csv").string();
  const auto json_path = (fs::path(opt.out) / "summary.json").string();
  write_text(csv_path, report.to_csv());
  write_text(json_path, report.to_json());
  write_manifest(opt.out, "eval", opt.seed, opt.to_json(), data.inputs,
                 json::array({csv_path, json_path}));
  return 0;
}

// ---------------------------------------------------------------------------
// explain
// ---------------------------------------------------------------------------

struct ExplainOptions {
  std::string ckpt;
  std::string data;
  int64_t window = 0;
  int64_t frame = 0;
  bool all_frames = false;
  std::string rule = "composite";
  double epsilon = 1e-6;
  double gamma = 0.25;
  std::string target = "sum";
  double seed_scale = 1.0;
  std::string format = "pgm,csv";
  uint64_t seed = 42;
  std::string out;
  PipelineOptions pipe;

  json to_json() const {
    json j{{"ckpt", ckpt},   {"data", data},     {"window", window},
           {"frame", frame}, {"all_frames", all_frames}, {"rule", rule},
           {"epsilon", epsilon}, {"gamma", gamma}, {"target", target},
           {"seed_scale", seed_scale}, {"format", format}, {"seed", seed}};
    j["pipeline"] = pipe.to_json();
    return j;
  }
  static ExplainOptions from_json(const json& j) {
    ExplainOptions o;
    o.ckpt = j.at("ckpt");
    o.data = j.at("data");
    o.window = j.at("window");
    o.frame = j.at("frame");
    o.all_frames = j.at("all_frames");
    o.rule = j.at("rule");
    o.epsilon = j.at("epsilon");
    o.gamma = j.at("gamma");
    o.target = j.at("target");
    o.seed_scale = j.at("seed_scale");
    o.format = j.at("format");
    o.seed = j.at("seed");
    o.pipe = PipelineOptions::from_json(j.at("pipeline"));
    return o;
  }
};

lrp::RuleConfig rule_config_from(const ExplainOptions& opt) {
  lrp::RuleConfig rules;
  if (opt.rule == "composite") {
    rules = lrp::RuleConfig::composite();
  } else {
    rules = lrp::RuleConfig::uniform(lrp::parse_rule(opt.rule));
  }
  rules.epsilon = opt.epsilon;
  rules.gamma = opt.gamma;
  return rules;
}

int cmd_explain(const ExplainOptions& opt) {
  auto ckpt = load_checkpoint(opt.ckpt);
  auto data = load_windows(opt.data, opt.pipe);
  check_dims(ckpt.model_cfg, data, opt.ckpt);
  if (opt.window < 0 || opt.window >= static_cast<int64_t>(data.windows.size())) {
    throw ConfigError("window index " + std::to_string(opt.window) + " out of range [0, " +
                      std::to_string(data.windows.size()) + ")");
  }
  const auto& win = data.windows[static_cast<size_t>(opt.window)];
  if (!opt.all_frames && (opt.frame < 0 || opt.frame >= win.length)) {
    throw ConfigError("frame index " + std::to_string(opt.frame) + " out of range [0, " +
                      std::to_string(win.length) + ")");
  }

  std::vector<double> frames(static_cast<size_t>(win.length) *
                             static_cast<size_t>(win.source->frame_size()));
  win.copy_frames(frames.data());
  auto map = lrp::explain(ckpt.model, frames, win.length,
                          lrp::parse_explain_target(opt.target), opt.seed_scale,
                          rule_config_from(opt));

  fs::create_directories(opt.out);
  json outputs = json::array();
  const bool want_pgm = opt.format.find("pgm") != std::string::npos;
  const bool want_csv = opt.format.find("csv") != std::string::npos;
  const int64_t first = opt.all_frames ? 0 : opt.frame;
  const int64_t last = opt.all_frames ? win.length - 1 : opt.frame;
  for (int64_t f = first; f <= last; ++f) {
    char name[48];
    if (want_pgm) {
      std::snprintf(name, sizeof name, "heatmap_w%lld_f%03lld.pgm",
                    static_cast<long long>(opt.window), static_cast<long long>(f));
      const auto path = (fs::path(opt.out) / name).string();
      lrp::export_heatmap_pgm(map, f, path);
      outputs.push_back(path);
    }
    if (want_csv) {
      std::snprintf(name, sizeof name, "heatmap_w%lld_f%03lld.csv",
                    static_cast<long long>(opt.window), static_cast<long long>(f));
      const auto path = (fs::path(opt.out) / name).string();
      lrp::export_heatmap_csv(map, f, path);
      outputs.push_back(path);
    }
  }
  std::cout << "head scores (" << lrp::to_string(lrp::parse_explain_target(opt.target))
            << " target): x " << map.head_scores[0] << ", y " << map.head_scores[1]
            << "; seeded " << map.output_relevance << ", input total " << map.total()
            << "\n";
  write_manifest(opt.out, "explain", opt.seed, opt.to_json(), data.inputs, outputs);
  return 0;
}

// ---------------------------------------------------------------------------
// grad-check
// ---------------------------------------------------------------------------

int cmd_grad_check() {
  using namespace evtrack::ad;
  std::mt19937_64 rng(12345);
  auto random_tensor = [&](std::vector<int64_t> shape, double lo, double hi) {
    auto t = make_tensor(std::move(shape), 0.0, true);
    std::uniform_real_distribution<double> uni(lo, hi);
    for (auto& v : t->values) v = uni(rng);
    return t;
  };
  struct Row {
    std::string name;
    double err;
    double bound;
  };
  std::vector<Row> rows;

  {
    auto x = random_tensor({2, 3, 8, 8}, -1, 1);
    auto w = random_tensor({4, 3, 3, 3}, -1, 1);
    auto b = random_tensor({4}, -1, 1);
    auto f = [&](Tape& t) {
      auto y = conv2d(t, x, w, b, 1, 1);
      return sum(t, mul(t, y, y));
    };
    rows.push_back({"conv2d", grad_check(f, {x, w, b}, 1e-5), 1e-5});
  }
  {
    auto x = random_tensor({4, 6}, -1, 1);
    auto w = random_tensor({5, 6}, -1, 1);
    auto b = random_tensor({5}, -1, 1);
    auto f = [&](Tape& t) {
      auto y = activation(t, linear(t, x, w, b), Activation::tanh);
      return sum(t, mul(t, y, y));
    };
    rows.push_back({"linear+tanh", grad_check(f, {x, w, b}, 1e-5), 1e-5});
  }
  {
    auto x = random_tensor({4, 3, 2, 2}, -1, 1);
    auto gamma = random_tensor({3}, 0.5, 1.5);
    auto beta = random_tensor({3}, -1, 1);
    auto c = random_tensor({4, 3, 2, 2}, 2, 3);
    c->requires_grad = false;
    auto f = [&](Tape& t) {
      BatchNormState st(3);
      auto y = batch_norm(t, x, gamma, beta, st, Mode::train, 0.1, 1e-5);
      auto r = sub(t, y, c);
      return sum(t, mul(t, r, r));
    };
    rows.push_back({"batch_norm", grad_check(f, {x, gamma, beta}, 1e-5), 1e-4});
  }
  {
    auto x = random_tensor({2, 2, 4, 4}, -1, 1);
    auto f = [&](Tape& t) {
      auto y = avg_pool2d(t, x, 2);
      return sum(t, mul(t, y, y));
    };
    rows.push_back({"avg_pool2d", grad_check(f, {x}, 1e-5), 1e-6});
  }
  for (auto kind : {CellKind::lstm, CellKind::gru}) {
    const int64_t gates = kind == CellKind::lstm ? 4 : 3;
    const int64_t hidden = 4, n = 3, batch = 2;
    CellParams p;
    p.w_in = random_tensor({gates * hidden, n}, -0.5, 0.5);
    p.w_rec = random_tensor({gates * hidden, hidden}, -0.5, 0.5);
    p.bias = random_tensor({gates * hidden}, -0.2, 0.2);
    auto seq = random_tensor({3, batch, n}, -1, 1);
    RecurrentStack stack{kind, 1, false, hidden, {p}};
    auto f = [&](Tape& t) {
      auto out = run_recurrent(t, seq, stack);
      return sum(t, mul(t, out, out));
    };
    rows.push_back({kind == CellKind::lstm ? "lstm 3-step" : "gru 3-step",
                    grad_check(f, {p.w_in, p.w_rec, p.bias, seq}, 1e-5), 1e-5});
  }
  for (auto variant : {ModelVariant::cnn_gru, ModelVariant::cnn_bilstm,
                       ModelVariant::cnn_lstm}) {
    ModelConfig cfg;
    cfg.variant = variant;
    cfg.in_height = 8;
    cfg.in_width = 8;
    cfg.conv_channels = {4};
    cfg.feature_dim = 12;
    cfg.hidden = 12;
    cfg.rnn_layers = variant == ModelVariant::cnn_lstm ? 2 : 1;
    cfg.dropout_p = 0.0;
    cfg.seed = 7;
    ParameterStore store;
    auto model = build_model(cfg, store);
    auto frames = random_tensor({3, 2, 2, 8, 8}, 0.0, 1.0);
    frames->requires_grad = false;
    auto target = random_tensor({3, 2, 2}, 0.2, 0.8);
    target->requires_grad = false;
    auto f = [&](Tape& t) {
      auto pred = forward(t, model, frames, Mode::train);
      return weighted_mse(t, pred.coords, target, {1.0, 1.0});
    };
    std::vector<TensorPtr> params;
    for (const auto& name : store.names()) params.push_back(store.get(name));
    int64_t total = store.total_size();
    rows.push_back({to_string(variant) + " full (" + std::to_string(total) + " params)",
                    grad_check(f, params, 1e-5), 1e-4});
  }

  bool ok = true;
  std::printf("%-28s %12s %10s %s\n", "check", "max rel err", "bound", "status");
  for (const auto& r : rows) {
    const bool pass = r.err <= r.bound;
    ok = ok && pass;
    std::printf("%-28s %12.3e %10.0e %s\n", r.name.c_str(), r.err, r.bound,
                pass ? "ok" : "FAIL");
  }
  return ok ? 0 : 1;
}

}  // namespace

// ---------------------------------------------------------------------------

int main(int argc, char** argv) {
  CLI::App app{"event-camera pupil tracking: synthesize, train, evaluate, explain"};
  app.set_version_flag("--version", kToolVersion);
  app.require_subcommand(1);
  app.set_config("--config", "", "key=value config file; flags override it");

  SynthOptions synth_opt;
  auto* synth_cmd = app.add_subcommand("synth", "generate synthetic event recordings");
  std::string from_manifest_synth;
  synth_cmd->add_option("--kind", synth_opt.kind,
                        "fixation|smooth_pursuit|saccade_mix|blink_cycle|fixture13")
      ->capture_default_str();
  synth_cmd->add_option("--seconds", synth_opt.seconds)->capture_default_str();
  synth_cmd->add_option("--width", synth_opt.width)->capture_default_str();
  synth_cmd->add_option("--height", synth_opt.height)->capture_default_str();
  synth_cmd->add_option("--radius", synth_opt.radius)->capture_default_str();
  synth_cmd->add_option("--jitter", synth_opt.jitter)->capture_default_str();
  synth_cmd->add_option("--amplitude", synth_opt.amplitude)->capture_default_str();
  synth_cmd->add_option("--speed", synth_opt.speed)->capture_default_str();
  synth_cmd->add_option("--saccade-peak", synth_opt.saccade_peak)->capture_default_str();
  synth_cmd->add_option("--blink-period", synth_opt.blink_period)->capture_default_str();
  synth_cmd->add_option("--noise-rate", synth_opt.noise_rate)->capture_default_str();
  synth_cmd->add_option("--seed", synth_opt.seed)->capture_default_str();
  synth_cmd->add_option("--out", synth_opt.out, "output directory");
  synth_cmd->add_option("--from-manifest", from_manifest_synth,
                        "replay a recorded manifest (still requires --out)");

  auto add_pipeline_flags = [](CLI::App* cmd, PipelineOptions& pipe) {
    cmd->add_option("--spatial", pipe.spatial, "spatial downscale factor")
        ->capture_default_str();
    cmd->add_option("--temporal", pipe.temporal, "label downsample factor")
        ->capture_default_str();
    cmd->add_option("--label-rate", pipe.label_rate, "label rate of the csv files (Hz)")
        ->capture_default_str();
    cmd->add_option("--frame-us", pipe.frame_us, "frame duration in microseconds")
        ->capture_default_str();
    cmd->add_option("--seq-len", pipe.seq_len)->capture_default_str();
    cmd->add_option("--stride", pipe.stride)->capture_default_str();
    cmd->add_option("--normalize", pipe.normalize, "none|log1p|per_frame_max")
        ->capture_default_str();
    cmd->add_flag("--drop-closed", pipe.drop_closed,
                  "drop windows containing closed-eye labels");
  };

  BinOptions bin_opt;
  auto* bin_cmd = app.add_subcommand("bin", "bin an event file into frames");
  std::string from_manifest_bin;
  bin_cmd->add_option("--events", bin_opt.events, "input .evt1 file");
  bin_cmd->add_option("--frame-us", bin_opt.frame_us)->capture_default_str();
  bin_cmd->add_option("--normalize", bin_opt.normalize)->capture_default_str();
  bin_cmd->add_option("--spatial", bin_opt.spatial)->capture_default_str();
  bin_cmd->add_option("--out", bin_opt.out, "output directory");
  bin_cmd->add_option("--from-manifest", from_manifest_bin);

  TrainOptions train_opt;
  auto* train_cmd = app.add_subcommand("train", "train a pupil-center model");
  std::string from_manifest_train;
  train_cmd->add_option("--data", train_opt.data, "directory of .evt1/.csv session pairs");
  train_cmd->add_option("--model", train_opt.model, "cnn_gru|cnn_bilstm|cnn_lstm")
      ->capture_default_str();
  train_cmd->add_option("--epochs", train_opt.epochs)->capture_default_str();
  train_cmd->add_option("--lr", train_opt.lr, "learning rate")->capture_default_str();
  train_cmd->add_option("--batch", train_opt.batch)->capture_default_str();
  train_cmd->add_option("--channels", train_opt.channels, "conv channel plan")
      ->capture_default_str();
  train_cmd->add_option("--kernel", train_opt.kernel)->capture_default_str();
  train_cmd->add_option("--feature", train_opt.feature)->capture_default_str();
  train_cmd->add_option("--hidden", train_opt.hidden)->capture_default_str();
  train_cmd->add_option("--rnn-layers", train_opt.rnn_layers,
                        "recurrent layers (0 = variant default)")
      ->capture_default_str();
  train_cmd->add_option("--dropout", train_opt.dropout)->capture_default_str();
  train_cmd->add_option("--wx", train_opt.wx, "loss weight for x")->capture_default_str();
  train_cmd->add_option("--wy", train_opt.wy, "loss weight for y")->capture_default_str();
  train_cmd->add_flag("--use-close-mask", train_opt.use_close_mask,
                      "zero-weight closed-eye frames in the loss");
  train_cmd->add_option("--val-split", train_opt.val_split)->capture_default_str();
  train_cmd->add_option("--tolerances", train_opt.tolerances)->capture_default_str();
  train_cmd->add_option("--ckpt-every", train_opt.ckpt_every,
                        "checkpoint cadence in epochs (0 = final only)")
      ->capture_default_str();
  train_cmd->add_option("--seed", train_opt.seed)->capture_default_str();
  train_cmd->add_option("--out", train_opt.out, "output directory");
  train_cmd->add_option("--resume", train_opt.resume, "checkpoint to resume from");
  train_cmd->add_option("--from-manifest", from_manifest_train);
  add_pipeline_flags(train_cmd, train_opt.pipe);

  EvalOptions eval_opt;
  auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint at 20 Hz");
  std::string from_manifest_eval;
  eval_cmd->add_option("--ckpt", eval_opt.ckpt, "checkpoint file");
  eval_cmd->add_option("--data", eval_opt.data, "directory of .evt1/.csv session pairs");
  eval_cmd->add_option("--tolerances", eval_opt.tolerances)->capture_default_str();
  eval_cmd->add_option("--pixel-space", eval_opt.pixel_space, "downsampled|sensor")
      ->capture_default_str();
  eval_cmd->add_flag("--exclude-closed", eval_opt.exclude_closed,
                     "exclude closed-eye frames from the metrics");
  eval_cmd->add_option("--seed", eval_opt.seed)->capture_default_str();
  eval_cmd->add_option("--out", eval_opt.out, "output directory");
  eval_cmd->add_option("--from-manifest", from_manifest_eval);
  add_pipeline_flags(eval_cmd, eval_opt.pipe);

  ExplainOptions explain_opt;
  auto* explain_cmd =
      app.add_subcommand("explain", "relevance heatmaps for one sample window");
  std::string from_manifest_explain;
  explain_cmd->add_option("--ckpt", explain_opt.ckpt, "checkpoint file");
  explain_cmd->add_option("--data", explain_opt.data);
  explain_cmd->add_option("--window", explain_opt.window, "window index")
      ->capture_default_str();
  explain_cmd->add_option("--frame", explain_opt.frame, "frame to export")
      ->capture_default_str();
  explain_cmd->add_flag("--all-frames", explain_opt.all_frames, "export every frame");
  explain_cmd->add_option("--rule", explain_opt.rule, "composite|lrp0|epsilon|gamma")
      ->capture_default_str();
  explain_cmd->add_option("--epsilon", explain_opt.epsilon)->capture_default_str();
  explain_cmd->add_option("--gamma", explain_opt.gamma)->capture_default_str();
  explain_cmd->add_option("--target", explain_opt.target, "x|y|sum")
      ->capture_default_str();
  explain_cmd->add_option("--seed-scale", explain_opt.seed_scale)->capture_default_str();
  explain_cmd->add_option("--format", explain_opt.format, "pgm,csv")
      ->capture_default_str();
  explain_cmd->add_option("--seed", explain_opt.seed)->capture_default_str();
  explain_cmd->add_option("--out", explain_opt.out, "output directory");
  explain_cmd->add_option("--from-manifest", from_manifest_explain);
  add_pipeline_flags(explain_cmd, explain_opt.pipe);

  auto* grad_cmd = app.add_subcommand(
      "grad-check", "verify reverse-mode gradients against finite differences");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (synth_cmd->parsed()) {
      if (!from_manifest_synth.empty()) {
        auto m = load_manifest(from_manifest_synth, "synth");
        auto replay = SynthOptions::from_json(m.at("config"));
        if (!synth_opt.out.empty()) replay.out = synth_opt.out;
        if (replay.out.empty()) throw ConfigError("--out required to replay a manifest");
        return cmd_synth(replay);
      }
      if (synth_opt.out.empty()) throw ConfigError("--out is required");
      synth_opt.seed = resolve_seed(synth_cmd, synth_opt.seed);
      return cmd_synth(synth_opt);
    }
    if (bin_cmd->parsed()) {
      if (!from_manifest_bin.empty()) {
        auto m = load_manifest(from_manifest_bin, "bin");
        auto replay = BinOptions::from_json(m.at("config"));
        if (!bin_opt.out.empty()) replay.out = bin_opt.out;
        if (replay.out.empty()) throw ConfigError("--out required to replay a manifest");
        return cmd_bin(replay);
      }
      if (bin_opt.events.empty() || bin_opt.out.empty()) {
        throw ConfigError("--events and --out are required");
      }
      return cmd_bin(bin_opt);
    }
    if (train_cmd->parsed()) {
      if (!from_manifest_train.empty()) {
        auto m = load_manifest(from_manifest_train, "train");
        auto replay = TrainOptions::from_json(m.at("config"));
        if (!train_opt.out.empty()) replay.out = train_opt.out;
        if (replay.out.empty()) throw ConfigError("--out required to replay a manifest");
        return cmd_train(replay);
      }
      if (train_opt.data.empty() || train_opt.out.empty()) {
        throw ConfigError("--data and --out are required");
      }
      train_opt.seed = resolve_seed(train_cmd, train_opt.seed);
      return cmd_train(train_opt);
    }
    if (eval_cmd->parsed()) {
      if (!from_manifest_eval.empty()) {
        auto m = load_manifest(from_manifest_eval, "eval");
        auto replay = EvalOptions::from_json(m.at("config"));
        if (!eval_opt.out.empty()) replay.out = eval_opt.out;
        if (replay.out.empty()) throw ConfigError("--out required to replay a manifest");
        return cmd_eval(replay);
      }
      if (eval_opt.ckpt.empty() || eval_opt.data.empty() || eval_opt.out.empty()) {
        throw ConfigError("--ckpt, --data, and --out are required");
      }
      eval_opt.seed = resolve_seed(eval_cmd, eval_opt.seed);
      return cmd_eval(eval_opt);
    }
    if (explain_cmd->parsed()) {
      if (!from_manifest_explain.empty()) {
        auto m = load_manifest(from_manifest_explain, "explain");
        auto replay = ExplainOptions::from_json(m.at("config"));
        if (!explain_opt.out.empty()) replay.out = explain_opt.out;
        if (replay.out.empty()) throw ConfigError("--out required to replay a manifest");
        return cmd_explain(replay);
      }
      if (explain_opt.ckpt.empty() || explain_opt.data.empty() ||
          explain_opt.out.empty()) {
        throw ConfigError("--ckpt, --data, and --out are required");
      }
      explain_opt.seed = resolve_seed(explain_cmd, explain_opt.seed);
      return cmd_explain(explain_opt);
    }
    if (grad_cmd->parsed()) {
      return cmd_grad_check();
    }
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}
