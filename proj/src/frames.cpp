#include "evtrack/frames.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

namespace evtrack {

FrameSequence bin_to_frames(const EventStream& stream, int64_t frame_duration_us) {
  if (frame_duration_us <= 0) throw ContractError("bin_to_frames: frame duration must be positive");
  FrameSequence seq;
  seq.height = stream.height;
  seq.width = stream.width;
  seq.frame_duration_us = frame_duration_us;
  seq.origin_t_us = 0;
  if (stream.events.empty()) return seq;

  const int64_t span = stream.events.back().t_us + 1;
  seq.count = (span + frame_duration_us - 1) / frame_duration_us;
  seq.data.assign(static_cast<size_t>(seq.count * seq.frame_size()), 0.0);
  for (const auto& e : stream.events) {
    const int64_t i = e.t_us / frame_duration_us;
    const int64_t ch = e.polarity > 0 ? 0 : 1;
    seq.at(i, ch, e.y, e.x) += 1.0;
  }
  return seq;
}

NormalizeMode parse_normalize_mode(const std::string& s) {
  if (s == "none") return NormalizeMode::none;
  if (s == "log1p") return NormalizeMode::log1p;
  if (s == "per_frame_max") return NormalizeMode::per_frame_max;
  throw ConfigError("unknown normalize mode '" + s + "'");
}

std::string to_string(NormalizeMode mode) {
  switch (mode) {
    case NormalizeMode::none: return "none";
    case NormalizeMode::log1p: return "log1p";
    case NormalizeMode::per_frame_max: return "per_frame_max";
  }
  return "none";
}

FrameSequence normalize_frames(const FrameSequence& frames, NormalizeMode mode) {
  FrameSequence out = frames;
  switch (mode) {
    case NormalizeMode::none:
      break;
    case NormalizeMode::log1p:
      for (auto& v : out.data) v = std::log1p(v);
      break;
    case NormalizeMode::per_frame_max:
      for (int64_t i = 0; i < out.count; ++i) {
        double* f = out.frame(i);
        const int64_t n = out.frame_size();
        double mx = 0.0;
        for (int64_t j = 0; j < n; ++j) mx = std::max(mx, f[j]);
        if (mx > 0.0) {
          for (int64_t j = 0; j < n; ++j) f[j] /= mx;
        }
      }
      break;
  }
  return out;
}

void SampleWindow::copy_frames(double* dst) const {
  const int64_t n = length * source->frame_size();
  std::memcpy(dst, source->frame(start), static_cast<size_t>(n) * sizeof(double));
}

std::vector<SampleWindow> make_windows(std::shared_ptr<const FrameSequence> frames,
                                       const LabelTrack& labels, int64_t seq_len,
                                       int64_t stride, bool drop_closed) {
  if (!frames) throw ContractError("make_windows: null frame sequence");
  if (seq_len <= 0 || stride <= 0) throw ContractError("make_windows: seq_len and stride must be positive");
  const double frame_rate = 1e6 / static_cast<double>(frames->frame_duration_us);
  if (std::abs(labels.rate_hz - frame_rate) > 0.01 * frame_rate) {
    throw ContractError("make_windows: label rate " + std::to_string(labels.rate_hz) +
                        " Hz does not match frame rate " + std::to_string(frame_rate) + " Hz");
  }
  if (static_cast<int64_t>(labels.samples.size()) < frames->count) {
    throw ContractError("make_windows: fewer labels (" +
                        std::to_string(labels.samples.size()) + ") than frames (" +
                        std::to_string(frames->count) + ")");
  }

  // Frame i's target is the label at the end of its interval, so the last
  // usable frame is the one with label index i+1 still in range.
  const int64_t usable =
      std::min(frames->count, static_cast<int64_t>(labels.samples.size()) - 1);

  std::vector<SampleWindow> windows;
  const double w = static_cast<double>(frames->width);
  const double h = static_cast<double>(frames->height);
  for (int64_t start = 0; start + seq_len <= usable; start += stride) {
    SampleWindow win;
    win.source = frames;
    win.start = start;
    win.length = seq_len;
    win.targets.reserve(seq_len);
    win.close_mask.reserve(seq_len);
    bool any_closed = false;
    for (int64_t i = 0; i < seq_len; ++i) {
      const auto& lab = labels.samples[static_cast<size_t>(start + i + 1)];
      const double tx = lab.x / w;
      const double ty = lab.y / h;
      if (tx < 0.0 || tx > 1.0 || ty < 0.0 || ty > 1.0) {
        throw ValidationError("make_windows: label (" + std::to_string(lab.x) + ", " +
                              std::to_string(lab.y) + ") outside frame " +
                              std::to_string(frames->width) + "x" +
                              std::to_string(frames->height));
      }
      win.targets.push_back({tx, ty});
      win.close_mask.push_back(lab.close);
      any_closed = any_closed || lab.close != 0;
    }
    if (drop_closed && any_closed) continue;
    windows.push_back(std::move(win));
  }
  return windows;
}

}  // namespace evtrack
