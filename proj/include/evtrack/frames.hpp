#pragma once

#include <array>
#include <memory>
#include <vector>

#include "evtrack/events.hpp"

namespace evtrack {

// Binned event frames, [T, 2, H, W] row-major. Channel 0 counts positive
// polarity, channel 1 negative.
struct FrameSequence {
  std::vector<double> data;
  int64_t count = 0;  // T
  int64_t height = 0;
  int64_t width = 0;
  int64_t frame_duration_us = 0;
  int64_t origin_t_us = 0;

  int64_t frame_size() const { return 2 * height * width; }
  double* frame(int64_t i) { return data.data() + i * frame_size(); }
  const double* frame(int64_t i) const { return data.data() + i * frame_size(); }
  double& at(int64_t t, int64_t ch, int64_t y, int64_t x) {
    return data[((t * 2 + ch) * height + y) * width + x];
  }
  double at(int64_t t, int64_t ch, int64_t y, int64_t x) const {
    return data[((t * 2 + ch) * height + y) * width + x];
  }
};

// Frame i accumulates events with i*d <= t < (i+1)*d; T = ceil(span/d) with
// the trailing partial frame kept.
FrameSequence bin_to_frames(const EventStream& stream, int64_t frame_duration_us);

enum class NormalizeMode { none, log1p, per_frame_max };
NormalizeMode parse_normalize_mode(const std::string& s);
std::string to_string(NormalizeMode mode);

FrameSequence normalize_frames(const FrameSequence& frames, NormalizeMode mode);

// A window of consecutive frames with per-frame regression targets. Frames
// are viewed from the owning FrameSequence; targets are normalized to [0,1]
// by the frame dimensions. Target i is the label at the end of frame i's
// interval (label index start+i+1 at matched rates).
struct SampleWindow {
  std::shared_ptr<const FrameSequence> source;
  int64_t start = 0;
  int64_t length = 0;
  std::vector<std::array<double, 2>> targets;
  std::vector<uint8_t> close_mask;

  // Copies [length, 2, H, W] into dst.
  void copy_frames(double* dst) const;
};

std::vector<SampleWindow> make_windows(std::shared_ptr<const FrameSequence> frames,
                                       const LabelTrack& labels, int64_t seq_len,
                                       int64_t stride, bool drop_closed);

}  // namespace evtrack
