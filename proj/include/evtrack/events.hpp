#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "evtrack/errors.hpp"

namespace evtrack {

struct Event {
  int64_t t_us = 0;
  int32_t x = 0;
  int32_t y = 0;
  int8_t polarity = 1;  // +1 or -1
};

struct EventStream {
  int64_t width = 0;
  int64_t height = 0;
  std::vector<Event> events;  // sorted by t_us, ties allowed
};

struct LabelSample {
  int64_t t_us = 0;
  double x = 0.0;
  double y = 0.0;
  uint8_t close = 0;
};

struct LabelTrack {
  double rate_hz = 0.0;
  std::vector<LabelSample> samples;
};

// EVT1 container: 'E','V','T','1', u32 width, u32 height, u64 record_count,
// then 16-byte records (u64 t_us, u16 x, u16 y, i8 polarity, 3 zero bytes).
// All fields little-endian.
EventStream load_events(const std::string& path);
void write_events(const std::string& path, const EventStream& stream);

// CSV with header `t_us,x,y,close`. Sample spacing must match 1/rate_hz
// within 1 us.
LabelTrack load_labels(const std::string& path, double rate_hz);
void write_labels(const std::string& path, const LabelTrack& track);

// Keeps every k-th sample (k = 1/factor, which must be integral) starting at
// index 0 and scales the rate by factor.
LabelTrack downsample_labels(const LabelTrack& track, double factor);

// Maps event coordinates by floor(v * factor), label coordinates by v * factor
// (real-valued), and sensor dims by ceil(dim * factor).
std::pair<EventStream, LabelTrack> spatial_downscale(const EventStream& stream,
                                                     const LabelTrack& labels,
                                                     double factor);

}  // namespace evtrack
