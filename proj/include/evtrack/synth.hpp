#pragma once

#include <string>
#include <utility>
#include <vector>

#include "evtrack/events.hpp"

namespace evtrack::synth {

enum class TrajectoryKind { fixation, smooth_pursuit, saccade_mix, blink_cycle };
TrajectoryKind parse_trajectory_kind(const std::string& s);
std::string to_string(TrajectoryKind kind);

struct TrajectoryConfig {
  TrajectoryKind kind = TrajectoryKind::smooth_pursuit;
  double seconds = 2.0;
  int64_t width = 640;
  int64_t height = 480;
  double radius_px = 48.0;
  double jitter_rms_px = 0.35;         // fixation tremor, RMS displacement
  double amplitude_px = 120.0;         // pursuit sweep amplitude (x axis)
  double speed_px_s = 250.0;           // pursuit peak speed
  double saccade_peak_px_s = 12000.0;  // ballistic jump peak speed
  double blink_period_s = 1.5;
  double noise_events_per_s = 0.0;     // uniform background noise rate
  uint64_t seed = 1;
};

// Pupil center and eye-open flag per 1 ms simulation tick.
struct SceneState {
  std::vector<double> cx, cy;
  std::vector<uint8_t> open;
  size_t ticks() const { return cx.size(); }
};

SceneState gen_trajectory(const TrajectoryConfig& cfg);

// Renders the pupil as a dark disc on a bright background. A pixel emits one
// event per tick in which its disc membership changes: entering the disc is
// polarity -1, leaving +1. While the eye is closed nothing is emitted and the
// reference state freezes, so reopening produces a single onset burst against
// the pre-blink disc. Timestamps are dithered uniformly inside the tick.
// Labels are sampled at exactly 100 Hz with close = 1 - eye_open.
std::pair<EventStream, LabelTrack> render_events(const SceneState& scene,
                                                 const TrajectoryConfig& cfg);

// The 13-session desk-scale fixture mixing all four trajectory kinds,
// roughly 60 s in total. Session seeds derive deterministically from
// base_seed.
std::vector<TrajectoryConfig> fixture_sessions(uint64_t base_seed);

}  // namespace evtrack::synth
