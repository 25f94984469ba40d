#include "evtrack/synth.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

#include "evtrack/params.hpp"

namespace evtrack::synth {

TrajectoryKind parse_trajectory_kind(const std::string& s) {
  if (s == "fixation") return TrajectoryKind::fixation;
  if (s == "smooth_pursuit") return TrajectoryKind::smooth_pursuit;
  if (s == "saccade_mix") return TrajectoryKind::saccade_mix;
  if (s == "blink_cycle") return TrajectoryKind::blink_cycle;
  throw ConfigError("unknown trajectory kind '" + s + "'");
}

std::string to_string(TrajectoryKind kind) {
  switch (kind) {
    case TrajectoryKind::fixation: return "fixation";
    case TrajectoryKind::smooth_pursuit: return "smooth_pursuit";
    case TrajectoryKind::saccade_mix: return "saccade_mix";
    case TrajectoryKind::blink_cycle: return "blink_cycle";
  }
  return "fixation";
}

namespace {

struct Margins {
  double x_min, x_max, y_min, y_max;
};

Margins margins_for(const TrajectoryConfig& cfg) {
  const double r = cfg.radius_px;
  Margins m{r, static_cast<double>(cfg.width - 1) - r, r,
            static_cast<double>(cfg.height - 1) - r};
  if (m.x_min > m.x_max || m.y_min > m.y_max) {
    throw ConfigError("pupil radius " + std::to_string(r) + " does not fit sensor " +
                      std::to_string(cfg.width) + "x" + std::to_string(cfg.height));
  }
  return m;
}

void check_inside(const SceneState& scene, const Margins& m) {
  for (size_t i = 0; i < scene.ticks(); ++i) {
    if (scene.cx[i] < m.x_min || scene.cx[i] > m.x_max || scene.cy[i] < m.y_min ||
        scene.cy[i] > m.y_max) {
      throw ConfigError("trajectory leaves the sensor margins at tick " + std::to_string(i));
    }
  }
}

// Minimum-jerk interpolation used for ballistic jumps; peak velocity is
// 1.875 * distance / duration.
double min_jerk(double tau) {
  return tau * tau * tau * (10.0 + tau * (-15.0 + 6.0 * tau));
}

void add_jitter(SceneState& scene, double rms, std::mt19937_64& rng) {
  if (rms <= 0.0) return;
  const double sigma = rms / std::sqrt(2.0);
  std::normal_distribution<double> gauss(0.0, sigma);
  for (size_t i = 0; i < scene.ticks(); ++i) {
    scene.cx[i] += gauss(rng);
    scene.cy[i] += gauss(rng);
  }
}

void clamp_to(SceneState& scene, const Margins& m) {
  for (size_t i = 0; i < scene.ticks(); ++i) {
    scene.cx[i] = std::clamp(scene.cx[i], m.x_min, m.x_max);
    scene.cy[i] = std::clamp(scene.cy[i], m.y_min, m.y_max);
  }
}

}  // namespace

SceneState gen_trajectory(const TrajectoryConfig& cfg) {
  if (cfg.seconds <= 0.0) throw ConfigError("trajectory duration must be positive");
  const auto m = margins_for(cfg);
  const size_t ticks = static_cast<size_t>(std::llround(cfg.seconds * 1000.0));
  SceneState scene;
  scene.cx.assign(ticks, 0.0);
  scene.cy.assign(ticks, 0.0);
  scene.open.assign(ticks, 1);

  std::mt19937_64 rng(ad::mix_seed(cfg.seed, 0x7261754AULL));
  const double cx0 = 0.5 * (m.x_min + m.x_max);
  const double cy0 = 0.5 * (m.y_min + m.y_max);

  switch (cfg.kind) {
    case TrajectoryKind::fixation: {
      for (size_t i = 0; i < ticks; ++i) {
        scene.cx[i] = cx0;
        scene.cy[i] = cy0;
      }
      add_jitter(scene, cfg.jitter_rms_px, rng);
      break;
    }
    case TrajectoryKind::smooth_pursuit:
    case TrajectoryKind::blink_cycle: {
      // cx = cx0 + A sin(2 pi f t) with peak speed A * 2 pi f = speed_px_s.
      const double ax = std::min(cfg.amplitude_px, 0.5 * (m.x_max - m.x_min));
      const double ay = std::min(0.5 * cfg.amplitude_px, 0.5 * (m.y_max - m.y_min));
      const double fx = ax > 0.0 ? cfg.speed_px_s / (2.0 * std::numbers::pi * ax) : 0.0;
      const double fy = 0.7 * fx;
      for (size_t i = 0; i < ticks; ++i) {
        const double t = static_cast<double>(i) / 1000.0;
        scene.cx[i] = cx0 + ax * std::sin(2.0 * std::numbers::pi * fx * t);
        scene.cy[i] = cy0 + ay * std::sin(2.0 * std::numbers::pi * fy * t);
      }
      if (cfg.kind == TrajectoryKind::blink_cycle) {
        if (cfg.blink_period_s <= 0.0) throw ConfigError("blink period must be positive");
        std::uniform_real_distribution<double> dur(0.100, 0.300);
        std::uniform_real_distribution<double> phase(0.8, 1.2);
        double t_next = cfg.blink_period_s * phase(rng);
        while (t_next < cfg.seconds) {
          const double d = dur(rng);
          const size_t a = static_cast<size_t>(t_next * 1000.0);
          const size_t b = std::min(ticks, static_cast<size_t>((t_next + d) * 1000.0));
          for (size_t i = a; i < b; ++i) scene.open[i] = 0;
          t_next += cfg.blink_period_s * phase(rng);
        }
      }
      break;
    }
    case TrajectoryKind::saccade_mix: {
      std::uniform_real_distribution<double> ux(m.x_min, m.x_max);
      std::uniform_real_distribution<double> uy(m.y_min, m.y_max);
      std::uniform_real_distribution<double> hold(0.200, 0.600);
      // Longest jump still within the 20 ms ballistic window at peak speed.
      const double max_dist = cfg.saccade_peak_px_s * 0.020 / 1.875;
      double px = cx0, py = cy0;
      size_t i = 0;
      while (i < ticks) {
        const size_t hold_ticks = static_cast<size_t>(hold(rng) * 1000.0);
        for (size_t j = 0; j < hold_ticks && i < ticks; ++j, ++i) {
          scene.cx[i] = px;
          scene.cy[i] = py;
        }
        if (i >= ticks) break;
        double tx = ux(rng), ty = uy(rng);
        double dist = std::hypot(tx - px, ty - py);
        for (int tries = 0; dist > max_dist && tries < 64; ++tries) {
          tx = ux(rng);
          ty = uy(rng);
          dist = std::hypot(tx - px, ty - py);
        }
        if (dist > max_dist) {  // shrink along the segment as a last resort
          const double s = max_dist / dist;
          tx = px + (tx - px) * s;
          ty = py + (ty - py) * s;
          dist = max_dist;
        }
        const double duration = std::clamp(1.875 * dist / cfg.saccade_peak_px_s, 0.004, 0.020);
        const size_t jump_ticks = std::max<size_t>(1, static_cast<size_t>(duration * 1000.0));
        for (size_t j = 0; j < jump_ticks && i < ticks; ++j, ++i) {
          const double tau = static_cast<double>(j + 1) / static_cast<double>(jump_ticks);
          const double s = min_jerk(tau);
          scene.cx[i] = px + (tx - px) * s;
          scene.cy[i] = py + (ty - py) * s;
        }
        px = tx;
        py = ty;
      }
      add_jitter(scene, cfg.jitter_rms_px, rng);
      break;
    }
  }
  clamp_to(scene, m);
  check_inside(scene, m);
  return scene;
}

std::pair<EventStream, LabelTrack> render_events(const SceneState& scene,
                                                 const TrajectoryConfig& cfg) {
  EventStream stream;
  stream.width = cfg.width;
  stream.height = cfg.height;
  LabelTrack labels;
  labels.rate_hz = 100.0;

  const int64_t w = cfg.width, h = cfg.height;
  const double r2 = cfg.radius_px * cfg.radius_px;
  std::vector<uint8_t> prev(static_cast<size_t>(w * h), 0);

  struct Box {
    int64_t x0 = 0, x1 = -1, y0 = 0, y1 = -1;  // inclusive, empty when x1 < x0
  };
  auto disc_box = [&](double cx, double cy) {
    Box b;
    b.x0 = std::max<int64_t>(0, static_cast<int64_t>(std::floor(cx - cfg.radius_px)) - 1);
    b.x1 = std::min<int64_t>(w - 1, static_cast<int64_t>(std::ceil(cx + cfg.radius_px)) + 1);
    b.y0 = std::max<int64_t>(0, static_cast<int64_t>(std::floor(cy - cfg.radius_px)) - 1);
    b.y1 = std::min<int64_t>(h - 1, static_cast<int64_t>(std::ceil(cy + cfg.radius_px)) + 1);
    return b;
  };
  Box prev_box;

  std::mt19937_64 dither_rng(ad::mix_seed(cfg.seed, 0x64697468ULL));
  std::mt19937_64 noise_rng(ad::mix_seed(cfg.seed, 0x6E6F6973ULL));
  std::uniform_int_distribution<int64_t> dither(0, 999);
  std::uniform_int_distribution<int64_t> nx(0, w - 1), ny(0, h - 1);
  std::uniform_int_distribution<int> npol(0, 1);
  const double noise_per_tick = cfg.noise_events_per_s / 1000.0;
  std::poisson_distribution<int> noise_count(noise_per_tick > 0.0 ? noise_per_tick : 1.0);

  std::vector<Event> tick_events;
  for (size_t k = 0; k < scene.ticks(); ++k) {
    if (!scene.open[k]) continue;  // reference state freezes while closed
    tick_events.clear();
    const int64_t base_t = static_cast<int64_t>(k) * 1000;
    const double cx = scene.cx[k], cy = scene.cy[k];
    const Box cur = disc_box(cx, cy);
    // Membership can only change inside the union of the old and new disc
    // bounding boxes; everything else keeps its previous state.
    Box scan = cur;
    if (prev_box.x1 >= prev_box.x0) {
      scan.x0 = std::min(scan.x0, prev_box.x0);
      scan.x1 = std::max(scan.x1, prev_box.x1);
      scan.y0 = std::min(scan.y0, prev_box.y0);
      scan.y1 = std::max(scan.y1, prev_box.y1);
    }
    for (int64_t y = scan.y0; y <= scan.y1; ++y) {
      const double dy = static_cast<double>(y) - cy;
      for (int64_t x = scan.x0; x <= scan.x1; ++x) {
        const double dx = static_cast<double>(x) - cx;
        const uint8_t inside = (dx * dx + dy * dy <= r2) ? 1 : 0;
        const size_t idx = static_cast<size_t>(y * w + x);
        if (inside != prev[idx]) {
          Event e;
          e.t_us = base_t + dither(dither_rng);
          e.x = static_cast<int32_t>(x);
          e.y = static_cast<int32_t>(y);
          e.polarity = inside ? -1 : 1;  // entering the dark disc dims the pixel
          tick_events.push_back(e);
          prev[idx] = inside;
        }
      }
    }
    prev_box = cur;
    if (noise_per_tick > 0.0) {
      const int extra = noise_count(noise_rng);
      for (int j = 0; j < extra; ++j) {
        Event e;
        e.t_us = base_t + dither(dither_rng);
        e.x = static_cast<int32_t>(nx(noise_rng));
        e.y = static_cast<int32_t>(ny(noise_rng));
        e.polarity = npol(noise_rng) ? 1 : -1;
        tick_events.push_back(e);
      }
    }
    std::stable_sort(tick_events.begin(), tick_events.end(),
                     [](const Event& a, const Event& b) { return a.t_us < b.t_us; });
    stream.events.insert(stream.events.end(), tick_events.begin(), tick_events.end());
  }

  const size_t label_count = scene.ticks() / 10;
  labels.samples.reserve(label_count);
  for (size_t i = 0; i < label_count; ++i) {
    const size_t tick = i * 10;
    LabelSample s;
    s.t_us = static_cast<int64_t>(i) * 10000;
    s.x = scene.cx[tick];
    s.y = scene.cy[tick];
    s.close = scene.open[tick] ? 0 : 1;
    labels.samples.push_back(s);
  }
  return {std::move(stream), std::move(labels)};
}

std::vector<TrajectoryConfig> fixture_sessions(uint64_t base_seed) {
  std::vector<TrajectoryConfig> sessions;
  const TrajectoryKind plan[13] = {
      TrajectoryKind::smooth_pursuit, TrajectoryKind::saccade_mix,
      TrajectoryKind::smooth_pursuit, TrajectoryKind::blink_cycle,
      TrajectoryKind::saccade_mix,    TrajectoryKind::smooth_pursuit,
      TrajectoryKind::fixation,       TrajectoryKind::saccade_mix,
      TrajectoryKind::smooth_pursuit, TrajectoryKind::blink_cycle,
      TrajectoryKind::saccade_mix,    TrajectoryKind::smooth_pursuit,
      TrajectoryKind::fixation,
  };
  for (int i = 0; i < 13; ++i) {
    TrajectoryConfig cfg;
    cfg.kind = plan[i];
    cfg.seconds = 4.6;
    cfg.seed = ad::mix_seed(base_seed, 0x13F0 + static_cast<uint64_t>(i));
    cfg.amplitude_px = 100.0 + 15.0 * static_cast<double>(i % 5);
    cfg.speed_px_s = 180.0 + 40.0 * static_cast<double>(i % 4);
    sessions.push_back(cfg);
  }
  return sessions;
}

}  // namespace evtrack::synth
