#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <numbers>
#include <set>

#include "evtrack/synth.hpp"

using namespace evtrack;
using namespace evtrack::synth;

namespace {

TrajectoryConfig small_cfg(TrajectoryKind kind, uint64_t seed = 1) {
  TrajectoryConfig cfg;
  cfg.kind = kind;
  cfg.seconds = 1.0;
  cfg.width = 64;
  cfg.height = 48;
  cfg.radius_px = 6.0;
  cfg.amplitude_px = 12.0;
  cfg.speed_px_s = 40.0;
  cfg.seed = seed;
  return cfg;
}

// Brute-force disc membership over the whole sensor.
std::set<int64_t> disc_pixels(double cx, double cy, double r, int64_t w, int64_t h) {
  std::set<int64_t> out;
  for (int64_t y = 0; y < h; ++y)
    for (int64_t x = 0; x < w; ++x) {
      const double dx = static_cast<double>(x) - cx;
      const double dy = static_cast<double>(y) - cy;
      if (dx * dx + dy * dy <= r * r) out.insert(y * w + x);
    }
  return out;
}

}  // namespace

TEST_CASE("fixation with zero jitter holds a constant center") {
  auto cfg = small_cfg(TrajectoryKind::fixation);
  cfg.jitter_rms_px = 0.0;
  auto scene = gen_trajectory(cfg);
  REQUIRE(scene.ticks() == 1000);
  for (size_t i = 1; i < scene.ticks(); ++i) {
    CHECK(scene.cx[i] == scene.cx[0]);
    CHECK(scene.cy[i] == scene.cy[0]);
  }
}

TEST_CASE("smooth pursuit follows the sinusoid closed form") {
  auto cfg = small_cfg(TrajectoryKind::smooth_pursuit);
  // peak speed A*2*pi*f with f = 0.25 Hz puts phase pi/2 at exactly t = 1 s
  cfg.seconds = 1.5;
  cfg.amplitude_px = 10.0;
  cfg.speed_px_s = 10.0 * 2.0 * std::numbers::pi * 0.25;
  auto scene = gen_trajectory(cfg);
  const double cx0 = 0.5 * (6.0 + 63.0 - 6.0);
  CHECK(scene.cx[0] == doctest::Approx(cx0));
  CHECK(scene.cx[1000] == doctest::Approx(cx0 + 10.0));  // +A at phase pi/2
  for (size_t i = 0; i < scene.ticks(); i += 113) {
    const double t = static_cast<double>(i) / 1000.0;
    CHECK(scene.cx[i] ==
          doctest::Approx(cx0 + 10.0 * std::sin(2.0 * std::numbers::pi * 0.25 * t)));
  }
}

TEST_CASE("trajectories are deterministic for a fixed seed") {
  for (auto kind : {TrajectoryKind::saccade_mix, TrajectoryKind::blink_cycle}) {
    auto a = gen_trajectory(small_cfg(kind, 7));
    auto b = gen_trajectory(small_cfg(kind, 7));
    CHECK(a.cx == b.cx);
    CHECK(a.cy == b.cy);
    CHECK(a.open == b.open);
  }
}

TEST_CASE("oversized pupil radius is a config error") {
  auto cfg = small_cfg(TrajectoryKind::fixation);
  cfg.radius_px = 40.0;
  CHECK_THROWS_AS(gen_trajectory(cfg), ConfigError);
}

TEST_CASE("static scene emits only the initial disc onset") {
  auto cfg = small_cfg(TrajectoryKind::fixation);
  cfg.jitter_rms_px = 0.0;
  auto scene = gen_trajectory(cfg);
  auto [stream, labels] = render_events(scene, cfg);
  const auto disc = disc_pixels(scene.cx[0], scene.cy[0], cfg.radius_px, 64, 48);
  CHECK(stream.events.size() == disc.size());
  for (const auto& e : stream.events) {
    CHECK(e.t_us < 1000);  // all in tick 0
    CHECK(e.polarity == -1);
    CHECK(disc.count(e.y * 64 + e.x) == 1);
  }
}

TEST_CASE("per-tick event count equals the disc symmetric difference") {
  auto cfg = small_cfg(TrajectoryKind::smooth_pursuit, 3);
  cfg.seconds = 0.5;
  cfg.speed_px_s = 60.0;
  auto scene = gen_trajectory(cfg);
  auto [stream, labels] = render_events(scene, cfg);

  // brute-force oracle: membership diff per tick over the whole sensor
  std::vector<size_t> oracle(scene.ticks(), 0);
  std::set<int64_t> prev;
  for (size_t k = 0; k < scene.ticks(); ++k) {
    auto cur = disc_pixels(scene.cx[k], scene.cy[k], cfg.radius_px, 64, 48);
    size_t diff = 0;
    for (int64_t p : cur) diff += prev.count(p) == 0 ? 1 : 0;
    for (int64_t p : prev) diff += cur.count(p) == 0 ? 1 : 0;
    oracle[k] = diff;
    prev = std::move(cur);
  }
  std::vector<size_t> got(scene.ticks(), 0);
  for (const auto& e : stream.events) got[static_cast<size_t>(e.t_us / 1000)] += 1;
  CHECK(got == oracle);
}

TEST_CASE("labels sample the scene at exactly 100 Hz") {
  auto cfg = small_cfg(TrajectoryKind::smooth_pursuit);
  cfg.seconds = 2.0;
  auto scene = gen_trajectory(cfg);
  auto [stream, labels] = render_events(scene, cfg);
  REQUIRE(labels.samples.size() == 200);
  CHECK(labels.rate_hz == 100.0);
  for (size_t i = 0; i < labels.samples.size(); ++i) {
    CHECK(labels.samples[i].t_us == static_cast<int64_t>(i) * 10000);
    CHECK(labels.samples[i].x == scene.cx[i * 10]);
    CHECK(labels.samples[i].y == scene.cy[i * 10]);
    CHECK(labels.samples[i].close == 0);
  }
}

TEST_CASE("blink intervals emit no events and carry close labels") {
  auto cfg = small_cfg(TrajectoryKind::blink_cycle, 11);
  cfg.seconds = 4.0;
  cfg.blink_period_s = 1.0;
  auto scene = gen_trajectory(cfg);
  auto [stream, labels] = render_events(scene, cfg);

  bool saw_blink = false;
  for (size_t k = 0; k < scene.ticks(); ++k) {
    if (!scene.open[k]) saw_blink = true;
  }
  REQUIRE(saw_blink);

  for (const auto& e : stream.events) {
    CHECK(scene.open[static_cast<size_t>(e.t_us / 1000)] == 1);
  }
  bool close_label = false;
  for (const auto& s : labels.samples) {
    if (s.close == 1) close_label = true;
    CHECK(s.close == (scene.open[static_cast<size_t>(s.t_us / 1000)] ? 0 : 1));
  }
  CHECK(close_label);
}

TEST_CASE("streams are in bounds, time-sorted, and seed-deterministic") {
  auto cfg = small_cfg(TrajectoryKind::saccade_mix, 21);
  cfg.seconds = 2.0;
  auto scene = gen_trajectory(cfg);
  auto [a_stream, a_labels] = render_events(scene, cfg);
  auto [b_stream, b_labels] = render_events(scene, cfg);

  REQUIRE(!a_stream.events.empty());
  int64_t prev_t = -1;
  for (const auto& e : a_stream.events) {
    CHECK(e.t_us >= prev_t);
    prev_t = e.t_us;
    CHECK(e.x >= 0);
    CHECK(e.x < 64);
    CHECK(e.y >= 0);
    CHECK(e.y < 48);
  }
  CHECK(a_stream.events.size() == b_stream.events.size());
  for (size_t i = 0; i < a_stream.events.size(); ++i) {
    CHECK(a_stream.events[i].t_us == b_stream.events[i].t_us);
    CHECK(a_stream.events[i].x == b_stream.events[i].x);
    CHECK(a_stream.events[i].polarity == b_stream.events[i].polarity);
  }
}

TEST_CASE("the fixture preset spans 13 sessions of all four kinds") {
  auto sessions = fixture_sessions(42);
  REQUIRE(sessions.size() == 13);
  std::set<TrajectoryKind> kinds;
  double total = 0.0;
  std::set<uint64_t> seeds;
  for (const auto& s : sessions) {
    kinds.insert(s.kind);
    total += s.seconds;
    seeds.insert(s.seed);
  }
  CHECK(kinds.size() == 4);
  CHECK(total >= 55.0);
  CHECK(total <= 65.0);
  CHECK(seeds.size() == 13);

  auto again = fixture_sessions(42);
  for (size_t i = 0; i < sessions.size(); ++i) CHECK(sessions[i].seed == again[i].seed);
}
