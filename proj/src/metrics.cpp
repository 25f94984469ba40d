#include "evtrack/metrics.hpp"

#include <cmath>
#include <cstdio>
#include <sstream>

namespace evtrack {

PixelSpace parse_pixel_space(const std::string& s) {
  if (s == "downsampled") return PixelSpace::downsampled;
  if (s == "sensor") return PixelSpace::sensor;
  throw ConfigError("unknown pixel space '" + s + "'");
}

std::string to_string(PixelSpace space) {
  return space == PixelSpace::downsampled ? "downsampled" : "sensor";
}

std::string EvalReport::to_csv() const {
  std::ostringstream os;
  os << "tolerance,p_acc\n";
  char buf[64];
  for (const auto& [tol, acc] : p_acc) {
    std::snprintf(buf, sizeof buf, "%g,%.6f\n", tol, acc);
    os << buf;
  }
  return os.str();
}

std::string EvalReport::to_json() const {
  std::ostringstream os;
  char buf[96];
  os << "{\n  \"pixel_space\": \"" << to_string(pixel_space) << "\",\n";
  os << "  \"n_samples\": " << n_samples << ",\n";
  std::snprintf(buf, sizeof buf, "  \"total_euclidean\": %.9g,\n", total_euclidean);
  os << buf;
  std::snprintf(buf, sizeof buf, "  \"mean_euclidean\": %.9g,\n", mean_euclidean);
  os << buf;
  os << "  \"p_acc\": {";
  bool first = true;
  for (const auto& [tol, acc] : p_acc) {
    std::snprintf(buf, sizeof buf, "%s\"%g\": %.6f", first ? "" : ", ", tol, acc);
    os << buf;
    first = false;
  }
  os << "}\n}\n";
  return os.str();
}

std::string EvalReport::to_table() const {
  std::ostringstream os;
  char buf[96];
  os << "  tolerance      p_acc\n";
  for (const auto& [tol, acc] : p_acc) {
    std::snprintf(buf, sizeof buf, "  %9g  %8.3f%%\n", tol, acc);
    os << buf;
  }
  std::snprintf(buf, sizeof buf, "  samples: %lld  total dist: %.3f px  mean dist: %.3f px (%s)\n",
                static_cast<long long>(n_samples), total_euclidean, mean_euclidean,
                to_string(pixel_space).c_str());
  os << buf;
  return os.str();
}

std::map<double, double> pixel_accuracy(const PointList& pred, const PointList& gt,
                                        const std::vector<double>& tolerances) {
  if (pred.empty()) throw ContractError("pixel_accuracy: no samples");
  if (pred.size() != gt.size()) {
    throw ContractError("pixel_accuracy: size mismatch " + std::to_string(pred.size()) +
                        " vs " + std::to_string(gt.size()));
  }
  for (double t : tolerances) {
    if (t <= 0.0) throw ContractError("pixel_accuracy: tolerance must be positive");
  }
  std::map<double, double> out;
  for (double tol : tolerances) {
    int64_t correct = 0;
    for (size_t i = 0; i < pred.size(); ++i) {
      const double d = std::hypot(pred[i][0] - gt[i][0], pred[i][1] - gt[i][1]);
      if (d <= tol) ++correct;
    }
    out[tol] = 100.0 * static_cast<double>(correct) / static_cast<double>(pred.size());
  }
  return out;
}

std::pair<double, double> euclidean_distance(const PointList& pred, const PointList& gt) {
  if (pred.empty()) throw ContractError("euclidean_distance: no samples");
  if (pred.size() != gt.size()) {
    throw ContractError("euclidean_distance: size mismatch " + std::to_string(pred.size()) +
                        " vs " + std::to_string(gt.size()));
  }
  double total = 0.0;
  for (size_t i = 0; i < pred.size(); ++i) {
    total += std::hypot(pred[i][0] - gt[i][0], pred[i][1] - gt[i][1]);
  }
  return {total, total / static_cast<double>(pred.size())};
}

EvalReport evaluate(Model& model, const std::vector<SampleWindow>& windows,
                    const std::vector<double>& tolerances, PixelSpace pixel_space,
                    double spatial_factor, bool exclude_closed) {
  if (windows.empty()) throw ContractError("evaluate: no windows");
  const int64_t frame_us = windows[0].source->frame_duration_us;
  if (std::abs(static_cast<double>(frame_us) - 50000.0) > 500.0) {
    throw ContractError("evaluate: frames binned at " + std::to_string(frame_us) +
                        " us per frame; the evaluation contract is 20 Hz (50000 us)");
  }
  if (pixel_space == PixelSpace::sensor && spatial_factor <= 0.0) {
    throw ContractError("evaluate: sensor space needs a positive spatial factor");
  }

  const double w = static_cast<double>(windows[0].source->width);
  const double h = static_cast<double>(windows[0].source->height);
  const double scale = pixel_space == PixelSpace::sensor ? 1.0 / spatial_factor : 1.0;

  PointList pred_px, gt_px;
  for (const auto& win : windows) {
    auto frames = ad::make_tensor({win.length, 1, 2, win.source->height, win.source->width});
    win.copy_frames(frames->values.data());
    ad::Tape tape;
    auto pred = forward(tape, model, frames, ad::Mode::eval);
    for (int64_t t = 0; t < win.length; ++t) {
      if (exclude_closed && win.close_mask[t] != 0) continue;
      pred_px.push_back({pred.coords->values[t * 2] * w * scale,
                         pred.coords->values[t * 2 + 1] * h * scale});
      gt_px.push_back({win.targets[t][0] * w * scale, win.targets[t][1] * h * scale});
    }
  }
  if (pred_px.empty()) throw ContractError("evaluate: every frame was excluded");

  EvalReport report;
  report.pixel_space = pixel_space;
  report.n_samples = static_cast<int64_t>(pred_px.size());
  report.p_acc = pixel_accuracy(pred_px, gt_px, tolerances);
  auto [total, mean] = euclidean_distance(pred_px, gt_px);
  report.total_euclidean = total;
  report.mean_euclidean = mean;
  return report;
}

}  // namespace evtrack
