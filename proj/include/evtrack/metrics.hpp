#pragma once

#include <array>
#include <map>
#include <string>
#include <vector>

#include "evtrack/frames.hpp"
#include "evtrack/model.hpp"

namespace evtrack {

enum class PixelSpace { downsampled, sensor };
PixelSpace parse_pixel_space(const std::string& s);
std::string to_string(PixelSpace space);

struct EvalReport {
  std::map<double, double> p_acc;  // tolerance -> percent
  double total_euclidean = 0.0;
  double mean_euclidean = 0.0;
  int64_t n_samples = 0;
  PixelSpace pixel_space = PixelSpace::downsampled;

  std::string to_csv() const;    // tolerance,p_acc
  std::string to_json() const;   // summary with totals
  std::string to_table() const;  // fixed-width console table
};

using PointList = std::vector<std::array<double, 2>>;

// Percent of samples whose Euclidean distance to ground truth is <= tolerance
// (closed ball).
std::map<double, double> pixel_accuracy(const PointList& pred, const PointList& gt,
                                        const std::vector<double>& tolerances);

// (total, mean) of per-sample Euclidean distances.
std::pair<double, double> euclidean_distance(const PointList& pred, const PointList& gt);

// Eval-mode forward over every window; normalized outputs are scaled to the
// requested pixel space (downsampled multiplies by frame dims, sensor divides
// further by spatial_factor). Windows must be built at 20 Hz. Closed-eye
// frames are excluded when exclude_closed is set.
EvalReport evaluate(Model& model, const std::vector<SampleWindow>& windows,
                    const std::vector<double>& tolerances, PixelSpace pixel_space,
                    double spatial_factor, bool exclude_closed);

}  // namespace evtrack
