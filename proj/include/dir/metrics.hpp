#pragma once

#include <functional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "dir/suppression.hpp"
#include "dir/synth_world.hpp"

namespace dir {

// Pearson correlation via single-pass co-moment accumulation.
// Throws std::domain_error for fewer than two samples or zero variance.
double pearson(std::span<const double> x, std::span<const double> y);

struct EvalConfig {
  std::vector<double> iou_thresholds;  // defaults to 0.50, 0.55, ..., 0.95
  int recall_points = 101;
  int max_dets_per_scene = 100;
  double hist_bin_width = 0.05;

  EvalConfig();
  void validate() const;
};

struct SceneDetection {
  int scene_id = 0;
  Detection det;
};

struct SceneGt {
  int scene_id = 0;
  BoundingBox box;
  int class_id = 0;
};

// Greedy TP/FP assignment for one scene: walking the ranked detections, each
// matches the highest-IoU unmatched same-class ground truth with iou >= t.
std::vector<bool> match_detections(std::span<const Detection> ranked,
                                   std::span<const SceneObject> gts, double t);

// Pooled precision-recall over confidence-ranked detections, interpolated on
// the fixed recall grid with a precision envelope. Throws std::domain_error
// when there is no ground truth.
double average_precision_at(std::span<const SceneDetection> dets,
                            std::span<const SceneGt> gts, double t, const EvalConfig& cfg);

struct ApSummary {
  double ap_mean = 0.0;
  double ap50 = 0.0;
  double ap75 = 0.0;
  std::vector<std::pair<double, double>> per_threshold;
};

ApSummary average_precision(std::span<const SceneDetection> dets,
                            std::span<const SceneGt> gts, const EvalConfig& cfg);

struct Histogram {
  double lo = -1.0;
  double bin_width = 0.05;
  std::vector<double> mass;  // normalized, sums to 1 for non-empty input
  double mean = 0.0;         // mean of the raw values
  int count = 0;
};

// Distribution of iou_star - proposal_iou over [-1, 1].
Histogram delta_iou_histogram(std::span<const Sample> samples, double bin_width);

using Predictor = std::function<double(const Sample&)>;

// Pearson of each predictor's confidence against iou_star, optionally
// restricted to samples with iou_star > 0.5. Labels keep the input order.
std::vector<std::pair<std::string, double>> correlation_study(
    const std::vector<std::pair<std::string, Predictor>>& predictors,
    std::span<const Sample> samples, bool filter_iou_above_half);

}  // namespace dir
