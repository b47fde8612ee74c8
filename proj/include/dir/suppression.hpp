#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <vector>

#include "dir/box.hpp"

namespace dir {

struct Detection {
  BoundingBox box;
  int class_id = 0;
  double cls_score = 0.0;
  std::optional<double> pred_purity;
  std::optional<double> pred_integrity;
  std::optional<double> pred_iou;
  double confidence = 0.0;  // ranking key used by NMS
};

enum class FusionRule {
  ClsOnly,
  GeometricMeanClsIou,
  PurityOnly,
  IntegrityOnly,
  GeometricAvgPI,
  ArithmeticAvgPI,
  CombinedIou,
};

const char* to_string(FusionRule rule);

// Greedy per-class NMS. Kept detections come back sorted by confidence,
// ties broken by lower class_id, then earlier input position.
std::vector<Detection> greedy_nms(std::span<const Detection> dets, double lambda);

enum class SoftNmsMode { Linear, Gaussian };

// Per-class score decay instead of hard suppression. Linear mode rescales by
// (1 - iou) when iou > nt; gaussian mode by exp(-iou^2 / sigma). Detections
// whose confidence falls below score_floor are dropped.
std::vector<Detection> soft_nms(std::span<const Detection> dets, SoftNmsMode mode,
                                double nt, double sigma, double score_floor);

// Fills det.confidence according to the fusion rule. Rules beyond
// ClsOnly/GeometricMeanClsIou first form a localization score from the
// predicted purity/integrity, then take the geometric mean with cls_score
// (or use the localization score alone when fuse_with_cls is false).
Detection fuse_confidence(const Detection& det, FusionRule rule, bool fuse_with_cls = true);

struct GateResult {
  std::vector<Detection> passed;
  std::vector<std::size_t> passed_indices;
};

// Splits detections by cls_score >= a; only passing ones go to the regressor.
GateResult gate_by_score(std::span<const Detection> dets, double a);

}  // namespace dir
