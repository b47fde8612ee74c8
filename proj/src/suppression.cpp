#include "dir/suppression.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <string>

namespace dir {

namespace {

bool ranks_before(const Detection& a, std::size_t ia, const Detection& b, std::size_t ib) {
  if (a.confidence != b.confidence) return a.confidence > b.confidence;
  if (a.class_id != b.class_id) return a.class_id < b.class_id;
  return ia < ib;
}

}  // namespace

const char* to_string(FusionRule rule) {
  switch (rule) {
    case FusionRule::ClsOnly: return "cls_only";
    case FusionRule::GeometricMeanClsIou: return "geom_cls_iou";
    case FusionRule::PurityOnly: return "purity_only";
    case FusionRule::IntegrityOnly: return "integrity_only";
    case FusionRule::GeometricAvgPI: return "geom_avg_pi";
    case FusionRule::ArithmeticAvgPI: return "arith_avg_pi";
    case FusionRule::CombinedIou: return "combined_iou";
  }
  return "unknown";
}

std::vector<Detection> greedy_nms(std::span<const Detection> dets, double lambda) {
  if (!(lambda > 0.0) || lambda > 1.0)
    throw std::invalid_argument("greedy_nms: lambda must be in (0, 1]");
  std::vector<std::size_t> order(dets.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(),
            [&](std::size_t i, std::size_t j) { return ranks_before(dets[i], i, dets[j], j); });
  std::vector<Detection> kept;
  for (const std::size_t i : order) {
    bool suppressed = false;
    for (const Detection& k : kept) {
      if (k.class_id == dets[i].class_id && iou(k.box, dets[i].box) > lambda) {
        suppressed = true;
        break;
      }
    }
    if (!suppressed) kept.push_back(dets[i]);
  }
  return kept;
}

std::vector<Detection> soft_nms(std::span<const Detection> dets, SoftNmsMode mode,
                                double nt, double sigma, double score_floor) {
  if (mode == SoftNmsMode::Gaussian && !(sigma > 0.0))
    throw std::invalid_argument("soft_nms: sigma must be positive in gaussian mode");
  struct Item {
    Detection det;
    std::size_t idx;
    bool alive;
  };
  std::vector<Item> items;
  items.reserve(dets.size());
  for (std::size_t i = 0; i < dets.size(); ++i) items.push_back({dets[i], i, true});

  std::vector<Detection> survivors;
  for (;;) {
    std::size_t best = items.size();
    for (std::size_t i = 0; i < items.size(); ++i) {
      if (!items[i].alive) continue;
      if (best == items.size() || ranks_before(items[i].det, items[i].idx, items[best].det, items[best].idx))
        best = i;
    }
    if (best == items.size()) break;
    Item& sel = items[best];
    sel.alive = false;
    survivors.push_back(sel.det);
    for (Item& other : items) {
      if (!other.alive || other.det.class_id != sel.det.class_id) continue;
      const double v = iou(sel.det.box, other.det.box);
      double decay = 1.0;
      if (mode == SoftNmsMode::Linear) {
        if (v > nt) decay = 1.0 - v;
      } else {
        decay = std::exp(-(v * v) / sigma);
      }
      other.det.confidence *= decay;
      if (other.det.confidence < score_floor) other.alive = false;
    }
  }
  return survivors;
}

Detection fuse_confidence(const Detection& det, FusionRule rule, bool fuse_with_cls) {
  const auto require = [&](const std::optional<double>& v, const char* field) {
    if (!v)
      throw std::invalid_argument(std::string("fuse_confidence: rule ") + to_string(rule) +
                                  " requires " + field);
    return *v;
  };
  Detection out = det;
  double loc = 0.0;
  switch (rule) {
    case FusionRule::ClsOnly:
      out.confidence = det.cls_score;
      return out;
    case FusionRule::GeometricMeanClsIou:
      out.confidence = std::sqrt(det.cls_score * require(det.pred_iou, "pred_iou"));
      return out;
    case FusionRule::PurityOnly:
      loc = require(det.pred_purity, "pred_purity");
      break;
    case FusionRule::IntegrityOnly:
      loc = require(det.pred_integrity, "pred_integrity");
      break;
    case FusionRule::GeometricAvgPI:
      loc = std::sqrt(require(det.pred_purity, "pred_purity") *
                      require(det.pred_integrity, "pred_integrity"));
      break;
    case FusionRule::ArithmeticAvgPI:
      loc = 0.5 * (require(det.pred_purity, "pred_purity") +
                   require(det.pred_integrity, "pred_integrity"));
      break;
    case FusionRule::CombinedIou:
      loc = combine_iou(require(det.pred_purity, "pred_purity"),
                        require(det.pred_integrity, "pred_integrity"));
      break;
  }
  out.confidence = fuse_with_cls ? std::sqrt(det.cls_score * loc) : loc;
  return out;
}

GateResult gate_by_score(std::span<const Detection> dets, double a) {
  GateResult result;
  for (std::size_t i = 0; i < dets.size(); ++i) {
    if (dets[i].cls_score >= a) {
      result.passed.push_back(dets[i]);
      result.passed_indices.push_back(i);
    }
  }
  return result;
}

}  // namespace dir
