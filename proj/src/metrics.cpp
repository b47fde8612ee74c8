#include "dir/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <stdexcept>

namespace dir {

double pearson(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw std::invalid_argument("pearson: length mismatch");
  if (x.size() < 2) throw std::domain_error("pearson: need at least two samples");
  double mx = 0.0, my = 0.0, sxx = 0.0, syy = 0.0, sxy = 0.0;
  for (std::size_t n = 0; n < x.size(); ++n) {
    const double dx = x[n] - mx;
    const double dy = y[n] - my;
    const double k = 1.0 / static_cast<double>(n + 1);
    mx += dx * k;
    my += dy * k;
    sxx += dx * (x[n] - mx);
    syy += dy * (y[n] - my);
    sxy += dx * (y[n] - my);
  }
  if (sxx == 0.0 || syy == 0.0) throw std::domain_error("pearson: zero variance");
  return sxy / std::sqrt(sxx * syy);
}

EvalConfig::EvalConfig() {
  for (int i = 0; i < 10; ++i) iou_thresholds.push_back((50 + 5 * i) / 100.0);
}

void EvalConfig::validate() const {
  if (iou_thresholds.empty()) throw std::invalid_argument("eval: need at least one iou threshold");
  double prev = 0.0;
  for (const double t : iou_thresholds) {
    if (!(t > 0.0) || !(t < 1.0)) throw std::invalid_argument("eval: thresholds must be in (0, 1)");
    if (t <= prev && prev != 0.0) throw std::invalid_argument("eval: thresholds must increase");
    prev = t;
  }
  if (recall_points < 2) throw std::invalid_argument("eval: recall_points must be >= 2");
  if (max_dets_per_scene < 1) throw std::invalid_argument("eval: max_dets_per_scene must be >= 1");
  if (!(hist_bin_width > 0.0) || hist_bin_width > 2.0)
    throw std::invalid_argument("eval: hist_bin_width must be in (0, 2]");
}

std::vector<bool> match_detections(std::span<const Detection> ranked,
                                   std::span<const SceneObject> gts, double t) {
  std::vector<bool> gt_taken(gts.size(), false);
  std::vector<bool> tp(ranked.size(), false);
  for (std::size_t d = 0; d < ranked.size(); ++d) {
    int best = -1;
    double best_iou = 0.0;
    for (std::size_t g = 0; g < gts.size(); ++g) {
      if (gt_taken[g] || gts[g].class_id != ranked[d].class_id) continue;
      const double v = iou(ranked[d].box, gts[g].box);
      if (v >= t && v > best_iou) {
        best_iou = v;
        best = static_cast<int>(g);
      }
    }
    if (best >= 0) {
      gt_taken[best] = true;
      tp[d] = true;
    }
  }
  return tp;
}

namespace {

// Global confidence ranking with the per-scene detection cap applied;
// returns indices into dets in evaluation order.
std::vector<std::size_t> ranked_order(std::span<const SceneDetection> dets,
                                      const EvalConfig& cfg) {
  std::vector<std::size_t> order(dets.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return dets[a].det.confidence > dets[b].det.confidence;
  });
  std::map<int, int> seen;
  std::vector<std::size_t> kept;
  kept.reserve(order.size());
  for (const std::size_t i : order) {
    if (++seen[dets[i].scene_id] <= cfg.max_dets_per_scene) kept.push_back(i);
  }
  return kept;
}

}  // namespace

double average_precision_at(std::span<const SceneDetection> dets,
                            std::span<const SceneGt> gts, double t, const EvalConfig& cfg) {
  cfg.validate();
  if (gts.empty()) throw std::domain_error("average_precision: no ground truth");

  const std::vector<std::size_t> order = ranked_order(dets, cfg);

  // Per-scene matching over the scene's ranked detections.
  std::map<int, std::vector<SceneObject>> scene_gts;
  for (const SceneGt& g : gts) scene_gts[g.scene_id].push_back({g.box, g.class_id});
  std::map<int, std::vector<std::size_t>> scene_rank_slots;  // positions in `order`
  for (std::size_t slot = 0; slot < order.size(); ++slot)
    scene_rank_slots[dets[order[slot]].scene_id].push_back(slot);

  std::vector<bool> tp(order.size(), false);
  for (const auto& [scene_id, slots] : scene_rank_slots) {
    const auto git = scene_gts.find(scene_id);
    if (git == scene_gts.end()) continue;
    std::vector<Detection> ranked;
    ranked.reserve(slots.size());
    for (const std::size_t slot : slots) ranked.push_back(dets[order[slot]].det);
    const std::vector<bool> flags = match_detections(ranked, git->second, t);
    for (std::size_t i = 0; i < slots.size(); ++i) tp[slots[i]] = flags[i];
  }

  // Precision envelope over the cumulative curve, sampled on the recall grid.
  const double total_gt = static_cast<double>(gts.size());
  std::vector<double> recall(order.size()), precision(order.size());
  int cum_tp = 0;
  for (std::size_t i = 0; i < order.size(); ++i) {
    if (tp[i]) ++cum_tp;
    recall[i] = cum_tp / total_gt;
    precision[i] = cum_tp / static_cast<double>(i + 1);
  }
  for (std::size_t i = order.size(); i > 1; --i)
    precision[i - 2] = std::max(precision[i - 2], precision[i - 1]);

  double sum = 0.0;
  for (int j = 0; j < cfg.recall_points; ++j) {
    const double r = static_cast<double>(j) / (cfg.recall_points - 1);
    const auto it = std::lower_bound(recall.begin(), recall.end(), r);
    if (it != recall.end()) sum += precision[static_cast<std::size_t>(it - recall.begin())];
  }
  return sum / cfg.recall_points;
}

ApSummary average_precision(std::span<const SceneDetection> dets,
                            std::span<const SceneGt> gts, const EvalConfig& cfg) {
  ApSummary summary;
  for (const double t : cfg.iou_thresholds) {
    const double ap = average_precision_at(dets, gts, t, cfg);
    summary.per_threshold.emplace_back(t, ap);
    summary.ap_mean += ap;
    if (std::abs(t - 0.5) < 1e-9) summary.ap50 = ap;
    if (std::abs(t - 0.75) < 1e-9) summary.ap75 = ap;
  }
  summary.ap_mean /= static_cast<double>(cfg.iou_thresholds.size());
  return summary;
}

Histogram delta_iou_histogram(std::span<const Sample> samples, double bin_width) {
  if (!(bin_width > 0.0) || bin_width > 2.0)
    throw std::invalid_argument("delta_iou_histogram: bin_width must be in (0, 2]");
  Histogram h;
  h.bin_width = bin_width;
  const int bins = static_cast<int>(std::ceil(2.0 / bin_width));
  h.mass.assign(bins, 0.0);
  if (samples.empty()) return h;
  double sum = 0.0;
  for (const Sample& s : samples) {
    const double v = s.delta_iou();
    sum += v;
    int idx = static_cast<int>(std::floor((v - h.lo) / bin_width));
    idx = std::clamp(idx, 0, bins - 1);
    h.mass[idx] += 1.0;
  }
  h.count = static_cast<int>(samples.size());
  h.mean = sum / h.count;
  for (double& m : h.mass) m /= h.count;
  return h;
}

std::vector<std::pair<std::string, double>> correlation_study(
    const std::vector<std::pair<std::string, Predictor>>& predictors,
    std::span<const Sample> samples, bool filter_iou_above_half) {
  std::vector<const Sample*> kept;
  for (const Sample& s : samples)
    if (!filter_iou_above_half || s.iou_star > 0.5) kept.push_back(&s);

  std::vector<double> target;
  target.reserve(kept.size());
  for (const Sample* s : kept) target.push_back(s->iou_star);

  std::vector<std::pair<std::string, double>> out;
  for (const auto& [label, fn] : predictors) {
    std::vector<double> conf;
    conf.reserve(kept.size());
    for (const Sample* s : kept) conf.push_back(fn(*s));
    out.emplace_back(label, pearson(conf, target));
  }
  return out;
}

}  // namespace dir
