#include "dir/box.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace dir {

bool box_valid(const BoundingBox& b) {
  return std::isfinite(b.x1) && std::isfinite(b.y1) && std::isfinite(b.x2) &&
         std::isfinite(b.y2) && b.x1 <= b.x2 && b.y1 <= b.y2;
}

BoundingBox make_box(double x1, double y1, double x2, double y2) {
  const BoundingBox b{x1, y1, x2, y2};
  if (!box_valid(b)) throw std::invalid_argument("make_box: corners must be finite and ordered");
  return b;
}

double area(const BoundingBox& b) { return b.width() * b.height(); }

OverlapStats overlap_stats(const BoundingBox& b, const BoundingBox& g) {
  const double iw = std::min(b.x2, g.x2) - std::max(b.x1, g.x1);
  const double ih = std::min(b.y2, g.y2) - std::max(b.y1, g.y1);
  OverlapStats stats;
  stats.overlap = (iw > 0.0 && ih > 0.0) ? iw * ih : 0.0;
  stats.a1 = area(b);
  stats.a2 = area(g);
  return stats;
}

double iou(const BoundingBox& b, const BoundingBox& g) {
  const OverlapStats s = overlap_stats(b, g);
  const double denom = s.a1 + s.a2 - s.overlap;
  return denom > 0.0 ? s.overlap / denom : 0.0;
}

double purity(const BoundingBox& b, const BoundingBox& g) {
  const OverlapStats s = overlap_stats(b, g);
  return s.a1 > 0.0 ? s.overlap / s.a1 : 0.0;
}

double integrity(const BoundingBox& b, const BoundingBox& g) {
  const OverlapStats s = overlap_stats(b, g);
  if (s.a2 <= 0.0) throw std::invalid_argument("integrity: degenerate ground-truth box");
  return s.overlap / s.a2;
}

double combine_iou(double p, double i) {
  if (p == 0.0 || i == 0.0) return 0.0;
  return p * i / (p + i - p * i);
}

double delta_iou(const BoundingBox& proposal, const BoundingBox& regressed,
                 const BoundingBox& gt) {
  return iou(regressed, gt) - iou(proposal, gt);
}

std::vector<std::vector<double>> pairwise_iou(std::span<const BoundingBox> rows,
                                              std::span<const BoundingBox> cols) {
  std::vector<std::vector<double>> out(rows.size(), std::vector<double>(cols.size(), 0.0));
  for (std::size_t r = 0; r < rows.size(); ++r)
    for (std::size_t c = 0; c < cols.size(); ++c) out[r][c] = iou(rows[r], cols[c]);
  return out;
}

}  // namespace dir
