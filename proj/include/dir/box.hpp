#pragma once

#include <span>
#include <vector>

namespace dir {

// Axis-aligned box in continuous coordinates, corners in (min, max) order.
struct BoundingBox {
  double x1 = 0.0;
  double y1 = 0.0;
  double x2 = 0.0;
  double y2 = 0.0;

  double width() const { return x2 - x1; }
  double height() const { return y2 - y1; }
};

// Validating constructor: rejects inverted corners and non-finite values.
BoundingBox make_box(double x1, double y1, double x2, double y2);
bool box_valid(const BoundingBox& b);

struct OverlapStats {
  double overlap = 0.0;  // intersection area
  double a1 = 0.0;       // area of the first box
  double a2 = 0.0;       // area of the second box
};

double area(const BoundingBox& b);
OverlapStats overlap_stats(const BoundingBox& b, const BoundingBox& g);

// overlap / (a1 + a2 - overlap); 0 when both boxes are degenerate.
double iou(const BoundingBox& b, const BoundingBox& g);

// Fraction of b that is covered by g. Degenerate b yields 0.
double purity(const BoundingBox& b, const BoundingBox& g);

// Fraction of g that is recovered by b. Throws for degenerate g.
double integrity(const BoundingBox& b, const BoundingBox& g);

// Recombines purity p and integrity i into an IoU: p*i / (p + i - p*i).
double combine_iou(double p, double i);

// IoU change from proposal to regressed box against the same ground truth.
double delta_iou(const BoundingBox& proposal, const BoundingBox& regressed,
                 const BoundingBox& gt);

std::vector<std::vector<double>> pairwise_iou(std::span<const BoundingBox> rows,
                                              std::span<const BoundingBox> cols);

}  // namespace dir
