#include <cmath>
#include <stdexcept>
#include <vector>

#include "dir/box.hpp"
#include "dir/rng.hpp"
#include "doctest.h"

using namespace dir;

TEST_CASE("make_box validates corners") {
  const BoundingBox b = make_box(1.0, 2.0, 3.0, 5.0);
  CHECK(b.width() == 2.0);
  CHECK(b.height() == 3.0);
  CHECK_THROWS_AS(make_box(3.0, 0.0, 1.0, 1.0), std::invalid_argument);
  CHECK_THROWS_AS(make_box(0.0, 2.0, 1.0, 1.0), std::invalid_argument);
  CHECK_THROWS_AS(make_box(0.0, 0.0, std::nan(""), 1.0), std::invalid_argument);
  CHECK(box_valid(make_box(0.0, 0.0, 0.0, 0.0)));
}

TEST_CASE("overlap_stats on hand cases") {
  const BoundingBox a = make_box(0, 0, 2, 2);
  const BoundingBox b = make_box(1, 1, 3, 3);
  const OverlapStats st = overlap_stats(a, b);
  CHECK(st.overlap == 1.0);
  CHECK(st.a1 == 4.0);
  CHECK(st.a2 == 4.0);

  const OverlapStats touching = overlap_stats(make_box(0, 0, 1, 1), make_box(1, 0, 2, 1));
  CHECK(touching.overlap == 0.0);

  const OverlapStats disjoint = overlap_stats(make_box(0, 0, 1, 1), make_box(5, 5, 6, 6));
  CHECK(disjoint.overlap == 0.0);
}

TEST_CASE("iou hand values") {
  CHECK(iou(make_box(0, 0, 2, 2), make_box(1, 1, 3, 3)) == 1.0 / 7.0);
  CHECK(iou(make_box(0, 0, 2, 2), make_box(0, 0, 2, 2)) == 1.0);
  CHECK(iou(make_box(0, 0, 1, 1), make_box(5, 5, 6, 6)) == 0.0);
  CHECK(iou(make_box(0, 0, 0, 0), make_box(0, 0, 0, 0)) == 0.0);
}

TEST_CASE("purity and integrity hand values") {
  CHECK(purity(make_box(0, 0, 4, 4), make_box(0, 0, 2, 4)) == 0.5);
  CHECK(integrity(make_box(1, 1, 2, 2), make_box(0, 0, 3, 3)) == 1.0 / 9.0);
  CHECK(purity(make_box(0, 0, 0, 0), make_box(0, 0, 2, 2)) == 0.0);
  CHECK_THROWS_AS(integrity(make_box(0, 0, 1, 1), make_box(0, 0, 0, 0)), std::invalid_argument);
}

TEST_CASE("combine_iou recombines the decomposition") {
  CHECK(combine_iou(0.25, 0.25) == doctest::Approx(1.0 / 7.0).epsilon(1e-15));
  CHECK(combine_iou(1.0, 1.0) == 1.0);
  CHECK(combine_iou(0.0, 0.7) == 0.0);
  CHECK(combine_iou(0.7, 0.0) == 0.0);

  Rng rng(99);
  double max_err = 0.0;
  for (int i = 0; i < 1000; ++i) {
    const double x1 = rng.uniform(0, 40), y1 = rng.uniform(0, 40);
    const BoundingBox a = make_box(x1, y1, x1 + rng.uniform(1, 20), y1 + rng.uniform(1, 20));
    const double u1 = rng.uniform(0, 40), v1 = rng.uniform(0, 40);
    const BoundingBox b = make_box(u1, v1, u1 + rng.uniform(1, 20), v1 + rng.uniform(1, 20));
    const double err = std::fabs(combine_iou(purity(a, b), integrity(a, b)) - iou(a, b));
    max_err = std::max(max_err, err);
  }
  CHECK(max_err <= 1e-12);
}

TEST_CASE("delta_iou measures the regression improvement") {
  const BoundingBox gt = make_box(2, 2, 3, 3);
  CHECK(delta_iou(make_box(0, 0, 1, 1), gt, gt) == 1.0);
  CHECK(delta_iou(gt, make_box(0, 0, 1, 1), gt) == -1.0);
  CHECK(delta_iou(gt, gt, gt) == 0.0);
}

TEST_CASE("pairwise_iou produces the full matrix") {
  const std::vector<BoundingBox> rows = {make_box(0, 0, 2, 2), make_box(1, 1, 3, 3)};
  const std::vector<BoundingBox> cols = {make_box(0, 0, 2, 2)};
  const auto m = pairwise_iou(rows, cols);
  REQUIRE(m.size() == 2);
  REQUIRE(m[0].size() == 1);
  CHECK(m[0][0] == 1.0);
  CHECK(m[1][0] == 1.0 / 7.0);
}
