#include <cmath>
#include <stdexcept>
#include <vector>

#include "dir/suppression.hpp"
#include "doctest.h"

using namespace dir;

namespace {

Detection det(const BoundingBox& box, int cls, double score) {
  Detection d;
  d.box = box;
  d.class_id = cls;
  d.cls_score = score;
  d.confidence = score;
  return d;
}

}  // namespace

TEST_CASE("greedy_nms suppresses same-class overlaps") {
  const std::vector<Detection> dets = {
      det(make_box(0, 0, 10, 10), 0, 0.9),
      det(make_box(1, 1, 11, 11), 0, 0.8),  // iou 81/119 with the first
      det(make_box(20, 20, 30, 30), 0, 0.7),
  };
  const auto kept = greedy_nms(dets, 0.5);
  REQUIRE(kept.size() == 2);
  CHECK(kept[0].confidence == 0.9);
  CHECK(kept[1].confidence == 0.7);
}

TEST_CASE("greedy_nms keeps overlapping boxes of different classes") {
  const std::vector<Detection> dets = {
      det(make_box(0, 0, 10, 10), 0, 0.9),
      det(make_box(0, 0, 10, 10), 1, 0.8),
  };
  CHECK(greedy_nms(dets, 0.5).size() == 2);
}

TEST_CASE("greedy_nms lambda edge cases") {
  const std::vector<Detection> dets = {
      det(make_box(0, 0, 10, 10), 0, 0.9),
      det(make_box(1, 1, 11, 11), 0, 0.8),
  };
  CHECK(greedy_nms(dets, 1.0).size() == 2);  // iou can never exceed 1
  CHECK_THROWS_AS(greedy_nms(dets, 0.0), std::invalid_argument);
  CHECK_THROWS_AS(greedy_nms(dets, 1.5), std::invalid_argument);
  CHECK_THROWS_AS(greedy_nms(dets, -0.2), std::invalid_argument);
}

TEST_CASE("greedy_nms breaks ties by class then input order") {
  const std::vector<Detection> dets = {
      det(make_box(0, 0, 10, 10), 1, 0.8),
      det(make_box(0, 0, 10, 10), 0, 0.8),
      det(make_box(0, 0, 10, 10), 0, 0.8),
  };
  const auto kept = greedy_nms(dets, 0.5);
  REQUIRE(kept.size() == 2);  // the two class-0 duplicates collapse to one
  CHECK(kept[0].class_id == 0);
  CHECK(kept[1].class_id == 1);
}

TEST_CASE("soft_nms linear decays by (1 - iou)") {
  // iou between the two boxes is exactly 10/11
  const std::vector<Detection> dets = {
      det(make_box(0, 0, 11, 1), 0, 0.9),
      det(make_box(1, 0, 11, 1), 0, 0.7),
  };
  const auto kept = soft_nms(dets, SoftNmsMode::Linear, 0.3, 0.5, 1e-3);
  REQUIRE(kept.size() == 2);
  CHECK(kept[0].confidence == 0.9);
  CHECK(kept[1].confidence == doctest::Approx(0.7 * (1.0 - 10.0 / 11.0)).epsilon(1e-12));
}

TEST_CASE("soft_nms linear leaves low overlaps alone") {
  const std::vector<Detection> dets = {
      det(make_box(0, 0, 10, 10), 0, 0.9),
      det(make_box(8, 8, 18, 18), 0, 0.7),  // iou 4/196 < nt
  };
  const auto kept = soft_nms(dets, SoftNmsMode::Linear, 0.3, 0.5, 1e-3);
  REQUIRE(kept.size() == 2);
  CHECK(kept[1].confidence == 0.7);
}

TEST_CASE("soft_nms gaussian decays every overlap") {
  const std::vector<Detection> dets = {
      det(make_box(0, 0, 11, 1), 0, 0.9),
      det(make_box(1, 0, 11, 1), 0, 0.7),
  };
  const auto kept = soft_nms(dets, SoftNmsMode::Gaussian, 0.3, 0.5, 1e-3);
  REQUIRE(kept.size() == 2);
  const double ov = 10.0 / 11.0;
  CHECK(kept[1].confidence == doctest::Approx(0.7 * std::exp(-ov * ov / 0.5)).epsilon(1e-12));
  CHECK_THROWS_AS(soft_nms(dets, SoftNmsMode::Gaussian, 0.3, 0.0, 1e-3), std::invalid_argument);
}

TEST_CASE("soft_nms drops detections below the score floor") {
  const std::vector<Detection> dets = {
      det(make_box(0, 0, 11, 1), 0, 0.9),
      det(make_box(1, 0, 11, 1), 0, 0.7),
  };
  const auto kept = soft_nms(dets, SoftNmsMode::Linear, 0.3, 0.5, 0.2);
  REQUIRE(kept.size() == 1);  // 0.7/11 falls under the floor
  CHECK(kept[0].confidence == 0.9);
}

TEST_CASE("fuse_confidence rules") {
  Detection d = det(make_box(0, 0, 1, 1), 0, 0.81);
  CHECK(fuse_confidence(d, FusionRule::ClsOnly).confidence == 0.81);

  d.pred_iou = 0.49;
  CHECK(fuse_confidence(d, FusionRule::GeometricMeanClsIou).confidence ==
        doctest::Approx(0.63).epsilon(1e-12));

  d.pred_purity = 0.6;
  d.pred_integrity = 0.8;
  const double combined = combine_iou(0.6, 0.8);
  CHECK(fuse_confidence(d, FusionRule::CombinedIou, false).confidence ==
        doctest::Approx(combined).epsilon(1e-12));
  CHECK(fuse_confidence(d, FusionRule::CombinedIou, true).confidence ==
        doctest::Approx(std::sqrt(0.81 * combined)).epsilon(1e-12));
  CHECK(fuse_confidence(d, FusionRule::PurityOnly, false).confidence == 0.6);
  CHECK(fuse_confidence(d, FusionRule::IntegrityOnly, false).confidence == 0.8);
  CHECK(fuse_confidence(d, FusionRule::ArithmeticAvgPI, false).confidence ==
        doctest::Approx(0.7).epsilon(1e-12));
  CHECK(fuse_confidence(d, FusionRule::GeometricAvgPI, false).confidence ==
        doctest::Approx(std::sqrt(0.48)).epsilon(1e-12));
}

TEST_CASE("fuse_confidence requires the fields the rule consumes") {
  const Detection plain = det(make_box(0, 0, 1, 1), 0, 0.5);
  CHECK_THROWS_AS(fuse_confidence(plain, FusionRule::GeometricMeanClsIou), std::invalid_argument);
  CHECK_THROWS_AS(fuse_confidence(plain, FusionRule::CombinedIou), std::invalid_argument);
  CHECK_THROWS_AS(fuse_confidence(plain, FusionRule::PurityOnly), std::invalid_argument);
  CHECK_THROWS_AS(fuse_confidence(plain, FusionRule::IntegrityOnly), std::invalid_argument);
}

TEST_CASE("gate_by_score splits on the threshold inclusively") {
  const std::vector<Detection> dets = {
      det(make_box(0, 0, 1, 1), 0, 0.1),
      det(make_box(0, 0, 1, 1), 0, 0.5),
      det(make_box(0, 0, 1, 1), 0, 0.9),
  };
  const GateResult g = gate_by_score(dets, 0.5);
  REQUIRE(g.passed.size() == 2);
  REQUIRE(g.passed_indices.size() == 2);
  CHECK(g.passed_indices[0] == 1);
  CHECK(g.passed_indices[1] == 2);
  CHECK(g.passed[0].cls_score == 0.5);
}
