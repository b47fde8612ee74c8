#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "dir/box.hpp"
#include "dir/rng.hpp"

namespace dir {

// Which box a feature vector was extracted from: the raw proposal (foresight)
// or the regressed output box (hindsight).
enum class FeatureMode { Foresight, Hindsight };
const char* to_string(FeatureMode mode);

struct SceneObject {
  BoundingBox box;
  int class_id = 0;
};

struct Scene {
  int scene_id = 0;
  BoundingBox canvas;
  std::vector<SceneObject> objects;
};

struct WorldConfig {
  std::uint64_t rng_seed = 42;
  int num_scenes = 2000;
  int objects_min = 1;
  int objects_max = 4;
  double object_size_min = 8.0;
  double object_size_max = 48.0;
  int proposals_per_object = 4;
  double jitter_scale = 0.25;      // corner noise relative to box size
  double gamma_base = 0.2;         // regression gain schedule: min(gamma_max, base + step * epoch)
  double gamma_step = 0.07;
  double gamma_max = 0.9;
  double regression_noise = 0.05;  // residual corner noise relative to object size
  int inner_grid = 8;              // occupancy grid resolution inside the box
  int context_grid = 8;            // occupancy grid resolution of the context window
  double context_expand = 2.0;     // context window scale about the box center
  double feature_noise = 0.02;     // gaussian noise on occupancy cells
  double cls_score_noise = 0.3;    // gaussian noise on the simulated classifier score
  double positive_iou_threshold = 0.5;
  double canvas_size = 256.0;
  int num_classes = 3;

  double gamma(int epoch) const;
  int feature_dim() const;  // inner_grid^2 + context_grid^2 + 4
  void validate() const;    // throws std::invalid_argument
};

struct Sample {
  int scene_id = 0;
  BoundingBox proposal;
  BoundingBox regressed;
  int matched_gt = -1;  // index into the scene's objects, -1 when unmatched
  int matched_class = -1;
  double proposal_iou = 0.0;  // iou(proposal, matched gt)
  double cls_score_sim = 0.0;
  std::vector<double> features_foresight;
  std::vector<double> features_hindsight;
  double purity_star = 0.0;
  double integrity_star = 0.0;
  double iou_star = 0.0;
  bool is_positive = false;

  const std::vector<double>& features(FeatureMode mode) const {
    return mode == FeatureMode::Foresight ? features_foresight : features_hindsight;
  }
  double delta_iou() const { return iou_star - proposal_iou; }
};

std::vector<Scene> generate_scenes(const WorldConfig& cfg);

// Perturbs each ground-truth corner with gaussian noise scaled by the box
// size, reorders the corners and clips the result to the canvas.
BoundingBox jitter_proposal(const BoundingBox& gt, const BoundingBox& canvas,
                            double sigma_j, Rng& rng);

// Moves the proposal toward the ground truth by gain gamma and adds residual
// corner noise scaled by the object size. Corners are reordered when needed.
BoundingBox simulate_regression(const BoundingBox& proposal, const BoundingBox& gt,
                                double gamma, double sigma_r, Rng& rng);

// Feature layout: inner occupancy grid (row-major), context occupancy grid
// (row-major), then normalized width, height, aspect ratio and log-area.
// Occupancy treats overlapping objects as a union; a degenerate sampling
// window produces an all-zero grid.
std::vector<double> extract_features(const BoundingBox& box, const Scene& scene,
                                     const WorldConfig& cfg, Rng& rng);

// One record per (object, proposal) pair across all scenes. The random draws
// do not depend on the epoch, so datasets built for different epochs share
// scenes, proposals and noise and differ only through the regression gain.
std::vector<Sample> build_dataset(const WorldConfig& cfg, int epoch);

std::vector<Sample> select_positives(std::span<const Sample> samples);

// Line-delimited text records, one sample per line, 17 significant digits.
// The header carries a format version and the full config echo.
std::string serialize_dataset(const WorldConfig& cfg, int epoch,
                              std::span<const Sample> samples);

struct DatasetFile {
  WorldConfig config;
  int epoch = 0;
  std::vector<Sample> samples;
};

DatasetFile parse_dataset(const std::string& text);
void write_dataset_file(const std::string& path, const WorldConfig& cfg, int epoch,
                        std::span<const Sample> samples);
DatasetFile read_dataset_file(const std::string& path);

}  // namespace dir
