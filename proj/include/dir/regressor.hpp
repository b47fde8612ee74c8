#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "dir/synth_world.hpp"

namespace dir {

struct AffineLayer {
  int in = 0;
  int out = 0;
  std::vector<double> w;  // row-major [out][in]
  std::vector<double> b;  // [out]
};

// Two hidden ReLU layers followed by a sigmoid output unit.
struct BranchParams {
  AffineLayer l1, l2, l3;
};

enum class ModelVariant { Decoupled, DirectIoU };
const char* to_string(ModelVariant v);

struct DirModelParams {
  ModelVariant variant = ModelVariant::Decoupled;
  int input_dim = 0;
  int h1 = 0;
  int h2 = 0;
  std::uint64_t seed = 0;
  int trained_epochs = 0;
  BranchParams purity_branch;     // DirectIoU keeps its single branch here
  BranchParams integrity_branch;  // unused for DirectIoU

  int num_branches() const { return variant == ModelVariant::Decoupled ? 2 : 1; }
};

// Scaled-uniform fan-in weight initialization, zero biases, deterministic per seed.
DirModelParams init_params(int input_dim, int h1, int h2, ModelVariant variant,
                           std::uint64_t seed);

// Flat spans over every parameter block, in checkpoint order.
std::vector<std::span<double>> param_spans(DirModelParams& p);
std::vector<std::span<const double>> param_spans(const DirModelParams& p);
std::size_t param_count(const DirModelParams& p);

struct BranchCache {
  std::vector<double> z1, a1, z2, a2;
  double z3 = 0.0;
  double out = 0.0;
};

// s is the purity output (or the sole IoU output for DirectIoU); t is the
// integrity output, fixed to 1 for DirectIoU so that recombination is inert.
struct ForwardResult {
  double s = 0.0;
  double t = 1.0;
  BranchCache purity;
  BranchCache integrity;
};

ForwardResult forward(const DirModelParams& params, std::span<const double> features);

struct Prediction {
  double s = 0.0;  // predicted purity (DirectIoU: predicted IoU)
  double t = 0.0;  // predicted integrity (DirectIoU: 1)
  double c = 0.0;  // recombined IoU confidence
};

Prediction predict_confidence(const DirModelParams& params, std::span<const double> features);

// Binary cross entropy with the prediction clamped to [1e-7, 1 - 1e-7].
double bce(double pred, double target);

struct DirLoss {
  double purity = 0.0;
  double integrity = 0.0;
  double iou = 0.0;
  double total = 0.0;
};

// Batch means of the soft-target losses. Decoupled sums the purity,
// integrity and recombined-IoU terms; DirectIoU trains the IoU term alone.
DirLoss dir_loss(const DirModelParams& params, std::span<const Sample> batch, FeatureMode mode);

using Gradients = DirModelParams;

Gradients backward(const DirModelParams& params, std::span<const Sample> batch, FeatureMode mode);

struct BackwardResult {
  Gradients grads;
  DirLoss loss;
};

BackwardResult backward_with_loss(const DirModelParams& params, std::span<const Sample> batch,
                                  FeatureMode mode);

struct OptimizerState {
  DirModelParams velocity;
  double learning_rate = 0.05;
  double momentum = 0.9;
  double weight_decay = 1e-4;
  std::vector<int> decay_epochs = {8, 11};
  double decay_factor = 0.1;
  double lr_multiplier = 1.0;
  int warmup_steps = 0;
  double warmup_ratio = 0.33;
  long step = 0;

  double effective_lr(int epoch) const;
};

OptimizerState make_optimizer(const DirModelParams& params, double learning_rate);

// v <- momentum * v - lr * (g + weight_decay * w); w <- w + v
void sgd_step(DirModelParams& params, const Gradients& grads, OptimizerState& opt, int epoch);

struct ModelConfig {
  ModelVariant variant = ModelVariant::Decoupled;
  int h1 = 64;
  int h2 = 64;
  std::uint64_t seed = 7;
};

struct TrainConfig {
  int epochs = 12;
  FeatureMode feature_mode = FeatureMode::Hindsight;
  int batch_size = 128;
  double lr = 0.05;
  double momentum = 0.9;
  double weight_decay = 1e-4;
  std::vector<int> decay_epochs = {8, 11};
  double decay_factor = 0.1;
  double lr_multiplier = 1.0;
  int warmup_steps = 0;
  double warmup_ratio = 0.33;

  void validate() const;
};

struct EpochStats {
  int epoch = 0;
  double loss_purity = 0.0;
  double loss_integrity = 0.0;
  double loss_iou = 0.0;
  double loss_total = 0.0;
  double grad_norm = 0.0;
  double wall_ms = 0.0;
  int samples = 0;
};

struct TrainReport {
  std::vector<EpochStats> epochs;
};

struct TrainResult {
  DirModelParams params;
  TrainReport report;
};

// Rebuilds the dataset each epoch with that epoch's regression gain, keeps
// the positive samples and runs minibatch SGD over them.
TrainResult train(const WorldConfig& world, const ModelConfig& model, const TrainConfig& tc);

// Versioned header (variant, dims, seed, epochs) followed by the flat
// parameter array as 8-byte little-endian values; round-trips exactly.
std::string serialize_checkpoint(const DirModelParams& params);
DirModelParams parse_checkpoint(const std::string& data);
void save_checkpoint(const std::string& path, const DirModelParams& params);
DirModelParams load_checkpoint(const std::string& path);

}  // namespace dir
