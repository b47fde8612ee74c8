#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "dir/metrics.hpp"
#include "dir/regressor.hpp"
#include "dir/report.hpp"

namespace dir {

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

enum class NmsKind { Greedy, SoftLinear, SoftGaussian };
const char* to_string(NmsKind kind);

struct NmsConfig {
  NmsKind kind = NmsKind::Greedy;
  double lambda = 0.5;       // greedy suppression threshold
  double nt = 0.3;           // linear soft-nms decay threshold
  double sigma = 0.5;        // gaussian soft-nms width
  double score_floor = 1e-3; // soft-nms drop threshold
};

struct EvalSection {
  std::uint64_t seed = 10042;
  int num_scenes = 500;
  double gate = 0.05;  // cls-score threshold below which predictions are skipped
  FeatureMode feature_mode_infer = FeatureMode::Hindsight;
  bool filter_iou_above_half = true;
  EvalConfig metrics;
};

struct ExperimentConfig {
  WorldConfig world;
  ModelConfig model;
  TrainConfig train;
  EvalSection eval;
  NmsConfig nms;
  FusionRule fusion = FusionRule::CombinedIou;
  bool fusion_with_cls = true;
  std::string out_dir = "runs";

  void validate() const;  // throws ConfigError
};

// Flat key=value file with dotted namespaces; '#' lines are comments.
// Unknown or duplicate keys are errors.
ExperimentConfig parse_config_text(const std::string& text);
ExperimentConfig load_config_file(const std::string& path);

// Full echo of every key in fixed order; basis of the config hash.
std::string canonical_config_text(const ExperimentConfig& cfg);
std::uint64_t config_hash(const ExperimentConfig& cfg);
std::string config_hash_hex(const ExperimentConfig& cfg);

// out_dir/<config hash>; created on demand by the commands.
std::filesystem::path run_directory(const ExperimentConfig& cfg);

struct GenDataResult {
  std::filesystem::path file;
  std::size_t records = 0;
  std::string config_hash;
};

GenDataResult cmd_gen_data(const ExperimentConfig& cfg, int epoch);

struct TrainFiles {
  std::filesystem::path checkpoint;
  std::filesystem::path report_csv;
  std::filesystem::path report_json;
  TrainResult result;
};

TrainFiles cmd_train(const ExperimentConfig& cfg);

struct EvaluateResult {
  EvalReport report;
  std::filesystem::path csv;
  std::filesystem::path json;
};

EvaluateResult cmd_evaluate(const ExperimentConfig& cfg, const std::string& checkpoint_path);

struct AblationAssertion {
  std::string name;
  bool pass = false;
  std::string detail;
};

struct AblationResult {
  std::vector<AblationRow> variant_rows;  // feature mode x head variant grid
  std::vector<AblationRow> fusion_rows;   // confidence fusion rules
  std::vector<std::pair<std::string, double>> correlations;
  std::vector<Histogram> drift;
  std::vector<AblationAssertion> assertions;
  std::vector<std::string> failures;  // sub-runs that threw; their rows hold NaN
  EvalReport report;
  std::filesystem::path run_dir;
  std::vector<std::filesystem::path> files;

  bool all_pass() const;  // false when any assertion failed or any sub-run did
};

AblationResult cmd_ablate(const ExperimentConfig& cfg);

// Full command-line driver. Exit codes: 0 ok, 2 config error, 3 runtime
// error, 4 failed ablation assertion.
int run_cli(int argc, const char* const* argv);

}  // namespace dir
