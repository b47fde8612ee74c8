#include "dir/experiment.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <limits>
#include <map>
#include <optional>
#include <set>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"

namespace dir {

namespace {

std::string fmt17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::string trim(const std::string& s) {
  const std::size_t a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  const std::size_t b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

std::vector<std::string> split_commas(const std::string& s) {
  std::vector<std::string> parts;
  std::string cur;
  for (const char c : s) {
    if (c == ',') {
      parts.push_back(trim(cur));
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  if (!cur.empty() || !parts.empty()) parts.push_back(trim(cur));
  return parts;
}

double to_double(const std::string& key, const std::string& val) {
  try {
    std::size_t pos = 0;
    const double v = std::stod(val, &pos);
    if (pos != val.size()) throw std::invalid_argument(val);
    return v;
  } catch (const std::exception&) {
    throw ConfigError("config: key '" + key + "' needs a numeric value, got '" + val + "'");
  }
}

long long to_ll(const std::string& key, const std::string& val) {
  try {
    std::size_t pos = 0;
    const long long v = std::stoll(val, &pos);
    if (pos != val.size()) throw std::invalid_argument(val);
    return v;
  } catch (const std::exception&) {
    throw ConfigError("config: key '" + key + "' needs an integer value, got '" + val + "'");
  }
}

int to_int(const std::string& key, const std::string& val) {
  return static_cast<int>(to_ll(key, val));
}

std::uint64_t to_u64(const std::string& key, const std::string& val) {
  try {
    std::size_t pos = 0;
    const std::uint64_t v = std::stoull(val, &pos);
    if (pos != val.size()) throw std::invalid_argument(val);
    return v;
  } catch (const std::exception&) {
    throw ConfigError("config: key '" + key + "' needs an unsigned integer, got '" + val + "'");
  }
}

bool to_bool(const std::string& key, const std::string& val) {
  if (val == "1" || val == "true") return true;
  if (val == "0" || val == "false") return false;
  throw ConfigError("config: key '" + key + "' needs a boolean (0/1/true/false), got '" + val + "'");
}

std::vector<int> to_int_list(const std::string& key, const std::string& val) {
  std::vector<int> out;
  for (const std::string& part : split_commas(val)) out.push_back(to_int(key, part));
  return out;
}

std::vector<double> to_double_list(const std::string& key, const std::string& val) {
  std::vector<double> out;
  for (const std::string& part : split_commas(val)) out.push_back(to_double(key, part));
  return out;
}

FeatureMode to_feature_mode(const std::string& key, const std::string& val) {
  if (val == "foresight") return FeatureMode::Foresight;
  if (val == "hindsight") return FeatureMode::Hindsight;
  throw ConfigError("config: key '" + key + "' must be foresight or hindsight, got '" + val + "'");
}

ModelVariant to_variant(const std::string& key, const std::string& val) {
  if (val == "decoupled") return ModelVariant::Decoupled;
  if (val == "direct_iou") return ModelVariant::DirectIoU;
  throw ConfigError("config: key '" + key + "' must be decoupled or direct_iou, got '" + val + "'");
}

NmsKind to_nms_kind(const std::string& key, const std::string& val) {
  if (val == "greedy") return NmsKind::Greedy;
  if (val == "soft_linear") return NmsKind::SoftLinear;
  if (val == "soft_gaussian") return NmsKind::SoftGaussian;
  throw ConfigError("config: key '" + key + "' must be greedy, soft_linear or soft_gaussian, got '" +
                    val + "'");
}

FusionRule to_fusion_rule(const std::string& key, const std::string& val) {
  if (val == "cls_only") return FusionRule::ClsOnly;
  if (val == "geom_cls_iou") return FusionRule::GeometricMeanClsIou;
  if (val == "purity_only") return FusionRule::PurityOnly;
  if (val == "integrity_only") return FusionRule::IntegrityOnly;
  if (val == "geom_avg_pi") return FusionRule::GeometricAvgPI;
  if (val == "arith_avg_pi") return FusionRule::ArithmeticAvgPI;
  if (val == "combined_iou") return FusionRule::CombinedIou;
  throw ConfigError("config: key '" + key + "' names an unknown fusion rule '" + val + "'");
}

std::string join_ints(const std::vector<int>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i > 0) out += ',';
    out += std::to_string(v[i]);
  }
  return out;
}

std::string join_doubles(const std::vector<double>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i > 0) out += ',';
    out += fmt17(v[i]);
  }
  return out;
}

bool rule_needs_decoupled(FusionRule rule) {
  switch (rule) {
    case FusionRule::PurityOnly:
    case FusionRule::IntegrityOnly:
    case FusionRule::GeometricAvgPI:
    case FusionRule::ArithmeticAvgPI:
    case FusionRule::CombinedIou:
      return true;
    default:
      return false;
  }
}

}  // namespace

const char* to_string(NmsKind kind) {
  switch (kind) {
    case NmsKind::Greedy: return "greedy";
    case NmsKind::SoftLinear: return "soft_linear";
    case NmsKind::SoftGaussian: return "soft_gaussian";
  }
  return "unknown";
}

void ExperimentConfig::validate() const {
  try {
    world.validate();
    train.validate();
    eval.metrics.validate();
  } catch (const std::exception& e) {
    throw ConfigError(e.what());
  }
  if (model.h1 < 1 || model.h2 < 1) throw ConfigError("model: hidden sizes must be >= 1");
  if (eval.seed == world.rng_seed)
    throw ConfigError("eval.seed must differ from world.seed (train/eval worlds are disjoint)");
  if (eval.num_scenes < 0) throw ConfigError("eval.num_scenes must be >= 0");
  if (eval.gate < 0.0 || eval.gate > 1.0) throw ConfigError("eval.gate must be in [0, 1]");
  if (!(nms.lambda > 0.0) || nms.lambda > 1.0) throw ConfigError("nms.lambda must be in (0, 1]");
  if (nms.kind == NmsKind::SoftGaussian && !(nms.sigma > 0.0))
    throw ConfigError("nms.sigma must be positive for soft_gaussian");
  if (nms.nt < 0.0 || nms.nt > 1.0) throw ConfigError("nms.nt must be in [0, 1]");
  if (nms.score_floor < 0.0) throw ConfigError("nms.score_floor must be >= 0");
  if (out_dir.empty()) throw ConfigError("out.dir must not be empty");
}

ExperimentConfig parse_config_text(const std::string& text) {
  ExperimentConfig cfg;
  std::set<std::string> seen;
  std::istringstream is(text);
  std::string line;
  int line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    const std::string stripped = trim(line);
    if (stripped.empty() || stripped[0] == '#') continue;
    const std::size_t eq = stripped.find('=');
    if (eq == std::string::npos)
      throw ConfigError("config: line " + std::to_string(line_no) + " is not key = value");
    const std::string key = trim(stripped.substr(0, eq));
    const std::string val = trim(stripped.substr(eq + 1));
    if (key.empty())
      throw ConfigError("config: line " + std::to_string(line_no) + " has an empty key");
    if (!seen.insert(key).second) throw ConfigError("config: duplicate key '" + key + "'");

    if (key == "world.seed") cfg.world.rng_seed = to_u64(key, val);
    else if (key == "world.num_scenes") cfg.world.num_scenes = to_int(key, val);
    else if (key == "world.objects_min") cfg.world.objects_min = to_int(key, val);
    else if (key == "world.objects_max") cfg.world.objects_max = to_int(key, val);
    else if (key == "world.object_size_min") cfg.world.object_size_min = to_double(key, val);
    else if (key == "world.object_size_max") cfg.world.object_size_max = to_double(key, val);
    else if (key == "world.proposals_per_object") cfg.world.proposals_per_object = to_int(key, val);
    else if (key == "world.jitter") cfg.world.jitter_scale = to_double(key, val);
    else if (key == "world.gamma_base") cfg.world.gamma_base = to_double(key, val);
    else if (key == "world.gamma_step") cfg.world.gamma_step = to_double(key, val);
    else if (key == "world.gamma_max") cfg.world.gamma_max = to_double(key, val);
    else if (key == "world.regression_noise") cfg.world.regression_noise = to_double(key, val);
    else if (key == "world.inner_grid") cfg.world.inner_grid = to_int(key, val);
    else if (key == "world.context_grid") cfg.world.context_grid = to_int(key, val);
    else if (key == "world.context_expand") cfg.world.context_expand = to_double(key, val);
    else if (key == "world.feature_noise") cfg.world.feature_noise = to_double(key, val);
    else if (key == "world.cls_noise") cfg.world.cls_score_noise = to_double(key, val);
    else if (key == "world.tau_pos") cfg.world.positive_iou_threshold = to_double(key, val);
    else if (key == "world.canvas") cfg.world.canvas_size = to_double(key, val);
    else if (key == "world.num_classes") cfg.world.num_classes = to_int(key, val);
    else if (key == "model.variant") cfg.model.variant = to_variant(key, val);
    else if (key == "model.h1") cfg.model.h1 = to_int(key, val);
    else if (key == "model.h2") cfg.model.h2 = to_int(key, val);
    else if (key == "model.seed") cfg.model.seed = to_u64(key, val);
    else if (key == "train.epochs") cfg.train.epochs = to_int(key, val);
    else if (key == "train.feature_mode") cfg.train.feature_mode = to_feature_mode(key, val);
    else if (key == "train.batch_size") cfg.train.batch_size = to_int(key, val);
    else if (key == "train.lr") cfg.train.lr = to_double(key, val);
    else if (key == "train.momentum") cfg.train.momentum = to_double(key, val);
    else if (key == "train.weight_decay") cfg.train.weight_decay = to_double(key, val);
    else if (key == "train.decay_epochs") cfg.train.decay_epochs = to_int_list(key, val);
    else if (key == "train.decay_factor") cfg.train.decay_factor = to_double(key, val);
    else if (key == "train.lr_multiplier") cfg.train.lr_multiplier = to_double(key, val);
    else if (key == "train.warmup_steps") cfg.train.warmup_steps = to_int(key, val);
    else if (key == "train.warmup_ratio") cfg.train.warmup_ratio = to_double(key, val);
    else if (key == "eval.seed") cfg.eval.seed = to_u64(key, val);
    else if (key == "eval.num_scenes") cfg.eval.num_scenes = to_int(key, val);
    else if (key == "eval.gate") cfg.eval.gate = to_double(key, val);
    else if (key == "eval.feature_mode") cfg.eval.feature_mode_infer = to_feature_mode(key, val);
    else if (key == "eval.iou_filter") cfg.eval.filter_iou_above_half = to_bool(key, val);
    else if (key == "eval.max_dets") cfg.eval.metrics.max_dets_per_scene = to_int(key, val);
    else if (key == "eval.recall_points") cfg.eval.metrics.recall_points = to_int(key, val);
    else if (key == "eval.hist_bin") cfg.eval.metrics.hist_bin_width = to_double(key, val);
    else if (key == "eval.iou_thresholds") cfg.eval.metrics.iou_thresholds = to_double_list(key, val);
    else if (key == "nms.kind") cfg.nms.kind = to_nms_kind(key, val);
    else if (key == "nms.lambda") cfg.nms.lambda = to_double(key, val);
    else if (key == "nms.nt") cfg.nms.nt = to_double(key, val);
    else if (key == "nms.sigma") cfg.nms.sigma = to_double(key, val);
    else if (key == "nms.score_floor") cfg.nms.score_floor = to_double(key, val);
    else if (key == "fusion.rule") cfg.fusion = to_fusion_rule(key, val);
    else if (key == "fusion.with_cls") cfg.fusion_with_cls = to_bool(key, val);
    else if (key == "out.dir") {
      if (val.empty()) throw ConfigError("config: out.dir must not be empty");
      cfg.out_dir = val;
    } else {
      throw ConfigError("config: unknown key '" + key + "'");
    }
  }
  return cfg;
}

ExperimentConfig load_config_file(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw ConfigError("cannot open '" + path + "'");
  std::ostringstream buf;
  buf << is.rdbuf();
  return parse_config_text(buf.str());
}

std::string canonical_config_text(const ExperimentConfig& c) {
  std::ostringstream os;
  os << "world.seed = " << c.world.rng_seed << '\n';
  os << "world.num_scenes = " << c.world.num_scenes << '\n';
  os << "world.objects_min = " << c.world.objects_min << '\n';
  os << "world.objects_max = " << c.world.objects_max << '\n';
  os << "world.object_size_min = " << fmt17(c.world.object_size_min) << '\n';
  os << "world.object_size_max = " << fmt17(c.world.object_size_max) << '\n';
  os << "world.proposals_per_object = " << c.world.proposals_per_object << '\n';
  os << "world.jitter = " << fmt17(c.world.jitter_scale) << '\n';
  os << "world.gamma_base = " << fmt17(c.world.gamma_base) << '\n';
  os << "world.gamma_step = " << fmt17(c.world.gamma_step) << '\n';
  os << "world.gamma_max = " << fmt17(c.world.gamma_max) << '\n';
  os << "world.regression_noise = " << fmt17(c.world.regression_noise) << '\n';
  os << "world.inner_grid = " << c.world.inner_grid << '\n';
  os << "world.context_grid = " << c.world.context_grid << '\n';
  os << "world.context_expand = " << fmt17(c.world.context_expand) << '\n';
  os << "world.feature_noise = " << fmt17(c.world.feature_noise) << '\n';
  os << "world.cls_noise = " << fmt17(c.world.cls_score_noise) << '\n';
  os << "world.tau_pos = " << fmt17(c.world.positive_iou_threshold) << '\n';
  os << "world.canvas = " << fmt17(c.world.canvas_size) << '\n';
  os << "world.num_classes = " << c.world.num_classes << '\n';
  os << "model.variant = " << to_string(c.model.variant) << '\n';
  os << "model.h1 = " << c.model.h1 << '\n';
  os << "model.h2 = " << c.model.h2 << '\n';
  os << "model.seed = " << c.model.seed << '\n';
  os << "train.epochs = " << c.train.epochs << '\n';
  os << "train.feature_mode = " << to_string(c.train.feature_mode) << '\n';
  os << "train.batch_size = " << c.train.batch_size << '\n';
  os << "train.lr = " << fmt17(c.train.lr) << '\n';
  os << "train.momentum = " << fmt17(c.train.momentum) << '\n';
  os << "train.weight_decay = " << fmt17(c.train.weight_decay) << '\n';
  os << "train.decay_epochs = " << join_ints(c.train.decay_epochs) << '\n';
  os << "train.decay_factor = " << fmt17(c.train.decay_factor) << '\n';
  os << "train.lr_multiplier = " << fmt17(c.train.lr_multiplier) << '\n';
  os << "train.warmup_steps = " << c.train.warmup_steps << '\n';
  os << "train.warmup_ratio = " << fmt17(c.train.warmup_ratio) << '\n';
  os << "eval.seed = " << c.eval.seed << '\n';
  os << "eval.num_scenes = " << c.eval.num_scenes << '\n';
  os << "eval.gate = " << fmt17(c.eval.gate) << '\n';
  os << "eval.feature_mode = " << to_string(c.eval.feature_mode_infer) << '\n';
  os << "eval.iou_filter = " << (c.eval.filter_iou_above_half ? 1 : 0) << '\n';
  os << "eval.max_dets = " << c.eval.metrics.max_dets_per_scene << '\n';
  os << "eval.recall_points = " << c.eval.metrics.recall_points << '\n';
  os << "eval.hist_bin = " << fmt17(c.eval.metrics.hist_bin_width) << '\n';
  os << "eval.iou_thresholds = " << join_doubles(c.eval.metrics.iou_thresholds) << '\n';
  os << "nms.kind = " << to_string(c.nms.kind) << '\n';
  os << "nms.lambda = " << fmt17(c.nms.lambda) << '\n';
  os << "nms.nt = " << fmt17(c.nms.nt) << '\n';
  os << "nms.sigma = " << fmt17(c.nms.sigma) << '\n';
  os << "nms.score_floor = " << fmt17(c.nms.score_floor) << '\n';
  os << "fusion.rule = " << to_string(c.fusion) << '\n';
  os << "fusion.with_cls = " << (c.fusion_with_cls ? 1 : 0) << '\n';
  os << "out.dir = " << c.out_dir << '\n';
  return os.str();
}

std::uint64_t config_hash(const ExperimentConfig& cfg) {
  const std::string text = canonical_config_text(cfg);
  std::uint64_t h = 1469598103934665603ull;
  for (const unsigned char c : text) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

std::string config_hash_hex(const ExperimentConfig& cfg) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx",
                static_cast<unsigned long long>(config_hash(cfg)));
  return buf;
}

std::filesystem::path run_directory(const ExperimentConfig& cfg) {
  return std::filesystem::path(cfg.out_dir) / config_hash_hex(cfg);
}

namespace {

struct EvalPool {
  std::vector<Scene> scenes;
  std::vector<Sample> samples;
  std::vector<SceneGt> gts;
};

WorldConfig eval_world(const ExperimentConfig& cfg) {
  WorldConfig w = cfg.world;
  w.rng_seed = cfg.eval.seed;
  w.num_scenes = cfg.eval.num_scenes;
  return w;
}

EvalPool build_eval_pool(const ExperimentConfig& cfg) {
  EvalPool pool;
  const WorldConfig w = eval_world(cfg);
  const int eval_epoch = std::max(0, cfg.train.epochs - 1);
  pool.scenes = generate_scenes(w);
  pool.samples = build_dataset(w, eval_epoch);
  for (const Scene& scene : pool.scenes)
    for (const SceneObject& obj : scene.objects)
      pool.gts.push_back({scene.scene_id, obj.box, obj.class_id});
  return pool;
}

std::vector<SceneDetection> score_detections(const EvalPool& pool, const ExperimentConfig& cfg,
                                             const DirModelParams* model, FeatureMode infer_mode,
                                             FusionRule rule) {
  std::vector<SceneDetection> out;
  out.reserve(pool.samples.size());
  for (const Sample& s : pool.samples) {
    Detection d;
    d.box = s.regressed;
    d.class_id = s.matched_class;
    d.cls_score = s.cls_score_sim;
    if (model != nullptr && rule != FusionRule::ClsOnly && d.cls_score >= cfg.eval.gate) {
      const Prediction p = predict_confidence(*model, s.features(infer_mode));
      if (model->variant == ModelVariant::Decoupled) {
        d.pred_purity = p.s;
        d.pred_integrity = p.t;
        d.pred_iou = p.c;
      } else {
        d.pred_iou = p.c;
      }
      d = fuse_confidence(d, rule, cfg.fusion_with_cls);
    } else {
      d = fuse_confidence(d, FusionRule::ClsOnly);
    }
    out.push_back({s.scene_id, d});
  }
  return out;
}

std::vector<SceneDetection> apply_nms(const std::vector<SceneDetection>& dets,
                                      const NmsConfig& nms) {
  std::map<int, std::vector<Detection>> by_scene;
  for (const SceneDetection& sd : dets) by_scene[sd.scene_id].push_back(sd.det);
  std::vector<SceneDetection> kept;
  for (const auto& [scene_id, list] : by_scene) {
    std::vector<Detection> scene_kept;
    switch (nms.kind) {
      case NmsKind::Greedy:
        scene_kept = greedy_nms(list, nms.lambda);
        break;
      case NmsKind::SoftLinear:
        scene_kept = soft_nms(list, SoftNmsMode::Linear, nms.nt, nms.sigma, nms.score_floor);
        break;
      case NmsKind::SoftGaussian:
        scene_kept = soft_nms(list, SoftNmsMode::Gaussian, nms.nt, nms.sigma, nms.score_floor);
        break;
    }
    for (const Detection& d : scene_kept) kept.push_back({scene_id, d});
  }
  return kept;
}

ApSummary ap_with(const EvalPool& pool, const ExperimentConfig& cfg, const DirModelParams* model,
                  FeatureMode infer_mode, FusionRule rule) {
  const auto scored = score_detections(pool, cfg, model, infer_mode, rule);
  const auto kept = apply_nms(scored, cfg.nms);
  return average_precision(kept, pool.gts, cfg.eval.metrics);
}

AblationRow ap_row(std::string label, const ApSummary& ap) {
  return {std::move(label), {{"ap", ap.ap_mean}, {"ap50", ap.ap50}, {"ap75", ap.ap75}}};
}

TrainResult train_for(const ExperimentConfig& cfg, ModelVariant variant, FeatureMode mode,
                      double extra_lr_mult = 1.0) {
  ModelConfig mc = cfg.model;
  mc.variant = variant;
  TrainConfig tc = cfg.train;
  tc.feature_mode = mode;
  tc.lr_multiplier *= extra_lr_mult;
  return train(cfg.world, mc, tc);
}

double row_metric(const std::vector<AblationRow>& rows, const std::string& label,
                  const std::string& metric) {
  for (const AblationRow& row : rows) {
    if (row.label != label) continue;
    for (const auto& [key, value] : row.metrics)
      if (key == metric) return value;
  }
  throw std::runtime_error("ablation: missing row '" + label + "' metric '" + metric + "'");
}

}  // namespace

GenDataResult cmd_gen_data(const ExperimentConfig& cfg, int epoch) {
  cfg.validate();
  if (epoch < 0) throw ConfigError("gen-data: epoch must be >= 0");
  const std::vector<Sample> samples = build_dataset(cfg.world, epoch);
  if (samples.empty()) std::fprintf(stderr, "warning: dataset is empty\n");
  const std::filesystem::path dir = run_directory(cfg);
  std::filesystem::create_directories(dir);
  GenDataResult result;
  result.config_hash = config_hash_hex(cfg);
  result.file = dir / ("dataset_s" + std::to_string(cfg.world.rng_seed) + "_e" +
                       std::to_string(epoch) + "_h" + result.config_hash + ".txt");
  write_dataset_file(result.file.string(), cfg.world, epoch, samples);
  result.records = samples.size();
  return result;
}

TrainFiles cmd_train(const ExperimentConfig& cfg) {
  cfg.validate();
  TrainFiles out;
  out.result = train(cfg.world, cfg.model, cfg.train);
  const std::filesystem::path dir = run_directory(cfg);
  std::filesystem::create_directories(dir);
  const std::string tag = "_s" + std::to_string(cfg.model.seed) + "_h" + config_hash_hex(cfg);

  out.checkpoint = dir / ("checkpoint" + tag + ".ckpt");
  save_checkpoint(out.checkpoint.string(), out.result.params);

  std::ostringstream csv;
  csv << "epoch,loss_purity,loss_integrity,loss_iou,loss_total,grad_norm,samples,wall_ms\n";
  for (const EpochStats& e : out.result.report.epochs) {
    csv << e.epoch << ',' << format_metric(e.loss_purity) << ',' << format_metric(e.loss_integrity)
        << ',' << format_metric(e.loss_iou) << ',' << format_metric(e.loss_total) << ','
        << format_metric(e.grad_norm) << ',' << e.samples << ',' << format_metric(e.wall_ms)
        << '\n';
  }
  out.report_csv = dir / ("train_report" + tag + ".csv");
  write_text_file(out.report_csv.string(), csv.str());

  nlohmann::ordered_json j;
  j["config"] = config_hash_hex(cfg);
  j["variant"] = to_string(cfg.model.variant);
  j["feature_mode"] = to_string(cfg.train.feature_mode);
  nlohmann::ordered_json epochs = nlohmann::ordered_json::array();
  for (const EpochStats& e : out.result.report.epochs) {
    epochs.push_back({{"epoch", e.epoch},
                      {"loss_purity", e.loss_purity},
                      {"loss_integrity", e.loss_integrity},
                      {"loss_iou", e.loss_iou},
                      {"loss_total", e.loss_total},
                      {"grad_norm", e.grad_norm},
                      {"samples", e.samples},
                      {"wall_ms", e.wall_ms}});
  }
  j["epochs"] = std::move(epochs);
  out.report_json = dir / ("train_report" + tag + ".json");
  write_text_file(out.report_json.string(), j.dump(2) + "\n");
  return out;
}

EvaluateResult cmd_evaluate(const ExperimentConfig& cfg, const std::string& checkpoint_path) {
  cfg.validate();
  const DirModelParams model = load_checkpoint(checkpoint_path);
  if (model.input_dim != cfg.world.feature_dim())
    throw ConfigError("evaluate: checkpoint input_dim " + std::to_string(model.input_dim) +
                      " does not match world feature_dim " +
                      std::to_string(cfg.world.feature_dim()));
  if (model.h1 != cfg.model.h1 || model.h2 != cfg.model.h2)
    throw ConfigError("evaluate: checkpoint hidden sizes do not match model config");
  if (model.variant != cfg.model.variant)
    throw ConfigError("evaluate: checkpoint variant does not match model config");
  if (rule_needs_decoupled(cfg.fusion) && model.variant != ModelVariant::Decoupled)
    throw ConfigError(std::string("evaluate: fusion rule ") + to_string(cfg.fusion) +
                      " requires a decoupled checkpoint");

  const EvalPool pool = build_eval_pool(cfg);
  const ApSummary ap = ap_with(pool, cfg, &model, cfg.eval.feature_mode_infer, cfg.fusion);

  std::vector<std::pair<std::string, Predictor>> predictors;
  predictors.emplace_back("cls_score", [](const Sample& s) { return s.cls_score_sim; });
  predictors.emplace_back("model", [&](const Sample& s) {
    return predict_confidence(model, s.features(cfg.eval.feature_mode_infer)).c;
  });
  const auto correlations =
      correlation_study(predictors, pool.samples, cfg.eval.filter_iou_above_half);
  const Histogram hist = delta_iou_histogram(pool.samples, cfg.eval.metrics.hist_bin_width);

  const std::vector<AblationRow> rows = {ap_row(to_string(cfg.fusion), ap)};
  EvaluateResult out;
  out.report = assemble_report(rows, to_string(cfg.fusion), correlations, {hist});

  const std::filesystem::path dir = run_directory(cfg);
  std::filesystem::create_directories(dir);
  const std::string tag = "_s" + std::to_string(cfg.world.rng_seed) + "_h" + config_hash_hex(cfg);
  out.csv = dir / ("eval" + tag + ".csv");
  write_text_file(out.csv.string(), render_csv(out.report.rows));
  out.json = dir / ("eval" + tag + ".json");
  write_text_file(out.json.string(), report_json(out.report));
  return out;
}

bool AblationResult::all_pass() const {
  if (!failures.empty()) return false;
  for (const AblationAssertion& a : assertions)
    if (!a.pass) return false;
  return true;
}

AblationResult cmd_ablate(const ExperimentConfig& cfg) {
  cfg.validate();
  if (cfg.eval.num_scenes < 1) throw ConfigError("ablate: eval.num_scenes must be >= 1");
  if (cfg.train.epochs < 1) throw ConfigError("ablate: train.epochs must be >= 1");

  const EvalPool pool = build_eval_pool(cfg);

  AblationResult res;
  constexpr double kNan = std::numeric_limits<double>::quiet_NaN();
  const auto try_train = [&](const char* label, ModelVariant variant, FeatureMode mode,
                             double extra_lr_mult = 1.0) -> std::optional<TrainResult> {
    try {
      return train_for(cfg, variant, mode, extra_lr_mult);
    } catch (const std::exception& e) {
      res.failures.push_back(std::string(label) + ": " + e.what());
      return std::nullopt;
    }
  };
  const auto row_or_nan = [&](const char* label, const std::optional<TrainResult>& tr,
                              FeatureMode mode, FusionRule rule) -> AblationRow {
    if (tr) return ap_row(label, ap_with(pool, cfg, &tr->params, mode, rule));
    return {label, {{"ap", kNan}, {"ap50", kNan}, {"ap75", kNan}}};
  };

  const auto fore_direct =
      try_train("foresight_direct", ModelVariant::DirectIoU, FeatureMode::Foresight);
  const auto fore_dec = try_train("foresight_decoupled", ModelVariant::Decoupled,
                                  FeatureMode::Foresight);
  const auto hind_direct =
      try_train("hindsight_direct", ModelVariant::DirectIoU, FeatureMode::Hindsight);
  const auto hind_direct_3x =
      try_train("hindsight_direct_3xlr", ModelVariant::DirectIoU, FeatureMode::Hindsight, 3.0);
  const auto hind_dec = try_train("hindsight_decoupled", ModelVariant::Decoupled,
                                  FeatureMode::Hindsight);

  res.variant_rows.push_back(row_or_nan("foresight_direct", fore_direct, FeatureMode::Foresight,
                                        FusionRule::GeometricMeanClsIou));
  res.variant_rows.push_back(row_or_nan("foresight_decoupled", fore_dec, FeatureMode::Foresight,
                                        FusionRule::CombinedIou));
  res.variant_rows.push_back(row_or_nan("hindsight_direct", hind_direct, FeatureMode::Hindsight,
                                        FusionRule::GeometricMeanClsIou));
  res.variant_rows.push_back(row_or_nan("hindsight_direct_3xlr", hind_direct_3x,
                                        FeatureMode::Hindsight, FusionRule::GeometricMeanClsIou));
  res.variant_rows.push_back(row_or_nan("hindsight_decoupled", hind_dec, FeatureMode::Hindsight,
                                        FusionRule::CombinedIou));

  res.fusion_rows.push_back(
      ap_row("cls_only", ap_with(pool, cfg, nullptr, FeatureMode::Hindsight, FusionRule::ClsOnly)));
  for (const FusionRule rule : {FusionRule::PurityOnly, FusionRule::IntegrityOnly,
                                FusionRule::GeometricAvgPI, FusionRule::ArithmeticAvgPI,
                                FusionRule::CombinedIou}) {
    res.fusion_rows.push_back(row_or_nan(to_string(rule), hind_dec, FeatureMode::Hindsight, rule));
  }

  const auto corr_or_nan = [&](const char* label, const std::optional<TrainResult>& tr,
                               FeatureMode mode) {
    if (!tr) {
      res.correlations.emplace_back(label, kNan);
      return;
    }
    std::vector<std::pair<std::string, Predictor>> one;
    one.emplace_back(label, [&](const Sample& s) {
      return predict_confidence(tr->params, s.features(mode)).c;
    });
    try {
      const auto study = correlation_study(one, pool.samples, cfg.eval.filter_iou_above_half);
      res.correlations.push_back(study.front());
    } catch (const std::exception& e) {
      res.failures.push_back(std::string("correlation/") + label + ": " + e.what());
      res.correlations.emplace_back(label, kNan);
    }
  };
  {
    std::vector<std::pair<std::string, Predictor>> cls;
    cls.emplace_back("cls_score", [](const Sample& s) { return s.cls_score_sim; });
    try {
      res.correlations.push_back(
          correlation_study(cls, pool.samples, cfg.eval.filter_iou_above_half).front());
    } catch (const std::exception& e) {
      res.failures.push_back(std::string("correlation/cls_score: ") + e.what());
      res.correlations.emplace_back("cls_score", kNan);
    }
  }
  corr_or_nan("foresight", fore_direct, FeatureMode::Foresight);
  corr_or_nan("hindsight_direct", hind_direct, FeatureMode::Hindsight);
  corr_or_nan("hindsight_decoupled", hind_dec, FeatureMode::Hindsight);

  for (int epoch = 0; epoch < cfg.train.epochs; ++epoch) {
    const std::vector<Sample> ds = build_dataset(cfg.world, epoch);
    res.drift.push_back(delta_iou_histogram(ds, cfg.eval.metrics.hist_bin_width));
  }

  const double p_cls = res.correlations[0].second;
  const double p_fore = res.correlations[1].second;
  const double p_hdir = res.correlations[2].second;
  const double p_hdec = res.correlations[3].second;
  {
    AblationAssertion a;
    a.name = "pearson_ordering";
    a.pass = p_hdec >= p_hdir && p_hdir >= p_fore + 0.01 && p_fore + 0.01 >= p_cls + 0.05;
    a.detail = "decoupled=" + format_metric(p_hdec) + " direct=" + format_metric(p_hdir) +
               " foresight=" + format_metric(p_fore) + " cls=" + format_metric(p_cls);
    res.assertions.push_back(std::move(a));
  }
  {
    const double ap_cls = row_metric(res.fusion_rows, "cls_only", "ap");
    const double ap50_cls = row_metric(res.fusion_rows, "cls_only", "ap50");
    const double ap75_cls = row_metric(res.fusion_rows, "cls_only", "ap75");
    const double ap_dir = row_metric(res.fusion_rows, "combined_iou", "ap");
    const double ap50_dir = row_metric(res.fusion_rows, "combined_iou", "ap50");
    const double ap75_dir = row_metric(res.fusion_rows, "combined_iou", "ap75");
    AblationAssertion a;
    a.name = "ap_gain_over_cls";
    a.pass = ap_dir > ap_cls && (ap75_dir - ap75_cls) >= (ap50_dir - ap50_cls);
    a.detail = "ap=" + format_metric(ap_dir) + " vs " + format_metric(ap_cls) +
               " gain75=" + format_metric(ap75_dir - ap75_cls) +
               " gain50=" + format_metric(ap50_dir - ap50_cls);
    res.assertions.push_back(std::move(a));
  }
  {
    const double ap_comb = row_metric(res.fusion_rows, "combined_iou", "ap");
    const double ap_pur = row_metric(res.fusion_rows, "purity_only", "ap");
    const double ap_int = row_metric(res.fusion_rows, "integrity_only", "ap");
    const double ap_geo = row_metric(res.fusion_rows, "geom_avg_pi", "ap");
    const double ap_ari = row_metric(res.fusion_rows, "arith_avg_pi", "ap");
    AblationAssertion a;
    a.name = "fusion_ranking";
    a.pass = ap_comb > ap_pur && ap_comb > ap_int && ap_comb >= ap_geo && ap_comb >= ap_ari;
    a.detail = "combined=" + format_metric(ap_comb) + " purity=" + format_metric(ap_pur) +
               " integrity=" + format_metric(ap_int) + " geom=" + format_metric(ap_geo) +
               " arith=" + format_metric(ap_ari);
    res.assertions.push_back(std::move(a));
  }
  {
    bool monotone = true;
    for (std::size_t e = 1; e < res.drift.size(); ++e)
      monotone = monotone && res.drift[e].mean >= res.drift[e - 1].mean;
    const double gain = res.drift.back().mean - res.drift.front().mean;
    AblationAssertion a;
    a.name = "regression_drift";
    a.pass = monotone && gain >= 0.1;
    a.detail = "first=" + format_metric(res.drift.front().mean) +
               " last=" + format_metric(res.drift.back().mean) + " gain=" + format_metric(gain);
    res.assertions.push_back(std::move(a));
  }

  std::vector<AblationRow> all_rows = res.variant_rows;
  all_rows.insert(all_rows.end(), res.fusion_rows.begin(), res.fusion_rows.end());
  res.report = assemble_report(all_rows, "hindsight_decoupled", res.correlations, res.drift);

  res.run_dir = run_directory(cfg);
  std::filesystem::create_directories(res.run_dir);
  const std::string tag = "_s" + std::to_string(cfg.world.rng_seed) + "_h" + config_hash_hex(cfg);

  const std::filesystem::path variants_csv = res.run_dir / ("ablation_variants" + tag + ".csv");
  write_text_file(variants_csv.string(), render_csv(res.variant_rows));
  res.files.push_back(variants_csv);

  const std::filesystem::path fusion_csv = res.run_dir / ("ablation_fusion" + tag + ".csv");
  write_text_file(fusion_csv.string(), render_csv(res.fusion_rows));
  res.files.push_back(fusion_csv);

  std::vector<AblationRow> corr_rows;
  for (const auto& [label, value] : res.correlations)
    corr_rows.push_back({label, {{"pearson", value}}});
  const std::filesystem::path corr_csv = res.run_dir / ("correlation" + tag + ".csv");
  write_text_file(corr_csv.string(), render_csv(corr_rows));
  res.files.push_back(corr_csv);

  std::ostringstream drift_csv;
  drift_csv << "epoch,mean";
  for (std::size_t b = 0; b < res.drift.front().mass.size(); ++b) drift_csv << ",bin" << b;
  drift_csv << '\n';
  for (std::size_t e = 0; e < res.drift.size(); ++e) {
    drift_csv << e << ',' << format_metric(res.drift[e].mean);
    for (const double m : res.drift[e].mass) drift_csv << ',' << format_metric(m);
    drift_csv << '\n';
  }
  const std::filesystem::path drift_path = res.run_dir / ("drift" + tag + ".csv");
  write_text_file(drift_path.string(), drift_csv.str());
  res.files.push_back(drift_path);

  nlohmann::ordered_json j;
  j["config"] = config_hash_hex(cfg);
  j["ap"] = {{"mean", res.report.ap_mean}, {"ap50", res.report.ap50}, {"ap75", res.report.ap75}};
  const auto rows_json = [](const std::vector<AblationRow>& rows) {
    nlohmann::ordered_json arr = nlohmann::ordered_json::array();
    for (const AblationRow& row : rows) {
      nlohmann::ordered_json r;
      r["method"] = row.label;
      for (const auto& [key, value] : row.metrics) r[key] = value;
      arr.push_back(std::move(r));
    }
    return arr;
  };
  j["variants"] = rows_json(res.variant_rows);
  j["fusion"] = rows_json(res.fusion_rows);
  nlohmann::ordered_json pearson = nlohmann::ordered_json::object();
  for (const auto& [key, value] : res.correlations) pearson[key] = value;
  j["pearson"] = std::move(pearson);
  nlohmann::ordered_json drift = nlohmann::ordered_json::array();
  for (std::size_t e = 0; e < res.drift.size(); ++e) {
    const Histogram& h = res.drift[e];
    drift.push_back({{"epoch", e},
                     {"mean", h.mean},
                     {"count", h.count},
                     {"lo", h.lo},
                     {"bin_width", h.bin_width},
                     {"mass", h.mass}});
  }
  j["delta_iou"] = std::move(drift);
  nlohmann::ordered_json checks = nlohmann::ordered_json::array();
  for (const AblationAssertion& a : res.assertions)
    checks.push_back({{"name", a.name}, {"pass", a.pass}, {"detail", a.detail}});
  j["checks"] = std::move(checks);
  j["failures"] = res.failures;
  const std::filesystem::path json_path = res.run_dir / ("ablation" + tag + ".json");
  write_text_file(json_path.string(), j.dump(2) + "\n");
  res.files.push_back(json_path);

  return res;
}

int run_cli(int argc, const char* const* argv) {
  CLI::App app{"decoupled IoU regression experiments"};
  app.require_subcommand(1);
  std::string config_path;
  std::string out_override;
  std::string seed_str;
  bool quiet = false;
  int epoch = 0;
  std::string checkpoint_path;

  const auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", config_path, "experiment config file")->required();
    sub->add_option("--out", out_override, "output directory override");
    sub->add_option("--seed", seed_str, "world seed override");
    sub->add_flag("--quiet", quiet, "suppress stdout output");
  };
  CLI::App* gen = app.add_subcommand("gen-data", "generate and serialize a dataset");
  add_common(gen);
  gen->add_option("--epoch", epoch, "regression gain epoch for the dataset");
  CLI::App* tr = app.add_subcommand("train", "train a confidence regressor");
  add_common(tr);
  CLI::App* ev = app.add_subcommand("evaluate", "evaluate a checkpoint");
  add_common(ev);
  ev->add_option("--checkpoint", checkpoint_path, "checkpoint to evaluate")->required();
  CLI::App* ab = app.add_subcommand("ablate", "run the ablation grid and trend checks");
  add_common(ab);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    ExperimentConfig cfg = load_config_file(config_path);
    if (!seed_str.empty()) {
      try {
        std::size_t pos = 0;
        cfg.world.rng_seed = std::stoull(seed_str, &pos);
        if (pos != seed_str.size()) throw std::invalid_argument(seed_str);
      } catch (const std::exception&) {
        throw ConfigError("--seed must be an unsigned integer");
      }
    }
    if (!out_override.empty()) cfg.out_dir = out_override;
    cfg.validate();

    if (gen->parsed()) {
      const GenDataResult r = cmd_gen_data(cfg, epoch);
      if (!quiet)
        std::printf("dataset=%s records=%zu config=%s\n", r.file.c_str(), r.records,
                    r.config_hash.c_str());
      return 0;
    }
    if (tr->parsed()) {
      const TrainFiles r = cmd_train(cfg);
      if (!quiet)
        std::printf("checkpoint=%s report=%s\n", r.checkpoint.c_str(), r.report_csv.c_str());
      return 0;
    }
    if (ev->parsed()) {
      const EvaluateResult r = cmd_evaluate(cfg, checkpoint_path);
      if (!quiet)
        std::printf("report=%s ap=%s ap50=%s ap75=%s\n", r.csv.c_str(),
                    format_metric(r.report.ap_mean).c_str(), format_metric(r.report.ap50).c_str(),
                    format_metric(r.report.ap75).c_str());
      return 0;
    }
    const AblationResult r = cmd_ablate(cfg);
    for (const std::string& failure : r.failures)
      std::fprintf(stderr, "error: sub-run: %s\n", failure.c_str());
    if (!quiet) {
      for (const AblationAssertion& check : r.assertions)
        std::printf("[check] %s %s (%s)\n", check.name.c_str(), check.pass ? "PASS" : "FAIL",
                    check.detail.c_str());
      std::printf("run_dir=%s\n", r.run_dir.c_str());
    }
    return r.all_pass() ? 0 : 4;
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "error: config: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: runtime: %s\n", e.what());
    return 3;
  }
}

}  // namespace dir
