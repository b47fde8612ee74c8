#include "dir/synth_world.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace dir {

namespace {

constexpr std::uint64_t kSceneStream = 1;
constexpr std::uint64_t kDatasetStream = 2;

std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

double parse_double_token(const std::string& tok, const char* what) {
  try {
    std::size_t pos = 0;
    const double v = std::stod(tok, &pos);
    if (pos != tok.size()) throw std::invalid_argument(tok);
    return v;
  } catch (const std::exception&) {
    throw std::runtime_error(std::string("dataset: bad numeric field for ") + what);
  }
}

long long parse_int_token(const std::string& tok, const char* what) {
  try {
    std::size_t pos = 0;
    const long long v = std::stoll(tok, &pos);
    if (pos != tok.size()) throw std::invalid_argument(tok);
    return v;
  } catch (const std::exception&) {
    throw std::runtime_error(std::string("dataset: bad integer field for ") + what);
  }
}

}  // namespace

const char* to_string(FeatureMode mode) {
  return mode == FeatureMode::Foresight ? "foresight" : "hindsight";
}

double WorldConfig::gamma(int epoch) const {
  return std::min(gamma_max, gamma_base + gamma_step * epoch);
}

int WorldConfig::feature_dim() const {
  return inner_grid * inner_grid + context_grid * context_grid + 4;
}

void WorldConfig::validate() const {
  if (num_scenes < 0) throw std::invalid_argument("world: num_scenes must be >= 0");
  if (objects_min < 1 || objects_max < objects_min)
    throw std::invalid_argument("world: need 1 <= objects_min <= objects_max");
  if (!(object_size_min > 0.0) || object_size_max < object_size_min)
    throw std::invalid_argument("world: need 0 < object_size_min <= object_size_max");
  if (!(canvas_size > 0.0) || object_size_max > canvas_size)
    throw std::invalid_argument("world: object sizes must fit the canvas");
  if (proposals_per_object < 1)
    throw std::invalid_argument("world: proposals_per_object must be >= 1");
  if (jitter_scale < 0.0 || regression_noise < 0.0 || feature_noise < 0.0 ||
      cls_score_noise < 0.0)
    throw std::invalid_argument("world: noise scales must be >= 0");
  if (!(gamma_base > 0.0) || gamma_step < 0.0 || gamma_max > 1.0 || gamma_max < gamma_base)
    throw std::invalid_argument("world: gamma schedule must stay in (0, 1]");
  if (inner_grid < 1 || context_grid < 1)
    throw std::invalid_argument("world: grid resolutions must be >= 1");
  if (!(context_expand >= 1.0))
    throw std::invalid_argument("world: context_expand must be >= 1");
  if (!(positive_iou_threshold > 0.0) || !(positive_iou_threshold < 1.0))
    throw std::invalid_argument("world: positive_iou_threshold must be in (0, 1)");
  if (num_classes < 1) throw std::invalid_argument("world: num_classes must be >= 1");
}

std::vector<Scene> generate_scenes(const WorldConfig& cfg) {
  cfg.validate();
  Rng rng(derive_seed(cfg.rng_seed, kSceneStream));
  const BoundingBox canvas = make_box(0.0, 0.0, cfg.canvas_size, cfg.canvas_size);
  std::vector<Scene> scenes(cfg.num_scenes);
  for (int si = 0; si < cfg.num_scenes; ++si) {
    Scene& scene = scenes[si];
    scene.scene_id = si;
    scene.canvas = canvas;
    const int count = rng.uniform_int(cfg.objects_min, cfg.objects_max);
    for (int oi = 0; oi < count; ++oi) {
      BoundingBox box;
      // resample a few times to keep ground-truth overlap low
      for (int attempt = 0; attempt < 10; ++attempt) {
        const double w = rng.uniform(cfg.object_size_min, cfg.object_size_max);
        const double h = rng.uniform(cfg.object_size_min, cfg.object_size_max);
        const double x = rng.uniform(0.0, cfg.canvas_size - w);
        const double y = rng.uniform(0.0, cfg.canvas_size - h);
        box = make_box(x, y, x + w, y + h);
        bool crowded = false;
        for (const SceneObject& other : scene.objects)
          crowded = crowded || iou(box, other.box) > 0.2;
        if (!crowded) break;
      }
      scene.objects.push_back({box, rng.uniform_int(0, cfg.num_classes - 1)});
    }
  }
  return scenes;
}

BoundingBox jitter_proposal(const BoundingBox& gt, const BoundingBox& canvas,
                            double sigma_j, Rng& rng) {
  const double w = gt.width();
  const double h = gt.height();
  double x1 = gt.x1 + rng.gaussian() * sigma_j * w;
  double y1 = gt.y1 + rng.gaussian() * sigma_j * h;
  double x2 = gt.x2 + rng.gaussian() * sigma_j * w;
  double y2 = gt.y2 + rng.gaussian() * sigma_j * h;
  if (x1 > x2) std::swap(x1, x2);
  if (y1 > y2) std::swap(y1, y2);
  x1 = std::clamp(x1, canvas.x1, canvas.x2);
  x2 = std::clamp(x2, canvas.x1, canvas.x2);
  y1 = std::clamp(y1, canvas.y1, canvas.y2);
  y2 = std::clamp(y2, canvas.y1, canvas.y2);
  return BoundingBox{x1, y1, x2, y2};
}

BoundingBox simulate_regression(const BoundingBox& proposal, const BoundingBox& gt,
                                double gamma, double sigma_r, Rng& rng) {
  if (gamma < 0.0 || gamma > 1.0)
    throw std::invalid_argument("simulate_regression: gamma must be in [0, 1]");
  const double sw = sigma_r * gt.width();
  const double sh = sigma_r * gt.height();
  const double keep = 1.0 - gamma;
  double x1 = keep * proposal.x1 + gamma * gt.x1 + rng.gaussian() * sw;
  double y1 = keep * proposal.y1 + gamma * gt.y1 + rng.gaussian() * sh;
  double x2 = keep * proposal.x2 + gamma * gt.x2 + rng.gaussian() * sw;
  double y2 = keep * proposal.y2 + gamma * gt.y2 + rng.gaussian() * sh;
  if (x1 > x2) std::swap(x1, x2);
  if (y1 > y2) std::swap(y1, y2);
  return BoundingBox{x1, y1, x2, y2};
}

std::vector<double> extract_features(const BoundingBox& box, const Scene& scene,
                                     const WorldConfig& cfg, Rng& rng) {
  std::vector<double> features;
  features.reserve(cfg.feature_dim());

  const auto occupied = [&](double px, double py) {
    for (const SceneObject& obj : scene.objects) {
      if (px >= obj.box.x1 && px <= obj.box.x2 && py >= obj.box.y1 && py <= obj.box.y2)
        return 1.0;
    }
    return 0.0;
  };
  const auto sample_grid = [&](const BoundingBox& window, int n) {
    const bool degenerate = !(area(window) > 0.0);
    for (int iy = 0; iy < n; ++iy) {
      for (int ix = 0; ix < n; ++ix) {
        double v = 0.0;
        if (!degenerate) {
          const double px = window.x1 + (ix + 0.5) * window.width() / n;
          const double py = window.y1 + (iy + 0.5) * window.height() / n;
          v = occupied(px, py);
        }
        if (cfg.feature_noise > 0.0)
          v = std::clamp(v + rng.gaussian() * cfg.feature_noise, 0.0, 1.0);
        features.push_back(v);
      }
    }
  };

  sample_grid(box, cfg.inner_grid);
  const double cx = 0.5 * (box.x1 + box.x2);
  const double cy = 0.5 * (box.y1 + box.y2);
  const double hw = 0.5 * box.width() * cfg.context_expand;
  const double hh = 0.5 * box.height() * cfg.context_expand;
  sample_grid(BoundingBox{cx - hw, cy - hh, cx + hw, cy + hh}, cfg.context_grid);

  const double s = cfg.canvas_size;
  features.push_back(box.width() / s);
  features.push_back(box.height() / s);
  features.push_back(box.height() > 0.0 ? std::clamp(box.width() / box.height(), 0.0, 10.0) : 0.0);
  features.push_back(std::log(area(box) / (s * s) + 1e-9));
  return features;
}

std::vector<Sample> build_dataset(const WorldConfig& cfg, int epoch) {
  cfg.validate();
  if (epoch < 0) throw std::invalid_argument("build_dataset: epoch must be >= 0");
  const std::vector<Scene> scenes = generate_scenes(cfg);
  Rng rng(derive_seed(cfg.rng_seed, kDatasetStream));
  const double gamma = cfg.gamma(epoch);

  std::vector<Sample> samples;
  for (const Scene& scene : scenes) {
    for (const SceneObject& obj : scene.objects) {
      for (int pi = 0; pi < cfg.proposals_per_object; ++pi) {
        Sample s;
        s.scene_id = scene.scene_id;
        s.proposal = jitter_proposal(obj.box, scene.canvas, cfg.jitter_scale, rng);
        s.regressed = simulate_regression(s.proposal, obj.box, gamma, cfg.regression_noise, rng);

        int best = 0;
        double best_iou = -1.0;
        for (std::size_t gi = 0; gi < scene.objects.size(); ++gi) {
          const double v = iou(s.regressed, scene.objects[gi].box);
          if (v > best_iou) {
            best_iou = v;
            best = static_cast<int>(gi);
          }
        }
        const BoundingBox& gt = scene.objects[best].box;
        s.matched_gt = best;
        s.matched_class = scene.objects[best].class_id;
        s.purity_star = purity(s.regressed, gt);
        s.integrity_star = integrity(s.regressed, gt);
        s.iou_star = iou(s.regressed, gt);
        s.proposal_iou = iou(s.proposal, gt);
        s.is_positive = s.proposal_iou >= cfg.positive_iou_threshold;
        s.features_foresight = extract_features(s.proposal, scene, cfg, rng);
        s.features_hindsight = extract_features(s.regressed, scene, cfg, rng);
        s.cls_score_sim = std::clamp(s.proposal_iou + rng.gaussian() * cfg.cls_score_noise, 0.0, 1.0);
        samples.push_back(std::move(s));
      }
    }
  }
  return samples;
}

std::vector<Sample> select_positives(std::span<const Sample> samples) {
  std::vector<Sample> out;
  for (const Sample& s : samples)
    if (s.is_positive) out.push_back(s);
  return out;
}

namespace {

std::string world_echo(const WorldConfig& c) {
  std::ostringstream os;
  os << "seed=" << c.rng_seed << " num_scenes=" << c.num_scenes
     << " objects_min=" << c.objects_min << " objects_max=" << c.objects_max
     << " size_min=" << fmt_double(c.object_size_min)
     << " size_max=" << fmt_double(c.object_size_max)
     << " proposals=" << c.proposals_per_object
     << " jitter=" << fmt_double(c.jitter_scale)
     << " gamma_base=" << fmt_double(c.gamma_base)
     << " gamma_step=" << fmt_double(c.gamma_step)
     << " gamma_max=" << fmt_double(c.gamma_max)
     << " regression_noise=" << fmt_double(c.regression_noise)
     << " inner_grid=" << c.inner_grid << " context_grid=" << c.context_grid
     << " context_expand=" << fmt_double(c.context_expand)
     << " feature_noise=" << fmt_double(c.feature_noise)
     << " cls_noise=" << fmt_double(c.cls_score_noise)
     << " tau_pos=" << fmt_double(c.positive_iou_threshold)
     << " canvas=" << fmt_double(c.canvas_size) << " classes=" << c.num_classes;
  return os.str();
}

WorldConfig parse_world_echo(const std::string& line) {
  WorldConfig c;
  std::istringstream is(line);
  std::string tok;
  while (is >> tok) {
    const std::size_t eq = tok.find('=');
    if (eq == std::string::npos) throw std::runtime_error("dataset: malformed config echo");
    const std::string key = tok.substr(0, eq);
    const std::string val = tok.substr(eq + 1);
    if (key == "seed") c.rng_seed = static_cast<std::uint64_t>(parse_int_token(val, "seed"));
    else if (key == "num_scenes") c.num_scenes = static_cast<int>(parse_int_token(val, key.c_str()));
    else if (key == "objects_min") c.objects_min = static_cast<int>(parse_int_token(val, key.c_str()));
    else if (key == "objects_max") c.objects_max = static_cast<int>(parse_int_token(val, key.c_str()));
    else if (key == "size_min") c.object_size_min = parse_double_token(val, key.c_str());
    else if (key == "size_max") c.object_size_max = parse_double_token(val, key.c_str());
    else if (key == "proposals") c.proposals_per_object = static_cast<int>(parse_int_token(val, key.c_str()));
    else if (key == "jitter") c.jitter_scale = parse_double_token(val, key.c_str());
    else if (key == "gamma_base") c.gamma_base = parse_double_token(val, key.c_str());
    else if (key == "gamma_step") c.gamma_step = parse_double_token(val, key.c_str());
    else if (key == "gamma_max") c.gamma_max = parse_double_token(val, key.c_str());
    else if (key == "regression_noise") c.regression_noise = parse_double_token(val, key.c_str());
    else if (key == "inner_grid") c.inner_grid = static_cast<int>(parse_int_token(val, key.c_str()));
    else if (key == "context_grid") c.context_grid = static_cast<int>(parse_int_token(val, key.c_str()));
    else if (key == "context_expand") c.context_expand = parse_double_token(val, key.c_str());
    else if (key == "feature_noise") c.feature_noise = parse_double_token(val, key.c_str());
    else if (key == "cls_noise") c.cls_score_noise = parse_double_token(val, key.c_str());
    else if (key == "tau_pos") c.positive_iou_threshold = parse_double_token(val, key.c_str());
    else if (key == "canvas") c.canvas_size = parse_double_token(val, key.c_str());
    else if (key == "classes") c.num_classes = static_cast<int>(parse_int_token(val, key.c_str()));
    else throw std::runtime_error("dataset: unknown config echo key '" + key + "'");
  }
  return c;
}

}  // namespace

std::string serialize_dataset(const WorldConfig& cfg, int epoch,
                              std::span<const Sample> samples) {
  std::ostringstream os;
  os << "# dir-dataset 1\n";
  os << "# world " << world_echo(cfg) << "\n";
  os << "# epoch=" << epoch << " feature_dim=" << cfg.feature_dim()
     << " records=" << samples.size() << "\n";
  for (const Sample& s : samples) {
    os << s.scene_id << ' ' << fmt_double(s.proposal.x1) << ' ' << fmt_double(s.proposal.y1)
       << ' ' << fmt_double(s.proposal.x2) << ' ' << fmt_double(s.proposal.y2) << ' '
       << fmt_double(s.regressed.x1) << ' ' << fmt_double(s.regressed.y1) << ' '
       << fmt_double(s.regressed.x2) << ' ' << fmt_double(s.regressed.y2) << ' '
       << s.matched_gt << ' ' << s.matched_class << ' ' << fmt_double(s.proposal_iou) << ' '
       << fmt_double(s.cls_score_sim) << ' ' << fmt_double(s.purity_star) << ' '
       << fmt_double(s.integrity_star) << ' ' << fmt_double(s.iou_star) << ' '
       << (s.is_positive ? 1 : 0);
    for (const double v : s.features_foresight) os << ' ' << fmt_double(v);
    for (const double v : s.features_hindsight) os << ' ' << fmt_double(v);
    os << '\n';
  }
  return os.str();
}

DatasetFile parse_dataset(const std::string& text) {
  std::istringstream is(text);
  std::string line;

  if (!std::getline(is, line) || line != "# dir-dataset 1")
    throw std::runtime_error("dataset: missing or unsupported format header");
  if (!std::getline(is, line) || line.rfind("# world ", 0) != 0)
    throw std::runtime_error("dataset: missing config echo line");
  DatasetFile out;
  out.config = parse_world_echo(line.substr(8));
  if (!std::getline(is, line) || line.rfind("# ", 0) != 0)
    throw std::runtime_error("dataset: missing epoch line");
  long long records = -1;
  int feature_dim = -1;
  {
    std::istringstream meta(line.substr(2));
    std::string tok;
    while (meta >> tok) {
      const std::size_t eq = tok.find('=');
      if (eq == std::string::npos) throw std::runtime_error("dataset: malformed epoch line");
      const std::string key = tok.substr(0, eq);
      const std::string val = tok.substr(eq + 1);
      if (key == "epoch") out.epoch = static_cast<int>(parse_int_token(val, "epoch"));
      else if (key == "feature_dim") feature_dim = static_cast<int>(parse_int_token(val, "feature_dim"));
      else if (key == "records") records = parse_int_token(val, "records");
      else throw std::runtime_error("dataset: unknown epoch line key '" + key + "'");
    }
  }
  if (feature_dim != out.config.feature_dim())
    throw std::runtime_error("dataset: feature_dim does not match config echo");

  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::vector<std::string> tok;
    std::string t;
    while (ls >> t) tok.push_back(t);
    const std::size_t expect = 17 + 2 * static_cast<std::size_t>(feature_dim);
    if (tok.size() != expect) throw std::runtime_error("dataset: wrong field count in record");
    Sample s;
    std::size_t k = 0;
    s.scene_id = static_cast<int>(parse_int_token(tok[k++], "scene_id"));
    s.proposal.x1 = parse_double_token(tok[k++], "proposal");
    s.proposal.y1 = parse_double_token(tok[k++], "proposal");
    s.proposal.x2 = parse_double_token(tok[k++], "proposal");
    s.proposal.y2 = parse_double_token(tok[k++], "proposal");
    s.regressed.x1 = parse_double_token(tok[k++], "regressed");
    s.regressed.y1 = parse_double_token(tok[k++], "regressed");
    s.regressed.x2 = parse_double_token(tok[k++], "regressed");
    s.regressed.y2 = parse_double_token(tok[k++], "regressed");
    s.matched_gt = static_cast<int>(parse_int_token(tok[k++], "matched_gt"));
    s.matched_class = static_cast<int>(parse_int_token(tok[k++], "matched_class"));
    s.proposal_iou = parse_double_token(tok[k++], "proposal_iou");
    s.cls_score_sim = parse_double_token(tok[k++], "cls_score");
    s.purity_star = parse_double_token(tok[k++], "purity_star");
    s.integrity_star = parse_double_token(tok[k++], "integrity_star");
    s.iou_star = parse_double_token(tok[k++], "iou_star");
    s.is_positive = parse_int_token(tok[k++], "is_positive") != 0;
    s.features_foresight.reserve(feature_dim);
    for (int i = 0; i < feature_dim; ++i)
      s.features_foresight.push_back(parse_double_token(tok[k++], "features"));
    s.features_hindsight.reserve(feature_dim);
    for (int i = 0; i < feature_dim; ++i)
      s.features_hindsight.push_back(parse_double_token(tok[k++], "features"));
    out.samples.push_back(std::move(s));
  }
  if (records >= 0 && static_cast<long long>(out.samples.size()) != records)
    throw std::runtime_error("dataset: record count does not match header");
  return out;
}

void write_dataset_file(const std::string& path, const WorldConfig& cfg, int epoch,
                        std::span<const Sample> samples) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("dataset: cannot open '" + path + "' for writing");
  os << serialize_dataset(cfg, epoch, samples);
  if (!os) throw std::runtime_error("dataset: write to '" + path + "' failed");
}

DatasetFile read_dataset_file(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("dataset: cannot open '" + path + "'");
  std::ostringstream buf;
  buf << is.rdbuf();
  return parse_dataset(buf.str());
}

}  // namespace dir
