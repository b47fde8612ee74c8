#include "dir/regressor.hpp"

#include <algorithm>
#include <bit>
#include <chrono>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace dir {

namespace {

constexpr double kClampEps = 1e-7;

double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

AffineLayer make_layer(int in, int out) {
  AffineLayer l;
  l.in = in;
  l.out = out;
  l.w.assign(static_cast<std::size_t>(in) * out, 0.0);
  l.b.assign(out, 0.0);
  return l;
}

void init_layer(AffineLayer& l, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(l.in));
  for (double& w : l.w) w = rng.uniform(-bound, bound);
}

BranchParams make_branch(int input_dim, int h1, int h2) {
  BranchParams bp;
  bp.l1 = make_layer(input_dim, h1);
  bp.l2 = make_layer(h1, h2);
  bp.l3 = make_layer(h2, 1);
  return bp;
}

void affine(const AffineLayer& l, std::span<const double> x, std::vector<double>& z) {
  z.assign(l.out, 0.0);
  for (int o = 0; o < l.out; ++o) {
    double acc = l.b[o];
    const double* row = l.w.data() + static_cast<std::size_t>(o) * l.in;
    for (int i = 0; i < l.in; ++i) acc += row[i] * x[i];
    z[o] = acc;
  }
}

double branch_forward(const BranchParams& bp, std::span<const double> x, BranchCache& c) {
  affine(bp.l1, x, c.z1);
  c.a1 = c.z1;
  for (double& v : c.a1) v = std::max(v, 0.0);
  affine(bp.l2, c.a1, c.z2);
  c.a2 = c.z2;
  for (double& v : c.a2) v = std::max(v, 0.0);
  double z3 = bp.l3.b[0];
  for (int i = 0; i < bp.l3.in; ++i) z3 += bp.l3.w[i] * c.a2[i];
  c.z3 = z3;
  c.out = sigmoid(z3);
  return c.out;
}

// d(bce)/d(pred); zero where the clamp is active.
double bce_grad(double pred, double target) {
  if (pred < kClampEps || pred > 1.0 - kClampEps) return 0.0;
  return (pred - target) / (pred * (1.0 - pred));
}

void branch_backward(const BranchParams& bp, const BranchCache& c, std::span<const double> x,
                     double dz3, BranchParams& g) {
  for (int i = 0; i < bp.l3.in; ++i) g.l3.w[i] += dz3 * c.a2[i];
  g.l3.b[0] += dz3;

  std::vector<double> dz2(bp.l2.out, 0.0);
  for (int j = 0; j < bp.l2.out; ++j) {
    const double da2 = dz3 * bp.l3.w[j];
    dz2[j] = c.z2[j] > 0.0 ? da2 : 0.0;
  }
  for (int j = 0; j < bp.l2.out; ++j) {
    double* row = g.l2.w.data() + static_cast<std::size_t>(j) * bp.l2.in;
    for (int i = 0; i < bp.l2.in; ++i) row[i] += dz2[j] * c.a1[i];
    g.l2.b[j] += dz2[j];
  }
  std::vector<double> dz1(bp.l1.out, 0.0);
  for (int i = 0; i < bp.l1.out; ++i) {
    double da1 = 0.0;
    for (int j = 0; j < bp.l2.out; ++j)
      da1 += dz2[j] * bp.l2.w[static_cast<std::size_t>(j) * bp.l2.in + i];
    dz1[i] = c.z1[i] > 0.0 ? da1 : 0.0;
  }
  for (int i = 0; i < bp.l1.out; ++i) {
    double* row = g.l1.w.data() + static_cast<std::size_t>(i) * bp.l1.in;
    for (int k = 0; k < bp.l1.in; ++k) row[k] += dz1[i] * x[k];
    g.l1.b[i] += dz1[i];
  }
}

DirModelParams zero_like(const DirModelParams& p) {
  DirModelParams z = p;
  for (std::span<double> s : param_spans(z)) std::fill(s.begin(), s.end(), 0.0);
  return z;
}

void collect_spans(BranchParams& bp, std::vector<std::span<double>>& out) {
  out.emplace_back(bp.l1.w);
  out.emplace_back(bp.l1.b);
  out.emplace_back(bp.l2.w);
  out.emplace_back(bp.l2.b);
  out.emplace_back(bp.l3.w);
  out.emplace_back(bp.l3.b);
}

}  // namespace

const char* to_string(ModelVariant v) {
  return v == ModelVariant::Decoupled ? "decoupled" : "direct_iou";
}

DirModelParams init_params(int input_dim, int h1, int h2, ModelVariant variant,
                           std::uint64_t seed) {
  if (input_dim < 1 || h1 < 1 || h2 < 1)
    throw std::invalid_argument("init_params: layer sizes must be >= 1");
  DirModelParams p;
  p.variant = variant;
  p.input_dim = input_dim;
  p.h1 = h1;
  p.h2 = h2;
  p.seed = seed;
  Rng rng(derive_seed(seed, 3));
  p.purity_branch = make_branch(input_dim, h1, h2);
  init_layer(p.purity_branch.l1, rng);
  init_layer(p.purity_branch.l2, rng);
  init_layer(p.purity_branch.l3, rng);
  if (variant == ModelVariant::Decoupled) {
    p.integrity_branch = make_branch(input_dim, h1, h2);
    init_layer(p.integrity_branch.l1, rng);
    init_layer(p.integrity_branch.l2, rng);
    init_layer(p.integrity_branch.l3, rng);
  }
  return p;
}

std::vector<std::span<double>> param_spans(DirModelParams& p) {
  std::vector<std::span<double>> out;
  collect_spans(p.purity_branch, out);
  if (p.variant == ModelVariant::Decoupled) collect_spans(p.integrity_branch, out);
  return out;
}

std::vector<std::span<const double>> param_spans(const DirModelParams& p) {
  auto mutable_spans = param_spans(const_cast<DirModelParams&>(p));
  return {mutable_spans.begin(), mutable_spans.end()};
}

std::size_t param_count(const DirModelParams& p) {
  std::size_t n = 0;
  for (const auto s : param_spans(p)) n += s.size();
  return n;
}

ForwardResult forward(const DirModelParams& params, std::span<const double> features) {
  if (static_cast<int>(features.size()) != params.input_dim)
    throw std::invalid_argument("forward: feature dimension does not match the model");
  ForwardResult r;
  r.s = branch_forward(params.purity_branch, features, r.purity);
  r.t = params.variant == ModelVariant::Decoupled
            ? branch_forward(params.integrity_branch, features, r.integrity)
            : 1.0;
  return r;
}

Prediction predict_confidence(const DirModelParams& params, std::span<const double> features) {
  const ForwardResult r = forward(params, features);
  Prediction p;
  p.s = r.s;
  p.t = r.t;
  p.c = params.variant == ModelVariant::Decoupled ? combine_iou(r.s, r.t) : r.s;
  return p;
}

double bce(double pred, double target) {
  const double p = std::clamp(pred, kClampEps, 1.0 - kClampEps);
  return -(target * std::log(p) + (1.0 - target) * std::log1p(-p));
}

DirLoss dir_loss(const DirModelParams& params, std::span<const Sample> batch, FeatureMode mode) {
  if (batch.empty()) throw std::invalid_argument("dir_loss: empty batch");
  DirLoss loss;
  for (const Sample& s : batch) {
    const ForwardResult r = forward(params, s.features(mode));
    if (params.variant == ModelVariant::Decoupled) {
      loss.purity += bce(r.s, s.purity_star);
      loss.integrity += bce(r.t, s.integrity_star);
      loss.iou += bce(combine_iou(r.s, r.t), s.iou_star);
    } else {
      loss.iou += bce(r.s, s.iou_star);
    }
  }
  const double n = static_cast<double>(batch.size());
  loss.purity /= n;
  loss.integrity /= n;
  loss.iou /= n;
  loss.total = loss.purity + loss.integrity + loss.iou;
  return loss;
}

BackwardResult backward_with_loss(const DirModelParams& params, std::span<const Sample> batch,
                                  FeatureMode mode) {
  if (batch.empty()) throw std::invalid_argument("backward: empty batch");
  BackwardResult out{zero_like(params), {}};
  const double inv_n = 1.0 / static_cast<double>(batch.size());
  for (const Sample& s : batch) {
    const std::span<const double> x = s.features(mode);
    const ForwardResult r = forward(params, x);
    if (params.variant == ModelVariant::Decoupled) {
      const double c = combine_iou(r.s, r.t);
      out.loss.purity += bce(r.s, s.purity_star);
      out.loss.integrity += bce(r.t, s.integrity_star);
      out.loss.iou += bce(c, s.iou_star);
      const double d_loss_dc = bce_grad(c, s.iou_star);
      const double denom = r.s + r.t - r.s * r.t;
      const double dc_ds = (r.t * r.t) / (denom * denom);
      const double dc_dt = (r.s * r.s) / (denom * denom);
      const double gz_p =
          (bce_grad(r.s, s.purity_star) + d_loss_dc * dc_ds) * r.s * (1.0 - r.s) * inv_n;
      const double gz_i =
          (bce_grad(r.t, s.integrity_star) + d_loss_dc * dc_dt) * r.t * (1.0 - r.t) * inv_n;
      branch_backward(params.purity_branch, r.purity, x, gz_p, out.grads.purity_branch);
      branch_backward(params.integrity_branch, r.integrity, x, gz_i, out.grads.integrity_branch);
    } else {
      out.loss.iou += bce(r.s, s.iou_star);
      const double gz = bce_grad(r.s, s.iou_star) * r.s * (1.0 - r.s) * inv_n;
      branch_backward(params.purity_branch, r.purity, x, gz, out.grads.purity_branch);
    }
  }
  const double n = static_cast<double>(batch.size());
  out.loss.purity /= n;
  out.loss.integrity /= n;
  out.loss.iou /= n;
  out.loss.total = out.loss.purity + out.loss.integrity + out.loss.iou;
  return out;
}

Gradients backward(const DirModelParams& params, std::span<const Sample> batch, FeatureMode mode) {
  return backward_with_loss(params, batch, mode).grads;
}

double OptimizerState::effective_lr(int epoch) const {
  double lr = learning_rate * lr_multiplier;
  for (const int de : decay_epochs)
    if (epoch >= de) lr *= decay_factor;
  if (warmup_steps > 0 && step < warmup_steps)
    lr *= warmup_ratio + (1.0 - warmup_ratio) * static_cast<double>(step + 1) / warmup_steps;
  return lr;
}

OptimizerState make_optimizer(const DirModelParams& params, double learning_rate) {
  OptimizerState opt;
  opt.velocity = zero_like(params);
  opt.learning_rate = learning_rate;
  return opt;
}

void sgd_step(DirModelParams& params, const Gradients& grads, OptimizerState& opt, int epoch) {
  const double lr = opt.effective_lr(epoch);
  auto ws = param_spans(params);
  auto gs = param_spans(grads);
  auto vs = param_spans(opt.velocity);
  if (ws.size() != gs.size() || ws.size() != vs.size())
    throw std::invalid_argument("sgd_step: mismatched parameter shapes");
  for (std::size_t b = 0; b < ws.size(); ++b) {
    if (ws[b].size() != gs[b].size() || ws[b].size() != vs[b].size())
      throw std::invalid_argument("sgd_step: mismatched parameter shapes");
    for (std::size_t i = 0; i < ws[b].size(); ++i) {
      vs[b][i] = opt.momentum * vs[b][i] - lr * (gs[b][i] + opt.weight_decay * ws[b][i]);
      ws[b][i] += vs[b][i];
    }
  }
  ++opt.step;
}

void TrainConfig::validate() const {
  if (epochs < 0) throw std::invalid_argument("train: epochs must be >= 0");
  if (batch_size < 1) throw std::invalid_argument("train: batch_size must be >= 1");
  if (!(lr > 0.0)) throw std::invalid_argument("train: lr must be positive");
  if (momentum < 0.0 || momentum >= 1.0)
    throw std::invalid_argument("train: momentum must be in [0, 1)");
  if (weight_decay < 0.0) throw std::invalid_argument("train: weight_decay must be >= 0");
  if (!(decay_factor > 0.0) || decay_factor > 1.0)
    throw std::invalid_argument("train: decay_factor must be in (0, 1]");
  if (!(lr_multiplier > 0.0)) throw std::invalid_argument("train: lr_multiplier must be positive");
  if (warmup_steps < 0) throw std::invalid_argument("train: warmup_steps must be >= 0");
  if (warmup_ratio < 0.0 || warmup_ratio > 1.0)
    throw std::invalid_argument("train: warmup_ratio must be in [0, 1]");
}

TrainResult train(const WorldConfig& world, const ModelConfig& model, const TrainConfig& tc) {
  world.validate();
  tc.validate();
  if (model.h1 < 1 || model.h2 < 1)
    throw std::invalid_argument("train: hidden sizes must be >= 1");

  TrainResult result;
  result.params = init_params(world.feature_dim(), model.h1, model.h2, model.variant, model.seed);
  OptimizerState opt = make_optimizer(result.params, tc.lr);
  opt.momentum = tc.momentum;
  opt.weight_decay = tc.weight_decay;
  opt.decay_epochs = tc.decay_epochs;
  opt.decay_factor = tc.decay_factor;
  opt.lr_multiplier = tc.lr_multiplier;
  opt.warmup_steps = tc.warmup_steps;
  opt.warmup_ratio = tc.warmup_ratio;

  for (int epoch = 0; epoch < tc.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    const std::vector<Sample> dataset = build_dataset(world, epoch);
    std::vector<Sample> positives = select_positives(dataset);
    if (positives.empty())
      throw std::runtime_error("train: no positive samples at epoch " + std::to_string(epoch));

    Rng shuffle_rng(derive_seed(model.seed, 100 + static_cast<std::uint64_t>(epoch)));
    for (std::size_t i = positives.size(); i > 1; --i) {
      const std::size_t j = static_cast<std::size_t>(shuffle_rng.uniform_int(0, static_cast<int>(i) - 1));
      std::swap(positives[i - 1], positives[j]);
    }

    EpochStats stats;
    stats.epoch = epoch;
    stats.samples = static_cast<int>(positives.size());
    double grad_norm_sum = 0.0;
    int batches = 0;
    const std::span<const Sample> all(positives);
    for (std::size_t start = 0; start < positives.size(); start += tc.batch_size) {
      const std::size_t len = std::min<std::size_t>(tc.batch_size, positives.size() - start);
      const auto batch = all.subspan(start, len);
      BackwardResult bw = backward_with_loss(result.params, batch, tc.feature_mode);
      double sq = 0.0;
      for (const auto s : param_spans(bw.grads))
        for (const double g : s) sq += g * g;
      grad_norm_sum += std::sqrt(sq);
      ++batches;
      const double w = static_cast<double>(len) / positives.size();
      stats.loss_purity += bw.loss.purity * w;
      stats.loss_integrity += bw.loss.integrity * w;
      stats.loss_iou += bw.loss.iou * w;
      stats.loss_total += bw.loss.total * w;
      sgd_step(result.params, bw.grads, opt, epoch);
    }
    stats.grad_norm = batches > 0 ? grad_norm_sum / batches : 0.0;
    stats.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    result.report.epochs.push_back(stats);
  }
  result.params.trained_epochs = tc.epochs;
  return result;
}

namespace {

void append_le_double(std::string& out, double v) {
  const std::uint64_t bits = std::bit_cast<std::uint64_t>(v);
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xff));
}

double read_le_double(const unsigned char* p) {
  std::uint64_t bits = 0;
  for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(p[i]) << (8 * i);
  return std::bit_cast<double>(bits);
}

}  // namespace

std::string serialize_checkpoint(const DirModelParams& params) {
  std::string out = "DIRCKPT1\n";
  std::ostringstream head;
  head << "variant=" << to_string(params.variant) << " input_dim=" << params.input_dim
       << " h1=" << params.h1 << " h2=" << params.h2 << " seed=" << params.seed
       << " epochs=" << params.trained_epochs << " count=" << param_count(params) << "\n";
  out += head.str();
  for (const auto s : param_spans(params))
    for (const double v : s) append_le_double(out, v);
  return out;
}

DirModelParams parse_checkpoint(const std::string& data) {
  const std::size_t magic_end = data.find('\n');
  if (magic_end == std::string::npos || data.substr(0, magic_end) != "DIRCKPT1")
    throw std::runtime_error("checkpoint: bad magic");
  const std::size_t head_end = data.find('\n', magic_end + 1);
  if (head_end == std::string::npos) throw std::runtime_error("checkpoint: missing header");

  DirModelParams p;
  std::size_t count = 0;
  bool have_variant = false;
  {
    std::istringstream head(data.substr(magic_end + 1, head_end - magic_end - 1));
    std::string tok;
    while (head >> tok) {
      const std::size_t eq = tok.find('=');
      if (eq == std::string::npos) throw std::runtime_error("checkpoint: malformed header");
      const std::string key = tok.substr(0, eq);
      const std::string val = tok.substr(eq + 1);
      if (key == "variant") {
        if (val == "decoupled") p.variant = ModelVariant::Decoupled;
        else if (val == "direct_iou") p.variant = ModelVariant::DirectIoU;
        else throw std::runtime_error("checkpoint: unknown variant '" + val + "'");
        have_variant = true;
      } else if (key == "input_dim") p.input_dim = std::stoi(val);
      else if (key == "h1") p.h1 = std::stoi(val);
      else if (key == "h2") p.h2 = std::stoi(val);
      else if (key == "seed") p.seed = std::stoull(val);
      else if (key == "epochs") p.trained_epochs = std::stoi(val);
      else if (key == "count") count = std::stoull(val);
      else throw std::runtime_error("checkpoint: unknown header key '" + key + "'");
    }
  }
  if (!have_variant || p.input_dim < 1 || p.h1 < 1 || p.h2 < 1)
    throw std::runtime_error("checkpoint: incomplete header");

  p.purity_branch = make_branch(p.input_dim, p.h1, p.h2);
  if (p.variant == ModelVariant::Decoupled)
    p.integrity_branch = make_branch(p.input_dim, p.h1, p.h2);
  if (count != param_count(p)) throw std::runtime_error("checkpoint: parameter count mismatch");

  const std::size_t payload = data.size() - head_end - 1;
  if (payload != count * 8) throw std::runtime_error("checkpoint: truncated parameter payload");
  const unsigned char* cursor =
      reinterpret_cast<const unsigned char*>(data.data()) + head_end + 1;
  for (std::span<double> s : param_spans(p)) {
    for (double& v : s) {
      v = read_le_double(cursor);
      cursor += 8;
    }
  }
  return p;
}

void save_checkpoint(const std::string& path, const DirModelParams& params) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("checkpoint: cannot open '" + path + "' for writing");
  const std::string data = serialize_checkpoint(params);
  os.write(data.data(), static_cast<std::streamsize>(data.size()));
  if (!os) throw std::runtime_error("checkpoint: write to '" + path + "' failed");
}

DirModelParams load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("checkpoint: cannot open '" + path + "'");
  std::ostringstream buf;
  buf << is.rdbuf();
  return parse_checkpoint(buf.str());
}

}  // namespace dir
