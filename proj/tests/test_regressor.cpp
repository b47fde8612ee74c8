#include <cmath>
#include <stdexcept>
#include <vector>

#include "dir/regressor.hpp"
#include "doctest.h"

using namespace dir;

namespace {

Sample feature_sample(std::vector<double> features, double p_star, double i_star, double iou_star) {
  Sample s;
  s.features_foresight = features;
  s.features_hindsight = std::move(features);
  s.purity_star = p_star;
  s.integrity_star = i_star;
  s.iou_star = iou_star;
  s.is_positive = true;
  return s;
}

void fill_params(DirModelParams& p, double value) {
  for (std::span<double> s : param_spans(p))
    for (double& v : s) v = value;
}

// micro network with every weight 1 and every bias 0
DirModelParams unit_net(ModelVariant variant) {
  DirModelParams p = init_params(1, 1, 1, variant, 0);
  fill_params(p, 0.0);
  p.purity_branch.l1.w[0] = 1.0;
  p.purity_branch.l2.w[0] = 1.0;
  p.purity_branch.l3.w[0] = 1.0;
  if (variant == ModelVariant::Decoupled) {
    p.integrity_branch.l1.w[0] = 1.0;
    p.integrity_branch.l2.w[0] = 1.0;
    p.integrity_branch.l3.w[0] = 1.0;
  }
  return p;
}

}  // namespace

TEST_CASE("init_params is deterministic, bounded and zero-biased") {
  const DirModelParams a = init_params(10, 6, 4, ModelVariant::Decoupled, 7);
  const DirModelParams b = init_params(10, 6, 4, ModelVariant::Decoupled, 7);
  const DirModelParams c = init_params(10, 6, 4, ModelVariant::Decoupled, 8);
  CHECK(a.purity_branch.l1.w == b.purity_branch.l1.w);
  CHECK(a.integrity_branch.l3.w == b.integrity_branch.l3.w);
  CHECK(a.purity_branch.l1.w != c.purity_branch.l1.w);
  CHECK(a.num_branches() == 2);

  const double bound1 = 1.0 / std::sqrt(10.0);
  for (const double w : a.purity_branch.l1.w) CHECK(std::fabs(w) <= bound1);
  for (const double v : a.purity_branch.l1.b) CHECK(v == 0.0);
  for (const double v : a.purity_branch.l3.b) CHECK(v == 0.0);

  const DirModelParams d = init_params(10, 6, 4, ModelVariant::DirectIoU, 7);
  CHECK(d.num_branches() == 1);
  CHECK(d.integrity_branch.l1.w.empty());
  CHECK(param_count(d) * 2 == param_count(a));
  CHECK_THROWS_AS(init_params(0, 6, 4, ModelVariant::Decoupled, 7), std::invalid_argument);
}

TEST_CASE("forward on the unit micro network") {
  const DirModelParams p = unit_net(ModelVariant::Decoupled);
  const std::vector<double> x = {0.0};
  const ForwardResult r = forward(p, x);
  CHECK(r.s == 0.5);
  CHECK(r.t == 0.5);
  const Prediction pred = predict_confidence(p, x);
  CHECK(pred.c == doctest::Approx(1.0 / 3.0).epsilon(1e-15));

  const std::vector<double> x2 = {2.0};
  const ForwardResult r2 = forward(p, x2);
  CHECK(r2.s == doctest::Approx(1.0 / (1.0 + std::exp(-2.0))).epsilon(1e-15));

  // negative input dies at the first relu
  const std::vector<double> x3 = {-3.0};
  CHECK(forward(p, x3).s == 0.5);

  const DirModelParams direct = unit_net(ModelVariant::DirectIoU);
  const ForwardResult rd = forward(direct, x2);
  CHECK(rd.t == 1.0);
  CHECK(predict_confidence(direct, x2).c == rd.s);

  CHECK_THROWS_AS(forward(p, std::vector<double>{1.0, 2.0}), std::invalid_argument);
}

TEST_CASE("bce hand values and clamping") {
  CHECK(bce(0.5, 0.5) == doctest::Approx(std::log(2.0)).epsilon(1e-15));
  CHECK(bce(0.5, 1.0) == doctest::Approx(std::log(2.0)).epsilon(1e-15));
  CHECK(std::isfinite(bce(0.0, 1.0)));
  CHECK(std::isfinite(bce(1.0, 0.0)));
  CHECK(bce(0.9, 0.9) < bce(0.5, 0.9));
}

TEST_CASE("dir_loss on the unit micro network") {
  const DirModelParams p = unit_net(ModelVariant::Decoupled);
  const std::vector<Sample> batch = {feature_sample({0.0}, 0.5, 0.5, 0.5)};
  const DirLoss loss = dir_loss(p, batch, FeatureMode::Hindsight);
  CHECK(loss.purity == doctest::Approx(std::log(2.0)).epsilon(1e-12));
  CHECK(loss.integrity == doctest::Approx(std::log(2.0)).epsilon(1e-12));
  const double c = 1.0 / 3.0;
  const double expected_iou = -(0.5 * std::log(c) + 0.5 * std::log1p(-c));
  CHECK(loss.iou == doctest::Approx(expected_iou).epsilon(1e-12));
  CHECK(loss.total == doctest::Approx(2.0 * std::log(2.0) + expected_iou).epsilon(1e-12));

  const DirModelParams direct = unit_net(ModelVariant::DirectIoU);
  const DirLoss dl = dir_loss(direct, batch, FeatureMode::Hindsight);
  CHECK(dl.purity == 0.0);
  CHECK(dl.integrity == 0.0);
  CHECK(dl.total == doctest::Approx(std::log(2.0)).epsilon(1e-12));

  CHECK_THROWS_AS(dir_loss(p, std::vector<Sample>{}, FeatureMode::Hindsight),
                  std::invalid_argument);
}

TEST_CASE("backward matches central finite differences") {
  Rng rng(321);
  for (const ModelVariant variant : {ModelVariant::Decoupled, ModelVariant::DirectIoU}) {
    DirModelParams params = init_params(4, 3, 3, variant, 11);
    // positive weights on positive inputs keep every relu comfortably away
    // from its kink, so the finite differences stay clean
    for (std::span<double> s : param_spans(params))
      for (double& v : s) v = rng.uniform(0.1, 0.6);
    // except one firmly dead hidden unit, which exercises the relu mask
    for (int i = 0; i < 4; ++i) params.purity_branch.l1.w[i] = -5.0;
    params.purity_branch.l1.b[0] = -1.0;

    std::vector<Sample> batch;
    for (int i = 0; i < 3; ++i) {
      std::vector<double> f;
      for (int d = 0; d < 4; ++d) f.push_back(rng.uniform(0.1, 1.0));
      batch.push_back(feature_sample(std::move(f), rng.uniform(0.1, 0.9),
                                     rng.uniform(0.1, 0.9), rng.uniform(0.1, 0.9)));
    }

    const BackwardResult bw = backward_with_loss(params, batch, FeatureMode::Hindsight);
    CHECK(bw.loss.total == doctest::Approx(dir_loss(params, batch, FeatureMode::Hindsight).total)
                               .epsilon(1e-12));

    const double h = 1e-5;
    auto spans = param_spans(params);
    const auto grad_spans = param_spans(bw.grads);
    double max_err = 0.0;
    for (std::size_t b = 0; b < spans.size(); ++b) {
      for (std::size_t i = 0; i < spans[b].size(); ++i) {
        const double orig = spans[b][i];
        spans[b][i] = orig + h;
        const double f1 = dir_loss(params, batch, FeatureMode::Hindsight).total;
        spans[b][i] = orig - h;
        const double f2 = dir_loss(params, batch, FeatureMode::Hindsight).total;
        spans[b][i] = orig;
        const double numeric = (f1 - f2) / (2.0 * h);
        const double analytic = grad_spans[b][i];
        const double err =
            std::fabs(analytic - numeric) / (std::fabs(analytic) + std::fabs(numeric) + 1e-6);
        max_err = std::max(max_err, err);
      }
    }
    CHECK(max_err < 1e-4);
  }
}

TEST_CASE("sgd_step hand-computed momentum updates") {
  DirModelParams p = init_params(1, 1, 1, ModelVariant::DirectIoU, 0);
  fill_params(p, 1.0);
  Gradients g = p;
  fill_params(g, 0.0);
  g.purity_branch.l1.w[0] = 1.0;

  OptimizerState opt = make_optimizer(p, 0.05);
  opt.weight_decay = 0.0;
  sgd_step(p, g, opt, 0);
  CHECK(p.purity_branch.l1.w[0] == doctest::Approx(0.95).epsilon(1e-15));
  CHECK(p.purity_branch.l2.w[0] == 1.0);  // zero grad, zero decay
  sgd_step(p, g, opt, 0);
  CHECK(p.purity_branch.l1.w[0] == doctest::Approx(0.855).epsilon(1e-15));
  CHECK(opt.step == 2);
}

TEST_CASE("sgd_step applies weight decay") {
  DirModelParams p = init_params(1, 1, 1, ModelVariant::DirectIoU, 0);
  fill_params(p, 1.0);
  Gradients g = p;
  fill_params(g, 0.0);
  OptimizerState opt = make_optimizer(p, 0.05);
  opt.weight_decay = 1e-4;
  sgd_step(p, g, opt, 0);
  CHECK(p.purity_branch.l1.w[0] == doctest::Approx(1.0 - 0.05 * 1e-4).epsilon(1e-15));
}

TEST_CASE("effective_lr follows the decay schedule and warmup") {
  DirModelParams p = init_params(1, 1, 1, ModelVariant::DirectIoU, 0);
  OptimizerState opt = make_optimizer(p, 0.05);
  CHECK(opt.effective_lr(0) == 0.05);
  CHECK(opt.effective_lr(7) == 0.05);
  CHECK(opt.effective_lr(8) == doctest::Approx(0.005).epsilon(1e-15));
  CHECK(opt.effective_lr(10) == doctest::Approx(0.005).epsilon(1e-15));
  CHECK(opt.effective_lr(11) == doctest::Approx(0.0005).epsilon(1e-15));

  opt.lr_multiplier = 3.0;
  CHECK(opt.effective_lr(0) == doctest::Approx(0.15).epsilon(1e-15));

  opt.lr_multiplier = 1.0;
  opt.warmup_steps = 10;
  opt.warmup_ratio = 0.5;
  opt.step = 0;
  CHECK(opt.effective_lr(0) == doctest::Approx(0.05 * (0.5 + 0.5 * 0.1)).epsilon(1e-15));
  opt.step = 9;
  CHECK(opt.effective_lr(0) == doctest::Approx(0.05).epsilon(1e-15));
  opt.step = 100;
  CHECK(opt.effective_lr(0) == 0.05);
}

TEST_CASE("train runs end to end on a tiny world") {
  WorldConfig world;
  world.num_scenes = 25;
  world.inner_grid = 4;
  world.context_grid = 4;
  world.proposals_per_object = 2;
  ModelConfig model;
  model.h1 = 8;
  model.h2 = 8;
  TrainConfig tc;
  tc.epochs = 2;
  tc.batch_size = 64;

  const TrainResult r = train(world, model, tc);
  CHECK(r.params.trained_epochs == 2);
  CHECK(r.params.input_dim == world.feature_dim());
  REQUIRE(r.report.epochs.size() == 2);
  for (const EpochStats& e : r.report.epochs) {
    CHECK(std::isfinite(e.loss_total));
    CHECK(e.loss_total > 0.0);
    CHECK(e.samples > 0);
    CHECK(e.grad_norm > 0.0);
  }
  // the same configuration trains to identical parameters
  const TrainResult r2 = train(world, model, tc);
  CHECK(r.params.purity_branch.l1.w == r2.params.purity_branch.l1.w);
  CHECK(r.params.integrity_branch.l3.w == r2.params.integrity_branch.l3.w);
}

TEST_CASE("train reduces the loss on the tiny world") {
  WorldConfig world;
  world.num_scenes = 40;
  world.inner_grid = 4;
  world.context_grid = 4;
  ModelConfig model;
  model.h1 = 16;
  model.h2 = 16;
  TrainConfig tc;
  tc.epochs = 6;
  const TrainResult r = train(world, model, tc);
  CHECK(r.report.epochs.back().loss_total < r.report.epochs.front().loss_total);
}

TEST_CASE("train throws when no positives exist") {
  WorldConfig world;
  world.num_scenes = 1;
  world.objects_max = 1;
  world.proposals_per_object = 1;
  world.jitter_scale = 0.8;
  world.positive_iou_threshold = 0.999;
  world.inner_grid = 2;
  world.context_grid = 2;
  TrainConfig tc;
  tc.epochs = 1;
  CHECK_THROWS_AS(train(world, ModelConfig{}, tc), std::runtime_error);
}

TEST_CASE("checkpoints round-trip bitwise") {
  DirModelParams p = init_params(6, 4, 3, ModelVariant::Decoupled, 77);
  p.trained_epochs = 9;
  const std::string data = serialize_checkpoint(p);
  const DirModelParams q = parse_checkpoint(data);
  CHECK(q.variant == p.variant);
  CHECK(q.input_dim == 6);
  CHECK(q.h1 == 4);
  CHECK(q.h2 == 3);
  CHECK(q.seed == 77);
  CHECK(q.trained_epochs == 9);
  const auto ps = param_spans(static_cast<const DirModelParams&>(p));
  const auto qs = param_spans(static_cast<const DirModelParams&>(q));
  REQUIRE(ps.size() == qs.size());
  for (std::size_t b = 0; b < ps.size(); ++b) {
    REQUIRE(ps[b].size() == qs[b].size());
    for (std::size_t i = 0; i < ps[b].size(); ++i) CHECK(ps[b][i] == qs[b][i]);
  }

  const DirModelParams d = init_params(5, 2, 2, ModelVariant::DirectIoU, 3);
  const DirModelParams d2 = parse_checkpoint(serialize_checkpoint(d));
  CHECK(d2.variant == ModelVariant::DirectIoU);
  CHECK(d2.integrity_branch.l1.w.empty());
}

TEST_CASE("checkpoint parser rejects malformed data") {
  const DirModelParams p = init_params(3, 2, 2, ModelVariant::Decoupled, 1);
  const std::string good = serialize_checkpoint(p);
  CHECK_THROWS_AS(parse_checkpoint("garbage"), std::runtime_error);

  std::string bad_magic = good;
  bad_magic[0] = 'X';
  CHECK_THROWS_AS(parse_checkpoint(bad_magic), std::runtime_error);

  std::string truncated = good;
  truncated.resize(truncated.size() - 8);
  CHECK_THROWS_AS(parse_checkpoint(truncated), std::runtime_error);
}

TEST_CASE("checkpoint files save and load") {
  const DirModelParams p = init_params(4, 3, 2, ModelVariant::Decoupled, 5);
  const std::string path = "unit_checkpoint_roundtrip.ckpt";
  save_checkpoint(path, p);
  const DirModelParams q = load_checkpoint(path);
  CHECK(q.input_dim == 4);
  CHECK(q.purity_branch.l1.w == p.purity_branch.l1.w);
  CHECK_THROWS_AS(load_checkpoint("no_such_file.ckpt"), std::runtime_error);
}
