#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <random>
#include <utility>

#include "grnr/errors.hpp"
#include "grnr/training.hpp"
#include "oracles/gradcheck.hpp"

using namespace grnr;
using namespace grnr::training;
using geometry::Polygon;
using geometry::Vertex;

namespace {

Polygon square(double x, double y, double s) { return Polygon({{x, y}, {x + s, y}, {x + s, y + s}, {x, y + s}}); }

model::ModelConfig slot_config() {
  model::ModelConfig c;
  c.n_v = 6;
  c.p_max = 2;
  return c;
}

model::Prediction prediction_for(const TargetTensor& t, std::array<double, 3> existence, double offset = 0.0) {
  model::Prediction p;
  p.existence = existence;
  for (const auto& v : t.vertex_targets) p.vertices.push_back({v.x + offset, v.y + offset});
  return p;
}

}  // namespace

TEST(PolygonTargets, Examples) {
  const auto cfg = slot_config();
  const auto none = polygon_targets({}, cfg);
  EXPECT_EQ(none.existence, metrics::ExistenceLabel::NoTarget);
  EXPECT_EQ(none.slot_valid, (std::vector<bool>{false, false}));
  EXPECT_EQ(none.vertex_targets.size(), 12u);

  const std::vector<Polygon> one{square(0.2, 0.2, 0.3)};
  const auto single = polygon_targets(one, cfg);
  EXPECT_EQ(single.existence, metrics::ExistenceLabel::SingleTarget);
  EXPECT_EQ(single.slot_valid, (std::vector<bool>{true, false}));
  const auto resampled = geometry::resample_polygon(geometry::normalize_polygon(one[0]), 6);
  for (int i = 0; i < 6; ++i) EXPECT_EQ(single.vertex_targets[i], resampled.vertices[i]);

  const std::vector<Polygon> two{square(0.6, 0.1, 0.2), square(0.1, 0.5, 0.2)};
  const auto multi = polygon_targets(two, cfg);
  EXPECT_EQ(multi.existence, metrics::ExistenceLabel::MultiTarget);
  EXPECT_NEAR(geometry::polygon_centroid(Polygon({multi.vertex_targets.begin(), multi.vertex_targets.begin() + 6})).x,
              0.2, 1e-12);
}

TEST(PolygonTargets, DropsBeyondCapacityWithWarning) {
  const std::vector<Polygon> three{square(0.1, 0.1, 0.1), square(0.4, 0.1, 0.1), square(0.7, 0.1, 0.1)};
  std::vector<std::string> warnings;
  const auto t = polygon_targets(three, slot_config(), &warnings);
  EXPECT_EQ(t.dropped, 1u);
  ASSERT_EQ(warnings.size(), 1u);
  EXPECT_NE(warnings[0].find("p_max"), std::string::npos);
}

TEST(PolygonTargetsProperty, PermutationInvariant) {
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(0.0, 0.7);
  for (int t = 0; t < 30; ++t) {
    std::vector<Polygon> polys;
    for (int i = 0; i < 3; ++i) polys.push_back(square(u(rng), u(rng), 0.1 + 0.2 * u(rng)));
    const auto base = polygon_targets(polys, slot_config());
    std::shuffle(polys.begin(), polys.end(), rng);
    for (auto& p : polys) std::rotate(p.vertices.begin(), p.vertices.begin() + 1, p.vertices.end());
    const auto again = polygon_targets(polys, slot_config());
    EXPECT_EQ(again.vertex_targets, base.vertex_targets);
    EXPECT_EQ(again.slot_valid, base.slot_valid);
  }
}

TEST(Loss, NoTargetIsCrossEntropyOnly) {
  const auto t = polygon_targets({}, slot_config());
  auto a = prediction_for(t, {0.5, 0.3, 0.2});
  auto b = a;
  for (auto& v : b.vertices) v = Vertex(0.9, 0.1);
  const auto la = loss(a, t, 3.0);
  EXPECT_DOUBLE_EQ(la.ce, -std::log(0.5));
  EXPECT_EQ(la.point, 0.0);
  EXPECT_EQ(la.total, la.ce);
  EXPECT_EQ(loss(b, t, 3.0).total, la.total);
}

TEST(Loss, PerfectPredictionIsZero) {
  const std::vector<Polygon> one{square(0.2, 0.2, 0.3)};
  const auto t = polygon_targets(one, slot_config());
  EXPECT_EQ(loss(prediction_for(t, {0.0, 1.0, 0.0}), t, 3.0).total, 0.0);
}

TEST(Loss, OffsetVerticesContributeWeightedL1) {
  const std::vector<Polygon> one{square(0.2, 0.2, 0.3)};
  const auto t = polygon_targets(one, slot_config());
  const auto l = loss(prediction_for(t, {0.1, 0.8, 0.1}, 0.1), t, 3.0);
  EXPECT_NEAR(l.point, 1.2, 1e-12);
  EXPECT_NEAR(l.total - l.ce, 3.6, 1e-12);
  EXPECT_DOUBLE_EQ(l.ce, -std::log(0.8));
}

TEST(Loss, LogitsPathMatchesProbabilityPath) {
  const std::vector<Polygon> one{square(0.2, 0.2, 0.3)};
  const auto t = polygon_targets(one, slot_config());
  const nn::Vec logits = (nn::Vec(3) << 0.3, -1.2, 2.0).finished();
  const auto probs = nn::softmax(logits);
  const auto pred = prediction_for(t, {probs[0], probs[1], probs[2]}, 0.05);
  EXPECT_NEAR(loss(pred, t, 3.0, nullptr, &logits).total, loss(pred, t, 3.0).total, 1e-12);
}

TEST(LossProperty, LambdaScalesPointTermAndStaysNonNegative) {
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int trial = 0; trial < 50; ++trial) {
    const std::vector<Polygon> polys{square(0.6 * u(rng), 0.6 * u(rng), 0.3)};
    const auto t = polygon_targets(polys, slot_config());
    model::Prediction p;
    const double a = u(rng), b = u(rng);
    p.existence = {a / (a + b + 1), b / (a + b + 1), 1 / (a + b + 1)};
    for (int i = 0; i < 12; ++i) p.vertices.emplace_back(u(rng), u(rng));
    const auto l1 = loss(p, t, 1.0);
    const double s = 0.5 + 4 * u(rng);
    const auto ls = loss(p, t, s);
    EXPECT_NEAR(ls.total - ls.ce, s * (l1.total - l1.ce), 1e-12);
    EXPECT_GE(l1.total, 0.0);
    EXPECT_GE(l1.ce, 0.0);
  }
}

TEST(Loss, ShapeMismatch) {
  const auto t = polygon_targets({}, slot_config());
  model::Prediction p;
  p.vertices.resize(3);
  EXPECT_THROW(loss(p, t, 3.0), ShapeError);
}

TEST(GradientCheck, AnalyticMatchesCentralDifferences) {
  const auto cfg = oracle::gradcheck_config();
  int points = 0;
  for (std::uint64_t seed = 1; seed <= 40 && points < 3; ++seed) {
    model::GennavModel m(cfg, encoders::Vocabulary::build({"stop left of the red box", "park between the blue boxes"}),
                         model::fallback_band_layout(80, 45, 24, 16, 2), seed);
    const auto cases = oracle::gradcheck_cases(cfg, seed);
    const auto k = oracle::kink_scan(m, cases);
    if (k.min_residual < 1e-3 || k.min_head_relu < 1e-3) continue;
    const auto r = oracle::gradient_check(m, cases, 3.0, 1e-4, 3, seed);
    if (r.pattern_changes > 0) continue;
    ++points;
    EXPECT_LT(r.rel_error, 1e-4) << "seed " << seed;
    EXPECT_GT(r.analytic_norm, 0.0);
  }
  EXPECT_EQ(points, 3);
}

TEST(Schedule, WarmupPlateauDecay) {
  const auto cfg = TrainConfig::paper();
  EXPECT_DOUBLE_EQ(lr_at(0, cfg), 2e-5);
  EXPECT_EQ(lr_at(4, cfg), 1e-4);
  EXPECT_EQ(lr_at(40, cfg), 1e-4);
  EXPECT_EQ(lr_at(74, cfg), 1e-4);
  EXPECT_EQ(lr_at(75, cfg), 1e-5);
  EXPECT_EQ(lr_at(80, cfg), 1e-5);
  EXPECT_THROW(lr_at(100, cfg), InvalidInput);
  EXPECT_THROW(lr_at(-1, cfg), InvalidInput);
}

TEST(TrainConfig, Profiles) {
  const auto p = TrainConfig::paper();
  EXPECT_EQ(p.epochs, 100);
  EXPECT_EQ(p.batch_size, 384);
  EXPECT_EQ(p.lr, 1e-4);
  EXPECT_EQ(p.beta1, 0.9);
  EXPECT_EQ(p.beta2, 0.98);
  EXPECT_EQ(p.lambda_pt, 3.0);
  EXPECT_EQ(p.val_every, 3);
  EXPECT_NO_THROW(p.validate());
  EXPECT_NO_THROW(TrainConfig::desk().validate());
  auto bad = p;
  bad.warmup_epochs = 80;
  EXPECT_THROW(bad.validate(), ConfigError);
  bad = p;
  bad.lambda_pt = 0.0;
  EXPECT_THROW(bad.validate(), ConfigError);
}

TEST(SelectCheckpoint, EarliestMaximum) {
  const std::vector<HistoryEntry> ties{{2, 0.2}, {5, 0.5}, {8, 0.5}};
  EXPECT_EQ(select_checkpoint(ties), 1u);
  const std::vector<HistoryEntry> one{{2, 0.3}};
  EXPECT_EQ(select_checkpoint(one), 0u);
  const std::vector<HistoryEntry> rising{{2, 0.1}, {5, 0.2}, {8, 0.3}};
  EXPECT_EQ(select_checkpoint(rising), 2u);
  EXPECT_THROW(select_checkpoint(std::vector<HistoryEntry>{}), InvalidInput);
}

TEST(AdamW, FirstStepMovesBySignedLearningRate) {
  const auto cfg = oracle::gradcheck_config();
  model::GennavModel m(cfg, encoders::Vocabulary::build({"a b"}), model::fallback_band_layout(80, 45, 24, 16, 2), 3);
  std::map<std::string, nn::Mat> before;
  m.visit(nn::ParamVisitor([&](nn::Param& p) {
    before[p.name] = p.value;
    p.grad.setConstant(0.5);
  }));
  AdamW opt(0.9, 0.98, 1e-8, 0.0);
  opt.step(m, 1e-2);
  EXPECT_EQ(opt.steps(), 1);
  std::as_const(m).visit(nn::ConstParamVisitor([&](const nn::Param& p) {
    const nn::Mat delta = p.value - before.at(p.name);
    EXPECT_NEAR(delta.maxCoeff(), -1e-2 * 0.5 / (0.5 + 1e-8), 1e-15) << p.name;
    EXPECT_NEAR(delta.minCoeff(), -1e-2 * 0.5 / (0.5 + 1e-8), 1e-15) << p.name;
  }));
}

namespace {

std::vector<TrainingExample> toy_examples(std::uint64_t seed, int n) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<TrainingExample> out;
  const char* texts[] = {"stop left of the red box", "park right of the blue box", "stop near the green box"};
  for (int i = 0; i < n; ++i) {
    ImagePlane img(48, 27);
    for (auto& v : img.data) v = u(rng);
    std::vector<Polygon> polys;
    for (int k = 0; k < i % 3; ++k) polys.push_back(square(0.1 + 0.4 * k, 0.5, 0.2));
    out.push_back({"ex" + std::to_string(i), img, texts[i % 3], polys});
  }
  return out;
}

TrainConfig short_schedule() {
  TrainConfig c = TrainConfig::desk();
  c.epochs = 6;
  c.warmup_epochs = 1;
  c.decay_epoch = 4;
  c.val_every = 2;
  c.batch_size = 4;
  c.seed = 5;
  return c;
}

model::GennavModel toy_model() {
  return model::GennavModel(oracle::gradcheck_config(),
                            encoders::Vocabulary::build({"stop left of the red box", "park right of the blue box"}),
                            model::fallback_band_layout(80, 45, 24, 16, 2), 4);
}

}  // namespace

TEST(Train, SameSeedSameLossCurve) {
  const auto train_set = toy_examples(1, 8);
  const auto val_set = toy_examples(2, 3);
  TrainOptions opts;
  opts.eval.raster_width = opts.eval.raster_height = 32;
  const auto a = train(toy_model(), train_set, val_set, short_schedule(), opts);
  const auto b = train(toy_model(), train_set, val_set, short_schedule(), opts);
  ASSERT_EQ(a.log.size(), b.log.size());
  for (std::size_t i = 0; i < a.log.size(); ++i) {
    EXPECT_EQ(a.log[i].total, b.log[i].total);
    EXPECT_EQ(a.log[i].val_msiou, b.log[i].val_msiou);
  }
  // Validation every 2 epochs plus the final epoch: 1, 3, 5.
  ASSERT_EQ(a.history.size(), 3u);
  EXPECT_EQ(a.history.back().epoch, 5);
  EXPECT_EQ(a.history[select_checkpoint(a.history)].epoch, a.best_epoch);
}

TEST(Train, NonFiniteLossAbortsWithLocation) {
  const auto train_set = toy_examples(1, 8);
  const auto val_set = toy_examples(2, 2);
  TrainOptions opts;
  opts.loss_hook = [](int epoch, int step, LossBreakdown& l) {
    if (epoch == 2 && step == 5) l.total = std::numeric_limits<double>::quiet_NaN();
  };
  try {
    train(toy_model(), train_set, val_set, short_schedule(), opts);
    FAIL() << "expected DivergenceError";
  } catch (const DivergenceError& e) {
    EXPECT_EQ(e.epoch(), 2);
    EXPECT_EQ(e.step(), 5);  // global step: two batches per epoch
  }
}

TEST(Train, EmptySplitsRejected) {
  const auto set = toy_examples(1, 2);
  EXPECT_THROW(train(toy_model(), {}, set, short_schedule()), InvalidInput);
  EXPECT_THROW(train(toy_model(), set, {}, short_schedule()), InvalidInput);
}
