#include <gtest/gtest.h>

#include <algorithm>
#include <random>

#include "grnr/errors.hpp"
#include "grnr/metrics.hpp"
#include "oracles/oracles.hpp"

using namespace grnr;
using namespace grnr::metrics;
using geometry::Polygon;
using geometry::Vertex;

namespace {

Polygon rect(double x0, double y0, double x1, double y1) {
  return Polygon({{x0, y0}, {x1, y0}, {x1, y1}, {x0, y1}});
}

SampleEval tp(double iou, std::string id = "s") {
  return make_sample_eval(std::move(id), ExistenceLabel::SingleTarget, ExistenceLabel::SingleTarget, iou);
}
SampleEval tn(std::string id = "s") {
  return make_sample_eval(std::move(id), ExistenceLabel::NoTarget, ExistenceLabel::NoTarget, 0.0);
}
SampleEval fn(std::string id = "s") {
  return make_sample_eval(std::move(id), ExistenceLabel::MultiTarget, ExistenceLabel::NoTarget, 0.0);
}
SampleEval fp(std::string id = "s") {
  return make_sample_eval(std::move(id), ExistenceLabel::NoTarget, ExistenceLabel::SingleTarget, 0.9);
}

std::vector<SampleEval> confusion_set(std::size_t tps, std::size_t tns, std::size_t fps, std::size_t fns) {
  std::vector<SampleEval> out;
  for (std::size_t i = 0; i < tps; ++i) out.push_back(tp(1.0));
  for (std::size_t i = 0; i < tns; ++i) out.push_back(tn());
  for (std::size_t i = 0; i < fps; ++i) out.push_back(fp());
  for (std::size_t i = 0; i < fns; ++i) out.push_back(fn());
  return out;
}

}  // namespace

TEST(Existence, Outcomes) {
  EXPECT_EQ(existence_outcome(ExistenceLabel::SingleTarget, ExistenceLabel::MultiTarget), Outcome::TP);
  EXPECT_EQ(existence_outcome(ExistenceLabel::NoTarget, ExistenceLabel::NoTarget), Outcome::TN);
  EXPECT_EQ(existence_outcome(ExistenceLabel::MultiTarget, ExistenceLabel::NoTarget), Outcome::FN);
  EXPECT_EQ(existence_outcome(ExistenceLabel::NoTarget, ExistenceLabel::SingleTarget), Outcome::FP);
}

TEST(Existence, ShortStrings) {
  for (auto l : {ExistenceLabel::NoTarget, ExistenceLabel::SingleTarget, ExistenceLabel::MultiTarget}) {
    EXPECT_EQ(parse_existence(to_short_string(l)), l);
  }
  EXPECT_THROW(parse_existence("maybe"), InvalidInput);
  EXPECT_EQ(existence_from_count(0), ExistenceLabel::NoTarget);
  EXPECT_EQ(existence_from_count(1), ExistenceLabel::SingleTarget);
  EXPECT_EQ(existence_from_count(3), ExistenceLabel::MultiTarget);
}

TEST(SampleEvalInvariants, IouFollowsOutcome) {
  EXPECT_EQ(tn().iou, 1.0);
  EXPECT_EQ(fn().iou, 0.0);
  EXPECT_EQ(fp().iou, 0.0);
  EXPECT_EQ(tp(0.3).iou, 0.3);
}

TEST(SampleIou, Examples) {
  const std::vector<Polygon> sq{rect(0.2, 0.2, 0.6, 0.6)};
  EXPECT_EQ(sample_iou(sq, sq, 64, 64), 1.0);
  EXPECT_EQ(sample_iou({}, {}, 64, 64), 1.0);

  const std::vector<Polygon> two{rect(0, 0, 0.5, 0.5), rect(0.5, 0.5, 1, 1)};
  const std::vector<Polygon> one{rect(0, 0, 0.5, 0.5)};
  const double want = oracle::raster_iou(two, one, 64, 64);
  EXPECT_DOUBLE_EQ(want, 0.5);
  EXPECT_DOUBLE_EQ(sample_iou(two, one, 64, 64), want);
}

TEST(SampleIou, RandomPolygonsAgreeWithRasterOracle) {
  std::mt19937_64 rng(8);
  for (int i = 0; i < 30; ++i) {
    const std::vector<Polygon> a{oracle::random_star_polygon(rng, 6), oracle::random_star_polygon(rng, 4)};
    const std::vector<Polygon> b{oracle::random_star_polygon(rng, 8)};
    EXPECT_DOUBLE_EQ(sample_iou(a, b, 48, 40), oracle::raster_iou(a, b, 48, 40));
  }
}

TEST(Siou, Examples) {
  EXPECT_EQ(siou_at_k(Outcome::TP, 0.25, 2), 0.5);
  EXPECT_EQ(siou_at_k(Outcome::TN, 0.0, 7), 1.0);
  EXPECT_EQ(siou_at_k(Outcome::FP, 0.9, 1), 0.0);
  EXPECT_EQ(siou_at_k(Outcome::FN, 0.9, 3), 0.0);
  EXPECT_EQ(siou_at_k(Outcome::TP, 0.6, 2), 1.0);
}

TEST(SiouProperty, MonotoneAndAtLeastIou) {
  for (int k = 1; k <= 10; ++k) {
    double prev = -1.0;
    for (int i = 0; i <= 100; ++i) {
      const double iou = i / 100.0;
      const double v = siou_at_k(Outcome::TP, iou, k);
      EXPECT_GE(v, prev);
      EXPECT_GE(v, iou);
      EXPECT_GE(siou_at_k(Outcome::TP, iou, k + 1), v);
      prev = v;
    }
  }
}

TEST(Msiou, Examples) {
  const std::vector<SampleEval> perfect{tp(1.0)};
  EXPECT_EQ(msiou(perfect, 0.1), 1.0);
  const std::vector<SampleEval> low{tp(0.05)};
  EXPECT_DOUBLE_EQ(msiou(low, 0.5), 0.075);
  EXPECT_THROW(msiou(std::vector<SampleEval>{}, 0.1), UndefinedMetric);
  EXPECT_THROW(msiou(perfect, 0.0), InvalidInput);
  EXPECT_THROW(msiou(perfect, 1.5), InvalidInput);
}

TEST(Msiou, AlwaysNoTargetOnTestSplit) {
  const auto s = confusion_set(0, 256, 0, 502);
  for (double K : {0.1, 0.2, 0.3, 0.5, 1.0}) EXPECT_NEAR(msiou(s, K), 256.0 / 758.0, 1e-12);
}

TEST(Msiou, KRange) {
  EXPECT_EQ(k_max_for(0.1), 10);
  EXPECT_EQ(k_max_for(0.2), 5);
  EXPECT_EQ(k_max_for(0.3), 3);
  EXPECT_EQ(k_max_for(1.0), 1);
  EXPECT_EQ(k_max_for(0.7), 1);
}

TEST(MsiouProperty, EqualsAccuracyWhenPositivesArePerfect) {
  std::mt19937_64 rng(1);
  for (int t = 0; t < 20; ++t) {
    const auto s = confusion_set(rng() % 20, rng() % 20, rng() % 20, 1 + rng() % 20);
    EXPECT_NEAR(msiou(s, 0.1), accuracy(s), 1e-12);
    EXPECT_GE(msiou(s, 0.2), 0.0);
    EXPECT_LE(msiou(s, 0.2), 1.0);
  }
}

TEST(MsiouProperty, KOneIsMeanOfSiouAtOne) {
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<SampleEval> s;
  for (int i = 0; i < 50; ++i) {
    switch (rng() % 4) {
      case 0: s.push_back(tp(u(rng))); break;
      case 1: s.push_back(tn()); break;
      case 2: s.push_back(fp()); break;
      default: s.push_back(fn());
    }
  }
  double mean = 0.0;
  for (const auto& e : s) mean += oracle::siou(e.outcome, e.iou, 1);
  EXPECT_NEAR(msiou(s, 1.0), mean / s.size(), 1e-12);
}

TEST(MsiouProperty, OnlyPositivesReducesToClampedMean) {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<SampleEval> s;
  for (int i = 0; i < 40; ++i) s.push_back(tp(u(rng)));
  double want = 0.0;
  for (int k = 1; k <= 5; ++k) {
    double m = 0.0;
    for (const auto& e : s) m += std::min(k * e.iou, 1.0);
    want += m / s.size();
  }
  EXPECT_NEAR(msiou(s, 0.2), want / 5.0, 1e-12);
}

TEST(PrecisionAtK, Examples) {
  const std::vector<SampleEval> s{tp(0.05), tp(0.15), tn(), fn()};
  EXPECT_EQ(precision_at_k(s, 0.1), 0.5);
  EXPECT_EQ(precision_at_k(confusion_set(0, 5, 0, 0), 0.9), 1.0);
  EXPECT_EQ(precision_at_k(confusion_set(0, 0, 5, 0), 0.1), 0.0);
  const std::vector<SampleEval> edge{tp(0.1)};
  EXPECT_EQ(precision_at_k(edge, 0.1), 0.0);  // strict comparison
  EXPECT_THROW(precision_at_k(std::vector<SampleEval>{}, 0.1), UndefinedMetric);
}

TEST(PrecisionAtKProperty, NonIncreasingInK) {
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<SampleEval> s;
  for (int i = 0; i < 100; ++i) s.push_back(rng() % 3 ? tp(u(rng)) : tn());
  double prev = 2.0;
  for (int i = 1; i < 100; ++i) {
    const double p = precision_at_k(s, i / 100.0);
    EXPECT_LE(p, prev);
    prev = p;
  }
}

TEST(Accuracy, Examples) {
  const auto s = confusion_set(359, 175, 81, 143);
  EXPECT_NEAR(accuracy(s), 534.0 / 758.0, 1e-12);
  const auto c = confusion(s);
  EXPECT_EQ(c.tp, 359u);
  EXPECT_EQ(c.tn, 175u);
  EXPECT_EQ(c.fp, 81u);
  EXPECT_EQ(c.fn, 143u);
  EXPECT_EQ(accuracy(confusion_set(4, 0, 0, 0)), 1.0);
  EXPECT_EQ(accuracy(confusion_set(0, 0, 0, 4)), 0.0);
  EXPECT_THROW(accuracy(std::vector<SampleEval>{}), UndefinedMetric);
}

namespace {

struct Split {
  std::vector<GroundTruthItem> gt;
  std::vector<PredictionItem> perfect;
  std::vector<PredictionItem> always_no;
};

Split make_split(std::size_t positives, std::size_t negatives) {
  Split s;
  for (std::size_t i = 0; i < positives + negatives; ++i) {
    const std::string id = "id" + std::to_string(i);
    if (i < positives) {
      std::vector<Polygon> polys{rect(0.1, 0.1, 0.4, 0.5)};
      s.gt.push_back({id, polys, ExistenceLabel::SingleTarget});
      s.perfect.push_back({id, ExistenceLabel::SingleTarget, polys, std::nullopt});
    } else {
      s.gt.push_back({id, {}, ExistenceLabel::NoTarget});
      s.perfect.push_back({id, ExistenceLabel::NoTarget, {}, std::nullopt});
    }
    s.always_no.push_back({id, ExistenceLabel::NoTarget, {}, std::nullopt});
  }
  return s;
}

}  // namespace

TEST(Evaluate, PerfectPredictions) {
  const auto s = make_split(6, 4);
  EvalConfig cfg;
  cfg.raster_width = cfg.raster_height = 32;
  const auto r = evaluate(s.gt, s.perfect, cfg);
  EXPECT_EQ(r.msiou, 1.0);
  EXPECT_EQ(r.accuracy, 1.0);
  for (const auto& [k, v] : r.p_at_k) EXPECT_EQ(v, 1.0) << k;
  EXPECT_EQ(r.n, 10u);
  EXPECT_EQ(r.confusion.total(), r.n);
}

TEST(Evaluate, AlwaysNoTarget) {
  const auto s = make_split(502, 256);
  EvalConfig cfg;
  cfg.raster_width = cfg.raster_height = 8;
  const auto r = evaluate(s.gt, s.always_no, cfg);
  EXPECT_NEAR(r.accuracy, 256.0 / 758.0, 1e-12);
  EXPECT_NEAR(r.msiou, 256.0 / 758.0, 1e-12);
}

TEST(Evaluate, IdMismatches) {
  const auto s = make_split(2, 2);
  EvalConfig cfg;
  auto missing = s.perfect;
  missing.pop_back();
  EXPECT_THROW(evaluate(s.gt, missing, cfg), InputMismatch);
  auto dup = s.perfect;
  dup.back().id = dup.front().id;
  EXPECT_THROW(evaluate(s.gt, dup, cfg), InputMismatch);
  auto swapped = s.perfect;
  swapped[0].id = "other";
  try {
    evaluate(s.gt, swapped, cfg);
    FAIL() << "expected InputMismatch";
  } catch (const InputMismatch& e) {
    EXPECT_NE(std::string(e.what()).find("id0"), std::string::npos);
  }
}

TEST(EvaluateProperty, OrderInvariant) {
  auto s = make_split(8, 5);
  s.perfect[1].polygons = {rect(0.2, 0.1, 0.5, 0.6)};
  s.perfect[9].existence = ExistenceLabel::MultiTarget;
  s.perfect[9].polygons = {rect(0, 0, 0.2, 0.2)};
  EvalConfig cfg;
  cfg.raster_width = cfg.raster_height = 24;
  const auto base = evaluate(s.gt, s.perfect, cfg);
  std::mt19937_64 rng(6);
  for (int t = 0; t < 5; ++t) {
    std::shuffle(s.gt.begin(), s.gt.end(), rng);
    std::shuffle(s.perfect.begin(), s.perfect.end(), rng);
    const auto r = evaluate(s.gt, s.perfect, cfg);
    EXPECT_EQ(r.msiou, base.msiou);
    EXPECT_EQ(r.accuracy, base.accuracy);
    EXPECT_EQ(r.p_at_k, base.p_at_k);
    ASSERT_EQ(r.per_sample.size(), base.per_sample.size());
    for (std::size_t i = 0; i < r.per_sample.size(); ++i) {
      EXPECT_EQ(r.per_sample[i].sample_id, base.per_sample[i].sample_id);
      EXPECT_EQ(r.per_sample[i].iou, base.per_sample[i].iou);
    }
  }
}
