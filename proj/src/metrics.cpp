#include "grnr/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "grnr/errors.hpp"

namespace grnr::metrics {

std::string_view to_short_string(ExistenceLabel label) {
  switch (label) {
    case ExistenceLabel::NoTarget:
      return "no";
    case ExistenceLabel::SingleTarget:
      return "single";
    case ExistenceLabel::MultiTarget:
      return "multi";
  }
  return "no";
}

ExistenceLabel parse_existence(std::string_view s) {
  if (s == "no" || s == "no_target") return ExistenceLabel::NoTarget;
  if (s == "single" || s == "single_target") return ExistenceLabel::SingleTarget;
  if (s == "multi" || s == "multi_target") return ExistenceLabel::MultiTarget;
  throw InvalidInput("unknown existence label '" + std::string(s) + "'");
}

bool is_positive(ExistenceLabel label) { return label != ExistenceLabel::NoTarget; }

ExistenceLabel existence_from_count(std::size_t n_polygons) {
  if (n_polygons == 0) return ExistenceLabel::NoTarget;
  if (n_polygons == 1) return ExistenceLabel::SingleTarget;
  return ExistenceLabel::MultiTarget;
}

std::string_view to_string(Outcome o) {
  switch (o) {
    case Outcome::TP:
      return "TP";
    case Outcome::TN:
      return "TN";
    case Outcome::FP:
      return "FP";
    case Outcome::FN:
      return "FN";
  }
  return "TN";
}

Outcome existence_outcome(ExistenceLabel gt, ExistenceLabel pred) {
  const bool g = is_positive(gt);
  const bool p = is_positive(pred);
  if (g && p) return Outcome::TP;
  if (!g && !p) return Outcome::TN;
  return g ? Outcome::FN : Outcome::FP;
}

SampleEval make_sample_eval(std::string id, ExistenceLabel gt, ExistenceLabel pred,
                            double tp_iou) {
  SampleEval s;
  s.sample_id = std::move(id);
  s.gt_positive = is_positive(gt);
  s.pred_positive = is_positive(pred);
  s.outcome = existence_outcome(gt, pred);
  switch (s.outcome) {
    case Outcome::TP:
      s.iou = std::clamp(tp_iou, 0.0, 1.0);
      break;
    case Outcome::TN:
      s.iou = 1.0;
      break;
    case Outcome::FP:
    case Outcome::FN:
      s.iou = 0.0;
      break;
  }
  return s;
}

double sample_iou(std::span<const geometry::Polygon> gt_polys,
                  std::span<const geometry::Polygon> pred_polys, int width, int height) {
  const auto gt = geometry::rasterize(gt_polys, width, height);
  const auto pred = geometry::rasterize(pred_polys, width, height);
  return geometry::mask_iou(gt, pred);
}

double siou_at_k(Outcome outcome, double iou, int k) {
  switch (outcome) {
    case Outcome::TP:
      return std::min(static_cast<double>(k) * iou, 1.0);
    case Outcome::TN:
      return 1.0;
    case Outcome::FP:
    case Outcome::FN:
      return 0.0;
  }
  return 0.0;
}

int k_max_for(double K) {
  if (!(K > 0.0) || K > 1.0) {
    throw InvalidInput("msIoU threshold K must lie in (0, 1], got " + std::to_string(K));
  }
  // Guard against 1/K landing a hair below an integer.
  const int k = static_cast<int>(std::floor(1.0 / K + 1e-9));
  return std::max(k, 1);
}

double msiou(std::span<const SampleEval> samples, double K) {
  if (samples.empty()) throw UndefinedMetric("msIoU of an empty sample list");
  const int k_max = k_max_for(K);
  const double n = static_cast<double>(samples.size());
  double total = 0.0;
  for (int k = 1; k <= k_max; ++k) {
    double sum = 0.0;
    for (const auto& s : samples) sum += siou_at_k(s.outcome, s.iou, k);
    total += sum / n;
  }
  return total / static_cast<double>(k_max);
}

double precision_at_k(std::span<const SampleEval> samples, double K) {
  if (samples.empty()) throw UndefinedMetric("P@K of an empty sample list");
  if (!(K > 0.0 && K < 1.0)) {
    throw InvalidInput("P@K threshold must lie in (0, 1), got " + std::to_string(K));
  }
  std::size_t hits = 0;
  for (const auto& s : samples) {
    if (s.iou > K) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(samples.size());
}

Confusion confusion(std::span<const SampleEval> samples) {
  Confusion c;
  for (const auto& s : samples) {
    switch (s.outcome) {
      case Outcome::TP:
        ++c.tp;
        break;
      case Outcome::TN:
        ++c.tn;
        break;
      case Outcome::FP:
        ++c.fp;
        break;
      case Outcome::FN:
        ++c.fn;
        break;
    }
  }
  return c;
}

double accuracy(const Confusion& c) {
  if (c.total() == 0) throw UndefinedMetric("accuracy of an empty confusion matrix");
  return static_cast<double>(c.tp + c.tn) / static_cast<double>(c.total());
}

double accuracy(std::span<const SampleEval> samples) {
  if (samples.empty()) throw UndefinedMetric("accuracy of an empty sample list");
  return accuracy(confusion(samples));
}

MetricReport evaluate(std::span<const GroundTruthItem> gt,
                      std::span<const PredictionItem> preds, const EvalConfig& config) {
  if (gt.empty()) throw UndefinedMetric("evaluation over an empty split");

  std::map<std::string, const PredictionItem*> by_id;
  std::set<std::string> duplicates;
  for (const auto& p : preds) {
    if (!by_id.emplace(p.id, &p).second) duplicates.insert(p.id);
  }
  std::set<std::string> gt_ids;
  std::vector<std::string> missing;
  for (const auto& g : gt) {
    if (!gt_ids.insert(g.id).second) duplicates.insert(g.id);
    if (!by_id.contains(g.id)) missing.push_back(g.id);
  }
  std::vector<std::string> unknown;
  for (const auto& [id, _] : by_id) {
    if (!gt_ids.contains(id)) unknown.push_back(id);
  }
  if (!missing.empty() || !duplicates.empty() || !unknown.empty()) {
    std::string msg = "prediction/ground-truth id mismatch;";
    auto append = [&msg](const char* label, const auto& ids) {
      if (ids.empty()) return;
      msg += std::string(" ") + label + ":";
      for (const auto& id : ids) msg += " " + id;
      msg += ";";
    };
    append("missing", missing);
    append("duplicate", duplicates);
    append("unknown", unknown);
    throw InputMismatch(msg);
  }

  MetricReport report;
  report.config = config;
  report.msiou_K = config.msiou_K;
  report.per_sample.reserve(gt.size());
  for (const auto& g : gt) {
    const PredictionItem& p = *by_id.at(g.id);
    double iou = 0.0;
    if (is_positive(g.existence) && is_positive(p.existence)) {
      iou = sample_iou(g.polygons, p.polygons, config.raster_width, config.raster_height);
    }
    report.per_sample.push_back(make_sample_eval(g.id, g.existence, p.existence, iou));
  }
  std::sort(report.per_sample.begin(), report.per_sample.end(),
            [](const SampleEval& a, const SampleEval& b) { return a.sample_id < b.sample_id; });

  report.n = report.per_sample.size();
  report.msiou = msiou(report.per_sample, config.msiou_K);
  for (double K : config.p_at_k) report.p_at_k[K] = precision_at_k(report.per_sample, K);
  report.confusion = confusion(report.per_sample);
  report.accuracy = accuracy(report.confusion);
  return report;
}

}  // namespace grnr::metrics
