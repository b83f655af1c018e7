#pragma once

#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "grnr/geometry.hpp"

namespace grnr::metrics {

enum class ExistenceLabel { NoTarget = 0, SingleTarget = 1, MultiTarget = 2 };

// "no" | "single" | "multi", the spelling used in prediction files.
std::string_view to_short_string(ExistenceLabel label);
ExistenceLabel parse_existence(std::string_view s);
bool is_positive(ExistenceLabel label);
ExistenceLabel existence_from_count(std::size_t n_polygons);

enum class Outcome { TP, TN, FP, FN };
std::string_view to_string(Outcome o);

Outcome existence_outcome(ExistenceLabel gt, ExistenceLabel pred);

struct SampleEval {
  std::string sample_id;
  bool gt_positive = false;
  bool pred_positive = false;
  Outcome outcome = Outcome::TN;
  double iou = 1.0;
};

// Builds a SampleEval that satisfies the outcome/iou invariants: TN carries
// 1.0, FP and FN carry 0.0, TP carries the given mask IoU.
SampleEval make_sample_eval(std::string id, ExistenceLabel gt, ExistenceLabel pred,
                            double tp_iou);

double sample_iou(std::span<const geometry::Polygon> gt_polys,
                  std::span<const geometry::Polygon> pred_polys, int width, int height);

double siou_at_k(Outcome outcome, double iou, int k);

// k ranges over 1..floor(1/K).
int k_max_for(double K);
double msiou(std::span<const SampleEval> samples, double K);
double precision_at_k(std::span<const SampleEval> samples, double K);
double accuracy(std::span<const SampleEval> samples);

struct Confusion {
  std::size_t tp = 0;
  std::size_t tn = 0;
  std::size_t fp = 0;
  std::size_t fn = 0;
  std::size_t total() const { return tp + tn + fp + fn; }
};
Confusion confusion(std::span<const SampleEval> samples);
double accuracy(const Confusion& c);

struct EvalConfig {
  double msiou_K = 0.1;
  std::vector<double> p_at_k = {0.1, 0.2};
  int raster_width = 640;
  int raster_height = 640;
};

struct GroundTruthItem {
  std::string id;
  std::vector<geometry::Polygon> polygons;
  ExistenceLabel existence = ExistenceLabel::NoTarget;
};

struct PredictionItem {
  std::string id;
  ExistenceLabel existence = ExistenceLabel::NoTarget;
  std::vector<geometry::Polygon> polygons;
  std::optional<std::vector<double>> probabilities;
};

struct MetricReport {
  double msiou = 0.0;
  double msiou_K = 0.1;
  std::map<double, double> p_at_k;
  double accuracy = 0.0;
  Confusion confusion;
  std::vector<SampleEval> per_sample;  // sorted by sample id
  std::size_t n = 0;
  EvalConfig config;
};

// Every ground-truth id must appear in preds exactly once; predictions for
// unknown ids are rejected as well.
MetricReport evaluate(std::span<const GroundTruthItem> gt,
                      std::span<const PredictionItem> preds, const EvalConfig& config);

// Convention strings embedded in every report.
inline constexpr std::string_view kNoTargetIouConvention =
    "empty-vs-empty mask IoU = 1.0 (TN); one-sided empty = 0.0 (FP/FN)";
inline constexpr std::string_view kPrecisionConvention =
    "P@K = fraction of samples with IoU > K (strict), TN samples count with IoU 1.0";

}  // namespace grnr::metrics
