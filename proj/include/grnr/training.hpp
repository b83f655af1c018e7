#pragma once

#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "grnr/image.hpp"
#include "grnr/metrics.hpp"
#include "grnr/model.hpp"

namespace grnr::training {

struct TrainConfig {
  int epochs = 100;
  int batch_size = 384;
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.98;
  double adam_eps = 1e-8;
  double weight_decay = 0.0;
  double lambda_pt = 3.0;
  int warmup_epochs = 5;
  int decay_epoch = 75;
  double decay_factor = 0.1;
  int val_every = 3;
  std::uint64_t seed = 0;

  static TrainConfig paper();
  static TrainConfig desk();
  void validate() const;
};

struct TargetTensor {
  metrics::ExistenceLabel existence = metrics::ExistenceLabel::NoTarget;
  std::vector<geometry::Vertex> vertex_targets;  // n_pt, slot-major
  std::vector<bool> slot_valid;                  // p_max
  std::size_t dropped = 0;                       // polygons beyond p_max
};

// Normalizes and resamples every polygon to n_v vertices, then assigns slots
// in order of centroid x (ties: centroid y).
TargetTensor polygon_targets(std::span<const geometry::Polygon> gt_polys,
                             const model::ModelConfig& cfg,
                             std::vector<std::string>* warnings = nullptr);

struct LossBreakdown {
  double ce = 0.0;
  double point = 0.0;
  double total = 0.0;
};

struct LossGradient {
  nn::Vec dlogits;    // w.r.t. existence logits
  nn::Vec dvertices;  // w.r.t. vertex coordinates, 2*n_pt
};

// Cross-entropy on the existence distribution plus lambda_pt times the L1
// distance over vertices of valid slots. When logits are supplied the
// cross-entropy is taken through log-softmax.
LossBreakdown loss(const model::Prediction& pred, const TargetTensor& target, double lambda_pt,
                   LossGradient* grad = nullptr, const nn::Vec* logits = nullptr);

double lr_at(int epoch, const TrainConfig& cfg);

class AdamW {
 public:
  AdamW(double beta1, double beta2, double eps, double weight_decay);
  void step(model::GennavModel& model, double lr);
  long steps() const { return t_; }

 private:
  double beta1_;
  double beta2_;
  double eps_;
  double weight_decay_;
  long t_ = 0;
  std::vector<nn::Mat> m_;
  std::vector<nn::Mat> v_;
};

struct TrainingExample {
  std::string id;
  ImagePlane image;
  std::string instruction;
  std::vector<geometry::Polygon> polygons;
};

struct StepLog {
  int epoch = 0;
  int step = 0;
  double ce = 0.0;
  double point = 0.0;
  double total = 0.0;
  double lr = 0.0;
  std::optional<double> val_msiou;
};

struct HistoryEntry {
  int epoch = 0;
  double val_msiou = 0.0;
};

struct TrainOptions {
  metrics::EvalConfig eval;
  std::function<void(const StepLog&)> on_log;
  std::function<void(const std::string&)> on_warning;
  // Test hook: may rewrite the batch loss before the divergence guard.
  std::function<void(int epoch, int step, LossBreakdown&)> loss_hook;
};

struct TrainResult {
  model::GennavModel best_model;
  int best_epoch = -1;
  std::vector<HistoryEntry> history;
  std::vector<StepLog> log;
};

// Argmax over validation msIoU, earliest entry on ties.
std::size_t select_checkpoint(std::span<const HistoryEntry> history);

// Runs decode + evaluate for a model over labelled examples.
metrics::MetricReport evaluate_model(const model::GennavModel& model,
                                     std::span<const TrainingExample> examples,
                                     const metrics::EvalConfig& eval);

TrainResult train(model::GennavModel model, std::span<const TrainingExample> train_set,
                  std::span<const TrainingExample> val_set, const TrainConfig& cfg,
                  const TrainOptions& options = {});

}  // namespace grnr::training
