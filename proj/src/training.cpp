#include "grnr/training.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <tuple>

#include "grnr/errors.hpp"

namespace grnr::training {

using geometry::Polygon;
using geometry::Vertex;
using metrics::ExistenceLabel;

TrainConfig TrainConfig::paper() { return TrainConfig{}; }

TrainConfig TrainConfig::desk() {
  TrainConfig c;
  c.epochs = 500;
  c.batch_size = 32;
  c.lr = 3e-3;
  c.warmup_epochs = 5;
  c.decay_epoch = 375;
  return c;
}

void TrainConfig::validate() const {
  if (epochs < 1) throw ConfigError("train.epochs must be >= 1");
  if (batch_size < 1) throw ConfigError("train.batch_size must be >= 1");
  if (!(lr > 0.0)) throw ConfigError("train.lr must be > 0");
  if (warmup_epochs < 0 || !(warmup_epochs < decay_epoch && decay_epoch < epochs)) {
    throw ConfigError("train schedule needs warmup_epochs < decay_epoch < epochs (got " +
                      std::to_string(warmup_epochs) + ", " + std::to_string(decay_epoch) + ", " +
                      std::to_string(epochs) + ")");
  }
  if (!(lambda_pt > 0.0)) throw ConfigError("train.lambda_pt must be > 0");
  if (val_every < 1) throw ConfigError("train.val_every must be >= 1");
  if (!(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0)) {
    throw ConfigError("optimizer betas must lie in [0,1)");
  }
  if (weight_decay < 0.0) throw ConfigError("train.weight_decay must be >= 0");
}

TargetTensor polygon_targets(std::span<const Polygon> gt_polys, const model::ModelConfig& cfg,
                             std::vector<std::string>* warnings) {
  struct Entry {
    Vertex centroid;
    Polygon resampled;
  };
  std::vector<Entry> entries;
  entries.reserve(gt_polys.size());
  for (const auto& p : gt_polys) {
    const Polygon canon = geometry::normalize_polygon(p);
    entries.push_back({geometry::polygon_centroid(canon), geometry::resample_polygon(canon, cfg.n_v)});
  }
  std::sort(entries.begin(), entries.end(), [](const Entry& a, const Entry& b) {
    if (a.centroid.x != b.centroid.x) return a.centroid.x < b.centroid.x;
    if (a.centroid.y != b.centroid.y) return a.centroid.y < b.centroid.y;
    return geometry::to_flat(a.resampled) < geometry::to_flat(b.resampled);
  });

  TargetTensor t;
  t.existence = metrics::existence_from_count(gt_polys.size());
  t.vertex_targets.assign(static_cast<std::size_t>(cfg.n_pt()), Vertex{});
  t.slot_valid.assign(static_cast<std::size_t>(cfg.p_max), false);
  const std::size_t used = std::min(entries.size(), static_cast<std::size_t>(cfg.p_max));
  for (std::size_t s = 0; s < used; ++s) {
    t.slot_valid[s] = true;
    for (int i = 0; i < cfg.n_v; ++i) {
      t.vertex_targets[s * static_cast<std::size_t>(cfg.n_v) + static_cast<std::size_t>(i)] =
          entries[s].resampled.vertices[static_cast<std::size_t>(i)];
    }
  }
  t.dropped = entries.size() - used;
  if (t.dropped > 0 && warnings != nullptr) {
    warnings->push_back("dropped " + std::to_string(t.dropped) + " polygon(s) beyond p_max=" +
                        std::to_string(cfg.p_max));
  }
  return t;
}

LossBreakdown loss(const model::Prediction& pred, const TargetTensor& target, double lambda_pt,
                   LossGradient* grad, const nn::Vec* logits) {
  if (pred.vertices.size() != target.vertex_targets.size()) {
    throw ShapeError("loss: prediction has " + std::to_string(pred.vertices.size()) +
                     " vertices, target " + std::to_string(target.vertex_targets.size()));
  }
  const auto y = static_cast<std::size_t>(target.existence);
  LossBreakdown out;
  if (logits != nullptr) {
    const double m = logits->maxCoeff();
    const double lse = m + std::log((logits->array() - m).exp().sum());
    out.ce = lse - (*logits)[static_cast<Eigen::Index>(y)];
  } else {
    out.ce = -std::log(std::max(pred.existence[y], 1e-300));
  }

  const std::size_t n_slots = target.slot_valid.size();
  const std::size_t n_v = n_slots > 0 ? pred.vertices.size() / n_slots : 0;
  if (grad != nullptr) {
    grad->dlogits = nn::Vec::Zero(3);
    for (std::size_t k = 0; k < 3; ++k) grad->dlogits[static_cast<Eigen::Index>(k)] = pred.existence[k];
    grad->dlogits[static_cast<Eigen::Index>(y)] -= 1.0;
    grad->dvertices = nn::Vec::Zero(static_cast<Eigen::Index>(2 * pred.vertices.size()));
  }
  auto sign = [](double r) { return r > 0.0 ? 1.0 : (r < 0.0 ? -1.0 : 0.0); };
  if (metrics::is_positive(target.existence)) {
    for (std::size_t s = 0; s < n_slots; ++s) {
      if (!target.slot_valid[s]) continue;
      for (std::size_t i = s * n_v; i < (s + 1) * n_v; ++i) {
        const double rx = pred.vertices[i].x - target.vertex_targets[i].x;
        const double ry = pred.vertices[i].y - target.vertex_targets[i].y;
        out.point += std::abs(rx) + std::abs(ry);
        if (grad != nullptr) {
          grad->dvertices[static_cast<Eigen::Index>(2 * i)] = lambda_pt * sign(rx);
          grad->dvertices[static_cast<Eigen::Index>(2 * i + 1)] = lambda_pt * sign(ry);
        }
      }
    }
  }
  out.total = out.ce + lambda_pt * out.point;
  return out;
}

double lr_at(int epoch, const TrainConfig& cfg) {
  if (epoch < 0 || epoch >= cfg.epochs) {
    throw InvalidInput("epoch " + std::to_string(epoch) + " outside [0, " +
                       std::to_string(cfg.epochs) + ")");
  }
  if (epoch < cfg.warmup_epochs) {
    return cfg.lr * static_cast<double>(epoch + 1) / static_cast<double>(cfg.warmup_epochs);
  }
  if (epoch < cfg.decay_epoch) return cfg.lr;
  return cfg.lr * cfg.decay_factor;
}

AdamW::AdamW(double beta1, double beta2, double eps, double weight_decay)
    : beta1_(beta1), beta2_(beta2), eps_(eps), weight_decay_(weight_decay) {}

void AdamW::step(model::GennavModel& model, double lr) {
  ++t_;
  const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  std::size_t idx = 0;
  model.visit(nn::ParamVisitor([&](nn::Param& p) {
    if (idx >= m_.size()) {
      m_.push_back(nn::Mat::Zero(p.value.rows(), p.value.cols()));
      v_.push_back(nn::Mat::Zero(p.value.rows(), p.value.cols()));
    }
    nn::Mat& m = m_[idx];
    nn::Mat& v = v_[idx];
    ++idx;
    if (p.frozen) return;
    m = beta1_ * m + (1.0 - beta1_) * p.grad;
    v = beta2_ * v + (1.0 - beta2_) * p.grad.cwiseProduct(p.grad);
    const nn::Mat update =
        (m.array() / bc1) / ((v.array() / bc2).sqrt() + eps_);
    p.value.array() -= lr * (update.array() + weight_decay_ * p.value.array());
  }));
}

std::size_t select_checkpoint(std::span<const HistoryEntry> history) {
  if (history.empty()) throw InvalidInput("select_checkpoint on an empty history");
  std::size_t best = 0;
  for (std::size_t i = 1; i < history.size(); ++i) {
    if (history[i].val_msiou > history[best].val_msiou) best = i;
  }
  return best;
}

namespace {

struct CachedExample {
  model::GennavModel::PreparedInput input;
  std::optional<model::GennavModel::TrunkFeatures> frozen_features;
  TargetTensor target;
};

std::vector<CachedExample> cache_examples(const model::GennavModel& model,
                                          std::span<const TrainingExample> examples,
                                          const std::function<void(const std::string&)>& warn = {}) {
  std::vector<CachedExample> out;
  out.reserve(examples.size());
  for (const auto& ex : examples) {
    CachedExample c;
    c.input = model.prepare(ex.image, ex.instruction);
    if (!model.trunk_trainable()) c.frozen_features = model.run_trunks(c.input, false);
    std::vector<std::string> warnings;
    c.target = polygon_targets(ex.polygons, model.config(), &warnings);
    if (warn) {
      for (const auto& w : warnings) warn(ex.id + ": " + w);
    }
    out.push_back(std::move(c));
  }
  return out;
}

metrics::MetricReport evaluate_cached(const model::GennavModel& model,
                                      std::span<const TrainingExample> examples,
                                      const std::vector<CachedExample>& cached,
                                      const metrics::EvalConfig& eval) {
  std::vector<metrics::GroundTruthItem> gt;
  std::vector<metrics::PredictionItem> preds;
  for (std::size_t i = 0; i < examples.size(); ++i) {
    const auto& c = cached[i];
    const auto feats = c.frozen_features ? *c.frozen_features : model.run_trunks(c.input, false);
    const auto pred = model.forward_features(c.input, feats, nullptr);
    const auto decoded = model::decode_prediction(pred, model.config());
    gt.push_back({examples[i].id, examples[i].polygons,
                  metrics::existence_from_count(examples[i].polygons.size())});
    preds.push_back({examples[i].id, decoded.existence, decoded.polygons, std::nullopt});
  }
  return metrics::evaluate(gt, preds, eval);
}

}  // namespace

metrics::MetricReport evaluate_model(const model::GennavModel& model,
                                     std::span<const TrainingExample> examples,
                                     const metrics::EvalConfig& eval) {
  return evaluate_cached(model, examples, cache_examples(model, examples), eval);
}

TrainResult train(model::GennavModel model, std::span<const TrainingExample> train_set,
                  std::span<const TrainingExample> val_set, const TrainConfig& cfg,
                  const TrainOptions& options) {
  cfg.validate();
  if (train_set.empty()) throw InvalidInput("training split is empty");
  if (val_set.empty()) throw InvalidInput("validation split is empty");

  const auto train_cache = cache_examples(model, train_set, options.on_warning);
  const auto val_cache = cache_examples(model, val_set);

  AdamW opt(cfg.beta1, cfg.beta2, cfg.adam_eps, cfg.weight_decay);
  std::mt19937_64 rng(cfg.seed);
  std::vector<std::size_t> order(train_set.size());
  std::iota(order.begin(), order.end(), 0);

  TrainResult result;
  double best_msiou = -1.0;
  int global_step = 0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double lr = lr_at(epoch, cfg);
    const std::size_t epoch_first_log = result.log.size();
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t start = 0; start < order.size();
         start += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
      const double inv_b = 1.0 / static_cast<double>(end - start);
      model.zero_grad();
      LossBreakdown batch;
      for (std::size_t k = start; k < end; ++k) {
        const auto& c = train_cache[order[k]];
        const auto feats = c.frozen_features ? *c.frozen_features : model.run_trunks(c.input, true);
        model::GennavModel::Trace trace;
        const auto pred = model.forward_features(c.input, feats, &trace);
        LossGradient g;
        const auto l = loss(pred, c.target, cfg.lambda_pt, &g, &trace.logits);
        batch.ce += l.ce * inv_b;
        batch.point += l.point * inv_b;
        batch.total += l.total * inv_b;
        model.backward(trace, feats, g.dlogits * inv_b, g.dvertices * inv_b);
      }
      if (options.loss_hook) options.loss_hook(epoch, global_step, batch);
      if (!std::isfinite(batch.total)) {
        throw DivergenceError(epoch, global_step,
                              "non-finite training loss at epoch " + std::to_string(epoch) +
                                  ", step " + std::to_string(global_step));
      }
      opt.step(model, lr);
      StepLog entry{epoch, global_step, batch.ce, batch.point, batch.total, lr, std::nullopt};
      result.log.push_back(entry);
      ++global_step;
    }

    const bool validate_now = (epoch + 1) % cfg.val_every == 0 || epoch + 1 == cfg.epochs;
    if (validate_now) {
      const auto report = evaluate_cached(model, val_set, val_cache, options.eval);
      result.log.back().val_msiou = report.msiou;
      result.history.push_back({epoch, report.msiou});
      if (report.msiou > best_msiou) {
        best_msiou = report.msiou;
        result.best_model = model;
        result.best_epoch = epoch;
      }
    }
    if (options.on_log) {
      for (std::size_t i = epoch_first_log; i < result.log.size(); ++i) options.on_log(result.log[i]);
    }
  }
  const auto best = select_checkpoint(result.history);
  result.best_epoch = result.history[best].epoch;
  return result;
}

}  // namespace grnr::training
