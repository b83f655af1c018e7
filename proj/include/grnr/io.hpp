#pragma once

#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "grnr/config.hpp"
#include "grnr/metrics.hpp"
#include "grnr/model.hpp"
#include "grnr/training.hpp"

namespace grnr::io {

inline constexpr int kCheckpointFormat = 1;

struct Checkpoint {
  config::RunConfig config;
  model::GennavModel model;
  std::vector<training::HistoryEntry> history;
  int best_epoch = -1;
};

// JSON document: format_version, config echo, vocabulary, patch layout,
// named parameter tensors and the validation history.
std::string serialize_checkpoint(const Checkpoint& ckpt);
void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
// Rebuilds the model from the echoed config and checks every tensor's name
// and shape. Throws SchemaError on any disagreement.
Checkpoint load_checkpoint(const std::filesystem::path& path);

// One JSON record per line: {id, existence, polygons, probabilities?}.
std::string prediction_record(const metrics::PredictionItem& p);
void save_predictions(std::span<const metrics::PredictionItem> preds, const std::filesystem::path& path);
// Also accepts a manifest, whose samples are read as predictions.
std::vector<metrics::PredictionItem> load_predictions(const std::filesystem::path& path);

// Report document with every MetricReport field, the conventions in force
// and, when given, the full run config.
std::string report_json(const metrics::MetricReport& r, const config::RunConfig* run = nullptr);
// Plain-text table: msIoU, P@K columns, Acc.
std::string report_table(const metrics::MetricReport& r);

// Layout cache: {"key": ..., "layout": {...}}. Returns nullopt when the
// file is missing or was written for another key.
std::optional<model::PatchLayout> load_layout_cache(const std::filesystem::path& path,
                                                    const std::string& key);
void save_layout_cache(const std::filesystem::path& path, const std::string& key,
                       const model::PatchLayout& layout);

}  // namespace grnr::io
