#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "grnr/metrics.hpp"
#include "grnr/model.hpp"
#include "grnr/training.hpp"

namespace grnr::config {

// Effective configuration of a run. Every field has a flat dotted key
// (train.lr, encoder.dim, ...) used by config files, --set overrides and the
// echo embedded in outputs.
struct RunConfig {
  std::string profile = "desk";
  std::uint64_t seed = 0;
  model::ModelConfig model;
  training::TrainConfig train;
  metrics::EvalConfig eval;

  // Full-scale settings with a 224x224 encoder resolution and a frozen trunk.
  static RunConfig paper();
  // Small model and schedule that run on a laptop CPU.
  static RunConfig desk();
  static RunConfig for_profile(const std::string& name);

  // Unknown keys and unparsable values are ConfigErrors.
  void set(const std::string& key, const std::string& value);
  // Ordered (key, value) pairs covering every field.
  std::vector<std::pair<std::string, std::string>> entries() const;
  void validate() const;
};

using KeyValues = std::vector<std::pair<std::string, std::string>>;

// "key = value" lines; '#' starts a comment; blank lines ignored.
KeyValues parse_config_text(const std::string& text, const std::string& origin = "<config>");
KeyValues parse_config_file(const std::filesystem::path& path);
// "section.key=value"
std::pair<std::string, std::string> parse_override(const std::string& arg);

// Builds the effective config: the profile (from `profile_override`, else a
// "profile" key in the file, else desk), then file keys, then overrides.
RunConfig resolve(const std::string& profile_override, const KeyValues& file_values,
                  const KeyValues& overrides);

// Shortest decimal text that parses back to the same double.
std::string format_double(double v);

// 64-bit FNV-1a, hex encoded; used for run ids and cache keys.
std::string stable_hash(const std::string& text);

}  // namespace grnr::config
