#include "grnr/io.hpp"

#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "grnr/errors.hpp"

namespace grnr::io {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

void write_file(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw RuntimeFailure("cannot write " + path.string());
  out << text;
  if (!out) throw RuntimeFailure("failed writing " + path.string());
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IntegrityError("cannot read " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

json layout_to_json(const model::PatchLayout& l) {
  json rects = json::array();
  for (const auto& r : l.rects) rects.push_back({r.x, r.y, r.w, r.h});
  return {{"image_w", l.image_w}, {"image_h", l.image_h}, {"rects", rects}};
}

model::PatchLayout layout_from_json(const json& j) {
  model::PatchLayout l;
  l.image_w = j.at("image_w").get<int>();
  l.image_h = j.at("image_h").get<int>();
  for (const auto& r : j.at("rects")) {
    l.rects.push_back({r.at(0).get<double>(), r.at(1).get<double>(), r.at(2).get<double>(),
                       r.at(3).get<double>()});
  }
  return l;
}

json config_to_json(const config::RunConfig& c) {
  json j = json::object();
  for (const auto& [k, v] : c.entries()) j[k] = v;
  return j;
}

config::RunConfig config_from_json(const json& j) {
  auto c = config::RunConfig::for_profile(j.at("profile").get<std::string>());
  for (const auto& [k, v] : j.items()) {
    if (k != "profile") c.set(k, v.get<std::string>());
  }
  c.train.seed = c.seed;
  return c;
}

std::string key_of(double k) { return config::format_double(k); }

}  // namespace

std::string serialize_checkpoint(const Checkpoint& ckpt) {
  json params = json::object();
  ckpt.model.visit(nn::ConstParamVisitor([&](const nn::Param& p) {
    std::vector<double> data;
    data.reserve(static_cast<std::size_t>(p.value.size()));
    for (Eigen::Index r = 0; r < p.value.rows(); ++r) {
      for (Eigen::Index c = 0; c < p.value.cols(); ++c) data.push_back(p.value(r, c));
    }
    if (params.contains(p.name)) throw RuntimeFailure("duplicate parameter name " + p.name);
    params[p.name] = {{"shape", {p.value.rows(), p.value.cols()}}, {"data", data}};
  }));
  json history = json::array();
  for (const auto& h : ckpt.history) history.push_back({{"epoch", h.epoch}, {"val_msiou", h.val_msiou}});
  const json doc = {{"format_version", kCheckpointFormat},
                    {"config", config_to_json(ckpt.config)},
                    {"vocabulary", ckpt.model.vocabulary().tokens()},
                    {"layout", layout_to_json(ckpt.model.layout())},
                    {"params", params},
                    {"history", history},
                    {"best_epoch", ckpt.best_epoch}};
  return doc.dump() + "\n";
}

void save_checkpoint(const Checkpoint& ckpt, const fs::path& path) {
  write_file(path, serialize_checkpoint(ckpt));
}

Checkpoint load_checkpoint(const fs::path& path) {
  if (!fs::exists(path)) throw IntegrityError("checkpoint not found: " + path.string());
  json doc;
  try {
    doc = json::parse(read_file(path));
  } catch (const json::exception& e) {
    throw SchemaError("checkpoint " + path.string() + " is not valid JSON: " + e.what());
  }
  const int version = doc.value("format_version", -1);
  if (version != kCheckpointFormat) {
    throw SchemaError("checkpoint format " + std::to_string(version) + " is not supported (expected " +
                      std::to_string(kCheckpointFormat) + ")");
  }
  Checkpoint ck;
  try {
    ck.config = config_from_json(doc.at("config"));
    auto vocab = encoders::Vocabulary::from_tokens(doc.at("vocabulary").get<std::vector<std::string>>());
    ck.model = model::GennavModel(ck.config.model, std::move(vocab), layout_from_json(doc.at("layout")), 0);
    const auto& params = doc.at("params");
    std::set<std::string> used;
    ck.model.visit(nn::ParamVisitor([&](nn::Param& p) {
      if (!params.contains(p.name)) throw SchemaError("checkpoint lacks parameter " + p.name);
      const auto& entry = params.at(p.name);
      const auto shape = entry.at("shape").get<std::vector<Eigen::Index>>();
      if (shape.size() != 2 || shape[0] != p.value.rows() || shape[1] != p.value.cols()) {
        throw SchemaError("parameter " + p.name + " has shape [" + std::to_string(shape.at(0)) + "," +
                          std::to_string(shape.at(1)) + "], model expects [" + std::to_string(p.value.rows()) +
                          "," + std::to_string(p.value.cols()) + "]");
      }
      const auto data = entry.at("data").get<std::vector<double>>();
      if (static_cast<Eigen::Index>(data.size()) != p.value.size()) {
        throw SchemaError("parameter " + p.name + " has the wrong number of values");
      }
      std::size_t i = 0;
      for (Eigen::Index r = 0; r < p.value.rows(); ++r) {
        for (Eigen::Index c = 0; c < p.value.cols(); ++c) p.value(r, c) = data[i++];
      }
      used.insert(p.name);
    }));
    for (const auto& [name, _] : params.items()) {
      if (used.count(name) == 0) throw SchemaError("checkpoint has unexpected parameter " + name);
    }
    for (const auto& h : doc.at("history")) {
      ck.history.push_back({h.at("epoch").get<int>(), h.at("val_msiou").get<double>()});
    }
    ck.best_epoch = doc.at("best_epoch").get<int>();
  } catch (const json::exception& e) {
    throw SchemaError("malformed checkpoint " + path.string() + ": " + e.what());
  } catch (const ConfigError& e) {
    throw SchemaError("checkpoint " + path.string() + " carries an invalid config: " + e.what());
  }
  return ck;
}

std::string prediction_record(const metrics::PredictionItem& p) {
  json polys = json::array();
  for (const auto& poly : p.polygons) polys.push_back(geometry::to_flat(poly));
  json j = {{"id", p.id}, {"existence", std::string(metrics::to_short_string(p.existence))}, {"polygons", polys}};
  if (p.probabilities) j["probabilities"] = *p.probabilities;
  return j.dump();
}

void save_predictions(std::span<const metrics::PredictionItem> preds, const fs::path& path) {
  std::string text;
  for (const auto& p : preds) text += prediction_record(p) + "\n";
  write_file(path, text);
}

std::vector<metrics::PredictionItem> load_predictions(const fs::path& path) {
  const auto text = read_file(path);
  std::vector<metrics::PredictionItem> out;
  std::istringstream in(text);
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (line.empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      throw SchemaError(path.string() + ":" + std::to_string(n) + ": " + e.what());
    }
    if (j.contains("record")) {
      if (j.at("record") != "sample") continue;  // manifest header / provenance
    }
    metrics::PredictionItem p;
    try {
      p.id = j.at("id").get<std::string>();
      p.existence = metrics::parse_existence(j.at("existence").get<std::string>());
      for (const auto& poly : j.at("polygons")) {
        p.polygons.push_back(geometry::from_flat(poly.get<std::vector<double>>()));
      }
      if (j.contains("probabilities")) p.probabilities = j.at("probabilities").get<std::vector<double>>();
    } catch (const json::exception& e) {
      throw SchemaError(path.string() + ":" + std::to_string(n) + ": " + e.what());
    }
    out.push_back(std::move(p));
  }
  return out;
}

std::string report_json(const metrics::MetricReport& r, const config::RunConfig* run) {
  json pk = json::object();
  for (const auto& [k, v] : r.p_at_k) pk[key_of(k)] = v;
  json per = json::array();
  for (const auto& s : r.per_sample) {
    per.push_back({{"sample_id", s.sample_id},
                   {"gt_positive", s.gt_positive},
                   {"pred_positive", s.pred_positive},
                   {"outcome", std::string(metrics::to_string(s.outcome))},
                   {"iou", s.iou}});
  }
  json doc = {{"msiou", r.msiou},
              {"msiou_K", r.msiou_K},
              {"p_at_k", pk},
              {"accuracy", r.accuracy},
              {"confusion", {{"tp", r.confusion.tp}, {"tn", r.confusion.tn}, {"fp", r.confusion.fp}, {"fn", r.confusion.fn}}},
              {"n", r.n},
              {"per_sample", per},
              {"eval_config",
               {{"msiou_K", r.config.msiou_K},
                {"p_at_k", r.config.p_at_k},
                {"raster", std::to_string(r.config.raster_width) + "x" + std::to_string(r.config.raster_height)}}},
              {"conventions",
               {{"no_target_iou", std::string(metrics::kNoTargetIouConvention)},
                {"precision", std::string(metrics::kPrecisionConvention)},
                {"msiou_k_range", "k = 1.." + std::to_string(metrics::k_max_for(r.msiou_K))}}}};
  if (run != nullptr) doc["run_config"] = config_to_json(*run);
  return doc.dump(2) + "\n";
}

std::string report_table(const metrics::MetricReport& r) {
  std::ostringstream out;
  char buf[64];
  out << "msIoU(K=" << config::format_double(r.msiou_K) << ")";
  for (const auto& [k, _] : r.p_at_k) out << "  P@" << key_of(k);
  out << "    Acc.\n";
  std::snprintf(buf, sizeof(buf), "%12.2f", 100.0 * r.msiou);
  out << buf;
  for (const auto& [k, v] : r.p_at_k) {
    const int width = static_cast<int>(key_of(k).size()) + 4;
    std::snprintf(buf, sizeof(buf), "%*.2f", width, 100.0 * v);
    out << buf;
  }
  std::snprintf(buf, sizeof(buf), "%8.2f", 100.0 * r.accuracy);
  out << buf << "\n";
  out << "n=" << r.n << "  TP=" << r.confusion.tp << " TN=" << r.confusion.tn << " FP=" << r.confusion.fp
      << " FN=" << r.confusion.fn << "\n";
  return out.str();
}

std::optional<model::PatchLayout> load_layout_cache(const fs::path& path, const std::string& key) {
  if (!fs::exists(path)) return std::nullopt;
  try {
    const auto doc = json::parse(read_file(path));
    if (doc.value("key", std::string()) != key) return std::nullopt;
    return layout_from_json(doc.at("layout"));
  } catch (const json::exception& e) {
    throw SchemaError("malformed layout cache " + path.string() + ": " + e.what());
  }
}

void save_layout_cache(const fs::path& path, const std::string& key, const model::PatchLayout& layout) {
  const json doc = {{"key", key}, {"layout", layout_to_json(layout)}};
  write_file(path, doc.dump(2) + "\n");
}

}  // namespace grnr::io
