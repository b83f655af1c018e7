#include "grnr/dataset.hpp"

#include <algorithm>
#include <array>
#include <atomic>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <ctime>
#include <exception>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>
#include <thread>
#include <tuple>

#include <json.hpp>

#include "grnr/errors.hpp"

namespace grnr::dataset {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

const std::set<std::string> kSources = {"talk2car", "kitti-v2", "synthetic"};
const std::set<std::string> kSplits = {"train", "val", "test"};
constexpr std::string_view kSyntheticPrefix = "synthetic:";

json rect_to_json(const Rect& r) { return json::array({r.x, r.y, r.w, r.h}); }

Rect rect_from_json(const json& j, const std::string& id) {
  if (!j.is_array() || j.size() != 4) {
    throw SchemaError("sample " + id + ": a box must be [x, y, w, h]");
  }
  return {j[0].get<double>(), j[1].get<double>(), j[2].get<double>(), j[3].get<double>()};
}

json sample_to_json(const Sample& s) {
  json polys = json::array();
  for (const auto& p : s.polygons) polys.push_back(geometry::to_flat(p));
  json boxes = json::array();
  for (const auto& b : s.landmark_boxes) boxes.push_back(rect_to_json(b));
  json j = {{"record", "sample"},
            {"id", s.id},
            {"image_ref", s.image_ref},
            {"instruction", s.instruction},
            {"polygons", polys},
            {"existence", std::string(metrics::to_short_string(s.existence))},
            {"landmark_boxes", boxes},
            {"source", s.source},
            {"split", s.split}};
  if (s.scene) {
    json lms = json::array();
    for (const auto& lm : s.scene->landmarks) {
      lms.push_back({{"color", lm.color}, {"box", rect_to_json(lm.box)}});
    }
    j["scene"] = {{"width", s.scene->width}, {"height", s.scene->height}, {"landmarks", lms}};
  }
  return j;
}

Sample sample_from_json(const json& j) {
  Sample s;
  try {
    s.id = j.at("id").get<std::string>();
    s.image_ref = j.at("image_ref").get<std::string>();
    s.instruction = j.at("instruction").get<std::string>();
    for (const auto& p : j.at("polygons")) {
      const auto flat = p.get<std::vector<double>>();
      s.polygons.push_back(geometry::from_flat(flat));
    }
    s.existence = metrics::parse_existence(j.at("existence").get<std::string>());
    for (const auto& b : j.at("landmark_boxes")) s.landmark_boxes.push_back(rect_from_json(b, s.id));
    s.source = j.at("source").get<std::string>();
    s.split = j.at("split").get<std::string>();
    if (j.contains("scene")) {
      const auto& sc = j.at("scene");
      ToyScene scene;
      scene.width = sc.at("width").get<int>();
      scene.height = sc.at("height").get<int>();
      for (const auto& lm : sc.at("landmarks")) {
        scene.landmarks.push_back({lm.at("color").get<std::string>(), rect_from_json(lm.at("box"), s.id)});
      }
      s.scene = scene;
    }
  } catch (const json::exception& e) {
    throw SchemaError("malformed sample record" + (s.id.empty() ? "" : " " + s.id) + ": " + e.what());
  } catch (const ValidationError& e) {
    throw SchemaError("malformed sample record" + (s.id.empty() ? "" : " " + s.id) + ": " + e.what());
  }
  return s;
}

json provenance_to_json(const ProvenanceRecord& r) {
  return {{"record", "provenance"},     {"candidate_id", r.candidate_id},
          {"action", r.action},         {"verifier_verdict", r.verifier_verdict},
          {"retry_index", r.retry_index}, {"timestamp", r.timestamp}};
}

ProvenanceRecord provenance_from_json(const json& j) {
  try {
    return {j.at("candidate_id").get<std::string>(), j.at("action").get<std::string>(),
            j.at("verifier_verdict").get<std::string>(), j.at("retry_index").get<int>(),
            j.at("timestamp").get<std::string>()};
  } catch (const json::exception& e) {
    throw SchemaError(std::string("malformed provenance record: ") + e.what());
  }
}

json counts_to_json(const CategoryCounts& c) {
  return {{"no", c.no_target}, {"single", c.single_target}, {"multi", c.multi_target}};
}

void add_to(CategoryCounts& c, ExistenceLabel e) {
  switch (e) {
    case ExistenceLabel::NoTarget:
      ++c.no_target;
      break;
    case ExistenceLabel::SingleTarget:
      ++c.single_target;
      break;
    case ExistenceLabel::MultiTarget:
      ++c.multi_target;
      break;
  }
}

std::string slugify(std::string_view s) {
  std::string out;
  for (char ch : s) {
    const auto c = static_cast<unsigned char>(ch);
    if (std::isalnum(c) != 0) {
      out.push_back(static_cast<char>(std::tolower(c)));
    } else if (!out.empty() && out.back() != '_') {
      out.push_back('_');
    }
  }
  while (!out.empty() && out.back() == '_') out.pop_back();
  return out;
}

std::string lower(std::string_view s) {
  std::string out(s);
  for (auto& ch : out) ch = static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
  return out;
}

std::vector<std::string> split_words(std::string_view s) {
  std::vector<std::string> out;
  std::istringstream in{std::string(s)};
  std::string w;
  while (in >> w) out.push_back(w);
  return out;
}

std::string join(const std::vector<std::string>& words, std::size_t from, std::size_t to) {
  std::string out;
  for (std::size_t i = from; i < to; ++i) {
    if (!out.empty()) out.push_back(' ');
    out += words[i];
  }
  return out;
}

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t salt) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(salt), static_cast<std::uint32_t>(salt >> 32)};
  std::array<std::uint32_t, 2> out{};
  seq.generate(out.begin(), out.end());
  return (static_cast<std::uint64_t>(out[0]) << 32) | out[1];
}

std::vector<std::string> read_lines(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IntegrityError("cannot open " + path.string());
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (!line.empty()) lines.push_back(line);
  }
  return lines;
}

std::vector<json> read_jsonl(const fs::path& path) {
  std::vector<json> out;
  std::size_t n = 0;
  for (const auto& line : read_lines(path)) {
    ++n;
    try {
      out.push_back(json::parse(line));
    } catch (const json::exception& e) {
      throw SchemaError(path.string() + ":" + std::to_string(n) + ": " + e.what());
    }
  }
  return out;
}

}  // namespace

// --- manifest ---------------------------------------------------------------

std::map<std::string, std::size_t> Manifest::split_counts() const {
  std::map<std::string, std::size_t> out{{"train", 0}, {"val", 0}, {"test", 0}};
  for (const auto& s : samples) ++out[s.split];
  return out;
}

CategoryCounts Manifest::category_counts() const {
  CategoryCounts c;
  for (const auto& s : samples) add_to(c, s.existence);
  return c;
}

CategoryCounts Manifest::category_counts(std::string_view split_name) const {
  CategoryCounts c;
  for (const auto& s : samples) {
    if (s.split == split_name) add_to(c, s.existence);
  }
  return c;
}

Manifest Manifest::split(std::string_view name) const {
  Manifest m;
  for (const auto& s : samples) {
    if (s.split == name) m.samples.push_back(s);
  }
  return m;
}

void validate_sample(const Sample& s) {
  if (s.id.empty()) throw SchemaError("sample with an empty id");
  if (s.existence != metrics::existence_from_count(s.polygons.size())) {
    throw SchemaError("sample " + s.id + ": existence '" +
                      std::string(metrics::to_short_string(s.existence)) + "' does not match " +
                      std::to_string(s.polygons.size()) + " polygon(s)");
  }
  if (kSources.count(s.source) == 0) throw SchemaError("sample " + s.id + ": unknown source '" + s.source + "'");
  if (kSplits.count(s.split) == 0) throw SchemaError("sample " + s.id + ": unknown split '" + s.split + "'");
  for (const auto& p : s.polygons) {
    if (p.size() < 3) throw SchemaError("sample " + s.id + ": polygon with fewer than 3 vertices");
  }
  if (s.image_ref.rfind(kSyntheticPrefix, 0) == 0 && !s.scene) {
    throw IntegrityError("sample " + s.id + ": synthetic image_ref without a scene");
  }
}

std::string serialize_manifest(const Manifest& m) {
  json counts = json::object();
  for (const auto& [split, n] : m.split_counts()) counts[split] = n;
  const json header = {{"record", "header"},
                       {"schema_version", kSchemaVersion},
                       {"counts", counts},
                       {"categories", counts_to_json(m.category_counts())}};
  std::string out = header.dump() + "\n";
  for (const auto& s : m.samples) out += sample_to_json(s).dump() + "\n";
  for (const auto& r : m.provenance) out += provenance_to_json(r).dump() + "\n";
  return out;
}

void save_manifest(const Manifest& m, const fs::path& path) {
  for (const auto& s : m.samples) validate_sample(s);
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw RuntimeFailure("cannot write manifest " + path.string());
  out << serialize_manifest(m);
  if (!out) throw RuntimeFailure("failed writing manifest " + path.string());
}

Manifest load_manifest(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IntegrityError("manifest not found: " + path.string());
  Manifest m;
  std::string line;
  bool have_header = false;
  json declared_counts;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      throw SchemaError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
    const auto kind = j.value("record", std::string());
    if (!have_header) {
      if (kind != "header") throw SchemaError(path.string() + ": first record must be the header");
      const int version = j.value("schema_version", -1);
      if (version != kSchemaVersion) {
        throw SchemaError(path.string() + ": unsupported schema version " + std::to_string(version) +
                          " (expected " + std::to_string(kSchemaVersion) + ")");
      }
      declared_counts = j.value("counts", json::object());
      have_header = true;
    } else if (kind == "sample") {
      m.samples.push_back(sample_from_json(j));
    } else if (kind == "provenance") {
      m.provenance.push_back(provenance_from_json(j));
    } else {
      throw SchemaError(path.string() + ":" + std::to_string(lineno) + ": unknown record '" + kind + "'");
    }
  }
  if (!have_header) throw SchemaError(path.string() + ": empty manifest");

  std::set<std::string> seen;
  const fs::path base = path.parent_path();
  for (const auto& s : m.samples) {
    validate_sample(s);
    if (!seen.insert(s.id).second) throw IntegrityError("duplicate sample id " + s.id);
    if (s.image_ref.rfind(kSyntheticPrefix, 0) == 0) continue;
    if (!fs::exists(base / s.image_ref)) {
      throw IntegrityError("sample " + s.id + ": image_ref '" + s.image_ref + "' does not resolve");
    }
  }
  for (const auto& [split, n] : m.split_counts()) {
    if (declared_counts.value(split, std::size_t{0}) != n) {
      throw SchemaError(path.string() + ": header count for split '" + split + "' disagrees with records");
    }
  }
  return m;
}

void append_provenance(std::span<const ProvenanceRecord> records, const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::app);
  if (!out) throw RuntimeFailure("cannot append to " + path.string());
  for (const auto& r : records) out << provenance_to_json(r).dump() << "\n";
}

std::string provenance_timestamp() {
  std::time_t t = std::time(nullptr);
  if (const char* sde = std::getenv("SOURCE_DATE_EPOCH"); sde != nullptr && *sde != '\0') {
    t = static_cast<std::time_t>(std::strtoll(sde, nullptr, 10));
  }
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

// --- images -------------------------------------------------------------------

namespace {

struct Rgb {
  double r, g, b;
};

const std::map<std::string, Rgb>& palette() {
  static const std::map<std::string, Rgb> p = {
      {"red", {0.90, 0.10, 0.10}},    {"green", {0.10, 0.75, 0.20}},
      {"blue", {0.15, 0.25, 0.95}},   {"yellow", {0.95, 0.90, 0.10}},
      {"purple", {0.60, 0.20, 0.80}}, {"orange", {1.00, 0.55, 0.00}},
  };
  return p;
}

}  // namespace

const std::vector<std::string> kToyColors = {"red", "green", "blue", "yellow", "purple", "orange"};

ImagePlane render_scene(const ToyScene& scene) {
  ImagePlane img(scene.width, scene.height);
  const int horizon = static_cast<int>(std::lround(0.45 * scene.height));
  for (int y = 0; y < scene.height; ++y) {
    const bool sky = y < horizon;
    for (int x = 0; x < scene.width; ++x) {
      img.at(0, x, y) = sky ? 0.55 : 0.40;
      img.at(1, x, y) = sky ? 0.70 : 0.40;
      img.at(2, x, y) = sky ? 0.90 : 0.42;
    }
  }
  for (const auto& lm : scene.landmarks) {
    const auto it = palette().find(lm.color);
    if (it == palette().end()) throw SchemaError("unknown landmark color '" + lm.color + "'");
    const int x0 = std::max(0, static_cast<int>(std::floor(lm.box.x)));
    const int y0 = std::max(0, static_cast<int>(std::floor(lm.box.y)));
    const int x1 = std::min(scene.width, static_cast<int>(std::ceil(lm.box.x + lm.box.w)));
    const int y1 = std::min(scene.height, static_cast<int>(std::ceil(lm.box.y + lm.box.h)));
    for (int y = y0; y < y1; ++y) {
      for (int x = x0; x < x1; ++x) {
        img.at(0, x, y) = it->second.r;
        img.at(1, x, y) = it->second.g;
        img.at(2, x, y) = it->second.b;
      }
    }
  }
  return img;
}

ImagePlane load_sample_image(const Sample& s, const fs::path& base_dir) {
  ImagePlane img;
  if (s.image_ref.rfind(kSyntheticPrefix, 0) == 0) {
    if (!s.scene) throw IntegrityError("sample " + s.id + ": synthetic image_ref without a scene");
    img = render_scene(*s.scene);
  } else {
    const fs::path p = base_dir / s.image_ref;
    if (!fs::exists(p)) {
      throw IntegrityError("sample " + s.id + ": image_ref '" + s.image_ref + "' does not resolve");
    }
    img = load_ppm(p.string());
  }
  if (s.source == "kitti-v2" && (img.width != kCropW || img.height != kCropH)) {
    throw SchemaError("sample " + s.id + ": kitti-v2 image is " + std::to_string(img.width) + "x" +
                      std::to_string(img.height) + ", expected 656x369");
  }
  return img;
}

// --- cropping and frame mining ----------------------------------------------------

Rect crop_window() {
  return {static_cast<double>((kWideFrameW - kCropW) / 2), static_cast<double>(kWideFrameH - kCropH),
          static_cast<double>(kCropW), static_cast<double>(kCropH)};
}

CropResult crop_wide_frame(const ImagePlane& img, std::span<const Rect> boxes) {
  if (img.width != kWideFrameW || img.height != kWideFrameH) {
    throw ShapeError("crop_wide_frame expects a 1280x384 frame, got " + std::to_string(img.width) +
                     "x" + std::to_string(img.height));
  }
  const Rect win = crop_window();
  CropResult out;
  out.image = crop(img, static_cast<int>(win.x), static_cast<int>(win.y), kCropW, kCropH);
  for (const auto& b : boxes) {
    const Rect clipped = geometry::intersect(b, win);
    const bool gone = clipped.area() <= 0.0;
    out.boxes.push_back(gone ? Rect{std::clamp(b.x - win.x, 0.0, win.w), std::clamp(b.y - win.y, 0.0, win.h), 0.0, 0.0}
                             : Rect{clipped.x - win.x, clipped.y - win.y, clipped.w, clipped.h});
    out.clipped_out.push_back(gone);
  }
  return out;
}

bool bbox_valid(const Rect& bbox, const Rect& window) {
  const double a = bbox.area();
  if (a <= 0.0) return false;
  return geometry::intersect(bbox, window).area() / a > 0.5;
}

std::vector<FrameSelection> select_multi_target_frames(std::span<const TrackAnnotation> annotations,
                                                       const Rect& window) {
  // (video, phrase) -> frame -> valid object ids
  std::map<std::pair<std::string, std::string>, std::map<int, std::set<std::string>>> groups;
  for (const auto& a : annotations) {
    auto& frames = groups[{a.video_id, a.noun_phrase}];
    auto& ids = frames[a.frame_index];
    if (bbox_valid(a.bbox, window)) ids.insert(a.object_id);
  }
  std::vector<FrameSelection> out;
  for (const auto& [key, frames] : groups) {
    int blocked_until = -1;
    for (const auto& [frame, ids] : frames) {
      if (frame <= blocked_until || ids.size() < 2) continue;
      out.push_back({key.first, frame, key.second, {ids.begin(), ids.end()}});
      blocked_until = frame + kExclusionFrames;
    }
  }
  return out;
}

// --- no-target synthesis --------------------------------------------------------------

std::vector<Sample> swap_instructions(std::span<const Sample> samples, std::uint64_t seed) {
  if (samples.size() < 2) throw InvalidInput("swap_instructions needs at least 2 samples");
  std::vector<std::size_t> perm(samples.size());
  std::iota(perm.begin(), perm.end(), 0);
  std::mt19937_64 rng(seed);
  // Sattolo's algorithm yields a single cycle, so no index maps to itself.
  for (std::size_t i = perm.size() - 1; i > 0; --i) {
    std::uniform_int_distribution<std::size_t> pick(0, i - 1);
    std::swap(perm[i], perm[pick(rng)]);
  }
  std::vector<Sample> out;
  out.reserve(samples.size());
  for (std::size_t i = 0; i < samples.size(); ++i) {
    Sample c = samples[i];
    c.id = "nt-" + samples[i].id;
    c.instruction = samples[perm[i]].instruction;
    c.polygons.clear();
    c.existence = ExistenceLabel::NoTarget;
    out.push_back(std::move(c));
  }
  return out;
}

VerifyOutcome verify_no_target(const Sample& candidate, Verifier& verifier, int max_retries,
                               std::span<const std::string> alternatives, const BackoffPolicy& backoff,
                               const std::function<void(std::chrono::milliseconds)>& sleep) {
  VerifyOutcome out;
  out.sample = candidate;
  for (int retry = 0; retry <= max_retries; ++retry) {
    const VerifierRequest req{candidate.id, candidate.image_ref, out.sample.instruction};
    const auto resp = check_with_backoff(verifier, req, backoff, sleep);
    if (!resp.present) {
      out.log.push_back({candidate.id, "accept", "absent", retry, provenance_timestamp()});
      out.accepted = true;
      return out;
    }
    const auto next = static_cast<std::size_t>(retry);
    if (retry == max_retries || next >= alternatives.size()) {
      out.log.push_back({candidate.id, "discard", "present", retry, provenance_timestamp()});
      return out;
    }
    out.log.push_back({candidate.id, "reswap", "present", retry, provenance_timestamp()});
    out.sample.instruction = alternatives[next];
  }
  return out;
}

std::vector<Sample> build_no_target_samples(std::span<const Sample> pool, Verifier& verifier,
                                            const NoTargetConfig& cfg,
                                            std::vector<ProvenanceRecord>& provenance) {
  const auto candidates = swap_instructions(pool, cfg.seed);

  // Distinct instructions, for re-swapping.
  std::vector<std::string> instructions;
  {
    std::set<std::string> seen;
    for (const auto& s : pool) {
      if (seen.insert(s.instruction).second) instructions.push_back(s.instruction);
    }
  }

  std::vector<VerifyOutcome> outcomes(candidates.size());
  std::vector<std::exception_ptr> errors(candidates.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < candidates.size(); i = next++) {
      try {
        std::vector<std::string> alts;
        for (const auto& t : instructions) {
          if (t != pool[i].instruction && t != candidates[i].instruction) alts.push_back(t);
        }
        std::mt19937_64 rng(mix_seed(cfg.seed, i));
        std::shuffle(alts.begin(), alts.end(), rng);
        if (alts.size() > static_cast<std::size_t>(std::max(0, cfg.max_retries))) {
          alts.resize(static_cast<std::size_t>(std::max(0, cfg.max_retries)));
        }
        outcomes[i] = verify_no_target(candidates[i], verifier, cfg.max_retries, alts, cfg.backoff);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  const auto n_threads = static_cast<std::size_t>(std::max(1, cfg.max_in_flight));
  std::vector<std::thread> threads;
  for (std::size_t t = 0; t < std::min(n_threads, candidates.size()); ++t) threads.emplace_back(worker);
  for (auto& t : threads) t.join();

  std::vector<Sample> accepted;
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    if (errors[i]) std::rethrow_exception(errors[i]);
    provenance.insert(provenance.end(), outcomes[i].log.begin(), outcomes[i].log.end());
    if (outcomes[i].accepted) accepted.push_back(outcomes[i].sample);
  }
  return accepted;
}

// --- templates ----------------------------------------------------------------------

std::string RulesSingularizer::singular(std::string_view noun_phrase) const {
  auto words = split_words(noun_phrase);
  if (words.empty()) return std::string(noun_phrase);
  std::string& w = words.back();
  const std::string lw = lower(w);
  static const std::map<std::string, std::string> irregular = {
      {"people", "person"}, {"persons", "person"}, {"men", "man"},      {"women", "woman"},
      {"children", "child"}, {"feet", "foot"},     {"teeth", "tooth"},  {"mice", "mouse"},
      {"geese", "goose"},   {"oxen", "ox"},        {"buses", "bus"},    {"leaves", "leaf"},
      {"knives", "knife"},  {"wolves", "wolf"},    {"halves", "half"},  {"lives", "life"},
      {"sheep", "sheep"},   {"deer", "deer"},      {"police", "police"}, {"series", "series"},
  };
  auto ends = [&](std::string_view suf) {
    return lw.size() > suf.size() && lw.compare(lw.size() - suf.size(), suf.size(), suf) == 0;
  };
  std::string s;
  if (const auto it = irregular.find(lw); it != irregular.end()) {
    s = it->second;
  } else if (ends("ies") && lw.size() > 4) {
    s = lw.substr(0, lw.size() - 3) + "y";
  } else if (ends("sses") || ends("ches") || ends("shes") || ends("xes") || ends("zes")) {
    s = lw.substr(0, lw.size() - 2);
  } else if (ends("ss") || ends("us") || ends("is")) {
    s = lw;
  } else if (ends("s")) {
    s = lw.substr(0, lw.size() - 1);
  } else {
    s = lw;
  }
  if (!w.empty() && std::isupper(static_cast<unsigned char>(w[0])) != 0 && !s.empty()) {
    s[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(s[0])));
  }
  w = s;
  return join(words, 0, words.size());
}

std::string fill_template(std::string_view tmpl, std::string_view noun_phrase,
                          const Singularizer& singularizer) {
  static constexpr std::string_view open = "<landmark>";
  static constexpr std::string_view close = "</landmark>";
  static const std::set<std::string> relational = {
      "on",   "in",    "at",   "near",   "behind", "beside", "next",  "by",      "with",
      "from", "of",    "to",   "across", "along",  "ahead",  "under", "over",    "between",
      "past", "after", "before", "around", "opposite", "that", "which", "who", "parked"};
  if (tmpl.find(open) == std::string_view::npos) {
    throw InvalidInput("template has no <landmark> slot: '" + std::string(tmpl) + "'");
  }
  const std::string noun = singularizer.singular(noun_phrase);
  std::string out;
  std::size_t pos = 0;
  while (true) {
    const auto a = tmpl.find(open, pos);
    if (a == std::string_view::npos) break;
    const auto b = tmpl.find(close, a + open.size());
    if (b == std::string_view::npos) {
      throw InvalidInput("unterminated <landmark> slot in template: '" + std::string(tmpl) + "'");
    }
    out.append(tmpl.substr(pos, a - pos));
    const auto words = split_words(tmpl.substr(a + open.size(), b - a - open.size()));
    std::size_t cut = words.size();
    for (std::size_t i = 1; i < words.size(); ++i) {
      if (relational.count(slugify(words[i])) != 0) {
        cut = i;
        break;
      }
    }
    out += noun;
    if (cut < words.size()) out += " " + join(words, cut, words.size());
    pos = b + close.size();
  }
  out.append(tmpl.substr(pos));
  return out;
}

// --- synthetic toy data -------------------------------------------------------------

namespace {

// Hexagon inscribed in the rectangle, normalized to the frame.
Polygon hexagon(double x0, double y0, double x1, double y1, int w, int h) {
  const double q = 0.25 * (x1 - x0);
  const double ym = 0.5 * (y0 + y1);
  const std::vector<std::pair<double, double>> px = {
      {x0 + q, y0}, {x1 - q, y0}, {x1, ym}, {x1 - q, y1}, {x0 + q, y1}, {x0, ym}};
  Polygon p;
  for (const auto& [x, y] : px) p.vertices.emplace_back(x / w, y / h);
  return geometry::normalize_polygon(p);
}

Sample make_toy_sample(ExistenceLabel category, const std::string& id, const std::string& split,
                       const ToyDatasetConfig& cfg, std::mt19937_64& rng) {
  auto uniform_int = [&](int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng); };
  std::vector<std::string> colors = kToyColors;
  std::shuffle(colors.begin(), colors.end(), rng);
  const std::string target_color = colors[0];
  const bool left = uniform_int(0, 1) == 0;
  constexpr int kColumns = 4;
  const int col_w = cfg.width / kColumns;
  const int gap = std::max(6, col_w * 3 / 10);  // target width beside the landmark

  std::vector<std::string> scene_colors;
  int n_targets = 0;
  switch (category) {
    case ExistenceLabel::SingleTarget:
      n_targets = 1;
      scene_colors.push_back(target_color);
      for (int i = 0, n = uniform_int(1, 2); i < n; ++i) scene_colors.push_back(colors[1 + i]);
      break;
    case ExistenceLabel::MultiTarget:
      n_targets = uniform_int(2, 3);
      for (int i = 0; i < n_targets; ++i) scene_colors.push_back(target_color);
      if (n_targets == 2 && uniform_int(0, 1) == 1) scene_colors.push_back(colors[1]);
      break;
    case ExistenceLabel::NoTarget:
      for (int i = 0, n = uniform_int(2, 3); i < n; ++i) scene_colors.push_back(colors[1 + i]);
      break;
  }
  std::shuffle(scene_colors.begin(), scene_colors.end(), rng);

  std::vector<int> columns(kColumns);
  std::iota(columns.begin(), columns.end(), 0);
  std::shuffle(columns.begin(), columns.end(), rng);
  columns.resize(scene_colors.size());
  std::sort(columns.begin(), columns.end());

  ToyScene scene{cfg.width, cfg.height, {}};
  Sample s;
  s.id = id;
  s.image_ref = std::string(kSyntheticPrefix) + id;
  s.source = "synthetic";
  s.split = split;
  std::vector<std::pair<double, Polygon>> targets;
  for (std::size_t i = 0; i < scene_colors.size(); ++i) {
    const int c0 = columns[i] * col_w;
    const int bw = uniform_int(std::max(4, col_w / 4), std::max(4, col_w / 3));
    const int bh = uniform_int(cfg.height / 8, cfg.height / 5);
    const int bx = uniform_int(c0 + gap, std::max(c0 + gap, c0 + col_w - gap - bw));
    const int by = uniform_int(cfg.height / 2, std::max(cfg.height / 2, cfg.height * 17 / 20 - bh));
    const Rect box{static_cast<double>(bx), static_cast<double>(by), static_cast<double>(bw),
                   static_cast<double>(bh)};
    scene.landmarks.push_back({scene_colors[i], box});
    s.landmark_boxes.push_back(box);
    if (scene_colors[i] == target_color && n_targets > 0) {
      const double tx0 = left ? box.x - gap : box.x + box.w;
      targets.emplace_back(tx0, hexagon(tx0, box.y, tx0 + gap, box.y + box.h, cfg.width, cfg.height));
    }
  }
  for (auto& [x, p] : targets) s.polygons.push_back(std::move(p));
  s.existence = metrics::existence_from_count(s.polygons.size());

  bool plural = category == ExistenceLabel::MultiTarget;
  if (category == ExistenceLabel::NoTarget) plural = uniform_int(0, 1) == 1;
  s.instruction = std::string("stop ") + (left ? "left" : "right") + " of the " + target_color +
                  (plural ? " boxes" : " box");
  s.scene = std::move(scene);
  return s;
}

}  // namespace

Manifest generate_toy_dataset(const ToyDatasetConfig& cfg, std::uint64_t seed) {
  if (cfg.width < 40 || cfg.height < 20) throw InvalidInput("toy scenes need at least 40x20 pixels");
  Manifest m;
  std::mt19937_64 rng(seed);
  const std::vector<std::pair<std::string, ToySplitCounts>> splits = {
      {"train", cfg.train}, {"val", cfg.val}, {"test", cfg.test}};
  for (const auto& [split, counts] : splits) {
    std::vector<ExistenceLabel> cats;
    cats.insert(cats.end(), counts.no_target, ExistenceLabel::NoTarget);
    cats.insert(cats.end(), counts.single_target, ExistenceLabel::SingleTarget);
    cats.insert(cats.end(), counts.multi_target, ExistenceLabel::MultiTarget);
    std::shuffle(cats.begin(), cats.end(), rng);
    for (std::size_t i = 0; i < cats.size(); ++i) {
      char id[64];
      std::snprintf(id, sizeof(id), "syn-%s-%05zu", split.c_str(), i);
      m.samples.push_back(make_toy_sample(cats[i], id, split, cfg, rng));
    }
  }
  return m;
}

std::set<std::string> scene_keywords(const ToyScene& scene) {
  std::set<std::string> out;
  for (const auto& lm : scene.landmarks) out.insert(lm.color);
  return out;
}

// --- real-source build ------------------------------------------------------------------

SplitLists load_split_lists(const fs::path& dir) {
  SplitLists out;
  for (const std::string split : {"train", "val", "test"}) {
    const fs::path p = dir / (split + ".txt");
    if (!fs::exists(p)) throw IntegrityError("missing split list " + p.string());
    for (const auto& id : read_lines(p)) {
      const auto [it, inserted] = out.split_of.emplace(id, split);
      if (!inserted && it->second != split) {
        throw IntegrityError("id " + id + " is listed in both " + it->second + " and " + split);
      }
    }
  }
  return out;
}

namespace {

std::string assign_split(const SplitLists& lists, const std::string& id, const std::string& group) {
  if (const auto it = lists.split_of.find(id); it != lists.split_of.end()) return it->second;
  if (!group.empty()) {
    if (const auto it = lists.split_of.find(group); it != lists.split_of.end()) return it->second;
  }
  return {};
}

std::string relative_ref(const fs::path& file, const fs::path& manifest_dir) {
  return fs::proximate(fs::absolute(file), fs::absolute(manifest_dir)).generic_string();
}

}  // namespace

Manifest build_real_dataset(const RealBuildInputs& in, Verifier& verifier, const NoTargetConfig& nt_cfg) {
  const SplitLists lists = load_split_lists(in.split_dir);
  Manifest m;
  std::vector<std::string> unassigned;

  // Talk2Car-derived single/multi-target samples and their no-target swaps.
  std::map<std::string, std::vector<Sample>> by_split;
  const fs::path t2c_dir = in.talk2car.parent_path();
  for (const auto& j : read_jsonl(in.talk2car)) {
    Sample s;
    try {
      s.id = j.at("id").get<std::string>();
      s.image_ref = relative_ref(t2c_dir / j.at("image").get<std::string>(), in.output_dir);
      s.instruction = j.at("instruction").get<std::string>();
      if (j.contains("mask")) {
        const auto mask = geometry::read_pgm((t2c_dir / j.at("mask").get<std::string>()).string());
        s.polygons = geometry::trace_mask(mask, in.trace_tolerance_px);
      } else {
        for (const auto& p : j.at("polygons")) s.polygons.push_back(geometry::from_flat(p.get<std::vector<double>>()));
      }
      if (j.contains("landmark_boxes")) {
        for (const auto& b : j.at("landmark_boxes")) s.landmark_boxes.push_back(rect_from_json(b, s.id));
      }
    } catch (const json::exception& e) {
      throw SchemaError("talk2car record " + s.id + ": " + e.what());
    }
    if (s.polygons.empty()) throw SchemaError("talk2car record " + s.id + " has no polygons or an empty mask");
    s.existence = metrics::existence_from_count(s.polygons.size());
    s.source = "talk2car";
    s.split = assign_split(lists, s.id, "");
    if (s.split.empty()) {
      unassigned.push_back(s.id);
      continue;
    }
    by_split[s.split].push_back(s);
    m.samples.push_back(std::move(s));
  }

  // KITTI multi-target frames.
  std::vector<TrackAnnotation> tracks;
  for (const auto& j : read_jsonl(in.kitti_tracks)) {
    TrackAnnotation a;
    try {
      a.video_id = j.at("video_id").get<std::string>();
      a.frame_index = j.at("frame_index").get<int>();
      a.noun_phrase = j.at("noun_phrase").get<std::string>();
      a.object_id = j.at("object_id").is_string() ? j.at("object_id").get<std::string>()
                                                   : std::to_string(j.at("object_id").get<long long>());
      a.bbox = rect_from_json(j.at("bbox"), a.video_id);
    } catch (const json::exception& e) {
      throw SchemaError(std::string("kitti track record: ") + e.what());
    }
    if (a.frame_index < 0 || a.bbox.area() <= 0.0) {
      throw SchemaError("kitti track " + a.video_id + "/" + std::to_string(a.frame_index) +
                        ": negative frame index or empty bbox");
    }
    tracks.push_back(std::move(a));
  }
  std::map<std::tuple<std::string, int, std::string>, std::vector<Polygon>> kitti_polys;
  for (const auto& j : read_jsonl(in.kitti_polygons)) {
    std::vector<Polygon> polys;
    const auto key = std::make_tuple(j.at("video_id").get<std::string>(), j.at("frame_index").get<int>(),
                                     j.at("noun_phrase").get<std::string>());
    for (const auto& p : j.at("polygons")) {
      auto poly = geometry::from_flat(p.get<std::vector<double>>());
      if (poly.size() < 6) {
        throw SchemaError("kitti polygon for " + std::get<0>(key) + "/" + std::to_string(std::get<1>(key)) +
                          " has fewer than 6 vertices");
      }
      polys.push_back(std::move(poly));
    }
    kitti_polys[key] = std::move(polys);
  }
  const auto templates = read_lines(in.templates);
  if (templates.empty()) throw IntegrityError("template file is empty: " + in.templates.string());

  const Rect window = crop_window();
  const RulesSingularizer rules;
  std::mt19937_64 rng(nt_cfg.seed);
  for (const auto& sel : select_multi_target_frames(tracks, window)) {
    char frame_name[32];
    std::snprintf(frame_name, sizeof(frame_name), "%06d", sel.frame_index);
    const std::string id = "kitti-" + sel.video_id + "-" + frame_name + "-" + slugify(sel.noun_phrase);
    const auto pit = kitti_polys.find({sel.video_id, sel.frame_index, sel.noun_phrase});
    if (pit == kitti_polys.end() || pit->second.size() < 2) {
      m.provenance.push_back({id, "skip_unannotated", "", 0, provenance_timestamp()});
      continue;
    }
    const std::string split = assign_split(lists, id, "kitti:" + sel.video_id);
    if (split.empty()) {
      unassigned.push_back(id);
      continue;
    }
    std::vector<Rect> boxes;
    for (const auto& a : tracks) {
      if (a.video_id == sel.video_id && a.frame_index == sel.frame_index && a.noun_phrase == sel.noun_phrase &&
          std::binary_search(sel.object_ids.begin(), sel.object_ids.end(), a.object_id)) {
        boxes.push_back(a.bbox);
      }
    }
    const auto frame = load_ppm((in.kitti_frames / sel.video_id / (std::string(frame_name) + ".ppm")).string());
    const auto cropped = crop_wide_frame(frame, boxes);
    const fs::path out_img = in.output_dir / "images" / (id + ".ppm");
    fs::create_directories(out_img.parent_path());
    save_ppm(cropped.image, out_img.string());

    Sample s;
    s.id = id;
    s.image_ref = relative_ref(out_img, in.output_dir);
    const auto& tmpl = templates[std::uniform_int_distribution<std::size_t>(0, templates.size() - 1)(rng)];
    s.instruction = fill_template(tmpl, sel.noun_phrase, rules);
    s.polygons = pit->second;
    s.existence = metrics::existence_from_count(s.polygons.size());
    for (std::size_t i = 0; i < cropped.boxes.size(); ++i) {
      if (!cropped.clipped_out[i]) s.landmark_boxes.push_back(cropped.boxes[i]);
    }
    s.source = "kitti-v2";
    s.split = split;
    m.provenance.push_back({id, "mine_multi_target", "", 0, provenance_timestamp()});
    m.samples.push_back(std::move(s));
  }

  if (!unassigned.empty()) {
    std::string list;
    for (std::size_t i = 0; i < unassigned.size() && i < 10; ++i) list += (i ? ", " : "") + unassigned[i];
    throw IntegrityError(std::to_string(unassigned.size()) + " sample(s) missing from the split lists: " + list);
  }

  for (const auto& split : {"train", "val", "test"}) {
    const auto& pool = by_split[split];
    if (pool.size() < 2) continue;
    NoTargetConfig cfg = nt_cfg;
    cfg.seed = mix_seed(nt_cfg.seed, std::hash<std::string>{}(split));
    auto accepted = build_no_target_samples(pool, verifier, cfg, m.provenance);
    for (auto& s : accepted) m.samples.push_back(std::move(s));
  }
  return m;
}

void check_full_build(const Manifest& m, const ExpectedCounts& expected) {
  const auto c = m.split_counts();
  if (c.at("train") != expected.train || c.at("val") != expected.val || c.at("test") != expected.test) {
    throw IntegrityError("full build produced " + std::to_string(c.at("train")) + "/" +
                         std::to_string(c.at("val")) + "/" + std::to_string(c.at("test")) +
                         " train/val/test samples, expected " + std::to_string(expected.train) + "/" +
                         std::to_string(expected.val) + "/" + std::to_string(expected.test));
  }
}

void export_review(const Manifest& m, const fs::path& manifest_dir, const fs::path& out_dir) {
  fs::create_directories(out_dir / "images");
  std::ofstream sheet(out_dir / "review.tsv", std::ios::binary);
  if (!sheet) throw RuntimeFailure("cannot write review sheet in " + out_dir.string());
  sheet << "id\timage\tsplit\texistence\tinstruction\tdecision\n";
  for (const auto& s : m.samples) {
    const std::string rel = "images/" + s.id + ".ppm";
    save_ppm(load_sample_image(s, manifest_dir), (out_dir / rel).string());
    std::string text = s.instruction;
    std::replace(text.begin(), text.end(), '\t', ' ');
    sheet << s.id << '\t' << rel << '\t' << s.split << '\t' << metrics::to_short_string(s.existence) << '\t'
          << text << "\t\n";
  }
}

}  // namespace grnr::dataset
