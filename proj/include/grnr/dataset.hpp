#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "grnr/geometry.hpp"
#include "grnr/image.hpp"
#include "grnr/metrics.hpp"
#include "grnr/verifier.hpp"

namespace grnr::dataset {

using geometry::Polygon;
using geometry::Rect;
using metrics::ExistenceLabel;

inline constexpr int kSchemaVersion = 1;

struct ToyLandmark {
  std::string color;
  Rect box;  // pixels
  friend bool operator==(const ToyLandmark&, const ToyLandmark&) = default;
};

// Procedural scene description; rendered on demand instead of stored as pixels.
struct ToyScene {
  int width = 160;
  int height = 90;
  std::vector<ToyLandmark> landmarks;
  friend bool operator==(const ToyScene&, const ToyScene&) = default;
};

struct Sample {
  std::string id;
  std::string image_ref;  // path relative to the manifest, or "synthetic:<id>"
  std::string instruction;
  std::vector<Polygon> polygons;
  ExistenceLabel existence = ExistenceLabel::NoTarget;
  std::vector<Rect> landmark_boxes;  // pixels
  std::string source;                // talk2car | kitti-v2 | synthetic
  std::string split;                 // train | val | test
  std::optional<ToyScene> scene;

  friend bool operator==(const Sample&, const Sample&) = default;
};

struct ProvenanceRecord {
  std::string candidate_id;
  std::string action;
  std::string verifier_verdict;  // present | absent | "" when no verdict
  int retry_index = 0;
  std::string timestamp;
  friend bool operator==(const ProvenanceRecord&, const ProvenanceRecord&) = default;
};

struct CategoryCounts {
  std::size_t no_target = 0;
  std::size_t single_target = 0;
  std::size_t multi_target = 0;
  std::size_t total() const { return no_target + single_target + multi_target; }
  friend bool operator==(const CategoryCounts&, const CategoryCounts&) = default;
};

struct Manifest {
  std::vector<Sample> samples;
  std::vector<ProvenanceRecord> provenance;

  std::map<std::string, std::size_t> split_counts() const;
  CategoryCounts category_counts() const;
  CategoryCounts category_counts(std::string_view split) const;
  Manifest split(std::string_view name) const;  // samples only

  friend bool operator==(const Manifest&, const Manifest&) = default;
};

// Checks the existence label against the polygon count and the kitti-v2
// frame size. Throws SchemaError naming the sample.
void validate_sample(const Sample& s);

// Line-delimited: a header record, one record per sample, then provenance
// records. Byte output is a pure function of the manifest.
void save_manifest(const Manifest& m, const std::filesystem::path& path);
// Verifies the schema version and that every non-synthetic image_ref exists
// relative to the manifest's directory.
Manifest load_manifest(const std::filesystem::path& path);
std::string serialize_manifest(const Manifest& m);

// Appends records to a line-delimited provenance file.
void append_provenance(std::span<const ProvenanceRecord> records,
                       const std::filesystem::path& path);

// Timestamp for provenance records. Honors SOURCE_DATE_EPOCH so rebuilds
// can be made byte-reproducible.
std::string provenance_timestamp();

ImagePlane render_scene(const ToyScene& scene);
// Resolves a sample's pixels: renders synthetic scenes, otherwise loads the
// referenced PPM relative to base_dir.
ImagePlane load_sample_image(const Sample& s, const std::filesystem::path& base_dir);

// --- wide-frame cropping and frame mining -----------------------------------

inline constexpr int kWideFrameW = 1280;
inline constexpr int kWideFrameH = 384;
inline constexpr int kCropW = 656;
inline constexpr int kCropH = 369;

// Crop window in original-frame pixels: horizontally centred, bottom-anchored.
Rect crop_window();

struct CropResult {
  ImagePlane image;
  std::vector<Rect> boxes;     // translated into crop coordinates and clipped
  std::vector<bool> clipped_out;  // true where nothing of the box survives
};

CropResult crop_wide_frame(const ImagePlane& img, std::span<const Rect> boxes);

// More than half of the box area inside the window (strict).
bool bbox_valid(const Rect& bbox, const Rect& window);

struct TrackAnnotation {
  std::string video_id;
  int frame_index = 0;
  std::string noun_phrase;
  std::string object_id;
  Rect bbox;  // pre-crop frame pixels
};

struct FrameSelection {
  std::string video_id;
  int frame_index = 0;
  std::string noun_phrase;
  std::vector<std::string> object_ids;  // sorted
  friend bool operator==(const FrameSelection&, const FrameSelection&) = default;
};

inline constexpr int kExclusionFrames = 20;

// Per (video, noun phrase), frames are scanned in ascending order; a frame
// with at least two valid objects is selected and the next 20 frames of that
// group become ineligible. Output is sorted by (video, phrase, frame).
std::vector<FrameSelection> select_multi_target_frames(std::span<const TrackAnnotation> annotations,
                                                       const Rect& window);

// --- no-target synthesis ------------------------------------------------------

// Derangement: candidate i keeps sample i's image and takes the instruction
// of another sample. Polygons are cleared and the label set to no-target.
std::vector<Sample> swap_instructions(std::span<const Sample> samples, std::uint64_t seed);

struct NoTargetConfig {
  int max_retries = 3;   // re-swaps after the first "present" verdict
  int max_in_flight = 4;
  BackoffPolicy backoff;
  std::uint64_t seed = 0;
};

// Outcome of the verifier loop for one candidate.
struct VerifyOutcome {
  bool accepted = false;
  Sample sample;  // final instruction when accepted
  std::vector<ProvenanceRecord> log;
};

// Asks the verifier about a candidate; on "present" swaps in the next
// instruction from `alternatives` and asks again, up to max_retries times.
VerifyOutcome verify_no_target(const Sample& candidate, Verifier& verifier, int max_retries,
                               std::span<const std::string> alternatives,
                               const BackoffPolicy& backoff = {},
                               const std::function<void(std::chrono::milliseconds)>& sleep = {});

// Full loop over a pool: swap, verify with bounded parallelism, commit in
// candidate order. Provenance records are appended to `provenance`.
std::vector<Sample> build_no_target_samples(std::span<const Sample> pool, Verifier& verifier,
                                            const NoTargetConfig& cfg,
                                            std::vector<ProvenanceRecord>& provenance);

// --- template instructions ------------------------------------------------------

class Singularizer {
 public:
  virtual ~Singularizer() = default;
  virtual std::string singular(std::string_view noun_phrase) const = 0;
};

// Singularizes the last word of the phrase: irregular table, then regular
// plural suffixes.
class RulesSingularizer final : public Singularizer {
 public:
  std::string singular(std::string_view noun_phrase) const override;
};

// Replaces every <landmark>...</landmark> slot. The slot text up to its
// first relational word (on, next, behind, ...) is taken to be the landmark
// noun and is replaced; the relational tail is kept.
std::string fill_template(std::string_view tmpl, std::string_view noun_phrase,
                          const Singularizer& singularizer);

// --- synthetic toy data -----------------------------------------------------------

struct ToySplitCounts {
  std::size_t no_target = 0;
  std::size_t single_target = 0;
  std::size_t multi_target = 0;
};

struct ToyDatasetConfig {
  ToySplitCounts train{10, 10, 10};
  ToySplitCounts val{0, 0, 0};
  ToySplitCounts test{0, 0, 0};
  int width = 160;
  int height = 90;
};

extern const std::vector<std::string> kToyColors;

Manifest generate_toy_dataset(const ToyDatasetConfig& cfg, std::uint64_t seed);

// Object names present in a synthetic scene ("red", "box", ...), for the
// keyword verifier stub.
std::set<std::string> scene_keywords(const ToyScene& scene);

// --- real-source build ------------------------------------------------------------

struct SplitLists {
  std::map<std::string, std::string> split_of;  // id -> split
};

// Reads train.txt, val.txt and test.txt (one id per line) from dir. A
// missing file is an IntegrityError.
SplitLists load_split_lists(const std::filesystem::path& dir);

struct RealBuildInputs {
  std::filesystem::path talk2car;        // JSONL source samples
  std::filesystem::path kitti_tracks;    // JSONL TrackAnnotation records
  std::filesystem::path kitti_polygons;  // JSONL {video_id, frame_index, noun_phrase, polygons}
  std::filesystem::path kitti_frames;    // dir holding <video_id>/<frame:06d>.ppm
  std::filesystem::path templates;       // one template per line
  std::filesystem::path split_dir;
  std::filesystem::path output_dir;      // cropped frames are written under images/
  // Source records may carry a "mask" PGM instead of polygons; its traced
  // outline becomes the ground truth, simplified at this many pixels.
  double trace_tolerance_px = 1.0;
};

Manifest build_real_dataset(const RealBuildInputs& in, Verifier& verifier,
                            const NoTargetConfig& nt_cfg);

struct ExpectedCounts {
  std::size_t train = 14973;
  std::size_t val = 1413;
  std::size_t test = 758;
};

// Throws IntegrityError unless split counts match.
void check_full_build(const Manifest& m, const ExpectedCounts& expected = {});

// Writes images, instructions and an accept/reject sheet for manual review.
void export_review(const Manifest& m, const std::filesystem::path& manifest_dir,
                   const std::filesystem::path& out_dir);

}  // namespace grnr::dataset
