#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "grnr/encoders.hpp"
#include "grnr/geometry.hpp"
#include "grnr/metrics.hpp"

namespace grnr::model {

using encoders::Vec;
using geometry::Rect;

struct LayoutConfig {
  // Patch geometry lives in a reference frame; patches are scaled to the
  // actual image size at crop time.
  int ref_w = 160;
  int ref_h = 90;
  int patch_w = 56;
  int patch_h = 32;
  int num_patches = 3;
  int stride = 8;
};

struct ModelConfig {
  encoders::EncoderConfig encoder;
  LayoutConfig layout;
  int n_v = 6;
  int p_max = 4;
  int hidden = 128;

  int dim() const { return encoder.dim; }
  int n_pt() const { return n_v * p_max; }
  void validate() const;
};

struct PatchLayout {
  int image_w = 0;
  int image_h = 0;
  std::vector<Rect> rects;

  friend bool operator==(const PatchLayout&, const PatchLayout&) = default;
};

// Greedy placement on a stride grid: each step takes the position covering
// the most not-yet-covered landmark centroids (ties: smaller y, then smaller
// x). Placement stops early once no position adds coverage. With no
// coverable landmarks, falls back to a centred horizontal band.
PatchLayout compute_patch_layout(std::span<const Rect> landmark_boxes, int img_w, int img_h,
                                 int patch_w, int patch_h, int num_patches, int stride = 8);
PatchLayout fallback_band_layout(int img_w, int img_h, int patch_w, int patch_h,
                                 int num_patches);

// Layout rect mapped to integer pixels of an image of the given size.
struct PixelWindow {
  int x = 0;
  int y = 0;
  int w = 1;
  int h = 1;
};
PixelWindow scale_to_image(const Rect& r, const PatchLayout& layout, int img_w, int img_h);

struct Prediction {
  std::array<double, 3> existence{1.0 / 3, 1.0 / 3, 1.0 / 3};
  std::vector<geometry::Vertex> vertices;  // n_pt, slot-major
};

// Visual-linguistic-spatial fusion on precomputed stream features:
// h_mm = h_inst * (f_vis + f_depth) * (f_road + f_depth), all elementwise.
Vec vlsim_fuse(const Vec& h_inst, const Vec& f_vis, const Vec& f_depth, const Vec& f_road);
// h_cmm = h_ldp * h_inst + h_mm (elementwise).
Vec cmm_fuse(const Vec& h_ldp, const Vec& h_inst, const Vec& h_mm);

struct VlsimOutput {
  Vec h_mm;
  Vec road_feat;
};

class GennavModel {
 public:
  // Everything the network consumes for one sample, at encoder resolution.
  struct PreparedInput {
    encoders::Instruction instruction;
    std::optional<Vec> text_embedding;  // set when an external text adapter is used
    ImagePlane visual;
    ImagePlane depth;
    ImagePlane road;
    std::vector<ImagePlane> patches;
  };

  // Trunk outputs; the caches are only kept when the trunk is trainable.
  struct TrunkFeatures {
    Vec visual;
    Vec depth;
    Vec road;
    std::vector<Vec> patches;
    std::vector<encoders::Trunk::Cache> caches;  // visual, depth, road, patches...
  };

  struct Trace {
    encoders::TextEncoder::Cache text;
    bool text_trainable = true;
    Vec h_inst;
    Vec f_vis;
    Vec f_depth;
    Vec f_road;
    std::vector<Vec> f_patches;
    Vec h_ldp;
    Vec sum_vis_depth;
    Vec sum_road_depth;
    Vec h_mm;
    Vec h_cmm;
    Vec joint;
    nn::Mlp::Cache reg;
    nn::Mlp::Cache cls;
    Vec logits;
    Vec probs;
    Vec vertices;
  };

  GennavModel() = default;
  GennavModel(ModelConfig cfg, encoders::Vocabulary vocab, PatchLayout layout,
              std::uint64_t seed);

  const ModelConfig& config() const { return cfg_; }
  const encoders::Vocabulary& vocabulary() const { return vocab_; }
  const PatchLayout& layout() const { return layout_; }
  encoders::VisualEncoders& visual_encoders() { return visual_; }
  const encoders::VisualEncoders& visual_encoders() const { return visual_; }
  encoders::TextEncoder& text_encoder() { return text_; }
  nn::Mlp& regression_head() { return reg_; }
  nn::Mlp& classification_head() { return cls_; }

  void set_text_embedder(std::shared_ptr<const encoders::TextEmbedder> e) {
    text_adapter_ = std::move(e);
  }

  Vec encode_text(std::string_view text) const;
  Vec encode_text(const encoders::Instruction& inst) const;

  // Sum over patches of encode_visual(crop resized to encoder resolution).
  Vec ldpm_forward(const ImagePlane& img) const;
  Vec ldpm_forward(const ImagePlane& img, const PatchLayout& layout) const;
  VlsimOutput vlsim_forward(const ImagePlane& img, const Vec& h_inst) const;
  Prediction expo_forward(const Vec& h_inst, const Vec& h_mm, const Vec& h_ldp,
                          const Vec& road_feat) const;

  Prediction forward(const ImagePlane& img, std::string_view instruction) const;
  std::vector<Prediction> forward_batch(std::span<const ImagePlane> images,
                                        std::span<const std::string> instructions) const;

  // Staged path used by training.
  PreparedInput prepare(const ImagePlane& img, std::string_view instruction) const;
  TrunkFeatures run_trunks(const PreparedInput& in, bool keep_cache) const;
  bool trunk_trainable() const { return !cfg_.encoder.freeze_trunk; }
  Prediction forward_features(const PreparedInput& in, const TrunkFeatures& feats,
                              Trace* trace) const;
  // dlogits: dL/d(existence logits); dvertices: dL/d(vertex coordinates), 2*n_pt.
  void backward(const Trace& trace, const TrunkFeatures& feats, const Vec& dlogits,
                const Vec& dvertices);

  void visit(const nn::ParamVisitor& fn);
  void visit(const nn::ConstParamVisitor& fn) const;
  void zero_grad();
  std::size_t parameter_count() const;

 private:
  Prediction make_prediction(const Vec& probs, const Vec& vertices) const;

  ModelConfig cfg_;
  encoders::Vocabulary vocab_;
  PatchLayout layout_;
  encoders::TextEncoder text_;
  encoders::VisualEncoders visual_;
  nn::Mlp reg_;
  nn::Mlp cls_;
  std::shared_ptr<const encoders::TextEmbedder> text_adapter_;
};

struct DecodedPrediction {
  metrics::ExistenceLabel existence = metrics::ExistenceLabel::NoTarget;
  std::vector<geometry::Polygon> polygons;
};

inline constexpr double kDegenerateSlotArea = 1e-4;

metrics::ExistenceLabel existence_argmax(const std::array<double, 3>& probs);
DecodedPrediction decode_prediction(const Prediction& pred, const ModelConfig& cfg);

}  // namespace grnr::model
