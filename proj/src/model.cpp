#include "grnr/model.hpp"

#include <algorithm>
#include <cmath>

#include "grnr/errors.hpp"

namespace grnr::model {

void ModelConfig::validate() const {
  if (n_v < 3) throw ConfigError("model.n_v must be >= 3");
  if (p_max < 1) throw ConfigError("model.p_max must be >= 1");
  if (hidden < 1) throw ConfigError("model.hidden must be >= 1");
  if (encoder.dim < 1) throw ConfigError("model.dim must be >= 1");
  if (layout.num_patches < 1) throw ConfigError("layout.num_patches must be >= 1");
  if (layout.patch_w < 1 || layout.patch_h < 1 || layout.patch_w > layout.ref_w ||
      layout.patch_h > layout.ref_h) {
    throw ConfigError("layout patch must fit inside the reference frame");
  }
  if (layout.stride < 1) throw ConfigError("layout.stride must be >= 1");
  if (encoder.kind != "toy" && encoder.kind != "adapter") {
    throw ConfigError("encoder.kind must be toy or adapter, got " + encoder.kind);
  }
}

PatchLayout fallback_band_layout(int img_w, int img_h, int patch_w, int patch_h,
                                 int num_patches) {
  PatchLayout layout{img_w, img_h, {}};
  const double y = (img_h - patch_h) / 2;
  for (int i = 0; i < num_patches; ++i) {
    double x = 0.0;
    if (num_patches == 1) {
      x = (img_w - patch_w) / 2;
    } else {
      x = std::round(static_cast<double>(i) * (img_w - patch_w) / (num_patches - 1));
    }
    layout.rects.push_back({x, y, static_cast<double>(patch_w), static_cast<double>(patch_h)});
  }
  return layout;
}

PatchLayout compute_patch_layout(std::span<const Rect> landmark_boxes, int img_w, int img_h,
                                 int patch_w, int patch_h, int num_patches, int stride) {
  if (num_patches < 1) throw InvalidInput("num_patches must be >= 1");
  if (patch_w < 1 || patch_h < 1 || patch_w > img_w || patch_h > img_h) {
    throw InvalidInput("patch " + std::to_string(patch_w) + "x" + std::to_string(patch_h) +
                       " does not fit image " + std::to_string(img_w) + "x" +
                       std::to_string(img_h));
  }
  if (stride < 1) throw InvalidInput("stride must be >= 1");

  std::vector<std::pair<double, double>> centroids;
  centroids.reserve(landmark_boxes.size());
  for (const auto& b : landmark_boxes) centroids.emplace_back(b.cx(), b.cy());
  std::vector<bool> covered(centroids.size(), false);

  auto inside = [&](double px, double py, double rx, double ry) {
    return rx <= px && px < rx + patch_w && ry <= py && py < ry + patch_h;
  };

  PatchLayout layout{img_w, img_h, {}};
  for (int step = 0; step < num_patches; ++step) {
    int best_gain = 0;
    double best_x = 0.0;
    double best_y = 0.0;
    for (int y = 0; y + patch_h <= img_h; y += stride) {
      for (int x = 0; x + patch_w <= img_w; x += stride) {
        int gain = 0;
        for (std::size_t i = 0; i < centroids.size(); ++i) {
          if (!covered[i] && inside(centroids[i].first, centroids[i].second, x, y)) ++gain;
        }
        if (gain > best_gain) {
          best_gain = gain;
          best_x = x;
          best_y = y;
        }
      }
    }
    if (best_gain == 0) break;
    for (std::size_t i = 0; i < centroids.size(); ++i) {
      if (inside(centroids[i].first, centroids[i].second, best_x, best_y)) covered[i] = true;
    }
    layout.rects.push_back(
        {best_x, best_y, static_cast<double>(patch_w), static_cast<double>(patch_h)});
  }
  if (layout.rects.empty()) {
    return fallback_band_layout(img_w, img_h, patch_w, patch_h, num_patches);
  }
  return layout;
}

PixelWindow scale_to_image(const Rect& r, const PatchLayout& layout, int img_w, int img_h) {
  const double sx = static_cast<double>(img_w) / layout.image_w;
  const double sy = static_cast<double>(img_h) / layout.image_h;
  PixelWindow win;
  win.w = std::clamp(static_cast<int>(std::lround(r.w * sx)), 1, img_w);
  win.h = std::clamp(static_cast<int>(std::lround(r.h * sy)), 1, img_h);
  win.x = std::clamp(static_cast<int>(std::lround(r.x * sx)), 0, img_w - win.w);
  win.y = std::clamp(static_cast<int>(std::lround(r.y * sy)), 0, img_h - win.h);
  return win;
}

Vec vlsim_fuse(const Vec& h_inst, const Vec& f_vis, const Vec& f_depth, const Vec& f_road) {
  if (h_inst.size() != f_vis.size() || f_vis.size() != f_depth.size() ||
      f_depth.size() != f_road.size()) {
    throw ShapeError("vlsim dimension mismatch");
  }
  return (h_inst.array() * (f_vis + f_depth).array() * (f_road + f_depth).array()).matrix();
}

Vec cmm_fuse(const Vec& h_ldp, const Vec& h_inst, const Vec& h_mm) {
  if (h_ldp.size() != h_inst.size() || h_inst.size() != h_mm.size()) {
    throw ShapeError("h_cmm dimension mismatch");
  }
  return (h_ldp.array() * h_inst.array()).matrix() + h_mm;
}

GennavModel::GennavModel(ModelConfig cfg, encoders::Vocabulary vocab, PatchLayout layout,
                         std::uint64_t seed)
    : cfg_(std::move(cfg)), vocab_(std::move(vocab)), layout_(std::move(layout)) {
  cfg_.validate();
  if (layout_.rects.empty()) throw InvalidInput("patch layout has no rects");
  const int d = cfg_.dim();
  text_ = encoders::TextEncoder(vocab_.size(), cfg_.encoder.text_embed_dim, d);
  visual_ = encoders::VisualEncoders(cfg_.encoder);
  reg_ = nn::Mlp("expo.regression", 2 * d, cfg_.hidden, 2 * cfg_.n_pt());
  cls_ = nn::Mlp("expo.classification", 2 * d, cfg_.hidden, 3);
  if (cfg_.encoder.kind == "adapter") {
    if (!cfg_.encoder.depth_cmd.empty()) {
      visual_.set_depth_estimator(
          std::make_shared<encoders::ProcessDepthEstimator>(cfg_.encoder.depth_cmd));
    }
    if (!cfg_.encoder.road_cmd.empty()) {
      visual_.set_road_segmenter(
          std::make_shared<encoders::ProcessRoadSegmenter>(cfg_.encoder.road_cmd));
    }
    if (!cfg_.encoder.text_cmd.empty()) {
      text_adapter_ = std::make_shared<encoders::ProcessTextEmbedder>(cfg_.encoder.text_cmd, d);
    }
  }
  nn::Rng rng(seed);
  text_.init(rng);
  visual_.init(rng);
  reg_.init(rng);
  cls_.init(rng);
}

Vec GennavModel::encode_text(std::string_view text) const {
  if (text_adapter_) {
    if (encoders::Vocabulary::tokenize(text).empty()) {
      throw InvalidInput("instruction has no tokens");
    }
    return text_adapter_->embed(text);
  }
  return text_.forward(vocab_.encode(text, cfg_.encoder.max_len), nullptr);
}

Vec GennavModel::encode_text(const encoders::Instruction& inst) const {
  return text_.forward(inst, nullptr);
}

Vec GennavModel::ldpm_forward(const ImagePlane& img) const { return ldpm_forward(img, layout_); }

Vec GennavModel::ldpm_forward(const ImagePlane& img, const PatchLayout& layout) const {
  Vec sum = Vec::Zero(cfg_.dim());
  for (const auto& r : layout.rects) {
    const auto win = scale_to_image(r, layout, img.width, img.height);
    sum += visual_.encode_visual(crop(img, win.x, win.y, win.w, win.h));
  }
  return sum;
}

VlsimOutput GennavModel::vlsim_forward(const ImagePlane& img, const Vec& h_inst) const {
  const Vec f_vis = visual_.encode_visual(img);
  const Vec f_depth = visual_.encode_depth(img);
  Vec f_road = visual_.encode_road(img);
  return {vlsim_fuse(h_inst, f_vis, f_depth, f_road), std::move(f_road)};
}

Prediction GennavModel::make_prediction(const Vec& probs, const Vec& vertices) const {
  Prediction p;
  for (int i = 0; i < 3; ++i) p.existence[static_cast<std::size_t>(i)] = probs[i];
  p.vertices.reserve(static_cast<std::size_t>(cfg_.n_pt()));
  for (int i = 0; i < cfg_.n_pt(); ++i) p.vertices.emplace_back(vertices[2 * i], vertices[2 * i + 1]);
  return p;
}

Prediction GennavModel::expo_forward(const Vec& h_inst, const Vec& h_mm, const Vec& h_ldp,
                                     const Vec& road_feat) const {
  const Vec h_cmm = cmm_fuse(h_ldp, h_inst, h_mm);
  Vec joint(h_cmm.size() + road_feat.size());
  joint << h_cmm, road_feat;
  const Vec vertices = nn::sigmoid(reg_.forward(joint, nullptr));
  const Vec probs = nn::softmax(cls_.forward(joint, nullptr));
  return make_prediction(probs, vertices);
}

Prediction GennavModel::forward(const ImagePlane& img, std::string_view instruction) const {
  const Vec h_inst = encode_text(instruction);
  const Vec h_ldp = ldpm_forward(img);
  const auto vl = vlsim_forward(img, h_inst);
  return expo_forward(h_inst, vl.h_mm, h_ldp, vl.road_feat);
}

std::vector<Prediction> GennavModel::forward_batch(
    std::span<const ImagePlane> images, std::span<const std::string> instructions) const {
  if (images.size() != instructions.size()) {
    throw ShapeError("forward_batch: images and instructions differ in length");
  }
  std::vector<Prediction> out;
  out.reserve(images.size());
  for (std::size_t i = 0; i < images.size(); ++i) {
    out.push_back(forward(images[i], instructions[i]));
  }
  return out;
}

GennavModel::PreparedInput GennavModel::prepare(const ImagePlane& img,
                                                std::string_view instruction) const {
  PreparedInput in;
  if (text_adapter_) {
    in.text_embedding = encode_text(instruction);
  } else {
    in.instruction = vocab_.encode(instruction, cfg_.encoder.max_len);
  }
  in.visual = visual_.visual_input(img);
  in.depth = visual_.depth_input(img);
  in.road = visual_.road_input(img);
  for (const auto& r : layout_.rects) {
    const auto win = scale_to_image(r, layout_, img.width, img.height);
    in.patches.push_back(visual_.visual_input(crop(img, win.x, win.y, win.w, win.h)));
  }
  return in;
}

GennavModel::TrunkFeatures GennavModel::run_trunks(const PreparedInput& in,
                                                   bool keep_cache) const {
  using encoders::Stream;
  TrunkFeatures f;
  auto run = [&](Stream s, const ImagePlane& img) {
    if (!keep_cache) return visual_.trunk(s).forward(img, nullptr);
    f.caches.emplace_back();
    return visual_.trunk(s).forward(img, &f.caches.back());
  };
  f.visual = run(Stream::Visual, in.visual);
  f.depth = run(Stream::Depth, in.depth);
  f.road = run(Stream::Road, in.road);
  for (const auto& p : in.patches) f.patches.push_back(run(Stream::Visual, p));
  return f;
}

Prediction GennavModel::forward_features(const PreparedInput& in, const TrunkFeatures& feats,
                                         Trace* trace) const {
  using encoders::Stream;
  Trace local;
  Trace& t = trace != nullptr ? *trace : local;
  if (in.text_embedding) {
    t.h_inst = *in.text_embedding;
    t.text_trainable = false;
  } else {
    t.h_inst = text_.forward(in.instruction, &t.text);
    t.text_trainable = true;
  }
  t.f_vis = visual_.head(Stream::Visual).forward(feats.visual);
  t.f_depth = visual_.head(Stream::Depth).forward(feats.depth);
  t.f_road = visual_.head(Stream::Road).forward(feats.road);
  t.f_patches.clear();
  t.h_ldp = Vec::Zero(cfg_.dim());
  for (const auto& p : feats.patches) {
    t.f_patches.push_back(visual_.head(Stream::Visual).forward(p));
    t.h_ldp += t.f_patches.back();
  }
  t.sum_vis_depth = t.f_vis + t.f_depth;
  t.sum_road_depth = t.f_road + t.f_depth;
  t.h_mm = (t.h_inst.array() * t.sum_vis_depth.array() * t.sum_road_depth.array()).matrix();
  t.h_cmm = cmm_fuse(t.h_ldp, t.h_inst, t.h_mm);
  t.joint.resize(t.h_cmm.size() + t.f_road.size());
  t.joint << t.h_cmm, t.f_road;
  t.vertices = nn::sigmoid(reg_.forward(t.joint, &t.reg));
  t.logits = cls_.forward(t.joint, &t.cls);
  t.probs = nn::softmax(t.logits);
  return make_prediction(t.probs, t.vertices);
}

void GennavModel::backward(const Trace& t, const TrunkFeatures& feats, const Vec& dlogits,
                           const Vec& dvertices) {
  using encoders::Stream;
  const Eigen::Index d = cfg_.dim();
  const Vec dvert_pre = (dvertices.array() * t.vertices.array() * (1.0 - t.vertices.array())).matrix();
  Vec djoint = reg_.backward(t.reg, dvert_pre);
  djoint += cls_.backward(t.cls, dlogits);

  const Vec dh_cmm = djoint.head(d);
  Vec df_road = djoint.tail(d);

  const Vec dh_ldp = (dh_cmm.array() * t.h_inst.array()).matrix();
  Vec dh_inst = (dh_cmm.array() * t.h_ldp.array()).matrix();
  const Vec& dh_mm = dh_cmm;
  dh_inst += (dh_mm.array() * t.sum_vis_depth.array() * t.sum_road_depth.array()).matrix();
  const Vec ds1 = (dh_mm.array() * t.h_inst.array() * t.sum_road_depth.array()).matrix();
  const Vec ds2 = (dh_mm.array() * t.h_inst.array() * t.sum_vis_depth.array()).matrix();
  const Vec df_vis = ds1;
  const Vec df_depth = ds1 + ds2;
  df_road += ds2;

  const bool trunk_grads = trunk_trainable() && !feats.caches.empty();
  auto stream_backward = [&](Stream s, const Vec& feat, const Vec& dout, std::size_t cache_idx) {
    const Vec dfeat = visual_.head(s).backward(feat, dout);
    if (trunk_grads) visual_.trunk(s).backward(feats.caches[cache_idx], dfeat);
  };
  stream_backward(Stream::Visual, feats.visual, df_vis, 0);
  stream_backward(Stream::Depth, feats.depth, df_depth, 1);
  stream_backward(Stream::Road, feats.road, df_road, 2);
  for (std::size_t p = 0; p < feats.patches.size(); ++p) {
    stream_backward(Stream::Visual, feats.patches[p], dh_ldp, 3 + p);
  }

  if (t.text_trainable) text_.backward(t.text, dh_inst);
}

void GennavModel::visit(const nn::ParamVisitor& fn) {
  text_.visit(fn);
  visual_.visit(fn);
  reg_.visit(fn);
  cls_.visit(fn);
}

void GennavModel::visit(const nn::ConstParamVisitor& fn) const {
  text_.visit(fn);
  visual_.visit(fn);
  reg_.visit(fn);
  cls_.visit(fn);
}

void GennavModel::zero_grad() {
  visit(nn::ParamVisitor([](nn::Param& p) { p.zero_grad(); }));
}

std::size_t GennavModel::parameter_count() const {
  std::size_t n = 0;
  visit(nn::ConstParamVisitor([&n](const nn::Param& p) { n += static_cast<std::size_t>(p.value.size()); }));
  return n;
}

metrics::ExistenceLabel existence_argmax(const std::array<double, 3>& probs) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < 3; ++i) {
    if (probs[i] > probs[best]) best = i;
  }
  return static_cast<metrics::ExistenceLabel>(best);
}

DecodedPrediction decode_prediction(const Prediction& pred, const ModelConfig& cfg) {
  if (static_cast<int>(pred.vertices.size()) != cfg.n_pt()) {
    throw ShapeError("prediction has " + std::to_string(pred.vertices.size()) +
                     " vertices, config expects " + std::to_string(cfg.n_pt()));
  }
  DecodedPrediction out;
  out.existence = existence_argmax(pred.existence);
  auto slot = [&](int s) {
    const auto begin = pred.vertices.begin() + static_cast<std::ptrdiff_t>(s) * cfg.n_v;
    return geometry::normalize_polygon(
        geometry::Polygon({begin, begin + cfg.n_v}));
  };
  switch (out.existence) {
    case metrics::ExistenceLabel::NoTarget:
      break;
    case metrics::ExistenceLabel::SingleTarget:
      out.polygons.push_back(slot(0));
      break;
    case metrics::ExistenceLabel::MultiTarget:
      for (int s = 0; s < cfg.p_max; ++s) {
        auto poly = slot(s);
        if (std::abs(geometry::polygon_signed_area(poly)) >= kDegenerateSlotArea) {
          out.polygons.push_back(std::move(poly));
        }
      }
      break;
  }
  return out;
}

}  // namespace grnr::model
