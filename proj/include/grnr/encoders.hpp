#pragma once

#include <map>
#include <memory>
#include <string>
#include <string_view>
#include <vector>

#include "grnr/image.hpp"
#include "grnr/nn.hpp"

namespace grnr::encoders {

using nn::Vec;

struct EncoderConfig {
  std::string kind = "toy";  // toy | adapter
  int dim = 64;
  int input_size = 32;       // square side every stream image is resized to
  std::vector<int> channels = {8, 16, 32};
  bool shared_trunk = true;
  bool freeze_trunk = false;
  bool coord_channels = true;  // append x/y ramps to the trunk input
  double alpha = 0.5;
  int text_embed_dim = 64;
  int max_len = 32;
  // Adapter commands; {in} and {out} are replaced by temp file paths.
  std::string depth_cmd;
  std::string road_cmd;
  std::string text_cmd;
};

// Token ids into a Vocabulary, truncated to max_len.
struct Instruction {
  std::vector<int> token_ids;
};

class Vocabulary {
 public:
  static constexpr int kUnknown = 0;

  Vocabulary();
  // Sorted, de-duplicated token list built from the given texts.
  static Vocabulary build(const std::vector<std::string>& texts);
  static Vocabulary from_tokens(const std::vector<std::string>& tokens);

  static std::vector<std::string> tokenize(std::string_view text);

  // Empty text (no tokens) is an invalid-input error.
  Instruction encode(std::string_view text, int max_len) const;

  int size() const { return static_cast<int>(tokens_.size()); }
  const std::vector<std::string>& tokens() const { return tokens_; }

 private:
  std::vector<std::string> tokens_;  // index 0 is <unk>
  std::map<std::string, int> index_;
};

// Toy pseudo-depth: vertical ramp, 0 on the top row, 1 on the bottom row.
ImagePlane pseudo_depth(const ImagePlane& img);
// alpha * depth + (1 - alpha) * img.
ImagePlane overlay(const ImagePlane& img, const ImagePlane& depth, double alpha);
// Toy road prior: bottom-centred trapezoid over the lower 40% of the frame,
// full width at the bottom edge, 30% width at its top edge.
ImagePlane road_mask(const ImagePlane& img);

class DepthEstimator {
 public:
  virtual ~DepthEstimator() = default;
  virtual ImagePlane estimate(const ImagePlane& img) const = 0;
};

class RoadSegmenter {
 public:
  virtual ~RoadSegmenter() = default;
  virtual ImagePlane segment(const ImagePlane& img) const = 0;
};

class TextEmbedder {
 public:
  virtual ~TextEmbedder() = default;
  virtual Vec embed(std::string_view text) const = 0;
};

class ToyDepthEstimator final : public DepthEstimator {
 public:
  ImagePlane estimate(const ImagePlane& img) const override { return pseudo_depth(img); }
};

class ToyRoadSegmenter final : public RoadSegmenter {
 public:
  ImagePlane segment(const ImagePlane& img) const override { return road_mask(img); }
};

// External-process adapters. The command receives an input file and must
// write its result to the output file: PPM images for depth/road, a JSON
// array of numbers for text embeddings.
class ProcessDepthEstimator final : public DepthEstimator {
 public:
  explicit ProcessDepthEstimator(std::string cmd) : cmd_(std::move(cmd)) {}
  ImagePlane estimate(const ImagePlane& img) const override;

 private:
  std::string cmd_;
};

class ProcessRoadSegmenter final : public RoadSegmenter {
 public:
  explicit ProcessRoadSegmenter(std::string cmd) : cmd_(std::move(cmd)) {}
  ImagePlane segment(const ImagePlane& img) const override;

 private:
  std::string cmd_;
};

class ProcessTextEmbedder final : public TextEmbedder {
 public:
  ProcessTextEmbedder(std::string cmd, int dim) : cmd_(std::move(cmd)), dim_(dim) {}
  Vec embed(std::string_view text) const override;

 private:
  std::string cmd_;
  int dim_;
};

// Mean of a trainable token table followed by a bias-free linear map to D.
class TextEncoder {
 public:
  struct Cache {
    std::vector<int> tokens;
    Vec mean;
  };

  TextEncoder() = default;
  TextEncoder(int vocab_size, int embed_dim, int dim);

  Vec forward(const Instruction& inst, Cache* cache) const;
  void backward(const Cache& cache, const Vec& dh);

  void init(nn::Rng& rng);
  nn::Param& table() { return table_; }
  void visit(const nn::ParamVisitor& fn);
  void visit(const nn::ConstParamVisitor& fn) const;

 private:
  nn::Param table_;  // vocab x embed_dim
  nn::Linear proj_;
};

// Three stride-2 conv blocks (conv + ReLU) and a global average pool.
class Trunk {
 public:
  struct Cache {
    std::vector<nn::FeatureMap> inputs;  // input of each conv block
    std::vector<nn::FeatureMap> pre;     // pre-activation of each block
    std::vector<int> last_shape;
  };

  Trunk() = default;
  Trunk(const std::string& name, const std::vector<int>& channels, bool coord_channels);

  int out_features() const { return channels_.empty() ? 0 : channels_.back(); }
  Vec forward(const ImagePlane& img, Cache* cache) const;
  void backward(const Cache& cache, const Vec& dpooled);

  void init(nn::Rng& rng);
  void set_frozen(bool frozen);
  void visit(const nn::ParamVisitor& fn);
  void visit(const nn::ConstParamVisitor& fn) const;

 private:
  std::vector<int> channels_;
  bool coord_channels_ = true;
  std::vector<nn::Conv2d> convs_;
};

enum class Stream { Visual = 0, Depth = 1, Road = 2 };

// f_vis, f_depth and f_road: trunk(s) plus a trainable linear projection
// head per stream.
class VisualEncoders {
 public:
  VisualEncoders() = default;
  explicit VisualEncoders(const EncoderConfig& cfg);

  const EncoderConfig& config() const { return cfg_; }

  // Stream inputs at encoder resolution.
  ImagePlane visual_input(const ImagePlane& img) const;
  ImagePlane depth_input(const ImagePlane& img) const;
  ImagePlane road_input(const ImagePlane& img) const;

  Vec encode_visual(const ImagePlane& img) const;
  Vec encode_depth(const ImagePlane& img) const;
  Vec encode_road(const ImagePlane& img) const;

  Trunk& trunk(Stream s);
  const Trunk& trunk(Stream s) const;
  nn::Linear& head(Stream s) { return heads_[static_cast<int>(s)]; }
  const nn::Linear& head(Stream s) const { return heads_[static_cast<int>(s)]; }

  void set_depth_estimator(std::shared_ptr<const DepthEstimator> e) { depth_ = std::move(e); }
  void set_road_segmenter(std::shared_ptr<const RoadSegmenter> s) { road_ = std::move(s); }

  void init(nn::Rng& rng);
  void visit(const nn::ParamVisitor& fn);
  void visit(const nn::ConstParamVisitor& fn) const;

 private:
  EncoderConfig cfg_;
  std::vector<Trunk> trunks_;  // one if shared, else one per stream
  std::vector<nn::Linear> heads_;
  std::shared_ptr<const DepthEstimator> depth_;
  std::shared_ptr<const RoadSegmenter> road_;
};

}  // namespace grnr::encoders
