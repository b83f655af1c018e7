#include "grnr/encoders.hpp"

#include <algorithm>
#include <atomic>
#include <cctype>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include <unistd.h>

#include "grnr/errors.hpp"

namespace grnr::encoders {

Vocabulary::Vocabulary() : tokens_{"<unk>"} { index_["<unk>"] = kUnknown; }

Vocabulary Vocabulary::build(const std::vector<std::string>& texts) {
  std::set<std::string> uniq;
  for (const auto& t : texts) {
    for (auto& tok : tokenize(t)) uniq.insert(std::move(tok));
  }
  return from_tokens({uniq.begin(), uniq.end()});
}

Vocabulary Vocabulary::from_tokens(const std::vector<std::string>& tokens) {
  Vocabulary v;
  for (const auto& t : tokens) {
    if (t == "<unk>") continue;
    if (v.index_.emplace(t, static_cast<int>(v.tokens_.size())).second) v.tokens_.push_back(t);
  }
  return v;
}

std::vector<std::string> Vocabulary::tokenize(std::string_view text) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : text) {
    const auto c = static_cast<unsigned char>(ch);
    if (std::isalnum(c) != 0) {
      cur.push_back(static_cast<char>(std::tolower(c)));
    } else if (!cur.empty()) {
      out.push_back(std::move(cur));
      cur.clear();
    }
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

Instruction Vocabulary::encode(std::string_view text, int max_len) const {
  const auto toks = tokenize(text);
  if (toks.empty()) throw InvalidInput("instruction has no tokens: '" + std::string(text) + "'");
  Instruction inst;
  for (const auto& t : toks) {
    if (static_cast<int>(inst.token_ids.size()) >= max_len) break;
    const auto it = index_.find(t);
    inst.token_ids.push_back(it == index_.end() ? kUnknown : it->second);
  }
  return inst;
}

ImagePlane pseudo_depth(const ImagePlane& img) {
  if (!img.valid()) throw ShapeError("pseudo_depth of an invalid image");
  ImagePlane out(img.width, img.height);
  for (int y = 0; y < img.height; ++y) {
    const double v = img.height > 1 ? static_cast<double>(y) / (img.height - 1) : 1.0;
    for (int c = 0; c < ImagePlane::channels; ++c) {
      for (int x = 0; x < img.width; ++x) out.at(c, x, y) = v;
    }
  }
  return out;
}

ImagePlane overlay(const ImagePlane& img, const ImagePlane& depth, double alpha) {
  if (img.width != depth.width || img.height != depth.height || !img.valid() ||
      !depth.valid()) {
    throw ShapeError("overlay shape mismatch");
  }
  if (!(alpha >= 0.0 && alpha <= 1.0)) {
    throw InvalidInput("overlay alpha must lie in [0,1], got " + std::to_string(alpha));
  }
  if (alpha == 0.0) return img;
  if (alpha == 1.0) return depth;
  ImagePlane out = img;
  for (std::size_t i = 0; i < out.data.size(); ++i) {
    out.data[i] = alpha * depth.data[i] + (1.0 - alpha) * img.data[i];
  }
  return out;
}

ImagePlane road_mask(const ImagePlane& img) {
  if (!img.valid()) throw ShapeError("road_mask of an invalid image");
  ImagePlane out(img.width, img.height);
  constexpr double kTop = 0.6;        // trapezoid top edge, fraction of height
  constexpr double kTopWidth = 0.3;   // width at the top edge, fraction of width
  for (int y = 0; y < img.height; ++y) {
    const double fy = (y + 0.5) / img.height;
    if (fy < kTop) continue;
    const double t = (fy - kTop) / (1.0 - kTop);
    const double half = 0.5 * (kTopWidth + t * (1.0 - kTopWidth));
    for (int x = 0; x < img.width; ++x) {
      const double fx = (x + 0.5) / img.width;
      if (std::abs(fx - 0.5) <= half) {
        for (int c = 0; c < ImagePlane::channels; ++c) out.at(c, x, y) = 1.0;
      }
    }
  }
  return out;
}

namespace {

std::filesystem::path temp_path(const std::string& stem, const std::string& ext) {
  static std::atomic<unsigned long> counter{0};
  const auto n = counter.fetch_add(1);
  return std::filesystem::temp_directory_path() /
         ("grnr_" + stem + "_" + std::to_string(::getpid()) + "_" + std::to_string(n) + ext);
}

std::string substitute(std::string cmd, const std::string& in, const std::string& out) {
  auto replace_all = [&cmd](const std::string& key, const std::string& value) {
    for (std::size_t pos = cmd.find(key); pos != std::string::npos;
         pos = cmd.find(key, pos + value.size())) {
      cmd.replace(pos, key.size(), value);
    }
  };
  replace_all("{in}", in);
  replace_all("{out}", out);
  return cmd;
}

void run_adapter(const std::string& cmd) {
  const int rc = std::system(cmd.c_str());
  if (rc != 0) throw RuntimeFailure("adapter command failed (" + std::to_string(rc) + "): " + cmd);
}

ImagePlane run_image_adapter(const std::string& cmd, const ImagePlane& img, const char* what) {
  if (cmd.empty()) throw ConfigError(std::string("no adapter command configured for ") + what);
  const auto in = temp_path(what, "_in.ppm");
  const auto out = temp_path(what, "_out.ppm");
  save_ppm(img, in.string());
  try {
    run_adapter(substitute(cmd, in.string(), out.string()));
  } catch (...) {
    std::filesystem::remove(in);
    throw;
  }
  ImagePlane result = load_ppm(out.string());
  std::filesystem::remove(in);
  std::filesystem::remove(out);
  if (result.width != img.width || result.height != img.height) {
    result = resize_bilinear(result, img.width, img.height);
  }
  return result;
}

}  // namespace

ImagePlane ProcessDepthEstimator::estimate(const ImagePlane& img) const {
  return run_image_adapter(cmd_, img, "depth");
}

ImagePlane ProcessRoadSegmenter::segment(const ImagePlane& img) const {
  ImagePlane m = run_image_adapter(cmd_, img, "road");
  for (auto& v : m.data) v = v >= 0.5 ? 1.0 : 0.0;
  return m;
}

Vec ProcessTextEmbedder::embed(std::string_view text) const {
  if (cmd_.empty()) throw ConfigError("no adapter command configured for text");
  const auto in = temp_path("text", "_in.txt");
  const auto out = temp_path("text", "_out.json");
  {
    std::ofstream f(in);
    f << text;
  }
  run_adapter(substitute(cmd_, in.string(), out.string()));
  std::ifstream f(out);
  std::stringstream ss;
  ss << f.rdbuf();
  std::string body = ss.str();
  std::filesystem::remove(in);
  std::filesystem::remove(out);
  for (auto& ch : body) {
    if (ch == '[' || ch == ']' || ch == ',') ch = ' ';
  }
  std::istringstream values(body);
  std::vector<double> v;
  double x = 0.0;
  while (values >> x) v.push_back(x);
  if (static_cast<int>(v.size()) != dim_) {
    throw ShapeError("text adapter returned " + std::to_string(v.size()) +
                     " values, expected " + std::to_string(dim_));
  }
  return Eigen::Map<Vec>(v.data(), static_cast<Eigen::Index>(v.size()));
}

TextEncoder::TextEncoder(int vocab_size, int embed_dim, int dim)
    : table_("text.table", vocab_size, embed_dim), proj_("text.proj", embed_dim, dim, false) {}

Vec TextEncoder::forward(const Instruction& inst, Cache* cache) const {
  if (inst.token_ids.empty()) throw InvalidInput("empty instruction");
  Vec mean = Vec::Zero(table_.value.cols());
  for (int id : inst.token_ids) {
    if (id < 0 || id >= table_.value.rows()) {
      throw InvalidInput("token id " + std::to_string(id) + " outside vocabulary");
    }
    mean += table_.value.row(id).transpose();
  }
  mean /= static_cast<double>(inst.token_ids.size());
  Vec h = proj_.forward(mean);
  if (cache != nullptr) {
    cache->tokens = inst.token_ids;
    cache->mean = std::move(mean);
  }
  return h;
}

void TextEncoder::backward(const Cache& cache, const Vec& dh) {
  const Vec dmean = proj_.backward(cache.mean, dh);
  if (table_.frozen) return;
  const double scale = 1.0 / static_cast<double>(cache.tokens.size());
  for (int id : cache.tokens) table_.grad.row(id) += scale * dmean.transpose();
}

void TextEncoder::init(nn::Rng& rng) {
  std::normal_distribution<double> dist(0.0, 1.0);
  for (Eigen::Index i = 0; i < table_.value.size(); ++i) table_.value.data()[i] = dist(rng);
  proj_.init_xavier(rng);
}

void TextEncoder::visit(const nn::ParamVisitor& fn) {
  fn(table_);
  proj_.visit(fn);
}

void TextEncoder::visit(const nn::ConstParamVisitor& fn) const {
  fn(table_);
  proj_.visit(fn);
}

Trunk::Trunk(const std::string& name, const std::vector<int>& channels, bool coord_channels)
    : channels_(channels), coord_channels_(coord_channels) {
  if (channels.size() != 3) throw ConfigError("trunk needs exactly 3 channel widths");
  int in = ImagePlane::channels + (coord_channels ? 2 : 0);
  for (std::size_t i = 0; i < channels.size(); ++i) {
    convs_.emplace_back(name + ".conv" + std::to_string(i + 1), in, channels[i]);
    in = channels[i];
  }
}

Vec Trunk::forward(const ImagePlane& img, Cache* cache) const {
  const int extra = coord_channels_ ? 2 : 0;
  nn::FeatureMap x(ImagePlane::channels + extra, img.height, img.width);
  std::copy(img.data.begin(), img.data.end(), x.data.begin());
  if (coord_channels_) {
    for (int y = 0; y < img.height; ++y) {
      for (int c = 0; c < img.width; ++c) {
        x.at(3, y, c) = (c + 0.5) / img.width;
        x.at(4, y, c) = (y + 0.5) / img.height;
      }
    }
  }
  if (cache != nullptr) {
    cache->inputs.clear();
    cache->pre.clear();
  }
  for (const auto& conv : convs_) {
    nn::FeatureMap pre = conv.forward(x);
    nn::FeatureMap act = pre;
    nn::relu_inplace(act);
    if (cache != nullptr) {
      cache->inputs.push_back(std::move(x));
      cache->pre.push_back(std::move(pre));
    }
    x = std::move(act);
  }
  Vec pooled = Vec::Zero(x.channels);
  const double area = static_cast<double>(x.height) * x.width;
  for (int c = 0; c < x.channels; ++c) {
    double s = 0.0;
    for (int r = 0; r < x.height; ++r) {
      for (int col = 0; col < x.width; ++col) s += x.at(c, r, col);
    }
    pooled[c] = s / area;
  }
  if (cache != nullptr) cache->last_shape = {x.channels, x.height, x.width};
  return pooled;
}

void Trunk::backward(const Cache& cache, const Vec& dpooled) {
  const int ch = cache.last_shape[0];
  const int h = cache.last_shape[1];
  const int w = cache.last_shape[2];
  nn::FeatureMap d(ch, h, w);
  const double inv = 1.0 / (static_cast<double>(h) * w);
  for (int c = 0; c < ch; ++c) {
    for (int r = 0; r < h; ++r) {
      for (int col = 0; col < w; ++col) d.at(c, r, col) = dpooled[c] * inv;
    }
  }
  for (int i = static_cast<int>(convs_.size()) - 1; i >= 0; --i) {
    const auto& pre = cache.pre[static_cast<std::size_t>(i)];
    for (std::size_t k = 0; k < d.data.size(); ++k) {
      if (pre.data[k] <= 0.0) d.data[k] = 0.0;
    }
    d = convs_[static_cast<std::size_t>(i)].backward(cache.inputs[static_cast<std::size_t>(i)], d,
                                                     i > 0);
  }
}

void Trunk::init(nn::Rng& rng) {
  for (auto& c : convs_) c.init_he(rng);
}

void Trunk::set_frozen(bool frozen) {
  visit(nn::ParamVisitor([frozen](nn::Param& p) { p.frozen = frozen; }));
}

void Trunk::visit(const nn::ParamVisitor& fn) {
  for (auto& c : convs_) c.visit(fn);
}

void Trunk::visit(const nn::ConstParamVisitor& fn) const {
  for (const auto& c : convs_) c.visit(fn);
}

VisualEncoders::VisualEncoders(const EncoderConfig& cfg)
    : cfg_(cfg),
      depth_(std::make_shared<ToyDepthEstimator>()),
      road_(std::make_shared<ToyRoadSegmenter>()) {
  if (cfg.dim < 1) throw ConfigError("encoder dim must be >= 1");
  if (cfg.input_size < 1) throw ConfigError("encoder input_size must be >= 1");
  const int n_trunks = cfg.shared_trunk ? 1 : 3;
  static const char* kNames[] = {"trunk.visual", "trunk.depth", "trunk.road"};
  for (int i = 0; i < n_trunks; ++i) {
    trunks_.emplace_back(cfg.shared_trunk ? "trunk" : kNames[i], cfg.channels, cfg.coord_channels);
    trunks_.back().set_frozen(cfg.freeze_trunk);
  }
  const int feat = trunks_.front().out_features();
  heads_.emplace_back("head.visual", feat, cfg.dim);
  heads_.emplace_back("head.depth", feat, cfg.dim);
  heads_.emplace_back("head.road", feat, cfg.dim);
}

Trunk& VisualEncoders::trunk(Stream s) {
  return cfg_.shared_trunk ? trunks_.front() : trunks_[static_cast<std::size_t>(s)];
}

const Trunk& VisualEncoders::trunk(Stream s) const {
  return cfg_.shared_trunk ? trunks_.front() : trunks_[static_cast<std::size_t>(s)];
}

ImagePlane VisualEncoders::visual_input(const ImagePlane& img) const {
  return resize_bilinear(img, cfg_.input_size, cfg_.input_size);
}

ImagePlane VisualEncoders::depth_input(const ImagePlane& img) const {
  const ImagePlane small = visual_input(img);
  return overlay(small, depth_->estimate(small), cfg_.alpha);
}

ImagePlane VisualEncoders::road_input(const ImagePlane& img) const {
  return road_->segment(visual_input(img));
}

Vec VisualEncoders::encode_visual(const ImagePlane& img) const {
  return head(Stream::Visual).forward(trunk(Stream::Visual).forward(visual_input(img), nullptr));
}

Vec VisualEncoders::encode_depth(const ImagePlane& img) const {
  return head(Stream::Depth).forward(trunk(Stream::Depth).forward(depth_input(img), nullptr));
}

Vec VisualEncoders::encode_road(const ImagePlane& img) const {
  return head(Stream::Road).forward(trunk(Stream::Road).forward(road_input(img), nullptr));
}

void VisualEncoders::init(nn::Rng& rng) {
  for (auto& t : trunks_) t.init(rng);
  for (auto& h : heads_) h.init_xavier(rng);
}

void VisualEncoders::visit(const nn::ParamVisitor& fn) {
  for (auto& t : trunks_) t.visit(fn);
  for (auto& h : heads_) h.visit(fn);
}

void VisualEncoders::visit(const nn::ConstParamVisitor& fn) const {
  for (const auto& t : trunks_) t.visit(fn);
  for (const auto& h : heads_) h.visit(fn);
}

}  // namespace grnr::encoders
