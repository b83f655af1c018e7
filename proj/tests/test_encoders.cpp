#include <gtest/gtest.h>

#include <utility>

#include "grnr/encoders.hpp"
#include "grnr/errors.hpp"
#include "grnr/model.hpp"
#include "grnr/training.hpp"

using namespace grnr;
using namespace grnr::encoders;

namespace {

ImagePlane noise_image(int w, int h, std::uint64_t seed) {
  nn::Rng rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  ImagePlane img(w, h);
  for (auto& v : img.data) v = u(rng);
  return img;
}

EncoderConfig small_config() {
  EncoderConfig c;
  c.dim = 8;
  c.input_size = 16;
  c.channels = {4, 4, 8};
  c.text_embed_dim = 6;
  return c;
}

}  // namespace

TEST(Tokenizer, LowercasesAndSplits) {
  EXPECT_EQ(Vocabulary::tokenize("Stop, LEFT of the car!"),
            (std::vector<std::string>{"stop", "left", "of", "the", "car"}));
}

TEST(Vocabulary, EncodeTruncatesAndMapsUnknown) {
  const auto v = Vocabulary::build({"stop left of the red box"});
  EXPECT_EQ(v.tokens().front(), "<unk>");
  const auto inst = v.encode("stop near the purple box", 32);
  ASSERT_EQ(inst.token_ids.size(), 5u);
  EXPECT_EQ(inst.token_ids[1], Vocabulary::kUnknown);
  EXPECT_EQ(inst.token_ids[3], Vocabulary::kUnknown);
  EXPECT_NE(inst.token_ids[0], Vocabulary::kUnknown);
  EXPECT_EQ(v.encode("a b c d e", 3).token_ids.size(), 3u);
  EXPECT_THROW(v.encode("  ,. ", 32), InvalidInput);
}

TEST(TextEncoder, DeterministicAndOrderFree) {
  const auto vocab = Vocabulary::build({"stop left of the red box"});
  TextEncoder enc(vocab.size(), 6, 8);
  nn::Rng rng(1);
  enc.init(rng);
  const auto a = enc.forward(vocab.encode("stop left of the red box", 32), nullptr);
  const auto b = enc.forward(vocab.encode("stop left of the red box", 32), nullptr);
  const auto c = enc.forward(vocab.encode("box red the of left stop", 32), nullptr);
  EXPECT_EQ(a, b);
  EXPECT_LT((a - c).cwiseAbs().maxCoeff(), 1e-15);
  EXPECT_EQ(a.size(), 8);
}

TEST(TextEncoder, ZeroTableGivesZero) {
  const auto vocab = Vocabulary::build({"stop left of the red box"});
  TextEncoder enc(vocab.size(), 6, 8);
  nn::Rng rng(2);
  enc.init(rng);
  enc.table().value.setZero();
  EXPECT_EQ(enc.forward(vocab.encode("red box", 32), nullptr), Vec::Zero(8));
}

TEST(PseudoDepth, VerticalRamp) {
  const auto d = pseudo_depth(noise_image(7, 5, 3));
  ASSERT_EQ(d.width, 7);
  ASSERT_EQ(d.height, 5);
  for (int c = 0; c < 3; ++c) {
    for (int x = 0; x < 7; ++x) {
      EXPECT_EQ(d.at(c, x, 0), 0.0);
      EXPECT_EQ(d.at(c, x, 4), 1.0);
      EXPECT_DOUBLE_EQ(d.at(c, x, 2), 0.5);
    }
  }
  EXPECT_EQ(pseudo_depth(ImagePlane(7, 5, 0.3)), d);  // content-free
}

TEST(Overlay, BlendCases) {
  const ImagePlane img(4, 3, 0.2);
  const ImagePlane depth(4, 3, 0.6);
  EXPECT_EQ(overlay(img, depth, 0.0), img);
  EXPECT_EQ(overlay(img, depth, 1.0), depth);
  const auto half = overlay(img, depth, 0.5);
  for (double v : half.data) EXPECT_DOUBLE_EQ(v, 0.4);
  EXPECT_THROW(overlay(img, ImagePlane(3, 3, 0.0), 0.5), ShapeError);
  EXPECT_THROW(overlay(img, depth, 1.5), InvalidInput);
}

TEST(RoadMask, TrapezoidPrior) {
  const int w = 160, h = 90;
  const auto m = road_mask(ImagePlane(w, h, 0.7));
  ASSERT_EQ(m.width, w);
  ASSERT_EQ(m.height, h);
  for (int c = 0; c < 3; ++c) {
    EXPECT_EQ(m.at(c, w / 2, static_cast<int>(0.9 * h)), 1.0);
    EXPECT_EQ(m.at(c, w / 2, static_cast<int>(0.1 * h)), 0.0);
    EXPECT_EQ(m.at(c, 0, static_cast<int>(0.7 * h)), 0.0);  // narrow top edge
  }
  for (double v : m.data) EXPECT_TRUE(v == 0.0 || v == 1.0);
}

TEST(VisualEncoders, ZeroHeadGivesZero) {
  VisualEncoders enc(small_config());
  nn::Rng rng(4);
  enc.init(rng);
  enc.head(Stream::Visual).zero();
  EXPECT_EQ(enc.encode_visual(ImagePlane(20, 12, 0.0)), Vec::Zero(8));
}

TEST(VisualEncoders, DeterministicWithCommonDimension) {
  VisualEncoders enc(small_config());
  nn::Rng rng(5);
  enc.init(rng);
  const auto img = noise_image(24, 18, 6);
  EXPECT_EQ(enc.encode_visual(img), enc.encode_visual(img));
  EXPECT_EQ(enc.encode_visual(img).size(), 8);
  EXPECT_EQ(enc.encode_depth(img).size(), 8);
  EXPECT_EQ(enc.encode_road(img).size(), 8);
}

TEST(VisualEncoders, DepthWithAlphaZeroIsVisualPathThroughDepthHead) {
  auto cfg = small_config();
  cfg.alpha = 0.0;
  VisualEncoders enc(cfg);
  nn::Rng rng(7);
  enc.init(rng);
  enc.head(Stream::Depth).weight().value = enc.head(Stream::Visual).weight().value;
  enc.head(Stream::Depth).bias().value = enc.head(Stream::Visual).bias().value;
  const auto img = noise_image(30, 20, 8);
  EXPECT_EQ(enc.encode_depth(img), enc.encode_visual(img));
}

TEST(VisualEncoders, SeparateTrunks) {
  auto cfg = small_config();
  cfg.shared_trunk = false;
  VisualEncoders enc(cfg);
  EXPECT_NE(&enc.trunk(Stream::Visual), &enc.trunk(Stream::Road));
  auto shared = small_config();
  VisualEncoders one(shared);
  EXPECT_EQ(&one.trunk(Stream::Visual), &one.trunk(Stream::Road));
}

TEST(VisualEncoders, FrozenTrunkUnchangedByTrainingStep) {
  model::ModelConfig mc;
  mc.encoder = small_config();
  mc.encoder.freeze_trunk = true;
  mc.hidden = 16;
  mc.layout = {40, 30, 16, 12, 2, 4};
  const auto vocab = Vocabulary::build({"stop left of the red box"});
  model::GennavModel net(mc, vocab, model::fallback_band_layout(40, 30, 16, 12, 2), 9);

  std::map<std::string, nn::Mat> before;
  std::as_const(net).visit(nn::ConstParamVisitor([&](const nn::Param& p) { before[p.name] = p.value; }));

  const auto img = noise_image(40, 30, 10);
  const std::vector<geometry::Polygon> polys{geometry::Polygon({{0.1, 0.5}, {0.4, 0.5}, {0.4, 0.9}, {0.1, 0.9}})};
  const auto target = training::polygon_targets(polys, mc);
  const auto in = net.prepare(img, "stop left of the red box");
  const auto feats = net.run_trunks(in, net.trunk_trainable());
  model::GennavModel::Trace trace;
  const auto pred = net.forward_features(in, feats, &trace);
  training::LossGradient g;
  training::loss(pred, target, 3.0, &g, &trace.logits);
  net.zero_grad();
  net.backward(trace, feats, g.dlogits, g.dvertices);
  training::AdamW opt(0.9, 0.98, 1e-8, 0.0);
  opt.step(net, 1e-2);

  int frozen = 0, moved = 0;
  std::as_const(net).visit(nn::ConstParamVisitor([&](const nn::Param& p) {
    if (p.frozen) {
      ++frozen;
      EXPECT_EQ(p.value, before.at(p.name)) << p.name;
    } else if (p.value != before.at(p.name)) {
      ++moved;
    }
  }));
  EXPECT_GT(frozen, 0);
  EXPECT_GT(moved, 0);
}

TEST(Adapters, ExternalProcessRoundTrip) {
  const auto img = noise_image(6, 4, 11);
  ProcessDepthEstimator depth("cp {in} {out}");
  const auto d = depth.estimate(img);
  ASSERT_EQ(d.width, 6);
  for (std::size_t i = 0; i < img.data.size(); ++i) EXPECT_NEAR(d.data[i], img.data[i], 0.5 / 255 + 1e-12);

  ProcessRoadSegmenter road("cp {in} {out}");
  for (double v : road.segment(img).data) EXPECT_TRUE(v == 0.0 || v == 1.0);

  ProcessTextEmbedder text("printf '[1, 2.5, -3]' > {out}", 3);
  const auto e = text.embed("red box");
  EXPECT_EQ(e, (Vec(3) << 1.0, 2.5, -3.0).finished());
  ProcessTextEmbedder wrong("printf '[1]' > {out}", 3);
  EXPECT_THROW(wrong.embed("red box"), ShapeError);
  ProcessDepthEstimator broken("false");
  EXPECT_THROW(broken.estimate(img), RuntimeFailure);
}
