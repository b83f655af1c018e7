#include "grnr/nn.hpp"

#include <cmath>

namespace grnr::nn {

Linear::Linear(const std::string& name, int in, int out, bool bias)
    : weight_(name + ".weight", out, in), has_bias_(bias) {
  if (has_bias_) bias_ = Param(name + ".bias", out, 1);
}

Vec Linear::forward(const Vec& x) const {
  Vec y = weight_.value * x;
  if (has_bias_) y += bias_.value.col(0);
  return y;
}

Vec Linear::backward(const Vec& x, const Vec& dy) {
  if (!weight_.frozen) weight_.grad.noalias() += dy * x.transpose();
  if (has_bias_ && !bias_.frozen) bias_.grad.col(0) += dy;
  return weight_.value.transpose() * dy;
}

void Linear::init_xavier(Rng& rng, double gain) {
  const double limit =
      gain * std::sqrt(6.0 / static_cast<double>(in_features() + out_features()));
  std::uniform_real_distribution<double> dist(-limit, limit);
  for (Eigen::Index i = 0; i < weight_.value.size(); ++i) weight_.value.data()[i] = dist(rng);
  if (has_bias_) bias_.value.setZero();
}

void Linear::zero() {
  weight_.value.setZero();
  if (has_bias_) bias_.value.setZero();
}

void Linear::visit(const ParamVisitor& fn) {
  fn(weight_);
  if (has_bias_) fn(bias_);
}

void Linear::visit(const ConstParamVisitor& fn) const {
  fn(weight_);
  if (has_bias_) fn(bias_);
}

Mlp::Mlp(const std::string& name, int in, int hidden, int out)
    : l1_(name + ".fc1", in, hidden), l2_(name + ".fc2", hidden, out) {}

Vec Mlp::forward(const Vec& x, Cache* cache) const {
  Vec pre = l1_.forward(x);
  Vec hidden = relu(pre);
  Vec y = l2_.forward(hidden);
  if (cache != nullptr) {
    cache->input = x;
    cache->pre = std::move(pre);
    cache->hidden = std::move(hidden);
  }
  return y;
}

Vec Mlp::backward(const Cache& cache, const Vec& dy) {
  Vec dh = l2_.backward(cache.hidden, dy);
  for (Eigen::Index i = 0; i < dh.size(); ++i) {
    if (cache.pre[i] <= 0.0) dh[i] = 0.0;
  }
  return l1_.backward(cache.input, dh);
}

void Mlp::init(Rng& rng) {
  l1_.init_xavier(rng, std::sqrt(2.0));
  l2_.init_xavier(rng);
}

void Mlp::visit(const ParamVisitor& fn) {
  l1_.visit(fn);
  l2_.visit(fn);
}

void Mlp::visit(const ConstParamVisitor& fn) const {
  l1_.visit(fn);
  l2_.visit(fn);
}

Conv2d::Conv2d(const std::string& name, int in_channels, int out_channels)
    : in_(in_channels),
      out_(out_channels),
      weight_(name + ".weight", out_channels, in_channels * 9),
      bias_(name + ".bias", out_channels, 1) {}

namespace {
int conv_out_size(int n) { return (n - 1) / 2 + 1; }
}  // namespace

FeatureMap Conv2d::forward(const FeatureMap& x) const {
  const int oh = conv_out_size(x.height);
  const int ow = conv_out_size(x.width);
  FeatureMap y(out_, oh, ow);
  for (int o = 0; o < out_; ++o) {
    const double b = bias_.value(o, 0);
    for (int r = 0; r < oh; ++r) {
      for (int c = 0; c < ow; ++c) {
        double acc = b;
        for (int i = 0; i < in_; ++i) {
          for (int ky = 0; ky < 3; ++ky) {
            const int iy = 2 * r - 1 + ky;
            if (iy < 0 || iy >= x.height) continue;
            for (int kx = 0; kx < 3; ++kx) {
              const int ix = 2 * c - 1 + kx;
              if (ix < 0 || ix >= x.width) continue;
              acc += weight_.value(o, i * 9 + ky * 3 + kx) * x.at(i, iy, ix);
            }
          }
        }
        y.at(o, r, c) = acc;
      }
    }
  }
  return y;
}

FeatureMap Conv2d::backward(const FeatureMap& x, const FeatureMap& dy, bool need_dx) {
  FeatureMap dx;
  if (need_dx) dx = FeatureMap(x.channels, x.height, x.width);
  const bool train = !weight_.frozen;
  for (int o = 0; o < out_; ++o) {
    for (int r = 0; r < dy.height; ++r) {
      for (int c = 0; c < dy.width; ++c) {
        const double g = dy.at(o, r, c);
        if (g == 0.0) continue;
        if (train) bias_.grad(o, 0) += g;
        for (int i = 0; i < in_; ++i) {
          for (int ky = 0; ky < 3; ++ky) {
            const int iy = 2 * r - 1 + ky;
            if (iy < 0 || iy >= x.height) continue;
            for (int kx = 0; kx < 3; ++kx) {
              const int ix = 2 * c - 1 + kx;
              if (ix < 0 || ix >= x.width) continue;
              const int k = i * 9 + ky * 3 + kx;
              if (train) weight_.grad(o, k) += g * x.at(i, iy, ix);
              if (need_dx) dx.at(i, iy, ix) += g * weight_.value(o, k);
            }
          }
        }
      }
    }
  }
  return dx;
}

void Conv2d::init_he(Rng& rng) {
  std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / (in_ * 9.0)));
  for (Eigen::Index i = 0; i < weight_.value.size(); ++i) weight_.value.data()[i] = dist(rng);
  bias_.value.setConstant(0.01);
}

void Conv2d::visit(const ParamVisitor& fn) {
  fn(weight_);
  fn(bias_);
}

void Conv2d::visit(const ConstParamVisitor& fn) const {
  fn(weight_);
  fn(bias_);
}

void relu_inplace(FeatureMap& m) {
  for (auto& v : m.data) v = v > 0.0 ? v : 0.0;
}

Vec relu(const Vec& x) { return x.cwiseMax(0.0); }

Vec softmax(const Vec& logits) {
  const double m = logits.maxCoeff();
  Vec e = (logits.array() - m).exp();
  return e / e.sum();
}

Vec sigmoid(const Vec& x) { return (1.0 / (1.0 + (-x.array()).exp())).matrix(); }

}  // namespace grnr::nn
