#pragma once

// Small dense layers with hand-written backward passes. Everything is
// float64 so finite-difference checks are meaningful.

#include <Eigen/Dense>
#include <functional>
#include <random>
#include <string>
#include <vector>

namespace grnr::nn {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;
using Rng = std::mt19937_64;

struct Param {
  std::string name;
  Mat value;
  Mat grad;
  bool frozen = false;

  Param() = default;
  Param(std::string n, Eigen::Index rows, Eigen::Index cols)
      : name(std::move(n)), value(Mat::Zero(rows, cols)), grad(Mat::Zero(rows, cols)) {}

  void zero_grad() { grad.setZero(); }
};

using ParamVisitor = std::function<void(Param&)>;
using ConstParamVisitor = std::function<void(const Param&)>;

class Linear {
 public:
  Linear() = default;
  Linear(const std::string& name, int in, int out, bool bias = true);

  int in_features() const { return static_cast<int>(weight_.value.cols()); }
  int out_features() const { return static_cast<int>(weight_.value.rows()); }

  Vec forward(const Vec& x) const;
  // Accumulates parameter gradients and returns dL/dx.
  Vec backward(const Vec& x, const Vec& dy);

  void init_xavier(Rng& rng, double gain = 1.0);
  void zero();
  void visit(const ParamVisitor& fn);
  void visit(const ConstParamVisitor& fn) const;

  Param& weight() { return weight_; }
  Param& bias() { return bias_; }

 private:
  Param weight_;
  Param bias_;
  bool has_bias_ = true;
};

// Linear -> ReLU -> Linear.
class Mlp {
 public:
  struct Cache {
    Vec input;
    Vec pre;
    Vec hidden;
  };

  Mlp() = default;
  Mlp(const std::string& name, int in, int hidden, int out);

  Vec forward(const Vec& x, Cache* cache) const;
  Vec backward(const Cache& cache, const Vec& dy);

  void init(Rng& rng);
  Linear& first() { return l1_; }
  Linear& last() { return l2_; }
  void visit(const ParamVisitor& fn);
  void visit(const ConstParamVisitor& fn) const;

 private:
  Linear l1_;
  Linear l2_;
};

struct FeatureMap {
  int channels = 0;
  int height = 0;
  int width = 0;
  std::vector<double> data;

  FeatureMap() = default;
  FeatureMap(int c, int h, int w)
      : channels(c), height(h), width(w),
        data(static_cast<std::size_t>(c) * h * w, 0.0) {}

  double& at(int c, int y, int x) {
    return data[(static_cast<std::size_t>(c) * height + y) * width + x];
  }
  double at(int c, int y, int x) const {
    return data[(static_cast<std::size_t>(c) * height + y) * width + x];
  }
};

// 3x3 convolution, stride 2, zero padding 1.
class Conv2d {
 public:
  Conv2d() = default;
  Conv2d(const std::string& name, int in_channels, int out_channels);

  FeatureMap forward(const FeatureMap& x) const;
  FeatureMap backward(const FeatureMap& x, const FeatureMap& dy, bool need_dx);

  void init_he(Rng& rng);
  void visit(const ParamVisitor& fn);
  void visit(const ConstParamVisitor& fn) const;

 private:
  int in_ = 0;
  int out_ = 0;
  Param weight_;  // out x (in*9)
  Param bias_;    // out x 1
};

void relu_inplace(FeatureMap& m);
Vec relu(const Vec& x);

Vec softmax(const Vec& logits);
Vec sigmoid(const Vec& x);

}  // namespace grnr::nn
