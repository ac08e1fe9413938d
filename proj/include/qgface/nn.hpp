#pragma once

#include <string>
#include <utility>
#include <vector>

#include "qgface/autograd.hpp"
#include "qgface/rng.hpp"

namespace qgface {

struct Parameter {
  std::string name;
  Var var;
};

// Named non-trainable state (batch-norm running statistics).
struct Buffer {
  std::string name;
  Tensor* tensor;
};

struct Conv2dLayer {
  Var weight;  // (OC,C,KH,KW)
  Var bias;    // (OC)
  int stride = 1;
  int pad = 1;

  static Conv2dLayer make(int64_t in_ch, int64_t out_ch, int64_t k, int stride,
                          int pad, Rng& rng);
  Var forward(const Var& x) const {
    return ops::conv2d(x, weight, bias, stride, pad);
  }
};

struct BatchNorm2dLayer {
  Var gamma;
  Var beta;
  Tensor running_mean;
  Tensor running_var;
  double momentum = 0.1;
  double eps = 1e-5;

  static BatchNorm2dLayer make(int64_t channels);
  Var forward(const Var& x, bool training) {
    return ops::batchnorm2d(x, gamma, beta, running_mean, running_var,
                            training, momentum, eps);
  }
};

struct LinearLayer {
  Var weight;  // (F,O)
  Var bias;    // (O)

  static LinearLayer make(int64_t in_features, int64_t out_features, Rng& rng);
  Var forward(const Var& x) const { return ops::linear(x, weight, bias); }
};

// SGD with momentum and L2 weight decay, PyTorch update rule:
//   buf = mu * buf + (grad + wd * w);  w -= lr * buf
class SgdOptimizer {
 public:
  SgdOptimizer(std::vector<Parameter> params, double lr, double momentum,
               double weight_decay);

  void step();
  void zero_grad();
  void set_lr(double lr) { lr_ = lr; }
  double lr() const { return lr_; }

  const std::vector<Parameter>& params() const { return params_; }
  std::vector<Tensor>& momentum_buffers() { return buffers_; }

 private:
  std::vector<Parameter> params_;
  std::vector<Tensor> buffers_;
  double lr_;
  double momentum_;
  double weight_decay_;
};

}  // namespace qgface
