#include "qgface/nn.hpp"

#include <cmath>

namespace qgface {

Conv2dLayer Conv2dLayer::make(int64_t in_ch, int64_t out_ch, int64_t k,
                              int stride, int pad, Rng& rng) {
  Conv2dLayer layer;
  Tensor w({out_ch, in_ch, k, k});
  const double std = std::sqrt(2.0 / static_cast<double>(in_ch * k * k));
  for (int64_t i = 0; i < w.numel(); ++i) w[i] = rng.normal(0.0, std);
  layer.weight = make_param(std::move(w));
  layer.bias = make_param(Tensor::zeros({out_ch}));
  layer.stride = stride;
  layer.pad = pad;
  return layer;
}

BatchNorm2dLayer BatchNorm2dLayer::make(int64_t channels) {
  BatchNorm2dLayer layer;
  layer.gamma = make_param(Tensor::full({channels}, 1.0));
  layer.beta = make_param(Tensor::zeros({channels}));
  layer.running_mean = Tensor::zeros({channels});
  layer.running_var = Tensor::full({channels}, 1.0);
  return layer;
}

LinearLayer LinearLayer::make(int64_t in_features, int64_t out_features,
                              Rng& rng) {
  LinearLayer layer;
  Tensor w({in_features, out_features});
  const double bound = std::sqrt(6.0 / static_cast<double>(in_features + out_features));
  for (int64_t i = 0; i < w.numel(); ++i) w[i] = rng.uniform(-bound, bound);
  layer.weight = make_param(std::move(w));
  layer.bias = make_param(Tensor::zeros({out_features}));
  return layer;
}

SgdOptimizer::SgdOptimizer(std::vector<Parameter> params, double lr,
                           double momentum, double weight_decay)
    : params_(std::move(params)),
      lr_(lr),
      momentum_(momentum),
      weight_decay_(weight_decay) {
  buffers_.reserve(params_.size());
  for (const auto& p : params_)
    buffers_.push_back(Tensor::zeros(p.var->value.shape()));
}

void SgdOptimizer::step() {
  for (size_t i = 0; i < params_.size(); ++i) {
    Node& node = *params_[i].var;
    if (!node.grad_ready) node.ensure_grad();
    Eigen::ArrayXd g =
        node.grad.array() + weight_decay_ * node.value.array();
    buffers_[i].array() = momentum_ * buffers_[i].array() + g;
    node.value.array() -= lr_ * buffers_[i].array();
  }
}

void SgdOptimizer::zero_grad() {
  for (auto& p : params_) p.var->clear_grad();
}

}  // namespace qgface
