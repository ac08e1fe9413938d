#include "qgface/encoder.hpp"

#include <cmath>

namespace qgface {

namespace {
constexpr int64_t kTiny4Channels[4] = {16, 32, 64, 128};
}

Encoder::Encoder(const EncoderSpec& spec) : spec_(spec) {
  Rng rng(derive_seed(spec.param_seed, {0x454e43ULL}));  // encoder param stream
  if (spec_.architecture == "tiny4") {
    build_tiny4(rng);
  } else if (spec_.architecture == "resnet34") {
    build_resnet34(rng);
  } else {
    throw ConfigError("unknown encoder architecture: " + spec_.architecture);
  }
}

void Encoder::build_tiny4(Rng& rng) {
  int64_t in_ch = 3;
  for (int64_t out_ch : kTiny4Channels) {
    Block b;
    b.conv = Conv2dLayer::make(in_ch, out_ch, 3, 2, 1, rng);
    b.bn = BatchNorm2dLayer::make(out_ch);
    blocks_.push_back(std::move(b));
    in_ch = out_ch;
  }
  head_ = LinearLayer::make(in_ch, spec_.embedding_dim, rng);
}

void Encoder::build_resnet34(Rng& rng) {
  has_stem_ = true;
  stem_conv_ = Conv2dLayer::make(3, 64, 3, 1, 1, rng);
  stem_bn_ = BatchNorm2dLayer::make(64);
  const int64_t stage_channels[4] = {64, 128, 256, 512};
  const int stage_blocks[4] = {3, 4, 6, 3};
  int64_t in_ch = 64;
  for (int s = 0; s < 4; ++s) {
    for (int i = 0; i < stage_blocks[s]; ++i) {
      const int stride = (i == 0) ? 2 : 1;  // face-recognition variant: downsample at every stage head
      const int64_t out_ch = stage_channels[s];
      ResBlock rb;
      rb.conv1 = Conv2dLayer::make(in_ch, out_ch, 3, stride, 1, rng);
      rb.bn1 = BatchNorm2dLayer::make(out_ch);
      rb.conv2 = Conv2dLayer::make(out_ch, out_ch, 3, 1, 1, rng);
      rb.bn2 = BatchNorm2dLayer::make(out_ch);
      if (stride != 1 || in_ch != out_ch) {
        rb.has_downsample = true;
        rb.down_conv = Conv2dLayer::make(in_ch, out_ch, 1, stride, 0, rng);
        rb.down_bn = BatchNorm2dLayer::make(out_ch);
      }
      resblocks_.push_back(std::move(rb));
      in_ch = out_ch;
    }
  }
  head_ = LinearLayer::make(in_ch, spec_.embedding_dim, rng);
}

Var Encoder::forward(const Tensor& images, bool training) {
  if (images.ndim() != 4 || images.dim(1) != 3 ||
      images.dim(2) != spec_.input_height || images.dim(3) != spec_.input_width)
    throw InvalidInputError("encoder: image batch shape mismatch");
  Var x = make_const(images);
  if (spec_.architecture == "tiny4") {
    for (auto& b : blocks_)
      x = ops::relu(b.bn.forward(b.conv.forward(x), training));
  } else {
    x = ops::relu(stem_bn_.forward(stem_conv_.forward(x), training));
    for (auto& rb : resblocks_) {
      Var identity = x;
      Var y = ops::relu(rb.bn1.forward(rb.conv1.forward(x), training));
      y = rb.bn2.forward(rb.conv2.forward(y), training);
      if (rb.has_downsample)
        identity = rb.down_bn.forward(rb.down_conv.forward(x), training);
      x = ops::relu(ops::add(y, identity));
    }
  }
  return head_.forward(ops::global_avg_pool(x));
}

EmbeddingBatch Encoder::embed(const Tensor& images, std::vector<int> labels,
                              std::vector<int> stream, bool training) {
  EmbeddingBatch out;
  out.features = forward(images, training);
  if (!out.features->value.all_finite())
    throw NumericError("encoder produced non-finite features");
  out.norms = feature_norms(out.features->value);
  out.labels = std::move(labels);
  out.stream = std::move(stream);
  return out;
}

std::vector<Parameter> Encoder::parameters() {
  std::vector<Parameter> out;
  auto push_conv = [&](const std::string& base, Conv2dLayer& c) {
    out.push_back({base + ".weight", c.weight});
    out.push_back({base + ".bias", c.bias});
  };
  auto push_bn = [&](const std::string& base, BatchNorm2dLayer& b) {
    out.push_back({base + ".gamma", b.gamma});
    out.push_back({base + ".beta", b.beta});
  };
  if (spec_.architecture == "tiny4") {
    for (size_t i = 0; i < blocks_.size(); ++i) {
      const std::string base = "block" + std::to_string(i);
      push_conv(base + ".conv", blocks_[i].conv);
      push_bn(base + ".bn", blocks_[i].bn);
    }
  } else {
    push_conv("stem.conv", stem_conv_);
    push_bn("stem.bn", stem_bn_);
    for (size_t i = 0; i < resblocks_.size(); ++i) {
      const std::string base = "res" + std::to_string(i);
      push_conv(base + ".conv1", resblocks_[i].conv1);
      push_bn(base + ".bn1", resblocks_[i].bn1);
      push_conv(base + ".conv2", resblocks_[i].conv2);
      push_bn(base + ".bn2", resblocks_[i].bn2);
      if (resblocks_[i].has_downsample) {
        push_conv(base + ".down.conv", resblocks_[i].down_conv);
        push_bn(base + ".down.bn", resblocks_[i].down_bn);
      }
    }
  }
  out.push_back({"head.weight", head_.weight});
  out.push_back({"head.bias", head_.bias});
  return out;
}

std::vector<Buffer> Encoder::buffers() {
  std::vector<Buffer> out;
  auto push_bn = [&](const std::string& base, BatchNorm2dLayer& b) {
    out.push_back({base + ".running_mean", &b.running_mean});
    out.push_back({base + ".running_var", &b.running_var});
  };
  if (spec_.architecture == "tiny4") {
    for (size_t i = 0; i < blocks_.size(); ++i)
      push_bn("block" + std::to_string(i) + ".bn", blocks_[i].bn);
  } else {
    push_bn("stem.bn", stem_bn_);
    for (size_t i = 0; i < resblocks_.size(); ++i) {
      const std::string base = "res" + std::to_string(i);
      push_bn(base + ".bn1", resblocks_[i].bn1);
      push_bn(base + ".bn2", resblocks_[i].bn2);
      if (resblocks_[i].has_downsample) push_bn(base + ".down.bn", resblocks_[i].down_bn);
    }
  }
  return out;
}

std::vector<double> feature_norms(const Tensor& features) {
  if (features.ndim() != 2)
    throw InvalidInputError("feature_norms: expected (N,d)");
  const int64_t n = features.dim(0), d = features.dim(1);
  std::vector<double> norms(static_cast<size_t>(n));
  for (int64_t i = 0; i < n; ++i) {
    double s = 0;
    for (int64_t j = 0; j < d; ++j) s += features.at(i, j) * features.at(i, j);
    norms[static_cast<size_t>(i)] = std::sqrt(s);
  }
  return norms;
}

}  // namespace qgface
