#pragma once

#include <memory>
#include <string>
#include <vector>

#include "qgface/nn.hpp"

namespace qgface {

struct EncoderSpec {
  int64_t input_height = 112;
  int64_t input_width = 112;
  int64_t embedding_dim = 64;
  std::string architecture = "tiny4";  // "tiny4" | "resnet34"
  uint64_t param_seed = 0;
};

// Encoder output for one batch: raw (pre-normalization) features, their L2
// norms, and pass-through labels / stream tags (0 = original, 1 = augmented).
struct EmbeddingBatch {
  Var features;  // (N,d) raw
  std::vector<double> norms;
  std::vector<int> labels;
  std::vector<int> stream;
};

// Pluggable embedding network. The default "tiny4" is four stride-2 conv
// blocks with batch norm, global average pooling and a linear head — small
// enough to train on CPU. "resnet34" builds the full residual stack for
// larger runs.
class Encoder {
 public:
  explicit Encoder(const EncoderSpec& spec);

  // images: (N,3,H,W), pixel values already normalized.
  Var forward(const Tensor& images, bool training);

  EmbeddingBatch embed(const Tensor& images, std::vector<int> labels,
                       std::vector<int> stream, bool training);

  const EncoderSpec& spec() const { return spec_; }
  std::vector<Parameter> parameters();
  std::vector<Buffer> buffers();

 private:
  struct Block {
    Conv2dLayer conv;
    BatchNorm2dLayer bn;
  };
  struct ResBlock {
    Conv2dLayer conv1, conv2;
    BatchNorm2dLayer bn1, bn2;
    bool has_downsample = false;
    Conv2dLayer down_conv;
    BatchNorm2dLayer down_bn;
  };

  void build_tiny4(Rng& rng);
  void build_resnet34(Rng& rng);

  EncoderSpec spec_;
  std::vector<Block> blocks_;        // tiny4 path
  std::vector<ResBlock> resblocks_;  // resnet path
  Conv2dLayer stem_conv_;
  BatchNorm2dLayer stem_bn_;
  bool has_stem_ = false;
  LinearLayer head_;
};

// L2 norms of the rows of a (N,d) value, outside the autodiff graph.
std::vector<double> feature_norms(const Tensor& features);

}  // namespace qgface
