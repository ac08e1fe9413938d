#include <doctest.h>

#include <cmath>

#include "qgface/encoder.hpp"
#include "testutil.hpp"

using namespace qgface;

namespace {
EncoderSpec tiny_spec(int64_t size, int64_t dim, uint64_t seed = 3) {
  EncoderSpec spec;
  spec.input_height = spec.input_width = size;
  spec.embedding_dim = dim;
  spec.architecture = "tiny4";
  spec.param_seed = seed;
  return spec;
}
}  // namespace

TEST_CASE("embed returns one d-vector per image with matching norms") {
  Encoder enc(tiny_spec(32, 16));
  Rng rng(1);
  Tensor images = testutil::random_tensor({5, 3, 32, 32}, rng);
  EmbeddingBatch out = enc.embed(images, {0, 1, 2, 3, 4}, {0, 0, 0, 1, 1}, true);
  CHECK(out.features->value.shape() == std::vector<int64_t>{5, 16});
  REQUIRE(out.norms.size() == 5);
  for (size_t i = 0; i < 5; ++i) {
    double s = 0;
    for (int64_t j = 0; j < 16; ++j)
      s += out.features->value.at(static_cast<int64_t>(i), j) *
           out.features->value.at(static_cast<int64_t>(i), j);
    CHECK(std::abs(out.norms[i] - std::sqrt(s)) < 1e-6);
  }
}

TEST_CASE("duplicate images produce identical rows in eval mode") {
  Encoder enc(tiny_spec(32, 16));
  Rng rng(2);
  Tensor one = testutil::random_tensor({1, 3, 32, 32}, rng);
  Tensor images({3, 3, 32, 32});
  for (int64_t n = 0; n < 3; ++n)
    for (int64_t i = 0; i < one.numel(); ++i)
      images[n * one.numel() + i] = one[i];
  Var feats = enc.forward(images, false);
  for (int64_t j = 0; j < 16; ++j) {
    CHECK(feats->value.at(0, j) == feats->value.at(1, j));
    CHECK(feats->value.at(1, j) == feats->value.at(2, j));
  }
}

TEST_CASE("encoder gradient w.r.t. parameters matches finite differences") {
  // Tiny input so the full FD sweep stays fast; covers conv, batchnorm,
  // relu, pooling and the linear head in one pass.
  Encoder enc(tiny_spec(16, 4, 11));
  Rng rng(3);
  Tensor images = testutil::random_tensor({2, 3, 16, 16}, rng);
  auto params = enc.parameters();

  auto build = [&] {
    Var f = enc.forward(images, true);
    return ops::mean_all(ops::mul(f, f));
  };
  // spot-check a few parameters end to end (full sweep over every tensor
  // element would be minutes; one conv kernel, one bn pair, the head)
  const std::vector<std::string> picked = {"block0.conv.weight", "block2.bn.gamma",
                                           "block3.bn.beta", "head.weight",
                                           "head.bias"};
  for (const auto& name : picked) {
    for (const auto& p : params) {
      if (p.name != name) continue;
      Var leaf = p.var;
      Var loss = build();
      leaf->clear_grad();
      for (auto& q : params) q.var->clear_grad();
      backward(loss);
      Tensor analytic = leaf->grad_ready ? leaf->grad : Tensor::zeros(leaf->value.shape());
      double worst = 0;
      const int64_t stride = std::max<int64_t>(1, leaf->value.numel() / 16);
      for (int64_t i = 0; i < leaf->value.numel(); i += stride) {
        const double num =
            testutil::numeric_grad(leaf, i, [&] { return build()->value[0]; }, 1e-5);
        worst = std::max(worst, std::abs(analytic[i] - num));
      }
      CHECK(worst < 1e-3);
    }
  }
}

TEST_CASE("shape mismatch and unknown architecture are rejected") {
  Encoder enc(tiny_spec(32, 16));
  Rng rng(4);
  Tensor wrong = testutil::random_tensor({1, 3, 16, 16}, rng);
  CHECK_THROWS_AS(enc.forward(wrong, false), InvalidInputError);
  EncoderSpec bad = tiny_spec(32, 16);
  bad.architecture = "vit";
  CHECK_THROWS_AS(Encoder{bad}, ConfigError);
}

TEST_CASE("resnet34 knob builds and produces the configured dimension") {
  EncoderSpec spec = tiny_spec(56, 512, 1);
  spec.architecture = "resnet34";
  Encoder enc(spec);
  Rng rng(5);
  Tensor images = testutil::random_tensor({1, 3, 56, 56}, rng);
  Var f = enc.forward(images, false);
  CHECK(f->value.shape() == std::vector<int64_t>{1, 512});
  CHECK(f->value.all_finite());
  CHECK(enc.parameters().size() > 100);  // 16 blocks of conv/bn pairs plus stem/head
}

TEST_CASE("parameter seed controls initialization deterministically") {
  Encoder a(tiny_spec(32, 8, 42));
  Encoder b(tiny_spec(32, 8, 42));
  Encoder c(tiny_spec(32, 8, 43));
  auto pa = a.parameters(), pb = b.parameters(), pc = c.parameters();
  bool any_diff = false;
  for (size_t i = 0; i < pa.size(); ++i) {
    for (int64_t j = 0; j < pa[i].var->value.numel(); ++j) {
      CHECK(pa[i].var->value[j] == pb[i].var->value[j]);
      any_diff |= pa[i].var->value[j] != pc[i].var->value[j];
    }
  }
  CHECK(any_diff);
}
