#include <doctest.h>

#include <cmath>

#include "qgface/classification.hpp"
#include "testutil.hpp"

using namespace qgface;

namespace {

// Reference per-sample loss built straight from the softmax-margin form:
// the target logit is cos(theta + g_angle) - g_add via explicit arccos, the
// negatives stay plain cosines, everything scaled by s.
double per_sample_loss_oracle(double cos_t, const std::vector<double>& cos_neg,
                              double z_hat, double m, double s) {
  const double g_angle = -m * z_hat;
  const double g_add = m * z_hat + m;
  const double theta = std::acos(std::clamp(cos_t, -1.0, 1.0));
  const double f = std::cos(theta + g_angle) - g_add;
  double denom = std::exp(s * f);
  for (double c : cos_neg) denom += std::exp(s * c);
  return -std::log(std::exp(s * f) / denom);
}

double p_target_oracle(double cos_t, const std::vector<double>& cos_neg,
                       double z_hat, double m, double s) {
  const double g_angle = -m * z_hat;
  const double g_add = m * z_hat + m;
  const double theta = std::acos(std::clamp(cos_t, -1.0, 1.0));
  const double f = std::cos(theta + g_angle) - g_add;
  double denom = std::exp(s * f);
  for (double c : cos_neg) denom += std::exp(s * c);
  return std::exp(s * f) / denom;
}

ClassifierProxies make_proxies(const Tensor& W, double s, double m) {
  ClassifierProxies p = ClassifierProxies::make(W.dim(0), W.dim(1), s, m, 0);
  p.W->value = W;
  return p;
}

}  // namespace

TEST_CASE("adaface margins at the three reference indicator values") {
  auto [ga, gadd] = adaface_margins({0.0, -1.0, 1.0}, 0.4);
  CHECK(ga[0] == doctest::Approx(0.0));
  CHECK(gadd[0] == doctest::Approx(0.4));
  CHECK(ga[1] == doctest::Approx(0.4));
  CHECK(gadd[1] == doctest::Approx(0.0));
  CHECK(ga[2] == doctest::Approx(-0.4));
  CHECK(gadd[2] == doctest::Approx(0.8));
}

TEST_CASE("target logit reduces to CosFace at z=0 and ArcFace at z=-1") {
  Rng rng(100);
  for (int trial = 0; trial < 500; ++trial) {
    const double m = rng.uniform(0.05, 0.6);
    const double theta = rng.uniform(0.05, 3.0);
    Tensor W({2, 2});
    W.at(0, 0) = 1.0;  // target proxy along e1
    W.at(1, 1) = 1.0;
    ClassifierProxies proxies = make_proxies(W, 1.0, m);
    Tensor f({1, 2});
    f.at(0, 0) = std::cos(theta) * 2.0;
    f.at(0, 1) = std::sin(theta) * 2.0;

    Var logits0 = adaface_logits(make_const(f), {0}, proxies, {0.0});
    CHECK(logits0->value.at(0, 0) ==
          doctest::Approx(std::cos(theta) - m).epsilon(1e-9));

    Var logits1 = adaface_logits(make_const(f), {0}, proxies, {-1.0});
    CHECK(logits1->value.at(0, 0) ==
          doctest::Approx(std::cos(theta + m)).epsilon(1e-9));
  }
}

TEST_CASE("modulated logits match an arccos-based oracle on a random 3-class toy") {
  Rng rng(101);
  for (int trial = 0; trial < 50; ++trial) {
    Tensor W = testutil::random_tensor({4, 3}, rng, -1.0, 1.0);
    ClassifierProxies proxies = make_proxies(W, 64.0, 0.4);
    Tensor f = testutil::random_tensor({2, 4}, rng, -1.0, 1.0);
    std::vector<int> labels = {static_cast<int>(rng.uniform_int(0, 2)),
                               static_cast<int>(rng.uniform_int(0, 2))};
    std::vector<double> z_hat = {rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0)};
    Var logits = adaface_logits(make_const(f), labels, proxies, z_hat);
    for (int64_t i = 0; i < 2; ++i) {
      for (int64_t j = 0; j < 3; ++j) {
        double fn = 0, wn = 0, dot = 0;
        for (int64_t k = 0; k < 4; ++k) {
          fn += f.at(i, k) * f.at(i, k);
          wn += W.at(k, j) * W.at(k, j);
          dot += f.at(i, k) * W.at(k, j);
        }
        const double cos_ij = dot / std::sqrt(fn) / std::sqrt(wn);
        double expected = cos_ij;
        if (j == labels[static_cast<size_t>(i)]) {
          const double ga = -0.4 * z_hat[static_cast<size_t>(i)];
          const double gadd = 0.4 * z_hat[static_cast<size_t>(i)] + 0.4;
          expected = std::cos(std::acos(std::clamp(cos_ij, -1.0, 1.0)) + ga) - gadd;
        }
        CHECK(std::abs(logits->value.at(i, j) - expected) < 1e-6);
      }
    }
  }
}

TEST_CASE("aligned single sample reproduces the closed-form loss") {
  // n=2, feature aligned with its proxy, z=0, m=0.4, s=64:
  // loss = -log(e^{64*0.6} / (e^{64*0.6} + e^{64*cos(theta_2)}))
  Tensor W({2, 2});
  W.at(0, 0) = 1.0;
  W.at(0, 1) = 0.6;
  W.at(1, 1) = 0.8;
  ClassifierProxies proxies = make_proxies(W, 64.0, 0.4);
  Tensor f({1, 2});
  f.at(0, 0) = 2.0;  // theta = 0 against proxy 0; cos to proxy 1 = 0.6
  Var features = make_const(f);
  ClassificationOutput out =
      classification_loss(features, {0}, proxies, {0.0}, {true});
  const double expected =
      -std::log(std::exp(64.0 * 0.6) / (std::exp(64.0 * 0.6) + std::exp(64.0 * 0.6)));
  CHECK(out.loss->value[0] == doctest::Approx(expected).epsilon(1e-9));
  CHECK(out.loss->value[0] == doctest::Approx(std::log(2.0)).epsilon(1e-9));
}

TEST_CASE("empty mask yields exact zero loss and zero gradients") {
  Rng rng(103);
  Tensor W = testutil::random_tensor({4, 3}, rng);
  ClassifierProxies proxies = make_proxies(W, 64.0, 0.4);
  Var features = make_param(testutil::random_tensor({3, 4}, rng, 0.2, 1.0));
  ClassificationOutput out = classification_loss(
      features, {0, 1, 2}, proxies, {0.0, 0.0, 0.0}, {false, false, false});
  CHECK(out.loss->value[0] == 0.0);
  CHECK(out.num_used == 0);
  CHECK_FALSE(out.loss->requires_grad);
  CHECK(std::isnan(out.p_target[0]));
}

TEST_CASE("uniform one-hot case hits the log-n baseline at m=0 and the softmax oracle at m=0.4") {
  const int64_t n = 8;
  Tensor W({n, n});
  for (int64_t j = 0; j < n; ++j) W.at(j, j) = 1.0;
  Tensor f = Tensor::full({1, n}, 1.0 / std::sqrt(static_cast<double>(n)));

  SUBCASE("m = 0: plain uniform softmax") {
    ClassifierProxies proxies = make_proxies(W, 64.0, 0.0);
    ClassificationOutput out = classification_loss(
        make_const(f), {3}, proxies, {0.0}, {true});
    CHECK(out.loss->value[0] ==
          doctest::Approx(std::log(static_cast<double>(n))).epsilon(1e-9));
  }
  SUBCASE("m = 0.4: matches brute-force softmax evaluation") {
    ClassifierProxies proxies = make_proxies(W, 64.0, 0.4);
    ClassificationOutput out = classification_loss(
        make_const(f), {3}, proxies, {0.0}, {true});
    const double c = 1.0 / std::sqrt(static_cast<double>(n));
    std::vector<double> negs(static_cast<size_t>(n - 1), c);
    CHECK(out.loss->value[0] ==
          doctest::Approx(per_sample_loss_oracle(c, negs, 0.0, 0.4, 64.0))
              .epsilon(1e-9));
  }
}

TEST_CASE("gst closed forms and degenerate flag") {
  SUBCASE("g_angle = 0 gives P - 1") {
    const auto g = gst({0.3}, {0.5}, {0.0});
    CHECK(g[0] == doctest::Approx(-0.7));
  }
  SUBCASE("saturated sample vanishes") {
    const auto g = gst({1.0 - 1e-12}, {0.5}, {0.2});
    CHECK(std::abs(g[0]) < 1e-9);
  }
  SUBCASE("sin below threshold returns the g_angle=0 limit with a flag") {
    std::vector<bool> flags;
    const auto g = gst({0.25}, {1.0 - 1e-15}, {0.3}, &flags);
    CHECK(flags[0]);
    CHECK(g[0] == doctest::Approx(0.25 - 1.0));
  }
}

TEST_CASE("gst matches central finite differences of the per-sample loss") {
  Rng rng(107);
  double worst = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    const double cos_t = rng.uniform(-0.95, 0.95);
    const double z_hat = rng.uniform(-1.0, 1.0);
    const double m = rng.uniform(0.1, 0.5);
    const double s = rng.uniform(8.0, 64.0);
    std::vector<double> negs;
    const int nn = static_cast<int>(rng.uniform_int(1, 6));
    for (int j = 0; j < nn; ++j) negs.push_back(rng.uniform(-1.0, 1.0));

    const double h = 1e-6;
    const double fd = (per_sample_loss_oracle(cos_t + h, negs, z_hat, m, s) -
                       per_sample_loss_oracle(cos_t - h, negs, z_hat, m, s)) /
                      (2 * h);
    const double p = p_target_oracle(cos_t, negs, z_hat, m, s);
    const auto g = gst({p}, {cos_t}, {-m * z_hat});
    // Eq. 12 strips the constant logit scale; the raw loss derivative is s*g.
    worst = std::max(worst, std::abs(g[0] - fd / s));
  }
  CHECK(worst < 1e-4);
}

TEST_CASE("raising the target logit with negatives pinned never raises the loss") {
  // Proxies chosen so that rotating the feature in the e1/e2 plane changes
  // only the target cosine: the negative proxies sit along e3.
  Rng rng(109);
  Tensor W({3, 3});
  W.at(0, 0) = 1.0;
  W.at(2, 1) = 1.0;
  W.at(2, 2) = 1.0;
  ClassifierProxies proxies = make_proxies(W, 24.0, 0.35);
  for (int trial = 0; trial < 200; ++trial) {
    double phi1 = rng.uniform(0.05, 2.8);
    double phi2 = rng.uniform(0.05, 2.8);
    if (phi2 > phi1) std::swap(phi1, phi2);  // phi2 <= phi1 -> larger cosine
    auto loss_at = [&](double phi) {
      Tensor f({1, 3});
      f.at(0, 0) = std::cos(phi);
      f.at(0, 1) = std::sin(phi);
      return classification_loss(make_const(f), {0}, proxies, {0.0}, {true})
          .loss->value[0];
    };
    CHECK(loss_at(phi2) <= loss_at(phi1) + 1e-12);
  }
}

TEST_CASE("masked-out samples receive exactly zero gradient") {
  Rng rng(113);
  Tensor W = testutil::random_tensor({4, 5}, rng);
  ClassifierProxies proxies = make_proxies(W, 32.0, 0.4);
  Var features = make_param(testutil::random_tensor({4, 4}, rng, 0.3, 1.2));
  std::vector<bool> mask = {true, false, true, false};
  ClassificationOutput out = classification_loss(
      features, {0, 1, 2, 3}, proxies, {0.1, -0.2, 0.5, 0.0}, mask);
  backward(out.loss);
  for (int64_t j = 0; j < 4; ++j) {
    CHECK(features->grad.at(1, j) == 0.0);
    CHECK(features->grad.at(3, j) == 0.0);
  }
  // masked-in rows do receive gradient
  double sum = 0;
  for (int64_t j = 0; j < 4; ++j) sum += std::abs(features->grad.at(0, j));
  CHECK(sum > 0.0);
}

TEST_CASE("classification loss gradient matches finite differences end to end") {
  Rng rng(127);
  Tensor W = testutil::random_tensor({5, 4}, rng);
  ClassifierProxies proxies = make_proxies(W, 16.0, 0.4);
  Var features = make_param(testutil::random_tensor({3, 5}, rng, 0.3, 1.2));
  const std::vector<int> labels = {2, 0, 3};
  const std::vector<double> z_hat = {0.2, -0.6, 0.9};
  const std::vector<bool> mask = {true, true, true};
  auto build = [&] {
    return classification_loss(features, labels, proxies, z_hat, mask).loss;
  };
  CHECK(testutil::max_grad_error(features, build, 1e-6) < 1e-6);
  CHECK(testutil::max_grad_error(proxies.W, build, 1e-6) < 1e-6);
}

TEST_CASE("p_target agrees with an independent softmax of the scaled logits") {
  Rng rng(131);
  Tensor W = testutil::random_tensor({4, 6}, rng);
  ClassifierProxies proxies = make_proxies(W, 64.0, 0.4);
  Var features = make_const(testutil::random_tensor({3, 4}, rng, 0.3, 1.2));
  const std::vector<int> labels = {5, 1, 3};
  ClassificationOutput out = classification_loss(
      features, labels, proxies, {0.0, 0.5, -0.5}, {true, true, true});
  for (int64_t i = 0; i < 3; ++i) {
    double denom = 0;
    for (int64_t j = 0; j < 6; ++j) denom += std::exp(64.0 * out.logits.at(i, j));
    const double p =
        std::exp(64.0 * out.logits.at(i, labels[static_cast<size_t>(i)])) / denom;
    CHECK(out.p_target[static_cast<size_t>(i)] == doctest::Approx(p).epsilon(1e-9));
    CHECK(out.p_target[static_cast<size_t>(i)] > 0.0);
    CHECK(out.p_target[static_cast<size_t>(i)] < 1.0);
  }
}

TEST_CASE("error paths: zero-norm feature, bad label, non-finite input") {
  Rng rng(137);
  Tensor W = testutil::random_tensor({3, 2}, rng);
  ClassifierProxies proxies = make_proxies(W, 64.0, 0.4);
  Tensor zero({1, 3});
  CHECK_THROWS_AS(classification_loss(make_const(zero), {0}, proxies, {0.0}, {true}),
                  InvalidInputError);
  Tensor ok = testutil::random_tensor({1, 3}, rng, 0.5, 1.0);
  CHECK_THROWS_AS(classification_loss(make_const(ok), {7}, proxies, {0.0}, {true}),
                  InvalidInputError);
  Tensor bad = ok;
  bad.at(0, 1) = std::nan("");
  CHECK_THROWS_AS(classification_loss(make_const(bad), {0}, proxies, {0.0}, {true}),
                  NumericError);
}
