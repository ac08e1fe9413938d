#include <doctest.h>

#include "qgface/autograd.hpp"
#include "testutil.hpp"

using namespace qgface;
using namespace qgface::ops;
using testutil::max_grad_error;
using testutil::random_tensor;

namespace {
Var sum_sq(const Var& v) { return mean_all(mul(v, v)); }
}

TEST_CASE("elementwise ops match finite differences") {
  Rng rng(7);
  Var a = make_param(random_tensor({3, 4}, rng));
  Var b = make_param(random_tensor({3, 4}, rng));

  CHECK(max_grad_error(a, [&] { return sum_sq(add(a, b)); }) < 1e-8);
  CHECK(max_grad_error(b, [&] { return sum_sq(sub(a, b)); }) < 1e-8);
  CHECK(max_grad_error(a, [&] { return sum_sq(mul(a, b)); }) < 1e-8);
  CHECK(max_grad_error(a, [&] { return mean_all(scale(a, 3.25)); }) < 1e-8);
  CHECK(max_grad_error(a, [&] { return sum_all(add_scalar(a, 0.7)); }) < 1e-8);
}

TEST_CASE("matmul and row-vector broadcast match finite differences") {
  Rng rng(11);
  Var a = make_param(random_tensor({4, 3}, rng));
  Var b = make_param(random_tensor({3, 5}, rng));
  Var bias = make_param(random_tensor({5}, rng));
  auto build = [&] { return sum_sq(add_rowvec(matmul(a, b), bias)); };
  CHECK(max_grad_error(a, build) < 1e-7);
  CHECK(max_grad_error(b, build) < 1e-7);
  CHECK(max_grad_error(bias, build) < 1e-7);
}

TEST_CASE("relu subgradient and normalize ops match finite differences") {
  Rng rng(13);
  Var a = make_param(random_tensor({4, 6}, rng, 0.2, 2.0));  // away from kink/zero
  Tensor weight = random_tensor({4, 6}, rng);
  CHECK(max_grad_error(a, [&] { return sum_sq(relu(a)); }) < 1e-7);
  CHECK(max_grad_error(a, [&] {
          return sum_all(mul(l2_normalize_rows(a), make_const(weight)));
        }) < 1e-7);
}

TEST_CASE("l2_normalize_cols matches finite differences") {
  Rng rng(17);
  Var a = make_param(random_tensor({5, 3}, rng, 0.3, 1.5));
  Tensor weight = random_tensor({5, 3}, rng);
  auto build = [&] {
    return sum_all(mul(l2_normalize_cols(a), make_const(weight)));
  };
  CHECK(max_grad_error(a, build) < 1e-7);
}

TEST_CASE("select and concat route gradients to the right rows") {
  Rng rng(19);
  Var a = make_param(random_tensor({5, 3}, rng));
  Var b = make_param(random_tensor({2, 3}, rng));
  auto build = [&] {
    Var sel = select_rows(a, {4, 0, 2});
    return sum_sq(concat_rows(sel, b));
  };
  CHECK(max_grad_error(a, build) < 1e-8);
  CHECK(max_grad_error(b, build) < 1e-8);

  Var loss = build();
  backward(loss);
  // rows 1 and 3 were never selected
  for (int64_t j = 0; j < 3; ++j) {
    CHECK(a->grad.at(1, j) == 0.0);
    CHECK(a->grad.at(3, j) == 0.0);
  }
}

TEST_CASE("conv2d matches finite differences") {
  Rng rng(23);
  Var x = make_param(random_tensor({2, 3, 6, 6}, rng));
  Var w = make_param(random_tensor({4, 3, 3, 3}, rng, -0.5, 0.5));
  Var b = make_param(random_tensor({4}, rng));
  auto build = [&] { return sum_sq(conv2d(x, w, b, 2, 1)); };
  CHECK(max_grad_error(x, build) < 1e-6);
  CHECK(max_grad_error(w, build) < 1e-6);
  CHECK(max_grad_error(b, build) < 1e-6);
}

TEST_CASE("conv2d shape contract") {
  Rng rng(27);
  Var x = make_param(random_tensor({1, 3, 8, 8}, rng));
  Var w = make_param(random_tensor({5, 3, 3, 3}, rng));
  Var b = make_param(Tensor::zeros({5}));
  Var y = conv2d(x, w, b, 2, 1);
  CHECK(y->value.shape() == std::vector<int64_t>{1, 5, 4, 4});
  CHECK_THROWS_AS(conv2d(x, make_param(random_tensor({5, 2, 3, 3}, rng)), b, 2, 1),
                  InvalidInputError);
}

TEST_CASE("batchnorm2d matches finite differences in both modes") {
  Rng rng(29);
  Var x = make_param(random_tensor({3, 2, 4, 4}, rng));
  Var gamma = make_param(random_tensor({2}, rng, 0.5, 1.5));
  Var beta = make_param(random_tensor({2}, rng));

  SUBCASE("training mode") {
    auto build = [&] {
      Tensor rm = Tensor::zeros({2}), rv = Tensor::full({2}, 1.0);
      return sum_sq(batchnorm2d(x, gamma, beta, rm, rv, true));
    };
    CHECK(max_grad_error(x, build, 1e-5) < 1e-6);
    CHECK(max_grad_error(gamma, build) < 1e-6);
    CHECK(max_grad_error(beta, build) < 1e-6);
  }
  SUBCASE("eval mode uses running stats") {
    Tensor rm = random_tensor({2}, rng);
    Tensor rv = random_tensor({2}, rng, 0.5, 2.0);
    auto build = [&] {
      Tensor rm2 = rm, rv2 = rv;
      return sum_sq(batchnorm2d(x, gamma, beta, rm2, rv2, false));
    };
    CHECK(max_grad_error(x, build) < 1e-6);
  }
  SUBCASE("running statistics update") {
    Tensor rm = Tensor::zeros({2}), rv = Tensor::full({2}, 1.0);
    batchnorm2d(x, gamma, beta, rm, rv, true, 0.1);
    // running mean moved toward the batch mean
    double batch_mean = 0;
    for (int64_t n = 0; n < 3; ++n)
      for (int64_t h = 0; h < 4; ++h)
        for (int64_t w = 0; w < 4; ++w) batch_mean += x->value.at(n, 0, h, w);
    batch_mean /= 48.0;
    CHECK(rm[0] == doctest::Approx(0.1 * batch_mean).epsilon(1e-12));
  }
}

TEST_CASE("global_avg_pool matches finite differences") {
  Rng rng(31);
  Var x = make_param(random_tensor({2, 3, 4, 4}, rng));
  CHECK(max_grad_error(x, [&] { return sum_sq(global_avg_pool(x)); }) < 1e-8);
}

TEST_CASE("diamond-shaped graphs accumulate gradients once per path") {
  Var a = make_param(Tensor::scalar(3.0));
  // f = a*a + a  ->  df/da = 2a + 1 = 7
  Var loss = sum_all(add(mul(a, a), a));
  backward(loss);
  CHECK(a->grad[0] == doctest::Approx(7.0));
}

TEST_CASE("detach stops gradient flow exactly") {
  Rng rng(37);
  Var a = make_param(random_tensor({3, 3}, rng));
  Var loss = sum_sq(mul(detach(a), a));  // d/da of (c*a)^2 with c frozen
  backward(loss);
  for (int64_t i = 0; i < a->value.numel(); ++i) {
    const double c = a->value[i];
    CHECK(a->grad[i] ==
          doctest::Approx(2.0 * c * c * a->value[i] / 9.0).epsilon(1e-12));
  }
  // a pure function of detached values requires no grad at all
  Var frozen = mul(detach(a), detach(a));
  CHECK_FALSE(frozen->requires_grad);
}

TEST_CASE("backward requires a scalar root") {
  Rng rng(41);
  Var a = make_param(random_tensor({2, 2}, rng));
  CHECK_THROWS_AS(backward(mul(a, a)), InvalidInputError);
}
