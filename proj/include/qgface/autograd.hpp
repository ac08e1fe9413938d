#pragma once

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "qgface/tensor.hpp"

namespace qgface {

// Define-by-run reverse-mode autodiff. Each op builds a Node whose
// backward_op reads node->grad and accumulates into its parents' grads.
// Ops only record a backward path when some input requires gradients, so
// detached subgraphs cost nothing at backward time.
struct Node;
using Var = std::shared_ptr<Node>;

struct Node {
  Tensor value;
  Tensor grad;  // allocated on first use, same shape as value
  bool requires_grad = false;
  bool grad_ready = false;
  std::vector<Var> parents;
  std::function<void(Node&)> backward_op;

  Tensor& ensure_grad() {
    if (!grad_ready) {
      grad = Tensor::zeros(value.shape());
      grad_ready = true;
    }
    return grad;
  }

  void clear_grad() {
    if (grad_ready) grad.set_zero();
  }
};

// Leaf that participates in optimization.
Var make_param(Tensor value);
// Leaf treated as a constant.
Var make_const(Tensor value);
// Stop-gradient: a constant copy of v's value.
Var detach(const Var& v);
// Custom op node; backward_op must accumulate node.grad into the parents.
// Parents and backward_op are dropped when no parent requires gradients.
Var make_op(Tensor value, std::vector<Var> parents,
            std::function<void(Node&)> backward_op);

// Reverse sweep from a scalar root (shape {1}); seeds d(root)/d(root)=1.
void backward(const Var& root);

namespace ops {

Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, double s);
Var add_scalar(const Var& a, double s);
// (R,C) + (C) broadcast over rows.
Var add_rowvec(const Var& a, const Var& b);
Var matmul(const Var& a, const Var& b);
Var relu(const Var& a);
// Rows of x scaled to unit L2 norm. Rows must be nonzero.
Var l2_normalize_rows(const Var& x);
// Columns of x scaled to unit L2 norm. Columns must be nonzero.
Var l2_normalize_cols(const Var& x);
Var select_rows(const Var& x, const std::vector<int64_t>& idx);
Var concat_rows(const Var& a, const Var& b);
Var sum_all(const Var& x);
Var mean_all(const Var& x);

// x:(N,C,H,W) w:(OC,C,KH,KW) b:(OC); zero padding.
Var conv2d(const Var& x, const Var& w, const Var& b, int stride, int pad);

// (N,C,H,W) -> (N,C).
Var global_avg_pool(const Var& x);

// x:(N,F) w:(F,O) b:(O).
Var linear(const Var& x, const Var& w, const Var& b);

// Batch norm over (N,H,W) per channel; updates running stats in training
// mode as a side effect outside the graph (PyTorch convention: biased batch
// variance normalizes, unbiased feeds the running estimate).
Var batchnorm2d(const Var& x, const Var& gamma, const Var& beta,
                Tensor& running_mean, Tensor& running_var, bool training,
                double momentum = 0.1, double eps = 1e-5);

}  // namespace ops

}  // namespace qgface
