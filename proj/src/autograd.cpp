#include "qgface/autograd.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_set>

namespace qgface {

Var make_param(Tensor value) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  n->requires_grad = true;
  return n;
}

Var make_const(Tensor value) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  n->requires_grad = false;
  return n;
}

Var detach(const Var& v) { return make_const(v->value); }

namespace {

// Post-order DFS so the reverse sweep sees every node after all its
// consumers. Iterative to survive deep conv stacks.
void topo_sort(const Var& root, std::vector<Node*>& order) {
  std::unordered_set<Node*> visited;
  std::vector<std::pair<Node*, size_t>> stack;
  stack.push_back({root.get(), 0});
  visited.insert(root.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node* p = node->parents[next++].get();
      if (p->requires_grad && !visited.count(p)) {
        visited.insert(p);
        stack.push_back({p, 0});
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
}

Var result_of(Tensor value, std::vector<Var> parents,
              std::function<void(Node&)> backward_op) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  bool needs = false;
  for (const auto& p : parents)
    if (p->requires_grad) needs = true;
  n->requires_grad = needs;
  if (needs) {
    n->parents = std::move(parents);
    n->backward_op = std::move(backward_op);
  }
  return n;
}

void check_same_shape(const Var& a, const Var& b, const char* op) {
  if (!a->value.same_shape(b->value))
    throw InvalidInputError(std::string(op) + ": shape mismatch");
}

}  // namespace

Var make_op(Tensor value, std::vector<Var> parents,
            std::function<void(Node&)> backward_op) {
  return result_of(std::move(value), std::move(parents), std::move(backward_op));
}

void backward(const Var& root) {
  if (root->value.numel() != 1)
    throw InvalidInputError("backward: root must be scalar");
  if (!root->requires_grad) return;
  std::vector<Node*> order;
  topo_sort(root, order);
  root->ensure_grad().fill(1.0);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backward_op && n->grad_ready) n->backward_op(*n);
  }
}

namespace ops {

Var add(const Var& a, const Var& b) {
  check_same_shape(a, b, "add");
  Tensor out = a->value;
  out.array() += b->value.array();
  return result_of(std::move(out), {a, b}, [a, b](Node& n) {
    if (a->requires_grad) a->ensure_grad().array() += n.grad.array();
    if (b->requires_grad) b->ensure_grad().array() += n.grad.array();
  });
}

Var sub(const Var& a, const Var& b) {
  check_same_shape(a, b, "sub");
  Tensor out = a->value;
  out.array() -= b->value.array();
  return result_of(std::move(out), {a, b}, [a, b](Node& n) {
    if (a->requires_grad) a->ensure_grad().array() += n.grad.array();
    if (b->requires_grad) b->ensure_grad().array() -= n.grad.array();
  });
}

Var mul(const Var& a, const Var& b) {
  check_same_shape(a, b, "mul");
  Tensor out = a->value;
  out.array() *= b->value.array();
  return result_of(std::move(out), {a, b}, [a, b](Node& n) {
    if (a->requires_grad)
      a->ensure_grad().array() += n.grad.array() * b->value.array();
    if (b->requires_grad)
      b->ensure_grad().array() += n.grad.array() * a->value.array();
  });
}

Var scale(const Var& a, double s) {
  Tensor out = a->value;
  out.array() *= s;
  return result_of(std::move(out), {a}, [a, s](Node& n) {
    if (a->requires_grad) a->ensure_grad().array() += s * n.grad.array();
  });
}

Var add_scalar(const Var& a, double s) {
  Tensor out = a->value;
  out.array() += s;
  return result_of(std::move(out), {a}, [a](Node& n) {
    if (a->requires_grad) a->ensure_grad().array() += n.grad.array();
  });
}

Var add_rowvec(const Var& a, const Var& b) {
  if (a->value.ndim() != 2 || b->value.ndim() != 1 ||
      a->value.dim(1) != b->value.dim(0))
    throw InvalidInputError("add_rowvec: expected (R,C) + (C)");
  Tensor out = a->value;
  const int64_t rows = out.dim(0), cols = out.dim(1);
  for (int64_t i = 0; i < rows; ++i)
    for (int64_t j = 0; j < cols; ++j) out.at(i, j) += b->value[j];
  return result_of(std::move(out), {a, b}, [a, b, rows, cols](Node& n) {
    if (a->requires_grad) a->ensure_grad().array() += n.grad.array();
    if (b->requires_grad) {
      Tensor& g = b->ensure_grad();
      for (int64_t i = 0; i < rows; ++i)
        for (int64_t j = 0; j < cols; ++j) g[j] += n.grad.at(i, j);
    }
  });
}

Var matmul(const Var& a, const Var& b) {
  if (a->value.ndim() != 2 || b->value.ndim() != 2 ||
      a->value.dim(1) != b->value.dim(0))
    throw InvalidInputError("matmul: incompatible shapes");
  const int64_t m = a->value.dim(0), n2 = b->value.dim(1);
  Tensor out({m, n2});
  out.mat().noalias() = a->value.mat() * b->value.mat();
  return result_of(std::move(out), {a, b}, [a, b](Node& n) {
    if (a->requires_grad)
      a->ensure_grad().mat().noalias() += n.grad.mat() * b->value.mat().transpose();
    if (b->requires_grad)
      b->ensure_grad().mat().noalias() += a->value.mat().transpose() * n.grad.mat();
  });
}

Var relu(const Var& a) {
  Tensor out = a->value;
  out.array() = out.array().max(0.0);
  return result_of(std::move(out), {a}, [a](Node& n) {
    if (!a->requires_grad) return;
    a->ensure_grad().array() +=
        n.grad.array() * (a->value.array() > 0.0).cast<double>();
  });
}

Var l2_normalize_rows(const Var& x) {
  if (x->value.ndim() != 2)
    throw InvalidInputError("l2_normalize_rows: expected 2-D input");
  const int64_t rows = x->value.dim(0), cols = x->value.dim(1);
  Tensor out = x->value;
  std::vector<double> norms(static_cast<size_t>(rows));
  for (int64_t i = 0; i < rows; ++i) {
    double s = 0;
    for (int64_t j = 0; j < cols; ++j) s += out.at(i, j) * out.at(i, j);
    const double r = std::sqrt(s);
    if (r == 0.0) throw InvalidInputError("l2_normalize_rows: zero-norm row");
    norms[static_cast<size_t>(i)] = r;
    for (int64_t j = 0; j < cols; ++j) out.at(i, j) /= r;
  }
  Tensor y = out;
  return result_of(std::move(out), {x},
                   [x, y, norms, rows, cols](Node& n) {
    if (!x->requires_grad) return;
    Tensor& g = x->ensure_grad();
    for (int64_t i = 0; i < rows; ++i) {
      double dot = 0;
      for (int64_t j = 0; j < cols; ++j) dot += n.grad.at(i, j) * y.at(i, j);
      const double r = norms[static_cast<size_t>(i)];
      for (int64_t j = 0; j < cols; ++j)
        g.at(i, j) += (n.grad.at(i, j) - y.at(i, j) * dot) / r;
    }
  });
}

Var l2_normalize_cols(const Var& x) {
  if (x->value.ndim() != 2)
    throw InvalidInputError("l2_normalize_cols: expected 2-D input");
  const int64_t rows = x->value.dim(0), cols = x->value.dim(1);
  Tensor out = x->value;
  std::vector<double> norms(static_cast<size_t>(cols));
  for (int64_t j = 0; j < cols; ++j) {
    double s = 0;
    for (int64_t i = 0; i < rows; ++i) s += out.at(i, j) * out.at(i, j);
    const double r = std::sqrt(s);
    if (r == 0.0) throw InvalidInputError("l2_normalize_cols: zero-norm column");
    norms[static_cast<size_t>(j)] = r;
    for (int64_t i = 0; i < rows; ++i) out.at(i, j) /= r;
  }
  Tensor y = out;
  return result_of(std::move(out), {x},
                   [x, y, norms, rows, cols](Node& n) {
    if (!x->requires_grad) return;
    Tensor& g = x->ensure_grad();
    for (int64_t j = 0; j < cols; ++j) {
      double dot = 0;
      for (int64_t i = 0; i < rows; ++i) dot += n.grad.at(i, j) * y.at(i, j);
      const double r = norms[static_cast<size_t>(j)];
      for (int64_t i = 0; i < rows; ++i)
        g.at(i, j) += (n.grad.at(i, j) - y.at(i, j) * dot) / r;
    }
  });
}

Var select_rows(const Var& x, const std::vector<int64_t>& idx) {
  if (x->value.ndim() != 2)
    throw InvalidInputError("select_rows: expected 2-D input");
  const int64_t rows = x->value.dim(0), cols = x->value.dim(1);
  for (int64_t i : idx)
    if (i < 0 || i >= rows) throw InvalidInputError("select_rows: index out of range");
  Tensor out({static_cast<int64_t>(idx.size()), cols});
  for (size_t r = 0; r < idx.size(); ++r)
    for (int64_t j = 0; j < cols; ++j)
      out.at(static_cast<int64_t>(r), j) = x->value.at(idx[r], j);
  return result_of(std::move(out), {x}, [x, idx, cols](Node& n) {
    if (!x->requires_grad) return;
    Tensor& g = x->ensure_grad();
    for (size_t r = 0; r < idx.size(); ++r)
      for (int64_t j = 0; j < cols; ++j)
        g.at(idx[r], j) += n.grad.at(static_cast<int64_t>(r), j);
  });
}

Var concat_rows(const Var& a, const Var& b) {
  if (a->value.ndim() != 2 || b->value.ndim() != 2 ||
      a->value.dim(1) != b->value.dim(1))
    throw InvalidInputError("concat_rows: column mismatch");
  const int64_t ra = a->value.dim(0), rb = b->value.dim(0), cols = a->value.dim(1);
  Tensor out({ra + rb, cols});
  for (int64_t i = 0; i < ra; ++i)
    for (int64_t j = 0; j < cols; ++j) out.at(i, j) = a->value.at(i, j);
  for (int64_t i = 0; i < rb; ++i)
    for (int64_t j = 0; j < cols; ++j) out.at(ra + i, j) = b->value.at(i, j);
  return result_of(std::move(out), {a, b}, [a, b, ra, rb, cols](Node& n) {
    if (a->requires_grad) {
      Tensor& g = a->ensure_grad();
      for (int64_t i = 0; i < ra; ++i)
        for (int64_t j = 0; j < cols; ++j) g.at(i, j) += n.grad.at(i, j);
    }
    if (b->requires_grad) {
      Tensor& g = b->ensure_grad();
      for (int64_t i = 0; i < rb; ++i)
        for (int64_t j = 0; j < cols; ++j) g.at(i, j) += n.grad.at(ra + i, j);
    }
  });
}

Var sum_all(const Var& x) {
  Tensor out = Tensor::scalar(x->value.array().sum());
  return result_of(std::move(out), {x}, [x](Node& n) {
    if (x->requires_grad) x->ensure_grad().array() += n.grad[0];
  });
}

Var mean_all(const Var& x) {
  const double inv = 1.0 / static_cast<double>(x->value.numel());
  Tensor out = Tensor::scalar(x->value.array().sum() * inv);
  return result_of(std::move(out), {x}, [x, inv](Node& n) {
    if (x->requires_grad) x->ensure_grad().array() += n.grad[0] * inv;
  });
}

namespace {

struct ConvDims {
  int64_t n, c, h, w, oc, kh, kw, oh, ow;
};

ConvDims conv_dims(const Tensor& x, const Tensor& w, int stride, int pad) {
  if (x.ndim() != 4 || w.ndim() != 4)
    throw InvalidInputError("conv2d: expected 4-D tensors");
  if (x.dim(1) != w.dim(1))
    throw InvalidInputError("conv2d: channel mismatch");
  ConvDims d;
  d.n = x.dim(0); d.c = x.dim(1); d.h = x.dim(2); d.w = x.dim(3);
  d.oc = w.dim(0); d.kh = w.dim(2); d.kw = w.dim(3);
  d.oh = (d.h + 2 * pad - d.kh) / stride + 1;
  d.ow = (d.w + 2 * pad - d.kw) / stride + 1;
  if (d.oh <= 0 || d.ow <= 0)
    throw InvalidInputError("conv2d: kernel larger than padded input");
  return d;
}

// col: (C*KH*KW) x (N*OH*OW), column-major for the GEMM.
MatrixCM im2col(const Tensor& x, const ConvDims& d, int stride, int pad) {
  MatrixCM col(d.c * d.kh * d.kw, d.n * d.oh * d.ow);
  col.setZero();
  for (int64_t n = 0; n < d.n; ++n)
    for (int64_t c = 0; c < d.c; ++c)
      for (int64_t kh = 0; kh < d.kh; ++kh)
        for (int64_t kw = 0; kw < d.kw; ++kw) {
          const int64_t row = (c * d.kh + kh) * d.kw + kw;
          for (int64_t oh = 0; oh < d.oh; ++oh) {
            const int64_t ih = oh * stride - pad + kh;
            if (ih < 0 || ih >= d.h) continue;
            for (int64_t ow = 0; ow < d.ow; ++ow) {
              const int64_t iw = ow * stride - pad + kw;
              if (iw < 0 || iw >= d.w) continue;
              col(row, (n * d.oh + oh) * d.ow + ow) = x.at(n, c, ih, iw);
            }
          }
        }
  return col;
}

void col2im_accumulate(const MatrixCM& col, const ConvDims& d, int stride,
                       int pad, Tensor& gx) {
  for (int64_t n = 0; n < d.n; ++n)
    for (int64_t c = 0; c < d.c; ++c)
      for (int64_t kh = 0; kh < d.kh; ++kh)
        for (int64_t kw = 0; kw < d.kw; ++kw) {
          const int64_t row = (c * d.kh + kh) * d.kw + kw;
          for (int64_t oh = 0; oh < d.oh; ++oh) {
            const int64_t ih = oh * stride - pad + kh;
            if (ih < 0 || ih >= d.h) continue;
            for (int64_t ow = 0; ow < d.ow; ++ow) {
              const int64_t iw = ow * stride - pad + kw;
              if (iw < 0 || iw >= d.w) continue;
              gx.at(n, c, ih, iw) += col(row, (n * d.oh + oh) * d.ow + ow);
            }
          }
        }
}

}  // namespace

Var conv2d(const Var& x, const Var& w, const Var& b, int stride, int pad) {
  const ConvDims d = conv_dims(x->value, w->value, stride, pad);
  if (b->value.ndim() != 1 || b->value.dim(0) != d.oc)
    throw InvalidInputError("conv2d: bias shape mismatch");

  auto col = std::make_shared<MatrixCM>(im2col(x->value, d, stride, pad));
  Eigen::Map<const MatrixRM> wmat(w->value.data(), d.oc, d.c * d.kh * d.kw);
  MatrixCM outmat = wmat * (*col);  // (OC) x (N*OH*OW)

  Tensor out({d.n, d.oc, d.oh, d.ow});
  for (int64_t n = 0; n < d.n; ++n)
    for (int64_t oc = 0; oc < d.oc; ++oc)
      for (int64_t oh = 0; oh < d.oh; ++oh)
        for (int64_t ow = 0; ow < d.ow; ++ow)
          out.at(n, oc, oh, ow) = outmat(oc, (n * d.oh + oh) * d.ow + ow) +
                                  b->value[oc];

  return result_of(std::move(out), {x, w, b},
                   [x, w, b, col, d, stride, pad](Node& node) {
    MatrixCM gout(d.oc, d.n * d.oh * d.ow);
    for (int64_t n = 0; n < d.n; ++n)
      for (int64_t oc = 0; oc < d.oc; ++oc)
        for (int64_t oh = 0; oh < d.oh; ++oh)
          for (int64_t ow = 0; ow < d.ow; ++ow)
            gout(oc, (n * d.oh + oh) * d.ow + ow) = node.grad.at(n, oc, oh, ow);
    if (w->requires_grad) {
      MatrixCM gw = gout * col->transpose();
      Eigen::Map<MatrixRM> gwmap(w->ensure_grad().data(), d.oc,
                                 d.c * d.kh * d.kw);
      gwmap += gw;
    }
    if (b->requires_grad) {
      Tensor& gb = b->ensure_grad();
      for (int64_t oc = 0; oc < d.oc; ++oc) gb[oc] += gout.row(oc).sum();
    }
    if (x->requires_grad) {
      Eigen::Map<const MatrixRM> wmat(w->value.data(), d.oc, d.c * d.kh * d.kw);
      MatrixCM gcol = wmat.transpose() * gout;
      col2im_accumulate(gcol, d, stride, pad, x->ensure_grad());
    }
  });
}

Var global_avg_pool(const Var& x) {
  if (x->value.ndim() != 4)
    throw InvalidInputError("global_avg_pool: expected 4-D input");
  const int64_t n = x->value.dim(0), c = x->value.dim(1);
  const int64_t hw = x->value.dim(2) * x->value.dim(3);
  Tensor out({n, c});
  const double* src = x->value.data();
  for (int64_t i = 0; i < n * c; ++i) {
    double s = 0;
    for (int64_t k = 0; k < hw; ++k) s += src[i * hw + k];
    out[i] = s / static_cast<double>(hw);
  }
  return result_of(std::move(out), {x}, [x, n, c, hw](Node& node) {
    if (!x->requires_grad) return;
    double* g = x->ensure_grad().data();
    const double inv = 1.0 / static_cast<double>(hw);
    for (int64_t i = 0; i < n * c; ++i) {
      const double gi = node.grad[i] * inv;
      for (int64_t k = 0; k < hw; ++k) g[i * hw + k] += gi;
    }
  });
}

Var linear(const Var& x, const Var& w, const Var& b) {
  return add_rowvec(matmul(x, w), b);
}

Var batchnorm2d(const Var& x, const Var& gamma, const Var& beta,
                Tensor& running_mean, Tensor& running_var, bool training,
                double momentum, double eps) {
  if (x->value.ndim() != 4)
    throw InvalidInputError("batchnorm2d: expected 4-D input");
  const int64_t n = x->value.dim(0), c = x->value.dim(1);
  const int64_t h = x->value.dim(2), w2 = x->value.dim(3);
  if (gamma->value.numel() != c || beta->value.numel() != c ||
      running_mean.numel() != c || running_var.numel() != c)
    throw InvalidInputError("batchnorm2d: channel parameter mismatch");
  const int64_t m = n * h * w2;

  auto mean = std::make_shared<std::vector<double>>(c, 0.0);
  auto var = std::make_shared<std::vector<double>>(c, 0.0);
  if (training) {
    for (int64_t ci = 0; ci < c; ++ci) {
      double s = 0;
      for (int64_t ni = 0; ni < n; ++ni)
        for (int64_t hi = 0; hi < h; ++hi)
          for (int64_t wi = 0; wi < w2; ++wi) s += x->value.at(ni, ci, hi, wi);
      const double mu = s / static_cast<double>(m);
      double v = 0;
      for (int64_t ni = 0; ni < n; ++ni)
        for (int64_t hi = 0; hi < h; ++hi)
          for (int64_t wi = 0; wi < w2; ++wi) {
            const double d = x->value.at(ni, ci, hi, wi) - mu;
            v += d * d;
          }
      v /= static_cast<double>(m);
      (*mean)[static_cast<size_t>(ci)] = mu;
      (*var)[static_cast<size_t>(ci)] = v;
      const double v_unbiased = m > 1 ? v * static_cast<double>(m) /
                                            static_cast<double>(m - 1)
                                      : v;
      running_mean[ci] = (1.0 - momentum) * running_mean[ci] + momentum * mu;
      running_var[ci] = (1.0 - momentum) * running_var[ci] + momentum * v_unbiased;
    }
  } else {
    for (int64_t ci = 0; ci < c; ++ci) {
      (*mean)[static_cast<size_t>(ci)] = running_mean[ci];
      (*var)[static_cast<size_t>(ci)] = running_var[ci];
    }
  }

  Tensor out(x->value.shape());
  auto xhat = std::make_shared<Tensor>(x->value.shape());
  for (int64_t ci = 0; ci < c; ++ci) {
    const double mu = (*mean)[static_cast<size_t>(ci)];
    const double istd = 1.0 / std::sqrt((*var)[static_cast<size_t>(ci)] + eps);
    const double g = gamma->value[ci], bb = beta->value[ci];
    for (int64_t ni = 0; ni < n; ++ni)
      for (int64_t hi = 0; hi < h; ++hi)
        for (int64_t wi = 0; wi < w2; ++wi) {
          const double xh = (x->value.at(ni, ci, hi, wi) - mu) * istd;
          xhat->at(ni, ci, hi, wi) = xh;
          out.at(ni, ci, hi, wi) = g * xh + bb;
        }
  }

  return result_of(std::move(out), {x, gamma, beta},
                   [x, gamma, beta, xhat, mean, var, training, eps, n, c, h,
                    w2, m](Node& node) {
    for (int64_t ci = 0; ci < c; ++ci) {
      const double istd = 1.0 / std::sqrt((*var)[static_cast<size_t>(ci)] + eps);
      const double g = gamma->value[ci];
      double sum_dy = 0, sum_dy_xhat = 0;
      for (int64_t ni = 0; ni < n; ++ni)
        for (int64_t hi = 0; hi < h; ++hi)
          for (int64_t wi = 0; wi < w2; ++wi) {
            const double dy = node.grad.at(ni, ci, hi, wi);
            sum_dy += dy;
            sum_dy_xhat += dy * xhat->at(ni, ci, hi, wi);
          }
      if (gamma->requires_grad) gamma->ensure_grad()[ci] += sum_dy_xhat;
      if (beta->requires_grad) beta->ensure_grad()[ci] += sum_dy;
      if (x->requires_grad) {
        Tensor& gx = x->ensure_grad();
        if (training) {
          const double invm = 1.0 / static_cast<double>(m);
          for (int64_t ni = 0; ni < n; ++ni)
            for (int64_t hi = 0; hi < h; ++hi)
              for (int64_t wi = 0; wi < w2; ++wi) {
                const double dy = node.grad.at(ni, ci, hi, wi);
                const double xh = xhat->at(ni, ci, hi, wi);
                gx.at(ni, ci, hi, wi) +=
                    g * istd * (dy - invm * sum_dy - invm * xh * sum_dy_xhat);
              }
        } else {
          for (int64_t ni = 0; ni < n; ++ni)
            for (int64_t hi = 0; hi < h; ++hi)
              for (int64_t wi = 0; wi < w2; ++wi)
                gx.at(ni, ci, hi, wi) += g * istd * node.grad.at(ni, ci, hi, wi);
        }
      }
    }
  });
}

}  // namespace ops

}  // namespace qgface
