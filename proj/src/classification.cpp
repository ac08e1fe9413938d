#include "qgface/classification.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>

namespace qgface {

namespace {

constexpr double kSinFloor = 1e-6;

void check_labels(const std::vector<int>& labels, int64_t n) {
  for (int y : labels)
    if (y < 0 || y >= n)
      throw InvalidInputError("label out of range [0, n)");
}

struct MarginTerm {
  double value;  // cos(theta + g_angle) - g_add
  double dcos;   // derivative w.r.t. cos(theta), sin floored
};

MarginTerm margin_target(double cos_t, double g_angle, double g_add) {
  const double radicand = std::max(0.0, 1.0 - cos_t * cos_t);
  const double sin_t = std::sqrt(radicand);
  const double ca = std::cos(g_angle), sa = std::sin(g_angle);
  MarginTerm t;
  t.value = cos_t * ca - sin_t * sa - g_add;
  t.dcos = sin_t > 0.0 ? ca + sa * cos_t / std::max(sin_t, kSinFloor) : ca;
  return t;
}

// Plain-value version of the modulated cosine matrix, for diagnostics.
Tensor modulated_cosines_value(const Tensor& features,
                               const std::vector<int>& labels, const Tensor& W,
                               const std::vector<double>& g_angle,
                               const std::vector<double>& g_add) {
  const int64_t batch = features.dim(0), d = features.dim(1), n = W.dim(1);
  Tensor cosines({batch, n});
  for (int64_t i = 0; i < batch; ++i) {
    double fr = 0;
    for (int64_t k = 0; k < d; ++k) fr += features.at(i, k) * features.at(i, k);
    fr = std::sqrt(fr);
    if (fr == 0.0) throw InvalidInputError("classification: zero-norm feature");
    for (int64_t j = 0; j < n; ++j) {
      double dot = 0, wr = 0;
      for (int64_t k = 0; k < d; ++k) {
        dot += features.at(i, k) * W.at(k, j);
        wr += W.at(k, j) * W.at(k, j);
      }
      cosines.at(i, j) = dot / (fr * std::sqrt(wr));
    }
  }
  for (int64_t i = 0; i < batch; ++i) {
    const int y = labels[static_cast<size_t>(i)];
    cosines.at(i, y) = margin_target(cosines.at(i, y),
                                     g_angle[static_cast<size_t>(i)],
                                     g_add[static_cast<size_t>(i)]).value;
  }
  return cosines;
}

// Autograd op: replace each row's target entry by the margin form. Gradients
// flow only through the cosine matrix (margins are functions of the detached
// quality indicator).
Var apply_margin(const Var& cosines, const std::vector<int>& labels,
                 const std::vector<double>& g_angle,
                 const std::vector<double>& g_add) {
  const int64_t batch = cosines->value.dim(0);
  Tensor out = cosines->value;
  std::vector<double> dcos(static_cast<size_t>(batch));
  for (int64_t i = 0; i < batch; ++i) {
    const int y = labels[static_cast<size_t>(i)];
    const MarginTerm t = margin_target(out.at(i, y), g_angle[static_cast<size_t>(i)],
                                       g_add[static_cast<size_t>(i)]);
    out.at(i, y) = t.value;
    dcos[static_cast<size_t>(i)] = t.dcos;
  }
  return make_op(std::move(out), {cosines},
                 [cosines, labels, dcos, batch](Node& node) {
    if (!cosines->requires_grad) return;
    Tensor& g = cosines->ensure_grad();
    const int64_t n = node.grad.dim(1);
    for (int64_t i = 0; i < batch; ++i)
      for (int64_t j = 0; j < n; ++j) {
        const int y = labels[static_cast<size_t>(i)];
        const double factor = (j == y) ? dcos[static_cast<size_t>(i)] : 1.0;
        g.at(i, j) += node.grad.at(i, j) * factor;
      }
  });
}

struct XentResult {
  Var loss;
  std::shared_ptr<Tensor> probs;
};

// Mean softmax cross-entropy over all rows of `logits` (already scaled).
XentResult softmax_xent_mean(const Var& logits, const std::vector<int>& labels) {
  const int64_t batch = logits->value.dim(0), n = logits->value.dim(1);
  auto probs = std::make_shared<Tensor>(Tensor({batch, n}));
  double total = 0;
  for (int64_t i = 0; i < batch; ++i) {
    double mx = -std::numeric_limits<double>::infinity();
    for (int64_t j = 0; j < n; ++j) mx = std::max(mx, logits->value.at(i, j));
    double sum = 0;
    for (int64_t j = 0; j < n; ++j) {
      const double e = std::exp(logits->value.at(i, j) - mx);
      probs->at(i, j) = e;
      sum += e;
    }
    for (int64_t j = 0; j < n; ++j) probs->at(i, j) /= sum;
    const int y = labels[static_cast<size_t>(i)];
    total += std::log(sum) + mx - logits->value.at(i, y);
  }
  Tensor loss = Tensor::scalar(total / static_cast<double>(batch));
  Var loss_var = make_op(std::move(loss), {logits},
                         [logits, probs, labels, batch, n](Node& node) {
    if (!logits->requires_grad) return;
    Tensor& g = logits->ensure_grad();
    const double scale = node.grad[0] / static_cast<double>(batch);
    for (int64_t i = 0; i < batch; ++i) {
      const int y = labels[static_cast<size_t>(i)];
      for (int64_t j = 0; j < n; ++j)
        g.at(i, j) += scale * (probs->at(i, j) - (j == y ? 1.0 : 0.0));
    }
  });
  return {loss_var, probs};
}

}  // namespace

ClassifierProxies ClassifierProxies::make(int64_t dim, int64_t num_identities,
                                          double s, double m, uint64_t seed) {
  ClassifierProxies p;
  Rng rng(derive_seed(seed, {0x50525859ULL}));  // proxy param stream
  Tensor w({dim, num_identities});
  for (int64_t i = 0; i < w.numel(); ++i) w[i] = rng.normal(0.0, 0.01);
  p.W = make_param(std::move(w));
  p.s = s;
  p.m = m;
  return p;
}

std::vector<double> ClassifierProxies::column(int64_t identity) const {
  const int64_t d = dim();
  std::vector<double> col(static_cast<size_t>(d));
  for (int64_t k = 0; k < d; ++k)
    col[static_cast<size_t>(k)] = W->value.at(k, identity);
  return col;
}

std::pair<std::vector<double>, std::vector<double>> adaface_margins(
    const std::vector<double>& z_hat, double m) {
  std::vector<double> g_angle(z_hat.size()), g_add(z_hat.size());
  for (size_t i = 0; i < z_hat.size(); ++i) {
    g_angle[i] = -m * z_hat[i];
    g_add[i] = m * z_hat[i] + m;
  }
  return {std::move(g_angle), std::move(g_add)};
}

Var adaface_logits(const Var& features, const std::vector<int>& labels,
                   const ClassifierProxies& proxies,
                   const std::vector<double>& z_hat) {
  if (features->value.ndim() != 2 || features->value.dim(1) != proxies.dim())
    throw InvalidInputError("adaface_logits: feature dimension mismatch");
  if (labels.size() != static_cast<size_t>(features->value.dim(0)) ||
      z_hat.size() != labels.size())
    throw InvalidInputError("adaface_logits: batch size mismatch");
  check_labels(labels, proxies.num_identities());
  auto [g_angle, g_add] = adaface_margins(z_hat, proxies.m);
  Var fn = ops::l2_normalize_rows(features);
  Var wn = ops::l2_normalize_cols(proxies.W);
  Var cosines = ops::matmul(fn, wn);
  return apply_margin(cosines, labels, g_angle, g_add);
}

ClassificationOutput classification_loss(const Var& features,
                                         const std::vector<int>& labels,
                                         const ClassifierProxies& proxies,
                                         const std::vector<double>& z_hat,
                                         const std::vector<bool>& class_mask) {
  const int64_t batch = features->value.dim(0);
  if (labels.size() != static_cast<size_t>(batch) ||
      z_hat.size() != static_cast<size_t>(batch) ||
      class_mask.size() != static_cast<size_t>(batch))
    throw InvalidInputError("classification_loss: batch size mismatch");
  check_labels(labels, proxies.num_identities());

  ClassificationOutput out;
  const double nan = std::numeric_limits<double>::quiet_NaN();
  out.p_target.assign(static_cast<size_t>(batch), nan);
  out.gst.assign(static_cast<size_t>(batch), nan);

  auto [g_angle_all, g_add_all] = adaface_margins(z_hat, proxies.m);
  out.logits = modulated_cosines_value(features->value, labels, proxies.W->value,
                                       g_angle_all, g_add_all);
  if (!out.logits.all_finite())
    throw NumericError("classification logits are non-finite");

  std::vector<int64_t> idx;
  for (int64_t i = 0; i < batch; ++i)
    if (class_mask[static_cast<size_t>(i)]) idx.push_back(i);
  out.num_used = static_cast<int64_t>(idx.size());
  if (idx.empty()) {
    out.loss = make_const(Tensor::scalar(0.0));
    return out;
  }

  std::vector<int> labels_sel;
  std::vector<double> z_sel;
  for (int64_t i : idx) {
    labels_sel.push_back(labels[static_cast<size_t>(i)]);
    z_sel.push_back(z_hat[static_cast<size_t>(i)]);
  }

  Var f_sel = ops::select_rows(features, idx);
  Var logits = adaface_logits(f_sel, labels_sel, proxies, z_sel);
  XentResult xent = softmax_xent_mean(ops::scale(logits, proxies.s), labels_sel);
  out.loss = xent.loss;

  // Diagnostics: probability at target and the gradient scaling term, on the
  // masked-in samples.
  auto [g_angle_sel, g_add_sel] = adaface_margins(z_sel, proxies.m);
  std::vector<double> p_sel(idx.size()), cos_sel(idx.size());
  for (size_t r = 0; r < idx.size(); ++r) {
    p_sel[r] = xent.probs->at(static_cast<int64_t>(r), labels_sel[r]);
    // Recover the raw target cosine: the margin op stored the modulated value.
    double fr = 0, wr = 0, dot = 0;
    const int64_t i = idx[r];
    const int y = labels_sel[r];
    for (int64_t k = 0; k < proxies.dim(); ++k) {
      const double fv = features->value.at(i, k), wv = proxies.W->value.at(k, y);
      fr += fv * fv;
      wr += wv * wv;
      dot += fv * wv;
    }
    cos_sel[r] = dot / (std::sqrt(fr) * std::sqrt(wr));
  }
  std::vector<double> g_sel = gst(p_sel, cos_sel, g_angle_sel);
  for (size_t r = 0; r < idx.size(); ++r) {
    out.p_target[static_cast<size_t>(idx[r])] = p_sel[r];
    out.gst[static_cast<size_t>(idx[r])] = g_sel[r];
  }
  return out;
}

std::vector<double> gst(const std::vector<double>& p_target,
                        const std::vector<double>& cos_theta,
                        const std::vector<double>& g_angle,
                        std::vector<bool>* degenerate_flags) {
  if (p_target.size() != cos_theta.size() || p_target.size() != g_angle.size())
    throw InvalidInputError("gst: length mismatch");
  std::vector<double> g(p_target.size());
  if (degenerate_flags) degenerate_flags->assign(p_target.size(), false);
  for (size_t i = 0; i < p_target.size(); ++i) {
    const double sin_t = std::sqrt(std::max(0.0, 1.0 - cos_theta[i] * cos_theta[i]));
    double dfdcos;
    if (sin_t < kSinFloor) {
      dfdcos = 1.0;  // g_angle = 0 limit
      if (degenerate_flags) (*degenerate_flags)[i] = true;
    } else {
      dfdcos = std::cos(g_angle[i]) + std::sin(g_angle[i]) * cos_theta[i] / sin_t;
    }
    g[i] = (p_target[i] - 1.0) * dfdcos;
  }
  return g;
}

}  // namespace qgface
