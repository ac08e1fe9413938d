#pragma once

#include <utility>
#include <vector>

#include "qgface/autograd.hpp"
#include "qgface/rng.hpp"

namespace qgface {

// Classifier proxy matrix W (d x n); column j is identity j's proxy.
// Columns are stored raw and L2-normalized at use, so the raw columns double
// as the compensation reference for the contrastive queue.
struct ClassifierProxies {
  Var W;           // (d,n), trainable
  double s = 64.0; // logit scale
  double m = 0.4;  // margin

  static ClassifierProxies make(int64_t dim, int64_t num_identities, double s,
                                double m, uint64_t seed);
  int64_t dim() const { return W->value.dim(0); }
  int64_t num_identities() const { return W->value.dim(1); }
  // Raw proxy column for one identity.
  std::vector<double> column(int64_t identity) const;
};

// Norm-adaptive margins: g_angle = -m * z_hat, g_add = m * z_hat + m.
std::pair<std::vector<double>, std::vector<double>> adaface_margins(
    const std::vector<double>& z_hat, double m);

// Cosine logits with the adaptive margin applied to each sample's target
// entry: target = cos(theta_y + g_angle) - g_add, non-target = cos(theta_j).
// cos(theta + g_angle) expands through sin(theta) = sqrt(1 - cos^2) with the
// radicand clamped at 0 (and sin floored at 1e-6 for the gradient).
// Unscaled; the caller applies s inside the softmax.
Var adaface_logits(const Var& features, const std::vector<int>& labels,
                   const ClassifierProxies& proxies,
                   const std::vector<double>& z_hat);

struct ClassificationOutput {
  Var loss;                       // scalar; exact 0 when the mask is empty
  Tensor logits;                  // (B,n) modulated cosines, detached
  std::vector<double> p_target;   // softmax probability at the target (NaN when masked out)
  std::vector<double> gst;        // per-sample gradient scaling term (NaN when masked out)
  int64_t num_used = 0;           // masked-in sample count
};

// Mean cross-entropy of s-scaled modulated logits over masked-in features.
// Masked-out features receive exactly zero gradient (they never enter the
// graph).
ClassificationOutput classification_loss(const Var& features,
                                         const std::vector<int>& labels,
                                         const ClassifierProxies& proxies,
                                         const std::vector<double>& z_hat,
                                         const std::vector<bool>& class_mask);

// Gradient scaling term g = (P_y - 1) * df/dcos(theta) with
// df/dcos = cos(g_angle) + sin(g_angle) * cos(theta) / sin(theta).
// Diagnostic only. Where sin(theta) < 1e-6 the g_angle = 0 limit (P - 1) is
// returned and the corresponding flag is set.
std::vector<double> gst(const std::vector<double>& p_target,
                        const std::vector<double>& cos_theta,
                        const std::vector<double>& g_angle,
                        std::vector<bool>* degenerate_flags = nullptr);

}  // namespace qgface
