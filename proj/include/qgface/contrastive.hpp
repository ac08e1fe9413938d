#pragma once

#include <vector>

#include "qgface/autograd.hpp"
#include "qgface/classification.hpp"

namespace qgface {

// Fixed-capacity FIFO of (raw feature, raw proxy snapshot, identity).
// Contents are immutable after enqueue; proxy-drift compensation is applied
// at read time so the delta-shift behaviour stays exact.
class ProxyQueue {
 public:
  explicit ProxyQueue(int64_t capacity, int64_t feature_dim);

  // Appends the 2B entries of a step (query stream first, then key stream),
  // each paired with the current raw proxy column of its identity. Stored
  // values are plain tensors, detached from any graph. Overwrites the oldest
  // slots when full.
  void enqueue(const Tensor& features_q, const Tensor& features_k,
               const std::vector<int>& labels, const ClassifierProxies& proxies);

  // out[i] = features[i] + (W_current[:, labels[i]] - proxy_snapshot[i]).
  // (filled x d); empty tensor when the queue is empty.
  Tensor compensate(const ClassifierProxies& proxies) const;

  std::vector<int> filled_labels() const;
  int64_t capacity() const { return capacity_; }
  int64_t filled() const { return filled_; }
  int64_t cursor() const { return cursor_; }
  int64_t feature_dim() const { return dim_; }

  // Slot accessors for tests / checkpointing.
  const Tensor& raw_features() const { return features_; }
  const Tensor& raw_proxy_snapshots() const { return proxy_snapshots_; }
  const std::vector<int>& raw_labels() const { return labels_; }
  void restore(Tensor features, Tensor proxy_snapshots, std::vector<int> labels,
               int64_t cursor, int64_t filled);

 private:
  int64_t capacity_;
  int64_t dim_;
  int64_t cursor_ = 0;
  int64_t filled_ = 0;
  Tensor features_;         // (Q,d)
  Tensor proxy_snapshots_;  // (Q,d)
  std::vector<int> labels_; // (Q)
};

// mask[j] = (queue_labels[j] != anchor_label).
std::vector<bool> scm_mask(const std::vector<int>& queue_labels, int anchor_label);

struct ContrastiveOutput {
  Var loss;             // scalar; exact 0 when no pair contributes
  int64_t num_pairs = 0;  // pairs that entered the loss
  double mean_pos_sim = 0.0;
  double mean_neg_sim = 0.0;
};

struct ContrastiveConfig {
  double s = 64.0;
  bool include_positive_in_denominator = false;
};

// InfoNCE-style loss over the masked-in (query, key) pairs against the
// compensated queue. Positive similarity uses the stop-gradient key;
// negatives are the SCM-surviving queue entries. Default denominator is the
// literal printed form (positive excluded); the config switch adds it back.
// Gradients flow only through h_q.
ContrastiveOutput contrastive_loss(const Var& h_q, const Var& h_k,
                                   const std::vector<int>& labels,
                                   const ProxyQueue& queue,
                                   const std::vector<bool>& contra_mask,
                                   const ClassifierProxies& proxies,
                                   const ContrastiveConfig& cfg);

}  // namespace qgface
