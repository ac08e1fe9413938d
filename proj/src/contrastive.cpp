#include "qgface/contrastive.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>

namespace qgface {

ProxyQueue::ProxyQueue(int64_t capacity, int64_t feature_dim)
    : capacity_(capacity), dim_(feature_dim) {
  if (capacity <= 0 || feature_dim <= 0)
    throw ConfigError("queue capacity and feature dim must be positive");
  features_ = Tensor::zeros({capacity_, dim_});
  proxy_snapshots_ = Tensor::zeros({capacity_, dim_});
  labels_.assign(static_cast<size_t>(capacity_), -1);
}

void ProxyQueue::enqueue(const Tensor& features_q, const Tensor& features_k,
                         const std::vector<int>& labels,
                         const ClassifierProxies& proxies) {
  if (features_q.ndim() != 2 || features_k.ndim() != 2 ||
      features_q.dim(1) != dim_ || features_k.dim(1) != dim_)
    throw InvalidInputError("enqueue: feature dimension mismatch");
  if (features_q.dim(0) != features_k.dim(0) ||
      labels.size() != static_cast<size_t>(features_q.dim(0)))
    throw InvalidInputError("enqueue: batch size mismatch");
  const int64_t n = proxies.num_identities();
  for (int y : labels)
    if (y < 0 || y >= n) throw InvalidInputError("enqueue: label out of range");

  auto push = [&](const Tensor& feats, int64_t row) {
    const int y = labels[static_cast<size_t>(row)];
    for (int64_t k = 0; k < dim_; ++k) {
      features_.at(cursor_, k) = feats.at(row, k);
      proxy_snapshots_.at(cursor_, k) = proxies.W->value.at(k, y);
    }
    labels_[static_cast<size_t>(cursor_)] = y;
    cursor_ = (cursor_ + 1) % capacity_;
    filled_ = std::min(filled_ + 1, capacity_);
  };
  const int64_t batch = features_q.dim(0);
  for (int64_t i = 0; i < batch; ++i) push(features_q, i);
  for (int64_t i = 0; i < batch; ++i) push(features_k, i);
}

Tensor ProxyQueue::compensate(const ClassifierProxies& proxies) const {
  Tensor out({filled_, dim_});
  for (int64_t i = 0; i < filled_; ++i) {
    const int y = labels_[static_cast<size_t>(i)];
    for (int64_t k = 0; k < dim_; ++k)
      out.at(i, k) = features_.at(i, k) +
                     (proxies.W->value.at(k, y) - proxy_snapshots_.at(i, k));
  }
  return out;
}

std::vector<int> ProxyQueue::filled_labels() const {
  return std::vector<int>(labels_.begin(), labels_.begin() + filled_);
}

void ProxyQueue::restore(Tensor features, Tensor proxy_snapshots,
                         std::vector<int> labels, int64_t cursor, int64_t filled) {
  features_ = std::move(features);
  proxy_snapshots_ = std::move(proxy_snapshots);
  labels_ = std::move(labels);
  cursor_ = cursor;
  filled_ = filled;
}

std::vector<bool> scm_mask(const std::vector<int>& queue_labels, int anchor_label) {
  std::vector<bool> mask(queue_labels.size());
  for (size_t j = 0; j < queue_labels.size(); ++j)
    mask[j] = queue_labels[j] != anchor_label;
  return mask;
}

namespace {

void normalize_rows_inplace(Tensor& t) {
  const int64_t rows = t.dim(0), cols = t.dim(1);
  for (int64_t i = 0; i < rows; ++i) {
    double s = 0;
    for (int64_t j = 0; j < cols; ++j) s += t.at(i, j) * t.at(i, j);
    const double r = std::sqrt(s);
    if (r == 0.0) throw InvalidInputError("contrastive: zero-norm feature");
    for (int64_t j = 0; j < cols; ++j) t.at(i, j) /= r;
  }
}

}  // namespace

ContrastiveOutput contrastive_loss(const Var& h_q, const Var& h_k,
                                   const std::vector<int>& labels,
                                   const ProxyQueue& queue,
                                   const std::vector<bool>& contra_mask,
                                   const ClassifierProxies& proxies,
                                   const ContrastiveConfig& cfg) {
  const int64_t batch = h_q->value.dim(0);
  if (h_k->value.dim(0) != batch ||
      labels.size() != static_cast<size_t>(batch) ||
      contra_mask.size() != static_cast<size_t>(batch))
    throw InvalidInputError("contrastive_loss: batch size mismatch");
  if (h_q->value.dim(1) != queue.feature_dim() ||
      h_k->value.dim(1) != queue.feature_dim())
    throw InvalidInputError("contrastive_loss: feature dimension mismatch");

  ContrastiveOutput out;
  std::vector<int64_t> idx;
  for (int64_t p = 0; p < batch; ++p)
    if (contra_mask[static_cast<size_t>(p)]) idx.push_back(p);
  if (idx.empty()) {
    out.loss = make_const(Tensor::scalar(0.0));
    return out;
  }
  if (queue.filled() == 0)
    throw ConfigError(
        "contrastive_loss: queue is empty while low-quality pairs are pending");

  // Keys and queue are constants in the graph: the key branch carries the
  // stop-gradient, and queue contents were detached at enqueue time.
  auto keys = std::make_shared<Tensor>(Tensor({static_cast<int64_t>(idx.size()),
                                               queue.feature_dim()}));
  for (size_t r = 0; r < idx.size(); ++r)
    for (int64_t k = 0; k < queue.feature_dim(); ++k)
      keys->at(static_cast<int64_t>(r), k) = h_k->value.at(idx[r], k);
  normalize_rows_inplace(*keys);

  auto negs = std::make_shared<Tensor>(queue.compensate(proxies));
  normalize_rows_inplace(*negs);
  const std::vector<int> qlabels = queue.filled_labels();

  Var anchors = ops::l2_normalize_rows(ops::select_rows(h_q, idx));

  const int64_t dim = queue.feature_dim();
  const int64_t nneg = negs->dim(0);
  const double s = cfg.s;
  const bool include_pos = cfg.include_positive_in_denominator;

  // Per used pair: softmax weights over its denominator terms, for the
  // backward pass. Pairs whose SCM-surviving negative set is empty cannot
  // form the literal loss and are skipped.
  auto used = std::make_shared<std::vector<size_t>>();
  auto weights = std::make_shared<std::vector<std::vector<double>>>();
  auto pos_weight = std::make_shared<std::vector<double>>();

  double total = 0;
  double pos_sum = 0, neg_sum = 0;
  int64_t neg_count = 0;
  for (size_t r = 0; r < idx.size(); ++r) {
    const int anchor_label = labels[static_cast<size_t>(idx[r])];
    double pos = 0;
    for (int64_t k = 0; k < dim; ++k)
      pos += anchors->value.at(static_cast<int64_t>(r), k) * keys->at(static_cast<int64_t>(r), k);

    std::vector<double> sims;
    sims.reserve(static_cast<size_t>(nneg));
    for (int64_t j = 0; j < nneg; ++j) {
      if (qlabels[static_cast<size_t>(j)] == anchor_label) continue;
      double sim = 0;
      for (int64_t k = 0; k < dim; ++k)
        sim += anchors->value.at(static_cast<int64_t>(r), k) * negs->at(j, k);
      sims.push_back(sim);
      neg_sum += sim;
      ++neg_count;
    }
    if (sims.empty() && !include_pos) continue;

    // log-sum-exp of s-scaled denominator terms.
    double mx = include_pos ? s * pos : -std::numeric_limits<double>::infinity();
    for (double sim : sims) mx = std::max(mx, s * sim);
    double denom = include_pos ? std::exp(s * pos - mx) : 0.0;
    for (double sim : sims) denom += std::exp(s * sim - mx);
    const double lse = std::log(denom) + mx;
    total += -s * pos + lse;

    used->push_back(r);
    // Weights are packed in SCM order; backward re-derives the queue indices
    // by filtering labels the same way.
    std::vector<double> w(sims.size());
    for (size_t t = 0; t < sims.size(); ++t) w[t] = std::exp(s * sims[t] - lse);
    weights->push_back(std::move(w));
    pos_weight->push_back(include_pos ? std::exp(s * pos - lse) : 0.0);

    pos_sum += pos;
    ++out.num_pairs;
  }

  if (out.num_pairs == 0) {
    out.loss = make_const(Tensor::scalar(0.0));
    return out;
  }
  out.mean_pos_sim = pos_sum / static_cast<double>(out.num_pairs);
  out.mean_neg_sim = neg_count > 0 ? neg_sum / static_cast<double>(neg_count) : 0.0;

  const int64_t num_used = out.num_pairs;
  Tensor loss = Tensor::scalar(total / static_cast<double>(num_used));
  auto qlabels_ptr = std::make_shared<std::vector<int>>(qlabels);
  auto anchor_labels = std::make_shared<std::vector<int>>();
  for (int64_t p : idx) anchor_labels->push_back(labels[static_cast<size_t>(p)]);

  out.loss = make_op(std::move(loss), {anchors},
                     [anchors, keys, negs, qlabels_ptr, anchor_labels, used,
                      weights, pos_weight, s, include_pos, dim, nneg,
                      num_used](Node& node) {
    if (!anchors->requires_grad) return;
    Tensor& g = anchors->ensure_grad();
    const double outer = node.grad[0] / static_cast<double>(num_used);
    for (size_t u = 0; u < used->size(); ++u) {
      const size_t r = (*used)[u];
      const int anchor_label = (*anchor_labels)[r];
      const double kfactor = (-s + (include_pos ? s * (*pos_weight)[u] : 0.0)) * outer;
      for (int64_t k = 0; k < dim; ++k)
        g.at(static_cast<int64_t>(r), k) += kfactor * keys->at(static_cast<int64_t>(r), k);
      size_t t = 0;
      for (int64_t j = 0; j < nneg; ++j) {
        if ((*qlabels_ptr)[static_cast<size_t>(j)] == anchor_label) continue;
        const double wf = s * (*weights)[u][t] * outer;
        for (int64_t k = 0; k < dim; ++k)
          g.at(static_cast<int64_t>(r), k) += wf * negs->at(j, k);
        ++t;
      }
    }
  });
  return out;
}

}  // namespace qgface
