#include "qgface/eval.hpp"

#include <algorithm>
#include <cmath>
#include <set>

namespace qgface {

double cosine_similarity(const double* a, const double* b, int64_t d) {
  double dot = 0, na = 0, nb = 0;
  for (int64_t k = 0; k < d; ++k) {
    dot += a[k] * b[k];
    na += a[k] * a[k];
    nb += b[k] * b[k];
  }
  const double denom = std::sqrt(na) * std::sqrt(nb);
  if (denom == 0.0) throw InvalidInputError("cosine: zero-norm embedding");
  return dot / denom;
}

double cosine_similarity(const Tensor& emb, int64_t i, int64_t j) {
  const int64_t d = emb.dim(1);
  return cosine_similarity(emb.data() + i * d, emb.data() + j * d, d);
}

double accuracy_at_threshold(const std::vector<double>& scores,
                             const std::vector<bool>& same, double threshold) {
  int64_t correct = 0;
  for (size_t i = 0; i < scores.size(); ++i) {
    const bool accept = scores[i] >= threshold;
    if (accept == same[i]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(scores.size());
}

double best_threshold_accuracy(const std::vector<double>& scores,
                               const std::vector<bool>& same,
                               double* best_threshold) {
  if (scores.empty() || scores.size() != same.size())
    throw InvalidInputError("best_threshold_accuracy: bad inputs");
  // Candidates: every observed score plus one above the maximum (reject all).
  std::vector<double> candidates = scores;
  candidates.push_back(*std::max_element(scores.begin(), scores.end()) + 1.0);
  double best_acc = -1.0, best_t = candidates.front();
  for (double t : candidates) {
    const double acc = accuracy_at_threshold(scores, same, t);
    if (acc > best_acc) {
      best_acc = acc;
      best_t = t;
    }
  }
  if (best_threshold) *best_threshold = best_t;
  return best_acc;
}

double verification_accuracy(const Tensor& embeddings,
                             const std::vector<VerificationPair>& pairs,
                             int folds) {
  if (folds < 1) throw InvalidInputError("verification_accuracy: folds < 1");
  if (static_cast<int64_t>(pairs.size()) < folds)
    throw InvalidInputError("verification_accuracy: fewer pairs than folds");
  const int64_t n = embeddings.dim(0);
  std::vector<double> scores;
  std::vector<bool> same;
  scores.reserve(pairs.size());
  for (const auto& p : pairs) {
    if (p.a < 0 || p.a >= n || p.b < 0 || p.b >= n)
      throw InvalidInputError("verification_accuracy: pair index out of range");
    scores.push_back(cosine_similarity(embeddings, p.a, p.b));
    same.push_back(p.same);
  }
  if (folds == 1) return best_threshold_accuracy(scores, same);

  // Deterministic contiguous folds by pair order.
  const size_t total = pairs.size();
  double acc_sum = 0;
  for (int f = 0; f < folds; ++f) {
    const size_t lo = total * static_cast<size_t>(f) / static_cast<size_t>(folds);
    const size_t hi = total * static_cast<size_t>(f + 1) / static_cast<size_t>(folds);
    std::vector<double> train_s, test_s;
    std::vector<bool> train_y, test_y;
    for (size_t i = 0; i < total; ++i) {
      if (i >= lo && i < hi) {
        test_s.push_back(scores[i]);
        test_y.push_back(same[i]);
      } else {
        train_s.push_back(scores[i]);
        train_y.push_back(same[i]);
      }
    }
    double t = 0;
    best_threshold_accuracy(train_s, train_y, &t);
    acc_sum += test_s.empty() ? 1.0 : accuracy_at_threshold(test_s, test_y, t);
  }
  return acc_sum / folds;
}

double tar_at_far(const std::vector<double>& scores,
                  const std::vector<bool>& same, double far) {
  if (scores.empty() || scores.size() != same.size())
    throw InvalidInputError("tar_at_far: bad inputs");
  if (!(far > 0.0) || far > 1.0)
    throw InvalidInputError("tar_at_far: far must be in (0,1]");
  int64_t n_imp = 0, n_gen = 0;
  for (bool s : same) (s ? n_gen : n_imp)++;
  if (n_imp == 0) throw InvalidInputError("tar_at_far: no impostor scores");

  std::vector<double> candidates = scores;
  std::sort(candidates.begin(), candidates.end());
  for (double t : candidates) {
    int64_t accepted_imp = 0;
    for (size_t i = 0; i < scores.size(); ++i)
      if (!same[i] && scores[i] >= t) ++accepted_imp;
    if (static_cast<double>(accepted_imp) / static_cast<double>(n_imp) <= far) {
      int64_t accepted_gen = 0;
      for (size_t i = 0; i < scores.size(); ++i)
        if (same[i] && scores[i] >= t) ++accepted_gen;
      return n_gen > 0 ? static_cast<double>(accepted_gen) /
                             static_cast<double>(n_gen)
                       : 0.0;
    }
  }
  return 0.0;  // even rejecting at the max observed score admits too many
}

double rank_k_identification(const Tensor& gallery,
                             const std::vector<int>& gallery_labels,
                             const Tensor& probe,
                             const std::vector<int>& probe_labels, int k) {
  if (k < 1) throw InvalidInputError("rank_k: k must be >= 1");
  const int64_t ng = gallery.dim(0), np = probe.dim(0);
  if (gallery_labels.size() != static_cast<size_t>(ng) ||
      probe_labels.size() != static_cast<size_t>(np))
    throw InvalidInputError("rank_k: label count mismatch");
  validate_closed_set(gallery_labels, probe_labels);

  int64_t correct = 0;
  std::vector<int64_t> order(static_cast<size_t>(ng));
  std::vector<double> sims(static_cast<size_t>(ng));
  for (int64_t p = 0; p < np; ++p) {
    for (int64_t g = 0; g < ng; ++g) {
      sims[static_cast<size_t>(g)] = cosine_similarity(
          probe.data() + p * probe.dim(1), gallery.data() + g * gallery.dim(1),
          gallery.dim(1));
      order[static_cast<size_t>(g)] = g;
    }
    std::stable_sort(order.begin(), order.end(), [&](int64_t a, int64_t b) {
      if (sims[static_cast<size_t>(a)] != sims[static_cast<size_t>(b)])
        return sims[static_cast<size_t>(a)] > sims[static_cast<size_t>(b)];
      return a < b;  // ties by gallery index order
    });
    const int limit = std::min<int64_t>(k, ng);
    for (int r = 0; r < limit; ++r)
      if (gallery_labels[static_cast<size_t>(order[static_cast<size_t>(r)])] ==
          probe_labels[static_cast<size_t>(p)]) {
        ++correct;
        break;
      }
  }
  return static_cast<double>(correct) / static_cast<double>(np);
}

SimilarityGap similarity_gap(const Tensor& gallery,
                             const std::vector<int>& gallery_labels,
                             const Tensor& probe,
                             const std::vector<int>& probe_labels) {
  const int64_t ng = gallery.dim(0), np = probe.dim(0);
  if (gallery_labels.size() != static_cast<size_t>(ng) ||
      probe_labels.size() != static_cast<size_t>(np))
    throw InvalidInputError("similarity_gap: label count mismatch");
  validate_closed_set(gallery_labels, probe_labels);
  const std::set<int> distinct(gallery_labels.begin(), gallery_labels.end());
  if (distinct.size() < 2)
    throw ProtocolError("similarity_gap: gallery holds a single identity, "
                        "best-unmatched similarity is undefined");

  SimilarityGap out;
  for (int64_t p = 0; p < np; ++p) {
    double matched = -2.0, unmatched = -2.0;
    for (int64_t g = 0; g < ng; ++g) {
      const double sim = cosine_similarity(
          probe.data() + p * probe.dim(1), gallery.data() + g * gallery.dim(1),
          gallery.dim(1));
      if (gallery_labels[static_cast<size_t>(g)] == probe_labels[static_cast<size_t>(p)])
        matched = std::max(matched, sim);
      else
        unmatched = std::max(unmatched, sim);
    }
    out.matched.push_back(matched);
    out.best_unmatched.push_back(unmatched);
  }
  const double n = static_cast<double>(np);
  for (double v : out.matched) out.mean_matched += v / n;
  for (double v : out.best_unmatched) out.mean_best_unmatched += v / n;
  out.gap = out.mean_matched - out.mean_best_unmatched;
  return out;
}

}  // namespace qgface
