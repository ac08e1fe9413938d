#pragma once

#include <vector>

#include "qgface/data.hpp"
#include "qgface/tensor.hpp"

namespace qgface {

// Plain-loop cosine between two d-vectors; the one score path shared by all
// protocols so metric values are reproducible bit-for-bit.
double cosine_similarity(const double* a, const double* b, int64_t d);
double cosine_similarity(const Tensor& emb, int64_t i, int64_t j);

// k-fold cross-validated best-threshold accuracy on cosine similarity.
// Folds split by pair order; folds = 1 degenerates to the global
// best-threshold accuracy.
double verification_accuracy(const Tensor& embeddings,
                             const std::vector<VerificationPair>& pairs,
                             int folds = 10);

// Best-threshold accuracy for precomputed scores (also the building block of
// the folded protocol). The threshold predicate is score >= t over candidate
// thresholds drawn from the observed scores.
double best_threshold_accuracy(const std::vector<double>& scores,
                               const std::vector<bool>& same,
                               double* best_threshold = nullptr);
double accuracy_at_threshold(const std::vector<double>& scores,
                             const std::vector<bool>& same, double threshold);

// TAR at the smallest observed threshold whose impostor acceptance rate is
// <= far. Returns 0 when no candidate qualifies.
double tar_at_far(const std::vector<double>& scores,
                  const std::vector<bool>& same, double far);

// Closed-set rank-k: a probe counts when any of its k nearest gallery
// entries (cosine, ties broken by gallery index order) shares its identity.
double rank_k_identification(const Tensor& gallery,
                             const std::vector<int>& gallery_labels,
                             const Tensor& probe,
                             const std::vector<int>& probe_labels, int k);

struct SimilarityGap {
  std::vector<double> matched;         // per probe: best same-identity cosine
  std::vector<double> best_unmatched;  // per probe: best other-identity cosine
  double mean_matched = 0.0;
  double mean_best_unmatched = 0.0;
  double gap = 0.0;  // mean(matched) - mean(best unmatched)
};

// Per-probe matched vs. hardest-impostor similarity. When an identity has
// several gallery images the maximum matched similarity is used. Requires at
// least two identities in the gallery.
SimilarityGap similarity_gap(const Tensor& gallery,
                             const std::vector<int>& gallery_labels,
                             const Tensor& probe,
                             const std::vector<int>& probe_labels);

}  // namespace qgface
