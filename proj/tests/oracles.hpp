#pragma once

// Independent brute-force reference implementations for the metric and loss
// checks. Everything here is deliberately written as plain loops over the
// mathematical definitions and kept free of the library's protocol code; the
// only shared piece is the cosine kernel so both sides score identically.

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include "qgface/eval.hpp"

namespace qgface::oracle {

// Best-threshold verification accuracy: exhaustively try every observed
// score (and one above the max) as the threshold.
inline double best_threshold_accuracy(const std::vector<double>& scores,
                                      const std::vector<bool>& same) {
  std::vector<double> candidates = scores;
  candidates.push_back(*std::max_element(scores.begin(), scores.end()) + 1.0);
  double best = -1;
  for (double t : candidates) {
    int64_t correct = 0;
    for (size_t i = 0; i < scores.size(); ++i)
      if ((scores[i] >= t) == same[i]) ++correct;
    best = std::max(best, static_cast<double>(correct) / scores.size());
  }
  return best;
}

inline double verification_accuracy(const Tensor& emb,
                                    const std::vector<VerificationPair>& pairs,
                                    int folds) {
  std::vector<double> scores;
  std::vector<bool> same;
  for (const auto& p : pairs) {
    scores.push_back(cosine_similarity(emb, p.a, p.b));
    same.push_back(p.same);
  }
  if (folds == 1) return best_threshold_accuracy(scores, same);
  const size_t total = scores.size();
  double acc = 0;
  for (int f = 0; f < folds; ++f) {
    const size_t lo = total * static_cast<size_t>(f) / static_cast<size_t>(folds);
    const size_t hi = total * static_cast<size_t>(f + 1) / static_cast<size_t>(folds);
    // pick best threshold on everything outside [lo,hi)
    std::vector<double> cands;
    for (size_t i = 0; i < total; ++i)
      if (i < lo || i >= hi) cands.push_back(scores[i]);
    double mx = -std::numeric_limits<double>::infinity();
    for (double c : cands) mx = std::max(mx, c);
    cands.push_back(mx + 1.0);
    double best_acc = -1, best_t = cands.front();
    for (double t : cands) {
      int64_t correct = 0;
      int64_t n = 0;
      for (size_t i = 0; i < total; ++i) {
        if (i >= lo && i < hi) continue;
        ++n;
        if ((scores[i] >= t) == same[i]) ++correct;
      }
      const double a = static_cast<double>(correct) / static_cast<double>(n);
      if (a > best_acc) {
        best_acc = a;
        best_t = t;
      }
    }
    int64_t correct = 0, n = 0;
    for (size_t i = lo; i < hi; ++i) {
      ++n;
      if ((scores[i] >= best_t) == same[i]) ++correct;
    }
    acc += n == 0 ? 1.0 : static_cast<double>(correct) / static_cast<double>(n);
  }
  return acc / folds;
}

inline double tar_at_far(const std::vector<double>& scores,
                         const std::vector<bool>& same, double far) {
  std::vector<double> cands = scores;
  std::sort(cands.begin(), cands.end());
  int64_t n_imp = 0, n_gen = 0;
  for (bool s : same) (s ? n_gen : n_imp)++;
  for (double t : cands) {
    int64_t acc_imp = 0;
    for (size_t i = 0; i < scores.size(); ++i)
      if (!same[i] && scores[i] >= t) ++acc_imp;
    if (static_cast<double>(acc_imp) / n_imp <= far) {
      int64_t acc_gen = 0;
      for (size_t i = 0; i < scores.size(); ++i)
        if (same[i] && scores[i] >= t) ++acc_gen;
      return n_gen > 0 ? static_cast<double>(acc_gen) / n_gen : 0.0;
    }
  }
  return 0.0;
}

inline double rank_k(const Tensor& gallery, const std::vector<int>& glabels,
                     const Tensor& probe, const std::vector<int>& plabels, int k) {
  const int64_t ng = gallery.dim(0), np = probe.dim(0), d = gallery.dim(1);
  int64_t correct = 0;
  for (int64_t p = 0; p < np; ++p) {
    std::vector<std::pair<double, int64_t>> entries;
    for (int64_t g = 0; g < ng; ++g)
      entries.push_back({cosine_similarity(probe.data() + p * d,
                                           gallery.data() + g * d, d),
                         g});
    // selection sort: similarity descending, index ascending on ties
    for (size_t i = 0; i + 1 < entries.size(); ++i)
      for (size_t j = i + 1; j < entries.size(); ++j)
        if (entries[j].first > entries[i].first ||
            (entries[j].first == entries[i].first &&
             entries[j].second < entries[i].second))
          std::swap(entries[i], entries[j]);
    bool hit = false;
    for (int64_t r = 0; r < std::min<int64_t>(k, ng); ++r)
      if (glabels[static_cast<size_t>(entries[static_cast<size_t>(r)].second)] ==
          plabels[static_cast<size_t>(p)])
        hit = true;
    correct += hit ? 1 : 0;
  }
  return static_cast<double>(correct) / static_cast<double>(np);
}

struct GapOracle {
  std::vector<double> matched, best_unmatched;
  double gap = 0;
};

inline GapOracle similarity_gap(const Tensor& gallery,
                                const std::vector<int>& glabels,
                                const Tensor& probe,
                                const std::vector<int>& plabels) {
  const int64_t ng = gallery.dim(0), np = probe.dim(0), d = gallery.dim(1);
  GapOracle out;
  double mm = 0, mu = 0;
  for (int64_t p = 0; p < np; ++p) {
    double matched = -2, unmatched = -2;
    for (int64_t g = 0; g < ng; ++g) {
      const double s =
          cosine_similarity(probe.data() + p * d, gallery.data() + g * d, d);
      if (glabels[static_cast<size_t>(g)] == plabels[static_cast<size_t>(p)])
        matched = std::max(matched, s);
      else
        unmatched = std::max(unmatched, s);
    }
    out.matched.push_back(matched);
    out.best_unmatched.push_back(unmatched);
    mm += matched;
    mu += unmatched;
  }
  out.gap = (mm - mu) / static_cast<double>(np);
  return out;
}

// Literal contrastive loss (positive excluded by the same-identity mask):
// per pair, -log( e^{s*pos} / sum_j [y_j != y] e^{s*neg_j} ), averaged over
// pairs that have at least one negative.
inline double contrastive_literal(const Tensor& anchors_unit,
                                  const Tensor& keys_unit,
                                  const Tensor& queue_unit,
                                  const std::vector<int>& queue_labels,
                                  const std::vector<int>& anchor_labels,
                                  double s, bool include_pos = false) {
  const int64_t P = anchors_unit.dim(0), d = anchors_unit.dim(1);
  const int64_t Q = queue_unit.dim(0);
  double total = 0;
  int64_t used = 0;
  for (int64_t p = 0; p < P; ++p) {
    double pos = 0;
    for (int64_t k = 0; k < d; ++k) pos += anchors_unit.at(p, k) * keys_unit.at(p, k);
    double denom = include_pos ? std::exp(s * pos) : 0.0;
    int64_t terms = include_pos ? 1 : 0;
    for (int64_t j = 0; j < Q; ++j) {
      if (queue_labels[static_cast<size_t>(j)] == anchor_labels[static_cast<size_t>(p)])
        continue;
      double sim = 0;
      for (int64_t k = 0; k < d; ++k) sim += anchors_unit.at(p, k) * queue_unit.at(j, k);
      denom += std::exp(s * sim);
      ++terms;
    }
    if (terms == 0) continue;
    total += -std::log(std::exp(s * pos) / denom);
    ++used;
  }
  return used > 0 ? total / static_cast<double>(used) : 0.0;
}

}  // namespace qgface::oracle
