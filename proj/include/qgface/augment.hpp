#pragma once

#include <opencv2/core.hpp>
#include <utility>
#include <vector>

#include "qgface/rng.hpp"

namespace qgface {

// Low-quality degradation pipeline for the augmented stream. Each transform
// fires independently with p_per_transform, in fixed order: crop&resize,
// rotation, color jitter, down-up scaling, JPEG round-trip. Geometry runs
// before photometry before compression so the JPEG artifacts land last.
struct AugmentConfig {
  double p_per_transform = 0.5;
  double scale_min = 0.25;
  double scale_max = 1.0;
  double min_crop_area = 0.8;
  double max_rotation_deg = 30.0;
  double color_jitter_strength = 0.2;
  int jpeg_quality_min = 30;
  int jpeg_quality_max = 90;
  int input_size = 112;

  void validate() const;
};

// Output has the input's shape and type; deterministic given the rng state.
// With p_per_transform = 0 the input is returned bit-for-bit.
cv::Mat augment_image(const cv::Mat& image, const AugmentConfig& cfg, Rng& rng);

// Horizontal flip with probability 0.5 — the only augmentation the original
// stream receives.
cv::Mat maybe_flip(const cv::Mat& image, Rng& rng);

struct PairBatch {
  std::vector<cv::Mat> originals;
  std::vector<cv::Mat> augmented;
};

// Index i of both streams refers to the same source image. Each image gets
// its own forked rng stream, one for the flip and one for the degradations.
PairBatch make_pair_batch(const std::vector<cv::Mat>& images,
                          const AugmentConfig& cfg, Rng& rng);

// Same pairing, but with externally assigned per-sample seeds so batch order
// cannot influence the result (used by the trainer for exact resume).
std::pair<cv::Mat, cv::Mat> make_pair(const cv::Mat& image,
                                      const AugmentConfig& cfg,
                                      uint64_t sample_seed);

}  // namespace qgface
