#include "qgface/augment.hpp"

#include <algorithm>
#include <cmath>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "qgface/common.hpp"

namespace qgface {

void AugmentConfig::validate() const {
  if (p_per_transform < 0.0 || p_per_transform > 1.0)
    throw InvalidInputError("augment: p_per_transform must be in [0,1]");
  if (scale_min <= 0.0 || scale_max > 1.0 || scale_min > scale_max)
    throw InvalidInputError("augment: scale range must lie in (0,1]");
  if (min_crop_area <= 0.0 || min_crop_area > 1.0)
    throw InvalidInputError("augment: min_crop_area must be in (0,1]");
  if (jpeg_quality_min < 1 || jpeg_quality_max > 100 ||
      jpeg_quality_min > jpeg_quality_max)
    throw InvalidInputError("augment: jpeg quality range invalid");
  if (input_size <= 0) throw InvalidInputError("augment: input_size invalid");
}

namespace {

cv::Mat crop_resize(const cv::Mat& img, const AugmentConfig& cfg, Rng& rng) {
  const int h = img.rows, w = img.cols;
  const double area = rng.uniform(cfg.min_crop_area, 1.0);
  const double side = std::sqrt(area);
  const int ch = std::max(1, static_cast<int>(std::lround(side * h)));
  const int cw = std::max(1, static_cast<int>(std::lround(side * w)));
  const int y0 = static_cast<int>(rng.uniform_int(0, h - ch));
  const int x0 = static_cast<int>(rng.uniform_int(0, w - cw));
  cv::Mat crop = img(cv::Rect(x0, y0, cw, ch));
  cv::Mat out;
  cv::resize(crop, out, {w, h}, 0, 0, cv::INTER_LINEAR);
  return out;
}

cv::Mat rotate(const cv::Mat& img, const AugmentConfig& cfg, Rng& rng) {
  const double angle = rng.uniform(-cfg.max_rotation_deg, cfg.max_rotation_deg);
  const cv::Point2f center(static_cast<float>(img.cols) / 2.0f,
                           static_cast<float>(img.rows) / 2.0f);
  const cv::Mat rot = cv::getRotationMatrix2D(center, angle, 1.0);
  cv::Mat out;
  cv::warpAffine(img, out, rot, img.size(), cv::INTER_LINEAR,
                 cv::BORDER_REPLICATE);
  return out;
}

cv::Mat color_jitter(const cv::Mat& img, const AugmentConfig& cfg, Rng& rng) {
  const double st = cfg.color_jitter_strength;
  const double fb = rng.uniform(1.0 - st, 1.0 + st);  // brightness
  const double fc = rng.uniform(1.0 - st, 1.0 + st);  // contrast
  const double fs = rng.uniform(1.0 - st, 1.0 + st);  // saturation
  const cv::Scalar chan_mean = cv::mean(img);
  const double mean_gray = fb * (chan_mean[0] + chan_mean[1] + chan_mean[2]) / 3.0;
  cv::Mat out(img.size(), CV_8UC3);
  for (int y = 0; y < img.rows; ++y) {
    const cv::Vec3b* src = img.ptr<cv::Vec3b>(y);
    cv::Vec3b* dst = out.ptr<cv::Vec3b>(y);
    for (int x = 0; x < img.cols; ++x) {
      double v[3];
      for (int c = 0; c < 3; ++c)
        v[c] = (fb * src[x][c] - mean_gray) * fc + mean_gray;
      const double gray = 0.114 * v[0] + 0.587 * v[1] + 0.299 * v[2];
      for (int c = 0; c < 3; ++c) {
        const double j = gray + fs * (v[c] - gray);
        dst[x][c] = static_cast<uchar>(std::clamp(std::lround(j), 0l, 255l));
      }
    }
  }
  return out;
}

cv::Mat down_up(const cv::Mat& img, const AugmentConfig& cfg, Rng& rng) {
  const double factor = rng.uniform(cfg.scale_min, cfg.scale_max);
  const int sw = std::max(1, static_cast<int>(std::lround(factor * img.cols)));
  const int sh = std::max(1, static_cast<int>(std::lround(factor * img.rows)));
  cv::Mat small, out;
  cv::resize(img, small, {sw, sh}, 0, 0, cv::INTER_LINEAR);
  cv::resize(small, out, img.size(), 0, 0, cv::INTER_LINEAR);
  return out;
}

cv::Mat jpeg_roundtrip(const cv::Mat& img, const AugmentConfig& cfg, Rng& rng) {
  const int q = static_cast<int>(rng.uniform_int(cfg.jpeg_quality_min,
                                                 cfg.jpeg_quality_max));
  std::vector<uchar> buf;
  cv::imencode(".jpg", img, buf, {cv::IMWRITE_JPEG_QUALITY, q});
  return cv::imdecode(buf, cv::IMREAD_COLOR);
}

}  // namespace

cv::Mat augment_image(const cv::Mat& image, const AugmentConfig& cfg, Rng& rng) {
  cfg.validate();
  if (image.type() != CV_8UC3 || image.rows != cfg.input_size ||
      image.cols != cfg.input_size)
    throw InvalidInputError("augment_image: image does not match configured input size");
  cv::Mat out = image.clone();
  if (rng.bernoulli(cfg.p_per_transform)) out = crop_resize(out, cfg, rng);
  if (rng.bernoulli(cfg.p_per_transform)) out = rotate(out, cfg, rng);
  if (rng.bernoulli(cfg.p_per_transform)) out = color_jitter(out, cfg, rng);
  if (rng.bernoulli(cfg.p_per_transform)) out = down_up(out, cfg, rng);
  if (rng.bernoulli(cfg.p_per_transform)) out = jpeg_roundtrip(out, cfg, rng);
  return out;
}

cv::Mat maybe_flip(const cv::Mat& image, Rng& rng) {
  if (!rng.bernoulli(0.5)) return image.clone();
  cv::Mat out;
  cv::flip(image, out, 1);
  return out;
}

PairBatch make_pair_batch(const std::vector<cv::Mat>& images,
                          const AugmentConfig& cfg, Rng& rng) {
  if (images.empty()) throw InvalidInputError("make_pair_batch: empty batch");
  PairBatch out;
  out.originals.reserve(images.size());
  out.augmented.reserve(images.size());
  for (const auto& img : images) {
    auto [orig, aug] = make_pair(img, cfg, rng.u64());
    out.originals.push_back(std::move(orig));
    out.augmented.push_back(std::move(aug));
  }
  return out;
}

std::pair<cv::Mat, cv::Mat> make_pair(const cv::Mat& image,
                                      const AugmentConfig& cfg,
                                      uint64_t sample_seed) {
  Rng flip_rng(derive_seed(sample_seed, {1}));
  Rng aug_rng(derive_seed(sample_seed, {2}));
  return {maybe_flip(image, flip_rng), augment_image(image, cfg, aug_rng)};
}

}  // namespace qgface
