#include <doctest.h>

#include <opencv2/imgproc.hpp>

#include "qgface/augment.hpp"
#include "qgface/common.hpp"

using namespace qgface;

namespace {

cv::Mat test_image(int size, uint64_t seed) {
  Rng rng(seed);
  cv::Mat img(size, size, CV_8UC3);
  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x)
      img.at<cv::Vec3b>(y, x) = {static_cast<uchar>(rng.uniform_int(0, 255)),
                                 static_cast<uchar>(rng.uniform_int(0, 255)),
                                 static_cast<uchar>(rng.uniform_int(0, 255))};
  return img;
}

bool identical(const cv::Mat& a, const cv::Mat& b) {
  if (a.size() != b.size() || a.type() != b.type()) return false;
  return cv::norm(a, b, cv::NORM_INF) == 0.0;
}

}  // namespace

TEST_CASE("p_per_transform = 0 returns the input bit-for-bit") {
  AugmentConfig cfg;
  cfg.p_per_transform = 0.0;
  cfg.input_size = 64;
  cv::Mat img = test_image(64, 1);
  Rng rng(42);
  CHECK(identical(augment_image(img, cfg, rng), img));
}

TEST_CASE("every transform preserves shape and dtype") {
  AugmentConfig cfg;
  cfg.p_per_transform = 1.0;  // force all transforms
  cfg.input_size = 64;
  cv::Mat img = test_image(64, 2);
  Rng rng(5);
  for (int trial = 0; trial < 10; ++trial) {
    cv::Mat out = augment_image(img, cfg, rng);
    CHECK(out.rows == 64);
    CHECK(out.cols == 64);
    CHECK(out.type() == CV_8UC3);
  }
}

TEST_CASE("down-up scaling keeps the output at input resolution") {
  AugmentConfig cfg;
  cfg.p_per_transform = 0.0;
  cfg.input_size = 112;
  cv::Mat img = test_image(112, 3);
  // exercise the scale step in isolation through degrade-like config
  cfg.p_per_transform = 1.0;
  cfg.scale_min = cfg.scale_max = 0.25;
  cfg.min_crop_area = 1.0;
  cfg.max_rotation_deg = 0.0;
  cfg.color_jitter_strength = 0.0;
  cfg.jpeg_quality_min = cfg.jpeg_quality_max = 100;
  Rng rng(6);
  cv::Mat out = augment_image(img, cfg, rng);
  CHECK(out.rows == 112);
  CHECK(out.cols == 112);
  // a 0.25 down-up pass must actually lose detail
  CHECK_FALSE(identical(out, img));
}

TEST_CASE("fixed seed reproduces the augmented image exactly") {
  AugmentConfig cfg;
  cfg.input_size = 64;
  cv::Mat img = test_image(64, 7);
  for (uint64_t seed : {1ULL, 2ULL, 99ULL}) {
    Rng r1(seed), r2(seed);
    CHECK(identical(augment_image(img, cfg, r1), augment_image(img, cfg, r2)));
  }
}

TEST_CASE("shape validation") {
  AugmentConfig cfg;
  cfg.input_size = 112;
  cv::Mat wrong = test_image(64, 8);
  Rng rng(1);
  CHECK_THROWS_AS(augment_image(wrong, cfg, rng), InvalidInputError);
  AugmentConfig bad;
  bad.scale_min = 0.0;
  bad.input_size = 64;
  cv::Mat ok = test_image(64, 9);
  CHECK_THROWS_AS(augment_image(ok, bad, rng), InvalidInputError);
}

TEST_CASE("pair batches stay aligned and deterministic") {
  AugmentConfig cfg;
  cfg.input_size = 64;
  std::vector<cv::Mat> images;
  for (int i = 0; i < 8; ++i) images.push_back(test_image(64, 100 + i));

  Rng r1(11), r2(11);
  PairBatch a = make_pair_batch(images, cfg, r1);
  PairBatch b = make_pair_batch(images, cfg, r2);
  CHECK(a.originals.size() == 8);
  CHECK(a.augmented.size() == 8);
  for (size_t i = 0; i < 8; ++i) {
    CHECK(identical(a.originals[i], b.originals[i]));
    CHECK(identical(a.augmented[i], b.augmented[i]));
    // original stream is the source up to horizontal flip
    cv::Mat flipped;
    cv::flip(images[i], flipped, 1);
    CHECK((identical(a.originals[i], images[i]) ||
           identical(a.originals[i], flipped)));
  }
}

TEST_CASE("per-sample seeds make pairs independent of batch order") {
  AugmentConfig cfg;
  cfg.input_size = 64;
  cv::Mat img = test_image(64, 55);
  auto [o1, a1] = make_pair(img, cfg, 777);
  auto [o2, a2] = make_pair(img, cfg, 777);
  CHECK(identical(o1, o2));
  CHECK(identical(a1, a2));
  auto [o3, a3] = make_pair(img, cfg, 778);
  (void)o3;
  // a different seed virtually always changes the degradation
  CHECK_FALSE(identical(a1, a3));
}
