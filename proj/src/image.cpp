#include "qgface/image.hpp"

#include <algorithm>
#include <cmath>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "qgface/common.hpp"

namespace qgface {

Tensor images_to_tensor(const std::vector<cv::Mat>& images) {
  if (images.empty()) throw InvalidInputError("images_to_tensor: empty batch");
  const int h = images[0].rows, w = images[0].cols;
  Tensor out({static_cast<int64_t>(images.size()), 3, h, w});
  for (size_t n = 0; n < images.size(); ++n) {
    const cv::Mat& img = images[n];
    if (img.type() != CV_8UC3 || img.rows != h || img.cols != w)
      throw InvalidInputError("images_to_tensor: inconsistent image shape/type");
    for (int y = 0; y < h; ++y) {
      const cv::Vec3b* row = img.ptr<cv::Vec3b>(y);
      for (int x = 0; x < w; ++x)
        for (int c = 0; c < 3; ++c)
          out.at(static_cast<int64_t>(n), c, y, x) =
              static_cast<double>(row[x][c]) / 127.5 - 1.0;
    }
  }
  return out;
}

namespace {

constexpr int kW = 640, kH = 420, kMargin = 56;
const cv::Scalar kPalette[4] = {{180, 90, 30, 0}, {60, 60, 200, 0},
                                {40, 150, 40, 0}, {150, 40, 150, 0}};

struct Range {
  double lo, hi;
};

Range finite_range(const std::vector<double>& v) {
  Range r{0.0, 1.0};
  bool first = true;
  for (double x : v) {
    if (!std::isfinite(x)) continue;
    if (first) { r.lo = r.hi = x; first = false; }
    r.lo = std::min(r.lo, x);
    r.hi = std::max(r.hi, x);
  }
  if (first) return {0.0, 1.0};
  if (r.hi - r.lo < 1e-12) { r.lo -= 0.5; r.hi += 0.5; }
  return r;
}

cv::Point map_point(double x, double y, const Range& rx, const Range& ry) {
  const int px = kMargin + static_cast<int>((x - rx.lo) / (rx.hi - rx.lo) * (kW - 2 * kMargin));
  const int py = kH - kMargin - static_cast<int>((y - ry.lo) / (ry.hi - ry.lo) * (kH - 2 * kMargin));
  return {px, py};
}

cv::Mat chart_canvas(const std::string& title, const Range& rx, const Range& ry) {
  cv::Mat canvas(kH, kW, CV_8UC3, cv::Scalar(255, 255, 255));
  cv::rectangle(canvas, {kMargin, kMargin}, {kW - kMargin, kH - kMargin},
                cv::Scalar(120, 120, 120), 1);
  cv::putText(canvas, title, {kMargin, kMargin - 16}, cv::FONT_HERSHEY_SIMPLEX,
              0.5, cv::Scalar(0, 0, 0), 1, cv::LINE_AA);
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.3g", rx.lo);
  cv::putText(canvas, buf, {kMargin - 8, kH - kMargin + 20}, cv::FONT_HERSHEY_SIMPLEX,
              0.4, cv::Scalar(0, 0, 0), 1, cv::LINE_AA);
  std::snprintf(buf, sizeof(buf), "%.3g", rx.hi);
  cv::putText(canvas, buf, {kW - kMargin - 24, kH - kMargin + 20},
              cv::FONT_HERSHEY_SIMPLEX, 0.4, cv::Scalar(0, 0, 0), 1, cv::LINE_AA);
  std::snprintf(buf, sizeof(buf), "%.3g", ry.lo);
  cv::putText(canvas, buf, {4, kH - kMargin}, cv::FONT_HERSHEY_SIMPLEX, 0.4,
              cv::Scalar(0, 0, 0), 1, cv::LINE_AA);
  std::snprintf(buf, sizeof(buf), "%.3g", ry.hi);
  cv::putText(canvas, buf, {4, kMargin + 8}, cv::FONT_HERSHEY_SIMPLEX, 0.4,
              cv::Scalar(0, 0, 0), 1, cv::LINE_AA);
  return canvas;
}

void draw_series(cv::Mat& canvas, const std::vector<double>& x,
                 const std::vector<double>& y, const Range& rx, const Range& ry,
                 const cv::Scalar& color) {
  cv::Point prev;
  bool has_prev = false;
  for (size_t i = 0; i < x.size(); ++i) {
    if (!std::isfinite(y[i])) { has_prev = false; continue; }
    const cv::Point p = map_point(x[i], y[i], rx, ry);
    if (has_prev) cv::line(canvas, prev, p, color, 1, cv::LINE_AA);
    prev = p;
    has_prev = true;
  }
}

}  // namespace

void render_line_chart(const std::vector<double>& x, const std::vector<double>& y,
                       const std::string& title, const std::string& path) {
  render_multi_line_chart(x, {y}, {""}, title, path);
}

void render_multi_line_chart(const std::vector<double>& x,
                             const std::vector<std::vector<double>>& series,
                             const std::vector<std::string>& names,
                             const std::string& title, const std::string& path) {
  if (x.empty() || series.empty())
    throw InvalidInputError("render chart: empty data");
  Range rx = finite_range(x);
  std::vector<double> all;
  for (const auto& s : series) all.insert(all.end(), s.begin(), s.end());
  Range ry = finite_range(all);
  cv::Mat canvas = chart_canvas(title, rx, ry);
  for (size_t s = 0; s < series.size(); ++s) {
    const cv::Scalar color = kPalette[s % 4];
    draw_series(canvas, x, series[s], rx, ry, color);
    if (!names[s].empty())
      cv::putText(canvas, names[s],
                  {kW - kMargin - 120, kMargin + 18 + 16 * static_cast<int>(s)},
                  cv::FONT_HERSHEY_SIMPLEX, 0.45, color, 1, cv::LINE_AA);
  }
  if (!cv::imwrite(path, canvas))
    throw IngestionError("cannot write chart: " + path);
}

void render_histogram(const std::vector<double>& values, int bins,
                      const std::string& title, const std::string& path) {
  if (values.empty() || bins <= 0)
    throw InvalidInputError("render_histogram: empty data");
  Range rv = finite_range(values);
  std::vector<double> counts(static_cast<size_t>(bins), 0.0);
  for (double v : values) {
    if (!std::isfinite(v)) continue;
    int bin = static_cast<int>((v - rv.lo) / (rv.hi - rv.lo) * bins);
    bin = std::clamp(bin, 0, bins - 1);
    counts[static_cast<size_t>(bin)] += 1.0;
  }
  Range ry{0.0, *std::max_element(counts.begin(), counts.end())};
  if (ry.hi <= 0) ry.hi = 1;
  cv::Mat canvas = chart_canvas(title, rv, ry);
  const double bw = (rv.hi - rv.lo) / bins;
  for (int i = 0; i < bins; ++i) {
    const cv::Point tl = map_point(rv.lo + i * bw, counts[static_cast<size_t>(i)], rv, ry);
    const cv::Point br = map_point(rv.lo + (i + 1) * bw, 0.0, rv, ry);
    cv::rectangle(canvas, tl, br, kPalette[0], cv::FILLED);
  }
  if (!cv::imwrite(path, canvas))
    throw IngestionError("cannot write chart: " + path);
}

}  // namespace qgface
