#pragma once

#include <opencv2/core.hpp>
#include <string>
#include <vector>

#include "qgface/tensor.hpp"

namespace qgface {

// 8-bit BGR images -> (N,3,H,W) tensor with pixels mapped to [-1,1]
// (x / 127.5 - 1), channel order kept as stored.
Tensor images_to_tensor(const std::vector<cv::Mat>& images);

// Simple chart rendering so diagnostics ship as CSV plus a PNG without a
// plotting stack. One series per call; x ascending.
void render_line_chart(const std::vector<double>& x, const std::vector<double>& y,
                       const std::string& title, const std::string& path);
void render_multi_line_chart(const std::vector<double>& x,
                             const std::vector<std::vector<double>>& series,
                             const std::vector<std::string>& names,
                             const std::string& title, const std::string& path);
void render_histogram(const std::vector<double>& values, int bins,
                      const std::string& title, const std::string& path);

}  // namespace qgface
