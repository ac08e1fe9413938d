#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <vector>

#include "qgface/common.hpp"

namespace qgface {

using MatrixRM =
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatrixCM = Eigen::MatrixXd;

// Dense double tensor, row-major flat storage. Rank up to 4 is all the
// library needs (N,C,H,W activations and 2-D matrices).
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(std::vector<int64_t> shape) : shape_(std::move(shape)) {
    data_.setZero(numel_of(shape_));
  }

  static Tensor zeros(std::vector<int64_t> shape) { return Tensor(std::move(shape)); }

  static Tensor full(std::vector<int64_t> shape, double v) {
    Tensor t(std::move(shape));
    t.data_.setConstant(v);
    return t;
  }

  static Tensor scalar(double v) { return full({1}, v); }

  static Tensor from_vector(const std::vector<double>& v,
                            std::vector<int64_t> shape) {
    Tensor t(std::move(shape));
    if (static_cast<int64_t>(v.size()) != t.numel())
      throw InvalidInputError("from_vector: size does not match shape");
    for (int64_t i = 0; i < t.numel(); ++i) t.data_[i] = v[i];
    return t;
  }

  int64_t numel() const { return data_.size(); }
  int ndim() const { return static_cast<int>(shape_.size()); }
  const std::vector<int64_t>& shape() const { return shape_; }
  int64_t dim(int i) const { return shape_.at(static_cast<size_t>(i)); }

  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }

  Eigen::ArrayXd& array() { return data_; }
  const Eigen::ArrayXd& array() const { return data_; }

  double& operator[](int64_t i) { return data_[i]; }
  double operator[](int64_t i) const { return data_[i]; }

  double& at(int64_t i, int64_t j) { return data_[i * shape_[1] + j]; }
  double at(int64_t i, int64_t j) const { return data_[i * shape_[1] + j]; }

  double& at(int64_t n, int64_t c, int64_t h, int64_t w) {
    return data_[((n * shape_[1] + c) * shape_[2] + h) * shape_[3] + w];
  }
  double at(int64_t n, int64_t c, int64_t h, int64_t w) const {
    return data_[((n * shape_[1] + c) * shape_[2] + h) * shape_[3] + w];
  }

  // 2-D view as an Eigen row-major matrix (no copy).
  Eigen::Map<MatrixRM> mat() {
    require_rank(2);
    return Eigen::Map<MatrixRM>(data_.data(), shape_[0], shape_[1]);
  }
  Eigen::Map<const MatrixRM> mat() const {
    require_rank(2);
    return Eigen::Map<const MatrixRM>(data_.data(), shape_[0], shape_[1]);
  }

  void fill(double v) { data_.setConstant(v); }
  void set_zero() { data_.setZero(); }

  bool all_finite() const { return data_.isFinite().all(); }

  Tensor reshaped(std::vector<int64_t> shape) const {
    if (numel_of(shape) != numel())
      throw InvalidInputError("reshape: element count mismatch");
    Tensor t = *this;
    t.shape_ = std::move(shape);
    return t;
  }

  static int64_t numel_of(const std::vector<int64_t>& shape) {
    int64_t n = 1;
    for (int64_t d : shape) {
      if (d < 0) throw InvalidInputError("negative dimension");
      n *= d;
    }
    return n;
  }

 private:
  void require_rank(int r) const {
    if (ndim() != r) throw InvalidInputError("tensor rank mismatch");
  }

  std::vector<int64_t> shape_;
  Eigen::ArrayXd data_;
};

}  // namespace qgface
