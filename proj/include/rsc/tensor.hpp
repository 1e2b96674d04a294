#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "rsc/error.hpp"

namespace rsc {

struct Shape3 {
  int channels = 0;
  int height = 0;
  int width = 0;

  std::size_t size() const {
    return static_cast<std::size_t>(channels) * static_cast<std::size_t>(height) *
           static_cast<std::size_t>(width);
  }
  bool operator==(const Shape3&) const = default;
  std::string str() const {
    return std::to_string(channels) + "x" + std::to_string(height) + "x" + std::to_string(width);
  }
};

template <typename Scalar>
using RowMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// Dense channel-major (C, H, W) tensor. Row c of matrix() is one channel plane.
template <typename Scalar>
class BasicTensor {
 public:
  using value_type = Scalar;
  using MatrixMap = Eigen::Map<RowMatrix<Scalar>>;
  using ConstMatrixMap = Eigen::Map<const RowMatrix<Scalar>>;

  BasicTensor() = default;
  BasicTensor(int channels, int height, int width, Scalar fill = Scalar(0))
      : shape_{channels, height, width}, data_(shape_.size(), fill) {
    require(channels >= 0 && height >= 0 && width >= 0, ErrorKind::InvalidArgument,
            "negative tensor extent");
  }
  explicit BasicTensor(Shape3 shape, Scalar fill = Scalar(0))
      : BasicTensor(shape.channels, shape.height, shape.width, fill) {}

  const Shape3& shape() const { return shape_; }
  int channels() const { return shape_.channels; }
  int height() const { return shape_.height; }
  int width() const { return shape_.width; }
  int plane_size() const { return shape_.height * shape_.width; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  Scalar& operator()(int c, int y, int x) {
    return data_[(static_cast<std::size_t>(c) * shape_.height + y) * shape_.width + x];
  }
  Scalar operator()(int c, int y, int x) const {
    return data_[(static_cast<std::size_t>(c) * shape_.height + y) * shape_.width + x];
  }
  Scalar& operator[](std::size_t i) { return data_[i]; }
  Scalar operator[](std::size_t i) const { return data_[i]; }

  std::span<Scalar> values() { return data_; }
  std::span<const Scalar> values() const { return data_; }
  Scalar* data() { return data_.data(); }
  const Scalar* data() const { return data_.data(); }

  MatrixMap matrix() { return MatrixMap(data_.data(), shape_.channels, plane_size()); }
  ConstMatrixMap matrix() const { return ConstMatrixMap(data_.data(), shape_.channels, plane_size()); }

  template <typename Other>
  BasicTensor<Other> cast() const {
    BasicTensor<Other> out(shape_);
    std::transform(data_.begin(), data_.end(), out.data(), [](Scalar v) { return static_cast<Other>(v); });
    return out;
  }

  bool operator==(const BasicTensor&) const = default;

 private:
  Shape3 shape_;
  std::vector<Scalar> data_;
};

using Tensor = BasicTensor<double>;

inline void require_same_shape(const Shape3& a, const Shape3& b, const std::string& what) {
  require(a == b, ErrorKind::ShapeMismatch, what + ": " + a.str() + " vs " + b.str());
}

inline double max_abs_diff(const Tensor& a, const Tensor& b) {
  require_same_shape(a.shape(), b.shape(), "max_abs_diff");
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

inline double l2_norm(const Tensor& t) {
  double s = 0.0;
  for (double v : t.values()) s += v * v;
  return std::sqrt(s);
}

// H×W binary mask; 1 = preserve, 0 = editable when used as a layout condition.
class Mask {
 public:
  Mask() = default;
  Mask(int height, int width, std::uint8_t fill = 0)
      : height_(height), width_(width), data_(static_cast<std::size_t>(height) * width, fill ? 1 : 0) {}

  int height() const { return height_; }
  int width() const { return width_; }
  std::size_t size() const { return data_.size(); }

  std::uint8_t operator()(int y, int x) const { return data_[static_cast<std::size_t>(y) * width_ + x]; }
  void set(int y, int x, bool v) { data_[static_cast<std::size_t>(y) * width_ + x] = v ? 1 : 0; }
  std::uint8_t operator[](std::size_t i) const { return data_[i]; }
  void set(std::size_t i, bool v) { data_[i] = v ? 1 : 0; }

  std::size_t count() const { return static_cast<std::size_t>(std::count(data_.begin(), data_.end(), 1)); }
  bool all() const { return count() == data_.size(); }
  bool none() const { return count() == 0; }

  Mask inverted() const {
    Mask out(height_, width_);
    for (std::size_t i = 0; i < data_.size(); ++i) out.data_[i] = data_[i] ? 0 : 1;
    return out;
  }

  std::span<const std::uint8_t> values() const { return data_; }
  bool operator==(const Mask&) const = default;

 private:
  int height_ = 0;
  int width_ = 0;
  std::vector<std::uint8_t> data_;
};

// Chebyshev (square structuring element) dilation of the set bits.
inline Mask dilate(const Mask& m, int radius) {
  if (radius <= 0) return m;
  const int h = m.height(), w = m.width();
  Mask rows(h, w);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      bool any = false;
      for (int dx = -radius; dx <= radius && !any; ++dx) {
        const int xx = x + dx;
        any = xx >= 0 && xx < w && m(y, xx);
      }
      rows.set(y, x, any);
    }
  Mask out(h, w);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      bool any = false;
      for (int dy = -radius; dy <= radius && !any; ++dy) {
        const int yy = y + dy;
        any = yy >= 0 && yy < h && rows(yy, x);
      }
      out.set(y, x, any);
    }
  return out;
}

inline double iou(const Mask& a, const Mask& b) {
  require(a.height() == b.height() && a.width() == b.width(), ErrorKind::ShapeMismatch, "iou");
  std::size_t inter = 0, uni = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    inter += (a[i] && b[i]) ? 1 : 0;
    uni += (a[i] || b[i]) ? 1 : 0;
  }
  return uni == 0 ? 0.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

}  // namespace rsc
