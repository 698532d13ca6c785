#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <ostream>
#include <stdexcept>
#include <string>

namespace fusedepth {

/// Channel-major shape of a single-sample feature map.
struct Shape {
  int channels = 0;
  int height = 0;
  int width = 0;

  int plane() const { return height * width; }
  int size() const { return channels * height * width; }
  bool operator==(const Shape&) const = default;
};

inline std::ostream& operator<<(std::ostream& os, const Shape& s) {
  return os << s.channels << "x" << s.height << "x" << s.width;
}

inline std::string to_string(const Shape& s) {
  return std::to_string(s.channels) + "x" + std::to_string(s.height) + "x" +
         std::to_string(s.width);
}

/// Error raised when tensor shapes violate an operation's contract.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

template <typename Scalar>
using ArrayRM = Eigen::Array<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename Scalar>
using MatrixRM = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Dense C x H x W tensor. Storage is a row-major array with one row per
/// channel and H*W columns, so a channel plane is a contiguous row.
template <typename Scalar>
class Tensor {
 public:
  using Array = ArrayRM<Scalar>;
  using PlaneMap = Eigen::Map<Array>;
  using ConstPlaneMap = Eigen::Map<const Array>;

  Tensor() = default;
  explicit Tensor(Shape shape) : shape_(shape), values_(shape.channels, shape.plane()) {}
  Tensor(Shape shape, Array values) : shape_(shape), values_(std::move(values)) {
    if (values_.rows() != shape.channels || values_.cols() != shape.plane())
      throw ShapeError("tensor storage does not match shape " + to_string(shape));
  }

  static Tensor zeros(Shape shape) { return Tensor(shape, Array::Zero(shape.channels, shape.plane())); }
  static Tensor constant(Shape shape, Scalar v) {
    return Tensor(shape, Array::Constant(shape.channels, shape.plane(), v));
  }

  const Shape& shape() const { return shape_; }
  int channels() const { return shape_.channels; }
  int height() const { return shape_.height; }
  int width() const { return shape_.width; }
  int size() const { return shape_.size(); }
  bool empty() const { return shape_.size() == 0; }

  Array& values() { return values_; }
  const Array& values() const { return values_; }
  Scalar* data() { return values_.data(); }
  const Scalar* data() const { return values_.data(); }

  Scalar& operator()(int c, int y, int x) { return values_(c, y * shape_.width + x); }
  Scalar operator()(int c, int y, int x) const { return values_(c, y * shape_.width + x); }

  /// H x W view of one channel.
  PlaneMap plane(int c) { return PlaneMap(values_.row(c).data(), shape_.height, shape_.width); }
  ConstPlaneMap plane(int c) const {
    return ConstPlaneMap(values_.row(c).data(), shape_.height, shape_.width);
  }

  template <typename Other>
  Tensor<Other> cast() const {
    return Tensor<Other>(shape_, values_.template cast<Other>());
  }

  void set_zero() { values_.setZero(); }

 private:
  Shape shape_{};
  Array values_;
};

}  // namespace fusedepth
