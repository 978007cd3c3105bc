#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <functional>
#include <initializer_list>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "elp/errors.hpp"

namespace elp {

using Index = Eigen::Index;
using Dims = std::vector<Index>;

inline Index dims_product(const Dims& dims) {
  return std::accumulate(dims.begin(), dims.end(), Index{1}, std::multiplies<>());
}

inline std::string dims_string(const Dims& dims) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < dims.size(); ++i) os << (i ? "," : "") << dims[i];
  os << ']';
  return os.str();
}

/// Dense row-major array of arbitrary rank. The flat storage is an Eigen column
/// array so whole-tensor arithmetic compiles down to Eigen expressions; the last
/// dimension varies fastest.
template <typename Scalar_>
class BasicTensor {
 public:
  using Scalar = Scalar_;
  using Array = Eigen::Array<Scalar, Eigen::Dynamic, 1>;
  using RowMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  using MatrixMap = Eigen::Map<RowMatrix>;
  using ConstMatrixMap = Eigen::Map<const RowMatrix>;

  BasicTensor() = default;

  explicit BasicTensor(Dims dims, Scalar fill = Scalar(0)) : dims_(std::move(dims)) {
    check_dims(dims_);
    data_ = Array::Constant(dims_product(dims_), fill);
  }

  BasicTensor(std::initializer_list<Index> dims) : BasicTensor(Dims(dims)) {}

  BasicTensor(Dims dims, Array data) : dims_(std::move(dims)), data_(std::move(data)) {
    check_dims(dims_);
    if (data_.size() != dims_product(dims_))
      throw ShapeError("tensor data length " + std::to_string(data_.size()) +
                       " does not match dims " + dims_string(dims_));
  }

  static BasicTensor Zeros(Dims dims) { return BasicTensor(std::move(dims)); }
  static BasicTensor Constant(Dims dims, Scalar v) { return BasicTensor(std::move(dims), v); }
  static BasicTensor scalar(Scalar v) { return BasicTensor(Dims{1}, v); }

  const Dims& dims() const { return dims_; }
  Index rank() const { return static_cast<Index>(dims_.size()); }
  Index dim(Index i) const { return dims_.at(static_cast<std::size_t>(i)); }
  Index size() const { return data_.size(); }
  bool empty() const { return data_.size() == 0; }

  Scalar* data() { return data_.data(); }
  const Scalar* data() const { return data_.data(); }

  // Flat views. These never change the length, so the dims invariant holds.
  Eigen::Map<Array> array() { return Eigen::Map<Array>(data_.data(), data_.size()); }
  Eigen::Map<const Array> array() const {
    return Eigen::Map<const Array>(data_.data(), data_.size());
  }

  Scalar& operator[](Index i) { return data_[i]; }
  Scalar operator[](Index i) const { return data_[i]; }

  Scalar& operator()(Index i, Index j) { return data_[i * dims_[1] + j]; }
  Scalar operator()(Index i, Index j) const { return data_[i * dims_[1] + j]; }
  Scalar& operator()(Index c, Index i, Index j) {
    return data_[(c * dims_[1] + i) * dims_[2] + j];
  }
  Scalar operator()(Index c, Index i, Index j) const {
    return data_[(c * dims_[1] + i) * dims_[2] + j];
  }
  Scalar& operator()(Index a, Index b, Index i, Index j) {
    return data_[((a * dims_[1] + b) * dims_[2] + i) * dims_[3] + j];
  }
  Scalar operator()(Index a, Index b, Index i, Index j) const {
    return data_[((a * dims_[1] + b) * dims_[2] + i) * dims_[3] + j];
  }

  /// Spatial plane `c` of a rank-3 [C,H,W] tensor as a row-major matrix view.
  MatrixMap frame(Index c) {
    return MatrixMap(data_.data() + c * dims_[1] * dims_[2], dims_[1], dims_[2]);
  }
  ConstMatrixMap frame(Index c) const {
    return ConstMatrixMap(data_.data() + c * dims_[1] * dims_[2], dims_[1], dims_[2]);
  }

  /// Whole rank-2 tensor as a matrix view.
  MatrixMap matrix() { return MatrixMap(data_.data(), dims_[0], dims_[1]); }
  ConstMatrixMap matrix() const { return ConstMatrixMap(data_.data(), dims_[0], dims_[1]); }

  BasicTensor reshaped(Dims dims) const {
    if (dims_product(dims) != size())
      throw ShapeError("cannot reshape " + dims_string(dims_) + " to " + dims_string(dims));
    return BasicTensor(std::move(dims), data_);
  }

  template <typename Other>
  BasicTensor<Other> cast() const {
    return BasicTensor<Other>(dims_, data_.template cast<Other>());
  }

  Scalar sum() const { return data_.sum(); }
  Scalar squared_norm() const { return data_.matrix().squaredNorm(); }
  Scalar norm() const { return data_.matrix().norm(); }
  Scalar max_abs() const { return size() ? data_.abs().maxCoeff() : Scalar(0); }

  BasicTensor& operator+=(const BasicTensor& o) {
    require_same(o, "+=");
    data_ += o.data_;
    return *this;
  }
  BasicTensor& operator-=(const BasicTensor& o) {
    require_same(o, "-=");
    data_ -= o.data_;
    return *this;
  }
  BasicTensor& operator*=(Scalar s) {
    data_ *= s;
    return *this;
  }

  friend BasicTensor operator+(BasicTensor a, const BasicTensor& b) { return a += b; }
  friend BasicTensor operator-(BasicTensor a, const BasicTensor& b) { return a -= b; }
  friend BasicTensor operator*(BasicTensor a, Scalar s) { return a *= s; }
  friend BasicTensor operator*(Scalar s, BasicTensor a) { return a *= s; }
  friend BasicTensor operator-(BasicTensor a) {
    a.data_ = -a.data_;
    return a;
  }

  /// Elementwise (Hadamard) product.
  friend BasicTensor hadamard(const BasicTensor& a, const BasicTensor& b) {
    a.require_same(b, "hadamard");
    return BasicTensor(a.dims_, a.data_ * b.data_);
  }

  friend bool operator==(const BasicTensor& a, const BasicTensor& b) {
    return a.dims_ == b.dims_ && (a.data_ == b.data_).all();
  }

  void require_same(const BasicTensor& o, const char* what) const {
    if (dims_ != o.dims_)
      throw ShapeError(std::string(what) + ": dims " + dims_string(dims_) + " vs " +
                       dims_string(o.dims_));
  }

 private:
  static void check_dims(const Dims& dims) {
    for (Index d : dims)
      if (d <= 0) throw ShapeError("tensor extents must be positive, got " + dims_string(dims));
  }

  Dims dims_;
  Array data_;
};

using Tensor = BasicTensor<double>;

/// n_x x n_y x B frames, stored frames-first as [B, n_x, n_y].
using VideoCube = Tensor;
/// Per-frame modulation masks, [B, n_x, n_y], values in [0,1].
using MaskStack = Tensor;
/// A single coded image, [n_x, n_y].
using Measurement = Tensor;

}  // namespace elp
