#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <span>
#include <string>
#include <vector>

#include "elp/tensor.hpp"

namespace elp {

namespace detail {

inline void require_rank(const Dims& dims, std::size_t rank, const char* what) {
  if (dims.size() != rank)
    throw ShapeError(std::string(what) + ": expected rank " + std::to_string(rank) + ", got " +
                     dims_string(dims));
}

template <typename Scalar>
using RowMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Geometry of a same-padded k x k convolution in padded-row form. Each channel
/// is zero-padded by r = k/2 and flattened with row pitch W + 2r. Output pixel
/// (i, j) sits at column i * pitch + j of a span of `span` columns, and tap
/// (di, dj) reads the padded input starting at column di * pitch + dj. Columns
/// with j >= W inside the span are scratch.
struct ConvGeometry {
  Index H, W, k, r, pitch, padded, span;
  ConvGeometry(Index H_, Index W_, Index k_)
      : H(H_), W(W_), k(k_), r(k_ / 2), pitch(W_ + 2 * r), padded((H_ + 2 * r) * pitch),
        span((H_ - 1) * pitch + W_) {}
  Index offset(Index di, Index dj) const { return di * pitch + dj; }
};

template <typename Scalar>
RowMatrix<Scalar> pad_channels(const BasicTensor<Scalar>& input, const ConvGeometry& g) {
  const Index C = input.dim(0);
  RowMatrix<Scalar> out = RowMatrix<Scalar>::Zero(C, g.padded);
  for (Index c = 0; c < C; ++c)
    for (Index i = 0; i < g.H; ++i)
      std::copy_n(input.data() + (c * g.H + i) * g.W, g.W,
                  out.row(c).data() + (i + g.r) * g.pitch + g.r);
  return out;
}

/// Kernel [Co,Ci,k,k] regrouped into k*k stacked Co x Ci tap matrices.
template <typename Scalar>
RowMatrix<Scalar> tap_matrices(const BasicTensor<Scalar>& kernel) {
  const Index Co = kernel.dim(0), Ci = kernel.dim(1), kk = kernel.dim(2) * kernel.dim(3);
  RowMatrix<Scalar> taps(kk * Co, Ci);
  for (Index o = 0; o < Co; ++o)
    for (Index c = 0; c < Ci; ++c)
      for (Index t = 0; t < kk; ++t) taps(t * Co + o, c) = kernel.data()[(o * Ci + c) * kk + t];
  return taps;
}

template <typename Scalar>
void check_conv_shapes(const BasicTensor<Scalar>& input, const BasicTensor<Scalar>& kernel,
                       const BasicTensor<Scalar>& bias) {
  require_rank(input.dims(), 3, "conv2d input");
  require_rank(kernel.dims(), 4, "conv2d kernel");
  if (kernel.dim(1) != input.dim(0))
    throw ShapeError("conv2d: kernel expects " + std::to_string(kernel.dim(1)) +
                     " input channels, input has " + std::to_string(input.dim(0)));
  if (kernel.dim(2) != kernel.dim(3) || kernel.dim(2) % 2 == 0)
    throw ShapeError("conv2d: kernel must be square with odd size, got " +
                     dims_string(kernel.dims()));
  if (bias.rank() != 1 || bias.dim(0) != kernel.dim(0))
    throw ShapeError("conv2d: bias " + dims_string(bias.dims()) + " does not match " +
                     std::to_string(kernel.dim(0)) + " output channels");
}

}  // namespace detail

/// Same-padded (zero fill) 2-D cross-correlation, stride 1.
/// input [C_in,H,W], kernel [C_out,C_in,k,k], bias [C_out] -> [C_out,H,W].
template <typename Scalar>
BasicTensor<Scalar> conv2d(const BasicTensor<Scalar>& input, const BasicTensor<Scalar>& kernel,
                           const BasicTensor<Scalar>& bias) {
  detail::check_conv_shapes(input, kernel, bias);
  const Index Co = kernel.dim(0), k = kernel.dim(2);
  const detail::ConvGeometry g(input.dim(1), input.dim(2), k);
  const auto padded = detail::pad_channels(input, g);
  const auto taps = detail::tap_matrices(kernel);
  detail::RowMatrix<Scalar> acc = detail::RowMatrix<Scalar>::Zero(Co, g.span);
  for (Index di = 0; di < k; ++di)
    for (Index dj = 0; dj < k; ++dj)
      acc.noalias() += taps.middleRows((di * k + dj) * Co, Co) * padded.middleCols(g.offset(di, dj), g.span);
  BasicTensor<Scalar> out({Co, g.H, g.W});
  for (Index o = 0; o < Co; ++o)
    for (Index i = 0; i < g.H; ++i) {
      const Scalar* src = acc.row(o).data() + i * g.pitch;
      Scalar* dst = out.data() + (o * g.H + i) * g.W;
      for (Index j = 0; j < g.W; ++j) dst[j] = src[j] + bias[o];
    }
  return out;
}

/// Gradients of conv2d given the upstream gradient of its output.
template <typename Scalar>
struct Conv2dGrads {
  BasicTensor<Scalar> input;
  BasicTensor<Scalar> kernel;
  BasicTensor<Scalar> bias;
};

template <typename Scalar>
Conv2dGrads<Scalar> conv2d_backward(const BasicTensor<Scalar>& input,
                                    const BasicTensor<Scalar>& kernel,
                                    const BasicTensor<Scalar>& grad_out) {
  const Index Co = kernel.dim(0), Ci = input.dim(0), k = kernel.dim(2);
  const detail::ConvGeometry geo(input.dim(1), input.dim(2), k);
  if (grad_out.dims() != Dims{Co, geo.H, geo.W})
    throw ShapeError("conv2d_backward: upstream gradient " + dims_string(grad_out.dims()));
  const auto padded = detail::pad_channels(input, geo);
  const auto taps = detail::tap_matrices(kernel);
  detail::RowMatrix<Scalar> spread = detail::RowMatrix<Scalar>::Zero(Co, geo.span);
  for (Index o = 0; o < Co; ++o)
    for (Index i = 0; i < geo.H; ++i)
      std::copy_n(grad_out.data() + (o * geo.H + i) * geo.W, geo.W, spread.row(o).data() + i * geo.pitch);

  Conv2dGrads<Scalar> g;
  g.kernel = BasicTensor<Scalar>(kernel.dims());
  g.bias = BasicTensor<Scalar>(Dims{Co});
  g.bias.array() = spread.rowwise().sum().array();
  detail::RowMatrix<Scalar> dpadded = detail::RowMatrix<Scalar>::Zero(Ci, geo.padded);
  detail::RowMatrix<Scalar> dtap(Co, Ci);
  for (Index di = 0; di < k; ++di)
    for (Index dj = 0; dj < k; ++dj) {
      const Index t = di * k + dj, off = geo.offset(di, dj);
      dtap.noalias() = spread * padded.middleCols(off, geo.span).transpose();
      for (Index o = 0; o < Co; ++o)
        for (Index c = 0; c < Ci; ++c) g.kernel.data()[(o * Ci + c) * k * k + t] = dtap(o, c);
      dpadded.middleCols(off, geo.span).noalias() += taps.middleRows(t * Co, Co).transpose() * spread;
    }
  g.input = BasicTensor<Scalar>({Ci, geo.H, geo.W});
  for (Index c = 0; c < Ci; ++c)
    for (Index i = 0; i < geo.H; ++i)
      std::copy_n(dpadded.row(c).data() + (i + geo.r) * geo.pitch + geo.r, geo.W,
                  g.input.data() + (c * geo.H + i) * geo.W);
  return g;
}

/// 2x2 mean pooling, stride 2. Requires even H and W.
template <typename Scalar>
BasicTensor<Scalar> avg_pool2(const BasicTensor<Scalar>& input) {
  detail::require_rank(input.dims(), 3, "avg_pool2");
  const Index C = input.dim(0), H = input.dim(1), W = input.dim(2);
  if (H % 2 || W % 2)
    throw ShapeError("avg_pool2: spatial dims must be even, got " + dims_string(input.dims()));
  BasicTensor<Scalar> out({C, H / 2, W / 2});
  for (Index c = 0; c < C; ++c)
    for (Index i = 0; i < H / 2; ++i)
      for (Index j = 0; j < W / 2; ++j)
        // pairwise order keeps upsample-then-pool exact
        out(c, i, j) = ((input(c, 2 * i, 2 * j) + input(c, 2 * i, 2 * j + 1)) +
                        (input(c, 2 * i + 1, 2 * j) + input(c, 2 * i + 1, 2 * j + 1))) /
                       Scalar(4);
  return out;
}

/// Nearest-neighbour 2x upsampling: each element becomes a 2x2 block.
template <typename Scalar>
BasicTensor<Scalar> upsample2(const BasicTensor<Scalar>& input) {
  detail::require_rank(input.dims(), 3, "upsample2");
  const Index C = input.dim(0), H = input.dim(1), W = input.dim(2);
  BasicTensor<Scalar> out({C, 2 * H, 2 * W});
  for (Index c = 0; c < C; ++c)
    for (Index i = 0; i < 2 * H; ++i)
      for (Index j = 0; j < 2 * W; ++j) out(c, i, j) = input(c, i / 2, j / 2);
  return out;
}

/// Channels of `a` followed by channels of `b`. A default-constructed (rank 0)
/// tensor on either side counts as having zero channels.
template <typename Scalar>
BasicTensor<Scalar> concat_channels(const BasicTensor<Scalar>& a, const BasicTensor<Scalar>& b) {
  if (b.rank() == 0) return a;
  if (a.rank() == 0) return b;
  detail::require_rank(a.dims(), 3, "concat_channels");
  detail::require_rank(b.dims(), 3, "concat_channels");
  if (a.dim(1) != b.dim(1) || a.dim(2) != b.dim(2))
    throw ShapeError("concat_channels: spatial mismatch " + dims_string(a.dims()) + " vs " +
                     dims_string(b.dims()));
  BasicTensor<Scalar> out({a.dim(0) + b.dim(0), a.dim(1), a.dim(2)});
  out.array().head(a.size()) = a.array();
  out.array().tail(b.size()) = b.array();
  return out;
}

/// out channel c = input channel index[c]; indices may repeat.
template <typename Scalar>
BasicTensor<Scalar> gather_channels(const BasicTensor<Scalar>& input, std::span<const Index> index) {
  detail::require_rank(input.dims(), 3, "gather_channels");
  if (index.empty()) throw ShapeError("gather_channels: empty index list");
  const Index plane = input.dim(1) * input.dim(2);
  BasicTensor<Scalar> out({static_cast<Index>(index.size()), input.dim(1), input.dim(2)});
  for (std::size_t c = 0; c < index.size(); ++c) {
    if (index[c] < 0 || index[c] >= input.dim(0))
      throw ShapeError("gather_channels: channel " + std::to_string(index[c]) + " out of range");
    out.array().segment(static_cast<Index>(c) * plane, plane) =
        input.array().segment(index[c] * plane, plane);
  }
  return out;
}

/// Adjoint of gather_channels: accumulates each output channel into its source.
template <typename Scalar>
BasicTensor<Scalar> scatter_add_channels(const BasicTensor<Scalar>& grad, std::span<const Index> index,
                                         Index channels) {
  const Index plane = grad.dim(1) * grad.dim(2);
  BasicTensor<Scalar> out({channels, grad.dim(1), grad.dim(2)});
  for (std::size_t c = 0; c < index.size(); ++c)
    out.array().segment(index[c] * plane, plane) +=
        grad.array().segment(static_cast<Index>(c) * plane, plane);
  return out;
}

template <typename Scalar>
BasicTensor<Scalar> slice_channels(const BasicTensor<Scalar>& input, Index begin, Index count) {
  detail::require_rank(input.dims(), 3, "slice_channels");
  if (begin < 0 || count <= 0 || begin + count > input.dim(0))
    throw ShapeError("slice_channels: range out of bounds for " + dims_string(input.dims()));
  const Index plane = input.dim(1) * input.dim(2);
  BasicTensor<Scalar> out({count, input.dim(1), input.dim(2)});
  out.array() = input.array().segment(begin * plane, count * plane);
  return out;
}

template <typename Scalar>
Scalar dot(const BasicTensor<Scalar>& a, const BasicTensor<Scalar>& b) {
  a.require_same(b, "dot");
  return (a.array() * b.array()).sum();
}

}  // namespace elp
