#pragma once

// Tape-free numeric kernels behind the differentiable ops. Every reduction
// runs in a fixed sequential order so results are bitwise reproducible.

#include <cstddef>

#include "neurovol/tensor.hpp"

namespace neurovol::kernels {

/// Shape bookkeeping for a 3D cross-correlation with input [N,C,D,H,W] and
/// kernel [F,C,kd,kh,kw].
struct Conv3dGeometry {
  std::size_t batch = 0, in_channels = 0, out_channels = 0;
  std::size_t in_d = 0, in_h = 0, in_w = 0;
  std::size_t k_d = 0, k_h = 0, k_w = 0;
  std::size_t out_d = 0, out_h = 0, out_w = 0;
  std::size_t stride = 1, padding = 0;

  Shape input_shape() const { return {batch, in_channels, in_d, in_h, in_w}; }
  Shape output_shape() const { return {batch, out_channels, out_d, out_h, out_w}; }
  Shape kernel_shape() const { return {out_channels, in_channels, k_d, k_h, k_w}; }
};

/// Validates shapes for conv3d and computes the output extents. Errors name the axis.
Conv3dGeometry conv3d_geometry(const Shape& input, const Shape& kernel, std::size_t stride,
                               std::size_t padding);

/// Geometry of conv3d_transpose: `input` is the conv3d *output* side [N,F,D',H',W'],
/// `kernel` is [F,C,kd,kh,kw]; the result has extents (D'-1)*stride - 2*padding + kd.
Conv3dGeometry conv3d_transpose_geometry(const Shape& input, const Shape& kernel,
                                         std::size_t stride, std::size_t padding);

/// out = conv(x, k) (+ bias per output channel when bias is non-null).
template <typename T>
Tensor<T> conv3d_forward(const Tensor<T>& x, const Tensor<T>& kernel, const Tensor<T>* bias,
                         const Conv3dGeometry& g);

/// grad_in += conv^T(grad_out, k). This is also the forward map of conv3d_transpose.
template <typename T>
void conv3d_backward_input(const Tensor<T>& grad_out, const Tensor<T>& kernel,
                           const Conv3dGeometry& g, Tensor<T>& grad_in);

/// grad_kernel += d<conv(x,k), grad_out>/dk.
template <typename T>
void conv3d_backward_kernel(const Tensor<T>& x, const Tensor<T>& grad_out,
                            const Conv3dGeometry& g, Tensor<T>& grad_kernel);

/// Mean over non-overlapping block^3 cubes of the last three axes.
template <typename T>
Tensor<T> avg_pool3d(const Tensor<T>& x, std::size_t block);

/// Sum over non-overlapping block^3 cubes of the last three axes.
template <typename T>
Tensor<T> sum_pool3d(const Tensor<T>& x, std::size_t block);

/// Replicates each voxel of the last three axes factor^3 times.
template <typename T>
Tensor<T> upsample3d_nearest(const Tensor<T>& x, std::size_t factor);

}  // namespace neurovol::kernels
