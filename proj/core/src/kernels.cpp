#include "neurovol/kernels.hpp"

#include <algorithm>
#include <string>
#include <vector>

#include "neurovol/error.hpp"

namespace neurovol::kernels {

namespace {

constexpr const char* kSpatialAxis[3] = {"D", "H", "W"};

// Output indices o in [lo, hi) whose source o*stride + k - pad lies inside [0, extent).
struct Range {
  std::size_t lo, hi;
};

Range valid_range(std::size_t k, std::size_t extent, std::size_t out_extent, std::size_t stride,
                  std::size_t pad) {
  std::size_t lo = 0;
  if (k < pad) lo = (pad - k + stride - 1) / stride;
  if (extent - 1 + pad < k) return {0, 0};
  std::size_t hi = std::min(out_extent, (extent - 1 + pad - k) / stride + 1);
  if (lo > hi) lo = hi;
  return {lo, hi};
}

void require_rank5(const Shape& s, const char* what) {
  if (s.size() != 5) {
    throw ValidationError(std::string(what) + " must have rank 5, got " + to_string(s));
  }
}

}  // namespace

Conv3dGeometry conv3d_geometry(const Shape& input, const Shape& kernel, std::size_t stride,
                               std::size_t padding) {
  require_rank5(input, "conv3d input [N,C,D,H,W]");
  require_rank5(kernel, "conv3d kernel [F,C,kd,kh,kw]");
  if (stride < 1) throw ValidationError("conv3d stride must be >= 1");
  if (kernel[1] != input[1]) {
    throw ValidationError("conv3d channel axis mismatch: input C=" + std::to_string(input[1]) +
                          ", kernel C=" + std::to_string(kernel[1]));
  }
  Conv3dGeometry g;
  g.batch = input[0];
  g.in_channels = input[1];
  g.out_channels = kernel[0];
  g.in_d = input[2];
  g.in_h = input[3];
  g.in_w = input[4];
  g.k_d = kernel[2];
  g.k_h = kernel[3];
  g.k_w = kernel[4];
  g.stride = stride;
  g.padding = padding;
  std::size_t out[3];
  for (int a = 0; a < 3; ++a) {
    const std::size_t padded = input[2 + a] + 2 * padding;
    if (kernel[2 + a] > padded) {
      throw ValidationError("conv3d kernel extent " + std::to_string(kernel[2 + a]) +
                            " exceeds padded input extent " + std::to_string(padded) +
                            " on axis " + kSpatialAxis[a]);
    }
    out[a] = (padded - kernel[2 + a]) / stride + 1;
  }
  g.out_d = out[0];
  g.out_h = out[1];
  g.out_w = out[2];
  return g;
}

Conv3dGeometry conv3d_transpose_geometry(const Shape& input, const Shape& kernel,
                                         std::size_t stride, std::size_t padding) {
  require_rank5(input, "conv3d_transpose input [N,F,D,H,W]");
  require_rank5(kernel, "conv3d_transpose kernel [F,C,kd,kh,kw]");
  if (stride < 1) throw ValidationError("conv3d_transpose stride must be >= 1");
  if (kernel[0] != input[1]) {
    throw ValidationError("conv3d_transpose channel axis mismatch: input F=" +
                          std::to_string(input[1]) + ", kernel F=" + std::to_string(kernel[0]));
  }
  Shape conv_input{input[0], kernel[1], 0, 0, 0};
  for (int a = 0; a < 3; ++a) {
    const std::size_t grown = (input[2 + a] - 1) * stride + kernel[2 + a];
    if (grown <= 2 * padding) {
      throw ValidationError("conv3d_transpose padding " + std::to_string(padding) +
                            " leaves no output on axis " + kSpatialAxis[a]);
    }
    conv_input[2 + a] = grown - 2 * padding;
  }
  Conv3dGeometry g = conv3d_geometry(conv_input, kernel, stride, padding);
  for (int a = 0; a < 3; ++a) {
    const std::size_t got = a == 0 ? g.out_d : a == 1 ? g.out_h : g.out_w;
    if (got != input[2 + a]) {
      throw ValidationError("conv3d_transpose shape mismatch on axis " +
                            std::string(kSpatialAxis[a]));
    }
  }
  return g;
}

template <typename T>
Tensor<T> conv3d_forward(const Tensor<T>& x, const Tensor<T>& kernel, const Tensor<T>* bias,
                         const Conv3dGeometry& g) {
  if (x.shape() != g.input_shape() || kernel.shape() != g.kernel_shape()) {
    throw ValidationError("conv3d_forward: tensors do not match geometry");
  }
  if (bias && bias->size() != g.out_channels) {
    throw ValidationError("conv3d bias length " + std::to_string(bias->size()) +
                          " does not match output channels " + std::to_string(g.out_channels));
  }
  Tensor<T> out(g.output_shape());
  const std::size_t in_plane = g.in_h * g.in_w;
  const std::size_t in_vol = g.in_d * in_plane;
  const std::size_t out_plane = g.out_h * g.out_w;
  const std::size_t out_vol = g.out_d * out_plane;
  const std::size_t kvol = g.k_d * g.k_h * g.k_w;
  const T* xd = x.data().data();
  const T* kd = kernel.data().data();
  T* od = out.data().data();
  const std::size_t s = g.stride;

  for (std::size_t n = 0; n < g.batch; ++n) {
    for (std::size_t f = 0; f < g.out_channels; ++f) {
      T* o = od + (n * g.out_channels + f) * out_vol;
      if (bias) std::fill(o, o + out_vol, (*bias)[f]);
      for (std::size_t c = 0; c < g.in_channels; ++c) {
        const T* in = xd + (n * g.in_channels + c) * in_vol;
        const T* w = kd + (f * g.in_channels + c) * kvol;
        for (std::size_t kz = 0; kz < g.k_d; ++kz) {
          const Range rz = valid_range(kz, g.in_d, g.out_d, s, g.padding);
          for (std::size_t ky = 0; ky < g.k_h; ++ky) {
            const Range ry = valid_range(ky, g.in_h, g.out_h, s, g.padding);
            for (std::size_t kx = 0; kx < g.k_w; ++kx) {
              const Range rx = valid_range(kx, g.in_w, g.out_w, s, g.padding);
              const T wv = w[(kz * g.k_h + ky) * g.k_w + kx];
              for (std::size_t oz = rz.lo; oz < rz.hi; ++oz) {
                const std::size_t iz = oz * s + kz - g.padding;
                for (std::size_t oy = ry.lo; oy < ry.hi; ++oy) {
                  const std::size_t iy = oy * s + ky - g.padding;
                  T* orow = o + oz * out_plane + oy * g.out_w;
                  const T* irow = in + iz * in_plane + iy * g.in_w;
                  if (s == 1) {
                    const T* shifted = irow + (kx - g.padding + rx.lo);
                    T* dst = orow + rx.lo;
                    for (std::size_t i = 0; i < rx.hi - rx.lo; ++i) dst[i] += wv * shifted[i];
                  } else {
                    for (std::size_t ox = rx.lo; ox < rx.hi; ++ox)
                      orow[ox] += wv * irow[ox * s + kx - g.padding];
                  }
                }
              }
            }
          }
        }
      }
    }
  }
  return out;
}

template <typename T>
void conv3d_backward_input(const Tensor<T>& grad_out, const Tensor<T>& kernel,
                           const Conv3dGeometry& g, Tensor<T>& grad_in) {
  if (grad_out.shape() != g.output_shape() || kernel.shape() != g.kernel_shape() ||
      grad_in.shape() != g.input_shape()) {
    throw ValidationError("conv3d_backward_input: tensors do not match geometry");
  }
  const std::size_t in_plane = g.in_h * g.in_w;
  const std::size_t in_vol = g.in_d * in_plane;
  const std::size_t out_plane = g.out_h * g.out_w;
  const std::size_t out_vol = g.out_d * out_plane;
  const std::size_t kvol = g.k_d * g.k_h * g.k_w;
  const T* gd = grad_out.data().data();
  const T* kd = kernel.data().data();
  T* id = grad_in.data().data();
  const std::size_t s = g.stride;

  for (std::size_t n = 0; n < g.batch; ++n) {
    for (std::size_t c = 0; c < g.in_channels; ++c) {
      T* gi = id + (n * g.in_channels + c) * in_vol;
      for (std::size_t f = 0; f < g.out_channels; ++f) {
        const T* go = gd + (n * g.out_channels + f) * out_vol;
        const T* w = kd + (f * g.in_channels + c) * kvol;
        for (std::size_t kz = 0; kz < g.k_d; ++kz) {
          const Range rz = valid_range(kz, g.in_d, g.out_d, s, g.padding);
          for (std::size_t ky = 0; ky < g.k_h; ++ky) {
            const Range ry = valid_range(ky, g.in_h, g.out_h, s, g.padding);
            for (std::size_t kx = 0; kx < g.k_w; ++kx) {
              const Range rx = valid_range(kx, g.in_w, g.out_w, s, g.padding);
              const T wv = w[(kz * g.k_h + ky) * g.k_w + kx];
              for (std::size_t oz = rz.lo; oz < rz.hi; ++oz) {
                const std::size_t iz = oz * s + kz - g.padding;
                for (std::size_t oy = ry.lo; oy < ry.hi; ++oy) {
                  const std::size_t iy = oy * s + ky - g.padding;
                  const T* orow = go + oz * out_plane + oy * g.out_w;
                  T* irow = gi + iz * in_plane + iy * g.in_w;
                  if (s == 1) {
                    T* dst = irow + (rx.lo * s + kx - g.padding);
                    const T* src = orow + rx.lo;
                    for (std::size_t i = 0; i < rx.hi - rx.lo; ++i) dst[i] += wv * src[i];
                  } else {
                    for (std::size_t ox = rx.lo; ox < rx.hi; ++ox)
                      irow[ox * s + kx - g.padding] += wv * orow[ox];
                  }
                }
              }
            }
          }
        }
      }
    }
  }
}

template <typename T>
void conv3d_backward_kernel(const Tensor<T>& x, const Tensor<T>& grad_out,
                            const Conv3dGeometry& g, Tensor<T>& grad_kernel) {
  if (x.shape() != g.input_shape() || grad_out.shape() != g.output_shape() ||
      grad_kernel.shape() != g.kernel_shape()) {
    throw ValidationError("conv3d_backward_kernel: tensors do not match geometry");
  }
  const std::size_t in_plane = g.in_h * g.in_w;
  const std::size_t in_vol = g.in_d * in_plane;
  const std::size_t out_plane = g.out_h * g.out_w;
  const std::size_t out_vol = g.out_d * out_plane;
  const std::size_t kvol = g.k_d * g.k_h * g.k_w;
  const T* xd = x.data().data();
  const T* gd = grad_out.data().data();
  T* kd = grad_kernel.data().data();
  const std::size_t s = g.stride;

  for (std::size_t n = 0; n < g.batch; ++n) {
    for (std::size_t f = 0; f < g.out_channels; ++f) {
      const T* go = gd + (n * g.out_channels + f) * out_vol;
      for (std::size_t c = 0; c < g.in_channels; ++c) {
        const T* in = xd + (n * g.in_channels + c) * in_vol;
        T* w = kd + (f * g.in_channels + c) * kvol;
        for (std::size_t kz = 0; kz < g.k_d; ++kz) {
          const Range rz = valid_range(kz, g.in_d, g.out_d, s, g.padding);
          for (std::size_t ky = 0; ky < g.k_h; ++ky) {
            const Range ry = valid_range(ky, g.in_h, g.out_h, s, g.padding);
            for (std::size_t kx = 0; kx < g.k_w; ++kx) {
              const Range rx = valid_range(kx, g.in_w, g.out_w, s, g.padding);
              T acc = 0;
              for (std::size_t oz = rz.lo; oz < rz.hi; ++oz) {
                const std::size_t iz = oz * s + kz - g.padding;
                for (std::size_t oy = ry.lo; oy < ry.hi; ++oy) {
                  const std::size_t iy = oy * s + ky - g.padding;
                  const T* orow = go + oz * out_plane + oy * g.out_w;
                  const T* irow = in + iz * in_plane + iy * g.in_w;
                  for (std::size_t ox = rx.lo; ox < rx.hi; ++ox)
                    acc += orow[ox] * irow[ox * s + kx - g.padding];
                }
              }
              w[(kz * g.k_h + ky) * g.k_w + kx] += acc;
            }
          }
        }
      }
    }
  }
}

namespace {

struct PoolDims {
  std::size_t outer, d, h, w;
};

PoolDims pool_dims(const Shape& s, const char* op) {
  if (s.size() < 3) {
    throw ValidationError(std::string(op) + " needs at least 3 axes, got " + to_string(s));
  }
  const std::size_t r = s.size();
  std::size_t outer = 1;
  for (std::size_t i = 0; i + 3 < r; ++i) outer *= s[i];
  return {outer, s[r - 3], s[r - 2], s[r - 1]};
}

/// In-place tree reduction; exact for 2^k equal terms.
template <typename T>
T pairwise_sum(T* v, std::size_t n) {
  while (n > 1) {
    const std::size_t half = n / 2;
    for (std::size_t i = 0; i < half; ++i) v[i] = v[2 * i] + v[2 * i + 1];
    if (n % 2) v[half] = v[n - 1];
    n = half + n % 2;
  }
  return n ? v[0] : T(0);
}

template <typename T>
Tensor<T> block_reduce(const Tensor<T>& x, std::size_t block, bool average, const char* op) {
  if (block < 1) throw ValidationError(std::string(op) + " block must be >= 1");
  const PoolDims p = pool_dims(x.shape(), op);
  const std::size_t ext[3] = {p.d, p.h, p.w};
  for (int a = 0; a < 3; ++a) {
    if (ext[a] % block != 0) {
      throw ValidationError(std::string(op) + ": extent " + std::to_string(ext[a]) +
                            " of spatial axis " + kSpatialAxis[a] +
                            " is not divisible by block " + std::to_string(block));
    }
  }
  const std::size_t od = p.d / block, oh = p.h / block, ow = p.w / block;
  Shape out_shape = x.shape();
  const std::size_t r = out_shape.size();
  out_shape[r - 3] = od;
  out_shape[r - 2] = oh;
  out_shape[r - 1] = ow;
  Tensor<T> out(out_shape);
  const T scale = average ? T(1) / static_cast<T>(block * block * block) : T(1);
  std::vector<T> buf(block * block * block);
  const T* xd = x.data().data();
  T* o = out.data().data();
  for (std::size_t b = 0; b < p.outer; ++b) {
    const T* src = xd + b * p.d * p.h * p.w;
    T* dst = o + b * od * oh * ow;
    for (std::size_t z = 0; z < od; ++z) {
      for (std::size_t y = 0; y < oh; ++y) {
        for (std::size_t xo = 0; xo < ow; ++xo) {
          std::size_t n = 0;
          for (std::size_t dz = 0; dz < block; ++dz) {
            for (std::size_t dy = 0; dy < block; ++dy) {
              const T* row = src + ((z * block + dz) * p.h + (y * block + dy)) * p.w + xo * block;
              for (std::size_t dx = 0; dx < block; ++dx) buf[n++] = row[dx];
            }
          }
          dst[(z * oh + y) * ow + xo] = pairwise_sum(buf.data(), n) * scale;
        }
      }
    }
  }
  return out;
}

}  // namespace

template <typename T>
Tensor<T> avg_pool3d(const Tensor<T>& x, std::size_t block) {
  return block_reduce(x, block, true, "avg_pool3d");
}

template <typename T>
Tensor<T> sum_pool3d(const Tensor<T>& x, std::size_t block) {
  return block_reduce(x, block, false, "sum_pool3d");
}

template <typename T>
Tensor<T> upsample3d_nearest(const Tensor<T>& x, std::size_t factor) {
  if (factor < 1) throw ValidationError("upsample3d_nearest factor must be >= 1");
  const PoolDims p = pool_dims(x.shape(), "upsample3d_nearest");
  Shape out_shape = x.shape();
  const std::size_t r = out_shape.size();
  const std::size_t od = p.d * factor, oh = p.h * factor, ow = p.w * factor;
  out_shape[r - 3] = od;
  out_shape[r - 2] = oh;
  out_shape[r - 1] = ow;
  Tensor<T> out(out_shape);
  const T* xd = x.data().data();
  T* o = out.data().data();
  for (std::size_t b = 0; b < p.outer; ++b) {
    const T* src = xd + b * p.d * p.h * p.w;
    T* dst = o + b * od * oh * ow;
    for (std::size_t z = 0; z < od; ++z) {
      for (std::size_t y = 0; y < oh; ++y) {
        const T* srow = src + ((z / factor) * p.h + y / factor) * p.w;
        T* drow = dst + (z * oh + y) * ow;
        for (std::size_t xo = 0; xo < ow; ++xo) drow[xo] = srow[xo / factor];
      }
    }
  }
  return out;
}

#define NEUROVOL_INSTANTIATE(T)                                                                  \
  template Tensor<T> conv3d_forward(const Tensor<T>&, const Tensor<T>&, const Tensor<T>*,        \
                                    const Conv3dGeometry&);                                      \
  template void conv3d_backward_input(const Tensor<T>&, const Tensor<T>&, const Conv3dGeometry&, \
                                      Tensor<T>&);                                               \
  template void conv3d_backward_kernel(const Tensor<T>&, const Tensor<T>&,                       \
                                       const Conv3dGeometry&, Tensor<T>&);                       \
  template Tensor<T> avg_pool3d(const Tensor<T>&, std::size_t);                                  \
  template Tensor<T> sum_pool3d(const Tensor<T>&, std::size_t);                                  \
  template Tensor<T> upsample3d_nearest(const Tensor<T>&, std::size_t);

NEUROVOL_INSTANTIATE(float)
NEUROVOL_INSTANTIATE(double)
#undef NEUROVOL_INSTANTIATE

}  // namespace neurovol::kernels
