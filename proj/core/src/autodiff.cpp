#include "neurovol/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "neurovol/error.hpp"
#include "neurovol/kernels.hpp"

namespace neurovol {

// ---------------------------------------------------------------------------
// Tape

template <typename T>
Var<T> Tape<T>::constant(Tensor<T> value) {
  nodes_.push_back(Node{std::move(value), {}, false, {}});
  return Var<T>(this, nodes_.size() - 1);
}

template <typename T>
Var<T> Tape<T>::variable(Tensor<T> value) {
  nodes_.push_back(Node{std::move(value), {}, true, {}});
  return Var<T>(this, nodes_.size() - 1);
}

template <typename T>
Var<T> Tape<T>::record(Tensor<T> value, std::initializer_list<Var<T>> inputs,
                       BackwardFn backward_fn) {
  bool needs_grad = false;
  for (const auto& in : inputs) {
    if (&in.tape() != this) throw ValidationError("op mixes variables from different tapes");
    needs_grad = needs_grad || in.requires_grad();
  }
  if (!needs_grad) return constant(std::move(value));
  nodes_.push_back(Node{std::move(value), {}, true, std::move(backward_fn)});
  return Var<T>(this, nodes_.size() - 1);
}

template <typename T>
void Tape<T>::backward(const Var<T>& loss) {
  if (&loss.tape() != this) throw ValidationError("backward: loss belongs to another tape");
  if (loss.value().size() != 1) {
    throw ValidationError("backward: loss must be scalar, got shape " + to_string(loss.shape()));
  }
  for (auto& node : nodes_) node.grad = Tensor<T>{};
  if (!nodes_[loss.id()].requires_grad) return;
  nodes_[loss.id()].grad = Tensor<T>(loss.shape(), T{1});
  for (std::size_t i = loss.id() + 1; i-- > 0;) {
    Node& node = nodes_[i];
    if (!node.requires_grad || node.grad.empty() || !node.backward_fn) continue;
    node.backward_fn(*this, node.grad);
  }
}

template <typename T>
Tensor<T> Tape<T>::grad(const Var<T>& v) const {
  const Node& node = nodes_.at(v.id());
  if (node.grad.empty()) return Tensor<T>(node.value.shape(), T{0});
  return node.grad;
}

template <typename T>
Tensor<T>& Tape<T>::grad_slot(const Var<T>& v) {
  Node& node = nodes_.at(v.id());
  if (node.grad.empty()) node.grad = Tensor<T>(node.value.shape(), T{0});
  return node.grad;
}

template class Tape<float>;
template class Tape<double>;

// ---------------------------------------------------------------------------
// Ops

namespace ad {

constexpr double kBceFloor = 1e-7;


namespace {

template <typename T>
void require_same_shape(const Var<T>& a, const Var<T>& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ValidationError(std::string(op) + ": shape mismatch " + to_string(a.shape()) + " vs " +
                          to_string(b.shape()));
  }
}

template <typename T, typename F>
Tensor<T> map(const Tensor<T>& a, F f) {
  Tensor<T> out(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = f(a[i]);
  return out;
}

// slot[i] += f(i) when v takes part in differentiation.
template <typename T, typename F>
void accumulate(Tape<T>& tape, const Var<T>& v, F f) {
  if (!v.requires_grad()) return;
  Tensor<T>& slot = tape.grad_slot(v);
  for (std::size_t i = 0; i < slot.size(); ++i) slot[i] += f(i);
}

template <typename T>
T sigmoid_value(T x) {
  return x >= 0 ? T(1) / (T(1) + std::exp(-x)) : std::exp(x) / (T(1) + std::exp(x));
}

}  // namespace

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  require_same_shape(a, b, "add");
  Tensor<T> out(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] + b.value()[i];
  return a.tape().record(std::move(out), {a, b}, [a, b](Tape<T>& t, const Tensor<T>& g) {
    accumulate(t, a, [&](std::size_t i) { return g[i]; });
    accumulate(t, b, [&](std::size_t i) { return g[i]; });
  });
}

template <typename T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
  require_same_shape(a, b, "sub");
  Tensor<T> out(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] - b.value()[i];
  return a.tape().record(std::move(out), {a, b}, [a, b](Tape<T>& t, const Tensor<T>& g) {
    accumulate(t, a, [&](std::size_t i) { return g[i]; });
    accumulate(t, b, [&](std::size_t i) { return -g[i]; });
  });
}

template <typename T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
  require_same_shape(a, b, "mul");
  Tensor<T> out(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] * b.value()[i];
  return a.tape().record(std::move(out), {a, b}, [a, b](Tape<T>& t, const Tensor<T>& g) {
    const auto& av = a.value();
    const auto& bv = b.value();
    accumulate(t, a, [&](std::size_t i) { return g[i] * bv[i]; });
    accumulate(t, b, [&](std::size_t i) { return g[i] * av[i]; });
  });
}

template <typename T>
Var<T> scale(const Var<T>& a, double s) {
  const T k = static_cast<T>(s);
  return a.tape().record(map(a.value(), [k](T x) { return k * x; }), {a},
                         [a, k](Tape<T>& t, const Tensor<T>& g) {
                           accumulate(t, a, [&](std::size_t i) { return k * g[i]; });
                         });
}

template <typename T>
Var<T> add_scalar(const Var<T>& a, double s) {
  const T k = static_cast<T>(s);
  return a.tape().record(map(a.value(), [k](T x) { return x + k; }), {a},
                         [a](Tape<T>& t, const Tensor<T>& g) {
                           accumulate(t, a, [&](std::size_t i) { return g[i]; });
                         });
}

template <typename T>
Var<T> exp(const Var<T>& a) {
  return a.tape().record(map(a.value(), [](T x) { return std::exp(x); }), {a},
                         [a](Tape<T>& t, const Tensor<T>& g) {
                           const auto& av = a.value();
                           accumulate(t, a, [&](std::size_t i) { return g[i] * std::exp(av[i]); });
                         });
}

template <typename T>
Var<T> log(const Var<T>& a) {
  for (std::size_t i = 0; i < a.value().size(); ++i) {
    if (!(a.value()[i] > 0)) throw ValidationError("log of non-positive value");
  }
  return a.tape().record(map(a.value(), [](T x) { return std::log(x); }), {a},
                         [a](Tape<T>& t, const Tensor<T>& g) {
                           const auto& av = a.value();
                           accumulate(t, a, [&](std::size_t i) { return g[i] / av[i]; });
                         });
}

template <typename T>
Var<T> square(const Var<T>& a) {
  return a.tape().record(map(a.value(), [](T x) { return x * x; }), {a},
                         [a](Tape<T>& t, const Tensor<T>& g) {
                           const auto& av = a.value();
                           accumulate(t, a, [&](std::size_t i) { return T(2) * av[i] * g[i]; });
                         });
}

template <typename T>
Var<T> clamp(const Var<T>& a, double lo, double hi) {
  if (lo > hi) throw ValidationError("clamp: lo > hi");
  const T l = static_cast<T>(lo), h = static_cast<T>(hi);
  return a.tape().record(map(a.value(), [l, h](T x) { return std::clamp(x, l, h); }), {a},
                         [a, l, h](Tape<T>& t, const Tensor<T>& g) {
                           const auto& av = a.value();
                           accumulate(t, a, [&](std::size_t i) {
                             return (av[i] >= l && av[i] <= h) ? g[i] : T(0);
                           });
                         });
}

template <typename T>
Var<T> activation(const Var<T>& a, Activation kind) {
  using K = Activation::Kind;
  const T alpha = static_cast<T>(kind.alpha);
  switch (kind.kind) {
    case K::identity:
      return a;
    case K::relu:
      return a.tape().record(map(a.value(), [](T x) { return x > 0 ? x : T(0); }), {a},
                             [a](Tape<T>& t, const Tensor<T>& g) {
                               const auto& av = a.value();
                               accumulate(t, a, [&](std::size_t i) { return av[i] > 0 ? g[i] : T(0); });
                             });
    case K::leaky_relu:
      return a.tape().record(map(a.value(), [alpha](T x) { return x > 0 ? x : alpha * x; }), {a},
                             [a, alpha](Tape<T>& t, const Tensor<T>& g) {
                               const auto& av = a.value();
                               accumulate(t, a, [&](std::size_t i) {
                                 return av[i] > 0 ? g[i] : alpha * g[i];
                               });
                             });
    case K::sigmoid:
      return a.tape().record(map(a.value(), [](T x) { return sigmoid_value(x); }), {a},
                             [a](Tape<T>& t, const Tensor<T>& g) {
                               const auto& av = a.value();
                               accumulate(t, a, [&](std::size_t i) {
                                 const T s = sigmoid_value(av[i]);
                                 return g[i] * s * (T(1) - s);
                               });
                             });
  }
  throw ValidationError("unknown activation kind");
}

template <typename T>
Var<T> sum(const Var<T>& a) {
  double acc = 0;
  for (auto v : a.value().data()) acc += v;
  return a.tape().record(Tensor<T>::scalar(static_cast<T>(acc)), {a},
                         [a](Tape<T>& t, const Tensor<T>& g) {
                           const T gv = g[0];
                           accumulate(t, a, [gv](std::size_t) { return gv; });
                         });
}

template <typename T>
Var<T> mean(const Var<T>& a) {
  double acc = 0;
  for (auto v : a.value().data()) acc += v;
  const double n = static_cast<double>(a.value().size());
  return a.tape().record(Tensor<T>::scalar(static_cast<T>(acc / n)), {a},
                         [a, n](Tape<T>& t, const Tensor<T>& g) {
                           const T gv = static_cast<T>(g[0] / n);
                           accumulate(t, a, [gv](std::size_t) { return gv; });
                         });
}

template <typename T>
Var<T> reshape(const Var<T>& a, Shape shape) {
  if (numel(shape) != a.value().size()) {
    throw ValidationError("reshape: cannot view " + to_string(a.shape()) + " as " +
                          to_string(shape));
  }
  return a.tape().record(a.value().reshaped(std::move(shape)), {a},
                         [a](Tape<T>& t, const Tensor<T>& g) {
                           accumulate(t, a, [&](std::size_t i) { return g[i]; });
                         });
}

template <typename T>
Var<T> stop_gradient(const Var<T>& a) {
  return a.tape().constant(a.value());
}

template <typename T>
Var<T> affine(const Var<T>& x, const Var<T>& weight, const Var<T>& bias) {
  const Shape& xs = x.shape();
  const Shape& ws = weight.shape();
  if (xs.size() != 2) throw ValidationError("affine input must be [N,K], got " + to_string(xs));
  if (ws.size() != 2) throw ValidationError("affine weight must be [K,M], got " + to_string(ws));
  if (xs[1] != ws[0]) {
    throw ValidationError("affine inner extent mismatch: input K=" + std::to_string(xs[1]) +
                          ", weight K=" + std::to_string(ws[0]));
  }
  if (bias.value().size() != ws[1]) {
    throw ValidationError("affine bias length " + std::to_string(bias.value().size()) +
                          " does not match M=" + std::to_string(ws[1]));
  }
  const std::size_t n = xs[0], k = xs[1], m = ws[1];
  Tensor<T> out(Shape{n, m});
  const T* xv = x.value().data().data();
  const T* wv = weight.value().data().data();
  const T* bv = bias.value().data().data();
  T* o = out.data().data();
  for (std::size_t r = 0; r < n; ++r) {
    T* orow = o + r * m;
    std::copy(bv, bv + m, orow);
    for (std::size_t i = 0; i < k; ++i) {
      const T xi = xv[r * k + i];
      const T* wrow = wv + i * m;
      for (std::size_t j = 0; j < m; ++j) orow[j] += xi * wrow[j];
    }
  }
  return x.tape().record(
      std::move(out), {x, weight, bias}, [x, weight, bias, n, k, m](Tape<T>& t, const Tensor<T>& g) {
        const T* gv = g.data().data();
        if (x.requires_grad()) {
          Tensor<T>& gx = t.grad_slot(x);
          const T* w = weight.value().data().data();
          for (std::size_t r = 0; r < n; ++r) {
            for (std::size_t i = 0; i < k; ++i) {
              T acc = 0;
              const T* wrow = w + i * m;
              const T* grow = gv + r * m;
              for (std::size_t j = 0; j < m; ++j) acc += grow[j] * wrow[j];
              gx[r * k + i] += acc;
            }
          }
        }
        if (weight.requires_grad()) {
          Tensor<T>& gw = t.grad_slot(weight);
          const T* xd = x.value().data().data();
          T* gwd = gw.data().data();
          for (std::size_t r = 0; r < n; ++r) {
            for (std::size_t i = 0; i < k; ++i) {
              const T xi = xd[r * k + i];
              T* gwrow = gwd + i * m;
              const T* grow = gv + r * m;
              for (std::size_t j = 0; j < m; ++j) gwrow[j] += xi * grow[j];
            }
          }
        }
        if (bias.requires_grad()) {
          Tensor<T>& gb = t.grad_slot(bias);
          for (std::size_t r = 0; r < n; ++r) {
            for (std::size_t j = 0; j < m; ++j) gb[j] += gv[r * m + j];
          }
        }
      });
}

namespace {

// Adds bias[c] over [N,C,spatial...].
template <typename T>
void add_channel_bias(Tensor<T>& out, const Tensor<T>& bias) {
  const std::size_t n = out.extent(0), c = out.extent(1);
  const std::size_t inner = out.size() / (n * c);
  for (std::size_t b = 0; b < n; ++b) {
    for (std::size_t ch = 0; ch < c; ++ch) {
      T* p = out.data().data() + (b * c + ch) * inner;
      for (std::size_t i = 0; i < inner; ++i) p[i] += bias[ch];
    }
  }
}

template <typename T>
void accumulate_channel_sum(Tensor<T>& slot, const Tensor<T>& g) {
  const std::size_t n = g.extent(0), c = g.extent(1);
  const std::size_t inner = g.size() / (n * c);
  for (std::size_t b = 0; b < n; ++b) {
    for (std::size_t ch = 0; ch < c; ++ch) {
      const T* p = g.data().data() + (b * c + ch) * inner;
      T acc = 0;
      for (std::size_t i = 0; i < inner; ++i) acc += p[i];
      slot[ch] += acc;
    }
  }
}

}  // namespace

template <typename T>
Var<T> conv3d(const Var<T>& input, const Var<T>& kernel, const Var<T>& bias, std::size_t stride,
              std::size_t padding) {
  const auto geo = kernels::conv3d_geometry(input.shape(), kernel.shape(), stride, padding);
  Tensor<T> out = kernels::conv3d_forward(input.value(), kernel.value(), &bias.value(), geo);
  return input.tape().record(
      std::move(out), {input, kernel, bias}, [input, kernel, bias, geo](Tape<T>& t, const Tensor<T>& g) {
        if (input.requires_grad()) {
          kernels::conv3d_backward_input(g, kernel.value(), geo, t.grad_slot(input));
        }
        if (kernel.requires_grad()) {
          kernels::conv3d_backward_kernel(input.value(), g, geo, t.grad_slot(kernel));
        }
        if (bias.requires_grad()) accumulate_channel_sum(t.grad_slot(bias), g);
      });
}

template <typename T>
Var<T> conv3d_transpose(const Var<T>& input, const Var<T>& kernel, const Var<T>& bias,
                        std::size_t stride, std::size_t padding) {
  const auto geo = kernels::conv3d_transpose_geometry(input.shape(), kernel.shape(), stride, padding);
  if (bias.value().size() != geo.in_channels) {
    throw ValidationError("conv3d_transpose bias length " + std::to_string(bias.value().size()) +
                          " does not match output channels " + std::to_string(geo.in_channels));
  }
  Tensor<T> out(geo.input_shape());
  kernels::conv3d_backward_input(input.value(), kernel.value(), geo, out);
  add_channel_bias(out, bias.value());
  return input.tape().record(
      std::move(out), {input, kernel, bias}, [input, kernel, bias, geo](Tape<T>& t, const Tensor<T>& g) {
        if (input.requires_grad()) {
          const Tensor<T> gi = kernels::conv3d_forward<T>(g, kernel.value(), nullptr, geo);
          Tensor<T>& slot = t.grad_slot(input);
          for (std::size_t i = 0; i < slot.size(); ++i) slot[i] += gi[i];
        }
        if (kernel.requires_grad()) {
          kernels::conv3d_backward_kernel(g, input.value(), geo, t.grad_slot(kernel));
        }
        if (bias.requires_grad()) accumulate_channel_sum(t.grad_slot(bias), g);
      });
}

template <typename T>
Var<T> avg_pool3d(const Var<T>& input, std::size_t block) {
  return input.tape().record(kernels::avg_pool3d(input.value(), block), {input},
                             [input, block](Tape<T>& t, const Tensor<T>& g) {
                               if (!input.requires_grad()) return;
                               const Tensor<T> up = kernels::upsample3d_nearest(g, block);
                               const T inv = T(1) / static_cast<T>(block * block * block);
                               accumulate(t, input, [&](std::size_t i) { return up[i] * inv; });
                             });
}

template <typename T>
Var<T> upsample3d_nearest(const Var<T>& input, std::size_t factor) {
  return input.tape().record(kernels::upsample3d_nearest(input.value(), factor), {input},
                             [input, factor](Tape<T>& t, const Tensor<T>& g) {
                               if (!input.requires_grad()) return;
                               const Tensor<T> pooled = kernels::sum_pool3d(g, factor);
                               accumulate(t, input, [&](std::size_t i) { return pooled[i]; });
                             });
}

template <typename T>
Var<T> batch_norm(const Var<T>& input, const Var<T>& gamma, const Var<T>& beta,
                  BatchNormStats<T>& running, Mode mode, const BatchNormOptions& options) {
  const Shape& s = input.shape();
  if (s.size() < 2) throw ValidationError("batch_norm input needs [N,C,...], got " + to_string(s));
  const std::size_t n = s[0], c = s[1];
  const std::size_t inner = input.value().size() / (n * c);
  if (gamma.value().size() != c || beta.value().size() != c) {
    throw ValidationError("batch_norm gamma/beta length must equal channel count " +
                          std::to_string(c));
  }
  if (mode == Mode::train && n < 2) {
    throw ValidationError("batch_norm in train mode needs batch size >= 2, got " + std::to_string(n));
  }
  if (running.mean.empty()) running.mean = Tensor<T>(Shape{c}, T(0));
  if (running.var.empty()) running.var = Tensor<T>(Shape{c}, T(1));
  if (running.mean.size() != c || running.var.size() != c) {
    throw ValidationError("batch_norm running statistics do not match channel count");
  }

  const T eps = static_cast<T>(options.eps);
  const T* x = input.value().data().data();
  std::vector<T> mean_c(c), istd_c(c);
  if (mode == Mode::train) {
    const double m = static_cast<double>(n * inner);
    const double mom = options.momentum;
    for (std::size_t ch = 0; ch < c; ++ch) {
      double acc = 0;
      for (std::size_t b = 0; b < n; ++b) {
        const T* p = x + (b * c + ch) * inner;
        for (std::size_t i = 0; i < inner; ++i) acc += p[i];
      }
      const double mu = acc / m;
      double sq = 0;
      for (std::size_t b = 0; b < n; ++b) {
        const T* p = x + (b * c + ch) * inner;
        for (std::size_t i = 0; i < inner; ++i) {
          const double d = p[i] - mu;
          sq += d * d;
        }
      }
      const double var = sq / m;
      mean_c[ch] = static_cast<T>(mu);
      istd_c[ch] = static_cast<T>(1.0 / std::sqrt(var + options.eps));
      if (options.update_running) {
        running.mean[ch] = static_cast<T>(mom * running.mean[ch] + (1.0 - mom) * mu);
        running.var[ch] = static_cast<T>(mom * running.var[ch] + (1.0 - mom) * var * m / (m - 1.0));
      }
    }
  } else {
    for (std::size_t ch = 0; ch < c; ++ch) {
      mean_c[ch] = running.mean[ch];
      istd_c[ch] = T(1) / std::sqrt(running.var[ch] + eps);
    }
  }

  Tensor<T> xhat(s);
  Tensor<T> out(s);
  const T* gm = gamma.value().data().data();
  const T* bt = beta.value().data().data();
  for (std::size_t b = 0; b < n; ++b) {
    for (std::size_t ch = 0; ch < c; ++ch) {
      const std::size_t off = (b * c + ch) * inner;
      for (std::size_t i = 0; i < inner; ++i) {
        const T h = (x[off + i] - mean_c[ch]) * istd_c[ch];
        xhat[off + i] = h;
        out[off + i] = gm[ch] * h + bt[ch];
      }
    }
  }

  return input.tape().record(
      std::move(out), {input, gamma, beta},
      [input, gamma, beta, xhat = std::move(xhat), istd_c, mode, n, c, inner](Tape<T>& t,
                                                                            const Tensor<T>& g) {
        std::vector<T> sum_g(c, T(0)), sum_gx(c, T(0));
        for (std::size_t b = 0; b < n; ++b) {
          for (std::size_t ch = 0; ch < c; ++ch) {
            const std::size_t off = (b * c + ch) * inner;
            T sg = 0, sgx = 0;
            for (std::size_t i = 0; i < inner; ++i) {
              sg += g[off + i];
              sgx += g[off + i] * xhat[off + i];
            }
            sum_g[ch] += sg;
            sum_gx[ch] += sgx;
          }
        }
        if (gamma.requires_grad()) {
          Tensor<T>& slot = t.grad_slot(gamma);
          for (std::size_t ch = 0; ch < c; ++ch) slot[ch] += sum_gx[ch];
        }
        if (beta.requires_grad()) {
          Tensor<T>& slot = t.grad_slot(beta);
          for (std::size_t ch = 0; ch < c; ++ch) slot[ch] += sum_g[ch];
        }
        if (!input.requires_grad()) return;
        Tensor<T>& gx = t.grad_slot(input);
        const T* gm = gamma.value().data().data();
        const T m = static_cast<T>(n * inner);
        for (std::size_t b = 0; b < n; ++b) {
          for (std::size_t ch = 0; ch < c; ++ch) {
            const std::size_t off = (b * c + ch) * inner;
            const T k = gm[ch] * istd_c[ch];
            if (mode == Mode::train) {
              const T mg = sum_g[ch] / m, mgx = sum_gx[ch] / m;
              for (std::size_t i = 0; i < inner; ++i) {
                gx[off + i] += k * (g[off + i] - mg - xhat[off + i] * mgx);
              }
            } else {
              for (std::size_t i = 0; i < inner; ++i) gx[off + i] += k * g[off + i];
            }
          }
        }
      });
}

template <typename T>
Var<T> dropout(const Var<T>& input, double rate, RngStream& rng, Mode mode) {
  if (!(rate >= 0.0 && rate < 1.0)) {
    throw ValidationError("dropout rate must be in [0, 1), got " + std::to_string(rate));
  }
  if (mode == Mode::eval) return input;
  const T keep_scale = static_cast<T>(1.0 / (1.0 - rate));
  Tensor<T> mask(input.shape());
  for (std::size_t i = 0; i < mask.size(); ++i) mask[i] = rng.uniform() >= rate ? keep_scale : T(0);
  Tensor<T> out(input.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = input.value()[i] * mask[i];
  return input.tape().record(std::move(out), {input},
                             [input, mask = std::move(mask)](Tape<T>& t, const Tensor<T>& g) {
                               accumulate(t, input, [&](std::size_t i) { return g[i] * mask[i]; });
                             });
}

template <typename T>
Var<T> mse(const Var<T>& prediction, const Var<T>& target) {
  require_same_shape(prediction, target, "mse");
  const auto& p = prediction.value();
  const auto& q = target.value();
  double acc = 0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double d = static_cast<double>(p[i]) - q[i];
    acc += d * d;
  }
  const double n = static_cast<double>(p.size());
  return prediction.tape().record(
      Tensor<T>::scalar(static_cast<T>(acc / n)), {prediction, target},
      [prediction, target, n](Tape<T>& t, const Tensor<T>& g) {
        const auto& p = prediction.value();
        const auto& q = target.value();
        const T k = static_cast<T>(2.0 * g[0] / n);
        accumulate(t, prediction, [&](std::size_t i) { return k * (p[i] - q[i]); });
        accumulate(t, target, [&](std::size_t i) { return -k * (p[i] - q[i]); });
      });
}

template <typename T>
Var<T> binary_cross_entropy(const Var<T>& prediction, const Var<T>& target) {
  require_same_shape(prediction, target, "binary_cross_entropy");
  const auto& p = prediction.value();
  const auto& q = target.value();
  double acc = 0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double pi = std::clamp<double>(p[i], kBceFloor, 1.0 - kBceFloor);
    acc -= q[i] * std::log(pi) + (1.0 - q[i]) * std::log(1.0 - pi);
  }
  const double n = static_cast<double>(p.size());
  return prediction.tape().record(
      Tensor<T>::scalar(static_cast<T>(acc / n)), {prediction, target},
      [prediction, target, n](Tape<T>& t, const Tensor<T>& g) {
        const auto& p = prediction.value();
        const auto& q = target.value();
        accumulate(t, prediction, [&](std::size_t i) {
          const double pi = std::clamp<double>(p[i], kBceFloor, 1.0 - kBceFloor);
          return static_cast<T>(g[0] * (pi - q[i]) / (pi * (1.0 - pi)) / n);
        });
        accumulate(t, target, [&](std::size_t i) {
          const double pi = std::clamp<double>(p[i], kBceFloor, 1.0 - kBceFloor);
          return static_cast<T>(-g[0] * (std::log(pi) - std::log(1.0 - pi)) / n);
        });
      });
}

template <typename T>
Var<T> kl_divergence_rows(const Var<T>& mu, const Var<T>& log_sigma) {
  require_same_shape(mu, log_sigma, "kl_divergence");
  if (mu.shape().size() != 2) {
    throw ValidationError("kl_divergence expects [N,L] inputs, got " + to_string(mu.shape()));
  }
  const std::size_t n = mu.shape()[0], l = mu.shape()[1];
  Tensor<T> out(Shape{n});
  const auto& m = mu.value();
  const auto& ls = log_sigma.value();
  for (std::size_t r = 0; r < n; ++r) {
    double acc = 0;
    for (std::size_t j = 0; j < l; ++j) {
      const double mv = m[r * l + j], lv = ls[r * l + j];
      acc += mv * mv + std::exp(2.0 * lv) - 1.0 - 2.0 * lv;
    }
    out[r] = static_cast<T>(0.5 * acc);
  }
  return mu.tape().record(std::move(out), {mu, log_sigma},
                          [mu, log_sigma, l](Tape<T>& t, const Tensor<T>& g) {
                            const auto& m = mu.value();
                            const auto& ls = log_sigma.value();
                            accumulate(t, mu, [&](std::size_t i) { return g[i / l] * m[i]; });
                            accumulate(t, log_sigma, [&](std::size_t i) {
                              return g[i / l] * (std::exp(T(2) * ls[i]) - T(1));
                            });
                          });
}

#define NEUROVOL_INSTANTIATE(T)                                                                  \
  template Var<T> add(const Var<T>&, const Var<T>&);                                             \
  template Var<T> sub(const Var<T>&, const Var<T>&);                                             \
  template Var<T> mul(const Var<T>&, const Var<T>&);                                             \
  template Var<T> scale(const Var<T>&, double);                                                  \
  template Var<T> add_scalar(const Var<T>&, double);                                             \
  template Var<T> exp(const Var<T>&);                                                            \
  template Var<T> log(const Var<T>&);                                                            \
  template Var<T> square(const Var<T>&);                                                         \
  template Var<T> clamp(const Var<T>&, double, double);                                          \
  template Var<T> activation(const Var<T>&, Activation);                                         \
  template Var<T> sum(const Var<T>&);                                                            \
  template Var<T> mean(const Var<T>&);                                                           \
  template Var<T> reshape(const Var<T>&, Shape);                                                 \
  template Var<T> stop_gradient(const Var<T>&);                                                  \
  template Var<T> affine(const Var<T>&, const Var<T>&, const Var<T>&);                           \
  template Var<T> conv3d(const Var<T>&, const Var<T>&, const Var<T>&, std::size_t, std::size_t); \
  template Var<T> conv3d_transpose(const Var<T>&, const Var<T>&, const Var<T>&, std::size_t,     \
                                   std::size_t);                                                 \
  template Var<T> avg_pool3d(const Var<T>&, std::size_t);                                        \
  template Var<T> upsample3d_nearest(const Var<T>&, std::size_t);                                \
  template Var<T> batch_norm(const Var<T>&, const Var<T>&, const Var<T>&, BatchNormStats<T>&,    \
                             Mode, const BatchNormOptions&);                                     \
  template Var<T> dropout(const Var<T>&, double, RngStream&, Mode);                              \
  template Var<T> mse(const Var<T>&, const Var<T>&);                                             \
  template Var<T> binary_cross_entropy(const Var<T>&, const Var<T>&);                            \
  template Var<T> kl_divergence_rows(const Var<T>&, const Var<T>&);

NEUROVOL_INSTANTIATE(float)
NEUROVOL_INSTANTIATE(double)
#undef NEUROVOL_INSTANTIATE

}  // namespace ad
}  // namespace neurovol
