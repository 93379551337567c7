#pragma once

// Reverse-mode differentiation over a linear tape. Every op appends one node
// after its inputs, so reverse index order is a reverse topological order.

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <vector>

#include "neurovol/rng.hpp"
#include "neurovol/tensor.hpp"

namespace neurovol {

template <typename T>
class Tape;

/// Handle to a value recorded on a Tape. Cheap to copy; valid while the tape lives.
template <typename T>
class Var {
 public:
  Var() = default;

  const Tensor<T>& value() const;
  const Shape& shape() const { return value().shape(); }
  bool requires_grad() const;
  Tape<T>& tape() const { return *tape_; }
  std::size_t id() const noexcept { return id_; }
  bool valid() const noexcept { return tape_ != nullptr; }

 private:
  friend class Tape<T>;
  Var(Tape<T>* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape<T>* tape_ = nullptr;
  std::size_t id_ = 0;
};

template <typename T>
class Tape {
 public:
  /// Receives the gradient flowing into the node; accumulates into the inputs.
  using BackwardFn = std::function<void(Tape&, const Tensor<T>& grad_out)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var<T> constant(Tensor<T> value);
  Var<T> variable(Tensor<T> value);
  Var<T> leaf(Tensor<T> value, bool requires_grad) {
    return requires_grad ? variable(std::move(value)) : constant(std::move(value));
  }

  /// Appends an op result. The node requires grad iff any input does; otherwise
  /// `backward_fn` is discarded.
  Var<T> record(Tensor<T> value, std::initializer_list<Var<T>> inputs, BackwardFn backward_fn);

  /// Reverse sweep from a single-element loss. Throws ValidationError otherwise.
  void backward(const Var<T>& loss);

  /// Gradient of the last backward() loss w.r.t. v; zeros when v was not reached.
  Tensor<T> grad(const Var<T>& v) const;

  /// Mutable gradient slot for an op's backward function (zero-initialised on first use).
  Tensor<T>& grad_slot(const Var<T>& v);

  const Tensor<T>& value(std::size_t id) const { return nodes_[id].value; }
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }
  std::size_t size() const noexcept { return nodes_.size(); }

 private:
  struct Node {
    Tensor<T> value;
    Tensor<T> grad;
    bool requires_grad = false;
    BackwardFn backward_fn;
  };
  std::vector<Node> nodes_;
};

template <typename T>
const Tensor<T>& Var<T>::value() const {
  return tape_->value(id_);
}

template <typename T>
bool Var<T>::requires_grad() const {
  return tape_->requires_grad(id_);
}

enum class Mode { train, eval };

struct Activation {
  enum class Kind { identity, relu, leaky_relu, sigmoid };
  Kind kind = Kind::identity;
  double alpha = 0.0;

  static Activation identity() { return {Kind::identity, 0.0}; }
  static Activation relu() { return {Kind::relu, 0.0}; }
  static Activation leaky_relu(double alpha) { return {Kind::leaky_relu, alpha}; }
  static Activation sigmoid() { return {Kind::sigmoid, 0.0}; }

  friend bool operator==(const Activation&, const Activation&) = default;
};

/// Running statistics for batch_norm, one entry per channel (axis 1).
template <typename T>
struct BatchNormStats {
  Tensor<T> mean;
  Tensor<T> var;
};

struct BatchNormOptions {
  double eps = 1e-5;
  /// running = momentum * running + (1 - momentum) * batch
  double momentum = 0.9;
  bool update_running = true;
};

namespace ad {

template <typename T> Var<T> add(const Var<T>& a, const Var<T>& b);
template <typename T> Var<T> sub(const Var<T>& a, const Var<T>& b);
template <typename T> Var<T> mul(const Var<T>& a, const Var<T>& b);
template <typename T> Var<T> scale(const Var<T>& a, double s);
template <typename T> Var<T> add_scalar(const Var<T>& a, double s);
template <typename T> Var<T> exp(const Var<T>& a);
template <typename T> Var<T> log(const Var<T>& a);
template <typename T> Var<T> square(const Var<T>& a);
/// Elementwise clamp; gradient is zero where the clamp is active.
template <typename T> Var<T> clamp(const Var<T>& a, double lo, double hi);
template <typename T> Var<T> activation(const Var<T>& a, Activation kind);
template <typename T> Var<T> relu(const Var<T>& a) { return activation(a, Activation::relu()); }
template <typename T> Var<T> sigmoid(const Var<T>& a) { return activation(a, Activation::sigmoid()); }

/// Sum of all elements, shape [1].
template <typename T> Var<T> sum(const Var<T>& a);
/// Mean of all elements, shape [1].
template <typename T> Var<T> mean(const Var<T>& a);
template <typename T> Var<T> reshape(const Var<T>& a, Shape shape);
/// Value copy that blocks gradient flow.
template <typename T> Var<T> stop_gradient(const Var<T>& a);

/// x[N,K] * W[K,M] + b[M]
template <typename T> Var<T> affine(const Var<T>& x, const Var<T>& weight, const Var<T>& bias);

/// Cross-correlation. input [N,C,D,H,W], kernel [F,C,kd,kh,kw], bias [F].
template <typename T>
Var<T> conv3d(const Var<T>& input, const Var<T>& kernel, const Var<T>& bias, std::size_t stride,
              std::size_t padding);

/// Adjoint of conv3d's linear part. input [N,F,D',H',W'], kernel [F,C,kd,kh,kw], bias [C].
template <typename T>
Var<T> conv3d_transpose(const Var<T>& input, const Var<T>& kernel, const Var<T>& bias,
                        std::size_t stride, std::size_t padding);

template <typename T> Var<T> avg_pool3d(const Var<T>& input, std::size_t block);
template <typename T> Var<T> upsample3d_nearest(const Var<T>& input, std::size_t factor);

/// Per-channel (axis 1) normalisation over batch and spatial axes. Train mode
/// needs batch >= 2 and updates `running` unless options.update_running is false.
template <typename T>
Var<T> batch_norm(const Var<T>& input, const Var<T>& gamma, const Var<T>& beta,
                  BatchNormStats<T>& running, Mode mode, const BatchNormOptions& options = {});

/// Inverted dropout. Identity in eval mode; rate must be in [0, 1).
template <typename T>
Var<T> dropout(const Var<T>& input, double rate, RngStream& rng, Mode mode);

/// Mean squared error over every element, shape [1].
template <typename T> Var<T> mse(const Var<T>& prediction, const Var<T>& target);

/// Mean binary cross-entropy of predictions in (0,1) against targets in [0,1], shape [1].
template <typename T> Var<T> binary_cross_entropy(const Var<T>& prediction, const Var<T>& target);

/// Row-wise KL(N(mu, exp(log_sigma)^2) || N(0, I)) for [N,L] inputs, shape [N].
template <typename T>
Var<T> kl_divergence_rows(const Var<T>& mu, const Var<T>& log_sigma);

}  // namespace ad

extern template class Tape<float>;
extern template class Tape<double>;

}  // namespace neurovol
