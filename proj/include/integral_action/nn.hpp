#pragma once

// Minimal layer library with explicit forward/backward passes.
//
// Every layer caches what its backward pass needs during forward(); backward() must be
// called at most once per forward(). Parameter gradients accumulate into
// Parameter::grad until zero_grad().

#include <random>
#include <string>
#include <vector>

#include "integral_action/tensor.hpp"

namespace integral_action::nn {

using Rng = std::mt19937_64;

template <typename T>
struct Parameter {
  std::string name;
  Tensor<T> value;
  Tensor<T> grad;          // empty for buffers
  bool is_buffer = false;  // running statistics: saved, never optimised
  bool frozen = false;

  Parameter() = default;
  Parameter(std::string n, Shape shape, T fill = T{}, bool buffer = false)
      : name(std::move(n)), value(shape, fill), is_buffer(buffer) {
    if (!buffer) grad = Tensor<T>(std::move(shape));
  }
  bool trainable() const { return !is_buffer && !frozen; }
};

template <typename T>
using ParameterRefs = std::vector<Parameter<T>*>;

template <typename T>
void zero_grad(const ParameterRefs<T>& params) {
  for (auto* p : params) {
    if (!p->is_buffer) p->grad.fill(T{});
  }
}

template <typename T>
void gaussian_init(Tensor<T>& t, Rng& rng, double sigma) {
  std::normal_distribution<double> dist(0.0, sigma);
  for (auto& v : t.values()) v = static_cast<T>(dist(rng));
}

// 2-D convolution applied independently to every frame of an N x C x H x W batch.
template <typename T>
class Conv2d {
 public:
  Conv2d() = default;
  Conv2d(const std::string& name, int in_channels, int out_channels, int kernel, int stride,
         int padding, bool bias);

  Tensor<T> forward(const Tensor<T>& x);
  Tensor<T> backward(const Tensor<T>& grad_out, bool need_input_grad = true);
  void collect(ParameterRefs<T>& out);
  void init(Rng& rng, double sigma);

  int in_channels() const { return in_; }
  int out_channels() const { return out_; }
  int stride() const { return stride_; }
  std::size_t output_size(std::size_t in) const {
    return (in + 2 * static_cast<std::size_t>(pad_) - static_cast<std::size_t>(k_)) / stride_ + 1;
  }

  Parameter<T> weight;  // out x in x k x k
  Parameter<T> bias;    // out (empty tensor when disabled)

 private:
  int in_ = 0, out_ = 0, k_ = 1, stride_ = 1, pad_ = 0;
  bool has_bias_ = false;
  Tensor<T> input_;
};

// Batch normalisation over every axis except the channel axis (axis 1).
// Works for N x C and N x C x H x W inputs.
template <typename T>
class BatchNorm {
 public:
  BatchNorm() = default;
  BatchNorm(const std::string& name, int channels, double momentum = 0.1, double eps = 1e-5);

  Tensor<T> forward(const Tensor<T>& x, bool training);
  Tensor<T> backward(const Tensor<T>& grad_out);
  void collect(ParameterRefs<T>& out);

  Parameter<T> gamma, beta, running_mean, running_var;

 private:
  int channels_ = 0;
  double momentum_ = 0.1, eps_ = 1e-5;
  bool trained_ = false;
  Tensor<T> xhat_;
  std::vector<T> inv_std_;
};

// Normalisation over the last axis of an N x C matrix with learned scale/offset.
template <typename T>
class LayerNorm {
 public:
  LayerNorm() = default;
  LayerNorm(const std::string& name, int channels, double eps = 1e-5);

  Tensor<T> forward(const Tensor<T>& x);
  Tensor<T> backward(const Tensor<T>& grad_out);
  void collect(ParameterRefs<T>& out);

  Parameter<T> gamma, beta;

 private:
  int channels_ = 0;
  double eps_ = 1e-5;
  Tensor<T> xhat_;
  std::vector<T> inv_std_;
};

// y = x W^T + b on N x in rows.
template <typename T>
class Linear {
 public:
  Linear() = default;
  Linear(const std::string& name, int in_features, int out_features);

  Tensor<T> forward(const Tensor<T>& x);
  Tensor<T> backward(const Tensor<T>& grad_out);
  void collect(ParameterRefs<T>& out);
  void init(Rng& rng, double sigma);

  int in_features() const { return in_; }
  int out_features() const { return out_; }

  Parameter<T> weight;  // out x in
  Parameter<T> bias;    // out

 private:
  int in_ = 0, out_ = 0;
  Tensor<T> input_;
};

template <typename T>
class ReLU {
 public:
  Tensor<T> forward(const Tensor<T>& x);
  Tensor<T> backward(const Tensor<T>& grad_out) const;

 private:
  Tensor<T> output_;
};

// 3x3, stride 2, padding 1 max pool.
template <typename T>
class MaxPool {
 public:
  Tensor<T> forward(const Tensor<T>& x);
  Tensor<T> backward(const Tensor<T>& grad_out) const;

 private:
  Shape in_shape_;
  std::vector<std::size_t> argmax_;
};

// N x C x H x W -> N x C.
template <typename T>
Tensor<T> global_avg_pool(const Tensor<T>& x);
template <typename T>
Tensor<T> global_avg_pool_backward(const Tensor<T>& grad_out, const Shape& in_shape);

// Temporal shift on a batch of clips stacked along axis 0 (N = clips * clip_len).
// With n = floor(fraction * C): channels [0, n) take the previous frame, channels [n, 2n)
// the next frame, zero-padded at clip boundaries; other channels pass through.
template <typename T>
Tensor<T> temporal_shift(const Tensor<T>& x, std::size_t clip_len, double fraction);
// Adjoint of temporal_shift.
template <typename T>
Tensor<T> temporal_shift_backward(const Tensor<T>& grad_out, std::size_t clip_len, double fraction);

// Elementwise helpers.
template <typename T>
void add_inplace(Tensor<T>& a, const Tensor<T>& b);

}  // namespace integral_action::nn
