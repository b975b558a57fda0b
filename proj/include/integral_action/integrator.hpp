#pragma once

// Pose-driven feature integration:
//   F_A' = TCB_A(F_A), F_P' = TCB_P(F_P)        alignment to a common width C
//   G    = CGB(F_P)                             per-frame, per-channel gate in (0, 1)
//   F    = G * F_A' + (1 - G) * F_P'
//   L_gate = mean(-log(1 - G))

#include <string>

#include "integral_action/nn.hpp"
#include "integral_action/tensor.hpp"

namespace integral_action {

inline constexpr double kGateEpsilon = 1e-6;

enum class GateSource { kPose, kAppearance, kBoth, kNone };

const char* to_string(GateSource source);
GateSource gate_source_from_string(const std::string& s);

// 1x1 temporal conv -> layer norm -> ReLU, applied per frame.
template <typename T>
class AlignmentBlock {
 public:
  AlignmentBlock() = default;
  AlignmentBlock(const std::string& name, int in_channels, int out_channels);

  Tensor<T> forward(const Tensor<T>& f);
  Tensor<T> backward(const Tensor<T>& grad_out);
  void collect(nn::ParameterRefs<T>& out);
  void init(nn::Rng& rng, double sigma) { linear.init(rng, sigma); }
  int in_channels() const { return linear.in_features(); }

  nn::Linear<T> linear;
  nn::LayerNorm<T> norm;

 private:
  nn::ReLU<T> relu_;
};

// 1x1 conv -> batch norm -> sigmoid, clamped to [eps, 1 - eps].
template <typename T>
class GatingBlock {
 public:
  GatingBlock() = default;
  GatingBlock(const std::string& name, int in_channels, int out_channels, double eps = kGateEpsilon);

  Tensor<T> forward(const Tensor<T>& f, bool training);
  Tensor<T> backward(const Tensor<T>& grad_gate);
  void collect(nn::ParameterRefs<T>& out);
  void init(nn::Rng& rng, double sigma) { linear.init(rng, sigma); }
  int in_channels() const { return linear.in_features(); }

  nn::Linear<T> linear;
  nn::BatchNorm<T> norm;

 private:
  double eps_ = kGateEpsilon;
  Tensor<T> gate_;
  std::vector<unsigned char> clamped_;
};

template <typename T>
Tensor<T> integrate(const Tensor<T>& f_a, const Tensor<T>& f_p, const Tensor<T>& gate);

template <typename T>
struct IntegrateGrads {
  Tensor<T> appearance, pose, gate;
};
template <typename T>
IntegrateGrads<T> integrate_backward(const Tensor<T>& f_a, const Tensor<T>& f_p, const Tensor<T>& gate,
                                     const Tensor<T>& grad_out);

// F_A' + F_P'.
template <typename T>
Tensor<T> no_gate_integrate(const Tensor<T>& f_a, const Tensor<T>& f_p);

// Mean over all entries of -log(1 - g).
template <typename T>
double gate_regularizer(const Tensor<T>& gate);
// d/dg of gate_regularizer: 1 / ((1 - g) * size).
template <typename T>
Tensor<T> gate_regularizer_grad(const Tensor<T>& gate);

// Channel concatenation of two N x C_a and N x C_b matrices, and its split.
template <typename T>
Tensor<T> concat_channels(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
void split_channels(const Tensor<T>& g, std::size_t first, Tensor<T>& a, Tensor<T>& b);

}  // namespace integral_action
