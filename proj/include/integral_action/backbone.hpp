#pragma once

// TSM residual feature streams.
//
// appearance: conv k x k / 2 -> BN -> ReLU -> max pool 3 / 2 -> stages -> GAP
// pose:       conv 3 x 3      -> BN -> ReLU                  -> stages -> GAP
// Each stage is a run of [TSM -> conv3 -> BN -> ReLU -> conv3 -> BN] + skip -> ReLU blocks;
// every stage after the first halves the spatial size in its first block.

#include <array>
#include <memory>
#include <string>
#include <vector>

#include "integral_action/nn.hpp"
#include "integral_action/tensor.hpp"

namespace integral_action {

enum class StreamKind { kAppearance, kPose };

const char* to_string(StreamKind kind);
StreamKind stream_kind_from_string(const std::string& s);

struct StreamConfig {
  StreamKind kind = StreamKind::kAppearance;
  std::vector<int> stage_widths{8, 16, 32, 64};
  std::vector<int> blocks_per_stage{2, 2, 2, 2};
  double shift_fraction = 1.0 / 8.0;
  int input_channels = 3;
  int height = 64;
  int width = 64;
  int frames = 8;
  int stem_kernel = 7;
  double init_sigma = 0.001;

  int output_channels() const { return stage_widths.back(); }
  void validate() const;
};

// T x C feature sequence.
template <typename T>
using FeatureSeq = Tensor<T>;

template <typename T>
class ResidualBlock {
 public:
  ResidualBlock(const std::string& name, int in_channels, int out_channels, int stride,
                double shift_fraction);

  // x: N x C x H x W with N a whole number of clips of length clip_len.
  Tensor<T> forward(const Tensor<T>& x, std::size_t clip_len, bool training);
  Tensor<T> backward(const Tensor<T>& grad_out);
  void collect(nn::ParameterRefs<T>& out);
  void init(nn::Rng& rng, double sigma);

  nn::Conv2d<T> conv1, conv2;
  nn::BatchNorm<T> bn1, bn2;
  bool has_projection = false;
  nn::Conv2d<T> proj;
  nn::BatchNorm<T> proj_bn;

 private:
  double shift_fraction_;
  std::size_t clip_len_ = 1;
  nn::ReLU<T> relu1_, relu_out_;
};

template <typename T>
class Stream {
 public:
  explicit Stream(const StreamConfig& cfg, const std::string& prefix);

  // clip batch: (clips * T) x C_in x H x W -> (clips * T) x C_out.
  Tensor<T> forward(const Tensor<T>& x, std::size_t clip_len, bool training);
  // Returns the gradient w.r.t. the input only when need_input_grad.
  Tensor<T> backward(const Tensor<T>& grad_out, bool need_input_grad = false);
  nn::ParameterRefs<T> parameters();
  void init(nn::Rng& rng);

  const StreamConfig& config() const { return cfg_; }
  // Spatial size entering the first residual stage.
  std::array<std::size_t, 2> stage_input_size() const;

 private:
  StreamConfig cfg_;
  nn::Conv2d<T> stem_;
  nn::BatchNorm<T> stem_bn_;
  nn::ReLU<T> stem_relu_;
  nn::MaxPool<T> pool_;
  std::vector<std::unique_ptr<ResidualBlock<T>>> blocks_;
  Shape pre_pool_shape_;
};

// Single-clip convenience wrappers: x is T x C x H x W.
template <typename T>
Tensor<T> temporal_shift(const Tensor<T>& x, double fraction) {
  return nn::temporal_shift(x, x.dim(0), fraction);
}

// Non-overlapping mean over consecutive groups of `factor` rows of each clip.
// f: (clips * T) x C with clip length T; T must be divisible by factor.
template <typename T>
Tensor<T> temporal_avg_pool(const Tensor<T>& f, std::size_t factor);
template <typename T>
Tensor<T> temporal_avg_pool_backward(const Tensor<T>& grad_out, std::size_t factor);

}  // namespace integral_action
