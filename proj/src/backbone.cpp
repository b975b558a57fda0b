#include "integral_action/backbone.hpp"

#include <stdexcept>

namespace integral_action {

const char* to_string(StreamKind kind) {
  return kind == StreamKind::kAppearance ? "appearance" : "pose";
}

StreamKind stream_kind_from_string(const std::string& s) {
  if (s == "appearance") return StreamKind::kAppearance;
  if (s == "pose") return StreamKind::kPose;
  throw std::invalid_argument("unknown stream kind: " + s);
}

void StreamConfig::validate() const {
  if (stage_widths.empty() || stage_widths.size() != blocks_per_stage.size()) {
    throw std::invalid_argument("stream: stage_widths and blocks_per_stage must be non-empty and equal length");
  }
  if (shift_fraction < 0.0 || shift_fraction > 0.5) {
    throw std::invalid_argument("stream: shift_fraction must lie in [0, 1/2]");
  }
  if (input_channels < 1 || height < 1 || width < 1 || frames < 1) {
    throw std::invalid_argument("stream: input dimensions must be positive");
  }
  for (int b : blocks_per_stage) {
    if (b < 1) throw std::invalid_argument("stream: every stage needs at least one block");
  }
}

// --- ResidualBlock -----------------------------------------------------------

template <typename T>
ResidualBlock<T>::ResidualBlock(const std::string& name, int in_channels, int out_channels,
                                int stride, double shift_fraction)
    : conv1(name + ".conv1", in_channels, out_channels, 3, stride, 1, false),
      conv2(name + ".conv2", out_channels, out_channels, 3, 1, 1, false),
      bn1(name + ".bn1", out_channels),
      bn2(name + ".bn2", out_channels),
      has_projection(stride != 1 || in_channels != out_channels),
      shift_fraction_(shift_fraction) {
  if (has_projection) {
    proj = nn::Conv2d<T>(name + ".proj", in_channels, out_channels, 1, stride, 0, false);
    proj_bn = nn::BatchNorm<T>(name + ".proj_bn", out_channels);
  }
}

template <typename T>
void ResidualBlock<T>::init(nn::Rng& rng, double sigma) {
  conv1.init(rng, sigma);
  conv2.init(rng, sigma);
  if (has_projection) proj.init(rng, sigma);
}

template <typename T>
void ResidualBlock<T>::collect(nn::ParameterRefs<T>& out) {
  conv1.collect(out);
  bn1.collect(out);
  conv2.collect(out);
  bn2.collect(out);
  if (has_projection) {
    proj.collect(out);
    proj_bn.collect(out);
  }
}

template <typename T>
Tensor<T> ResidualBlock<T>::forward(const Tensor<T>& x, std::size_t clip_len, bool training) {
  if (x.rank() != 4 || x.dim(1) != static_cast<std::size_t>(conv1.in_channels())) {
    throw std::invalid_argument(conv1.weight.name + ": block input shape mismatch " +
                                shape_string(x.shape()));
  }
  clip_len_ = clip_len;
  Tensor<T> branch = nn::temporal_shift(x, clip_len, shift_fraction_);
  branch = relu1_.forward(bn1.forward(conv1.forward(branch), training));
  branch = bn2.forward(conv2.forward(branch), training);
  if (has_projection) {
    nn::add_inplace(branch, proj_bn.forward(proj.forward(x), training));
  } else {
    nn::add_inplace(branch, x);
  }
  return relu_out_.forward(branch);
}

template <typename T>
Tensor<T> ResidualBlock<T>::backward(const Tensor<T>& grad_out) {
  const Tensor<T> g = relu_out_.backward(grad_out);
  Tensor<T> gx;
  if (has_projection) {
    gx = proj.backward(proj_bn.backward(g));
  } else {
    gx = g;
  }
  Tensor<T> gb = conv2.backward(bn2.backward(g));
  gb = conv1.backward(bn1.backward(relu1_.backward(gb)));
  nn::add_inplace(gx, nn::temporal_shift_backward(gb, clip_len_, shift_fraction_));
  return gx;
}

// --- Stream ------------------------------------------------------------------

template <typename T>
Stream<T>::Stream(const StreamConfig& cfg, const std::string& prefix) : cfg_(cfg) {
  cfg_.validate();
  const int w0 = cfg_.stage_widths.front();
  if (cfg_.kind == StreamKind::kAppearance) {
    stem_ = nn::Conv2d<T>(prefix + ".stem", cfg_.input_channels, w0, cfg_.stem_kernel, 2,
                          cfg_.stem_kernel / 2, false);
  } else {
    stem_ = nn::Conv2d<T>(prefix + ".stem", cfg_.input_channels, w0, 3, 1, 1, false);
  }
  stem_bn_ = nn::BatchNorm<T>(prefix + ".stem_bn", w0);
  int in = w0;
  for (std::size_t s = 0; s < cfg_.stage_widths.size(); ++s) {
    for (int b = 0; b < cfg_.blocks_per_stage[s]; ++b) {
      const int stride = (s > 0 && b == 0) ? 2 : 1;
      const std::string name = prefix + ".stage" + std::to_string(s + 1) + ".block" + std::to_string(b);
      blocks_.push_back(std::make_unique<ResidualBlock<T>>(name, in, cfg_.stage_widths[s], stride,
                                                           cfg_.shift_fraction));
      in = cfg_.stage_widths[s];
    }
  }
}

template <typename T>
std::array<std::size_t, 2> Stream<T>::stage_input_size() const {
  std::size_t h = static_cast<std::size_t>(cfg_.height), w = static_cast<std::size_t>(cfg_.width);
  if (cfg_.kind == StreamKind::kAppearance) {
    h = stem_.output_size(h);
    w = stem_.output_size(w);
    h = (h - 1) / 2 + 1;
    w = (w - 1) / 2 + 1;
  }
  return {h, w};
}

template <typename T>
void Stream<T>::init(nn::Rng& rng) {
  stem_.init(rng, cfg_.init_sigma);
  for (auto& b : blocks_) b->init(rng, cfg_.init_sigma);
}

template <typename T>
nn::ParameterRefs<T> Stream<T>::parameters() {
  nn::ParameterRefs<T> out;
  stem_.collect(out);
  stem_bn_.collect(out);
  for (auto& b : blocks_) b->collect(out);
  return out;
}

template <typename T>
Tensor<T> Stream<T>::forward(const Tensor<T>& x, std::size_t clip_len, bool training) {
  if (x.rank() != 4 || x.dim(1) != static_cast<std::size_t>(cfg_.input_channels) ||
      x.dim(2) != static_cast<std::size_t>(cfg_.height) || x.dim(3) != static_cast<std::size_t>(cfg_.width)) {
    throw std::invalid_argument(std::string(to_string(cfg_.kind)) + " stream: expected N x " +
                                std::to_string(cfg_.input_channels) + " x " + std::to_string(cfg_.height) +
                                " x " + std::to_string(cfg_.width) + ", got " + shape_string(x.shape()));
  }
  Tensor<T> h = stem_relu_.forward(stem_bn_.forward(stem_.forward(x), training));
  if (cfg_.kind == StreamKind::kAppearance) h = pool_.forward(h);
  for (auto& b : blocks_) h = b->forward(h, clip_len, training);
  pre_pool_shape_ = h.shape();
  return nn::global_avg_pool(h);
}

template <typename T>
Tensor<T> Stream<T>::backward(const Tensor<T>& grad_out, bool need_input_grad) {
  Tensor<T> g = nn::global_avg_pool_backward(grad_out, pre_pool_shape_);
  for (auto it = blocks_.rbegin(); it != blocks_.rend(); ++it) g = (*it)->backward(g);
  if (cfg_.kind == StreamKind::kAppearance) g = pool_.backward(g);
  return stem_.backward(stem_bn_.backward(stem_relu_.backward(g)), need_input_grad);
}

// --- temporal pooling ------------------------------------------------------

template <typename T>
Tensor<T> temporal_avg_pool(const Tensor<T>& f, std::size_t factor) {
  if (factor == 0 || f.rank() != 2 || f.dim(0) % factor != 0) {
    throw std::invalid_argument("temporal_avg_pool: " + std::to_string(f.rank() == 2 ? f.dim(0) : 0) +
                                " frames not divisible by factor " + std::to_string(factor));
  }
  if (factor == 1) return f;
  const std::size_t rows = f.dim(0) / factor, c = f.dim(1);
  Tensor<T> out({rows, c});
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t j = 0; j < c; ++j) {
      double acc = 0.0;
      for (std::size_t q = 0; q < factor; ++q) acc += f.at(r * factor + q, j);
      out.at(r, j) = static_cast<T>(acc / static_cast<double>(factor));
    }
  }
  return out;
}

template <typename T>
Tensor<T> temporal_avg_pool_backward(const Tensor<T>& grad_out, std::size_t factor) {
  if (factor == 1) return grad_out;
  const std::size_t rows = grad_out.dim(0), c = grad_out.dim(1);
  Tensor<T> g({rows * factor, c});
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t q = 0; q < factor; ++q) {
      for (std::size_t j = 0; j < c; ++j) {
        g.at(r * factor + q, j) = static_cast<T>(grad_out.at(r, j) / static_cast<double>(factor));
      }
    }
  }
  return g;
}

template class ResidualBlock<float>;
template class ResidualBlock<double>;
template class Stream<float>;
template class Stream<double>;
template Tensor<float> temporal_avg_pool<float>(const Tensor<float>&, std::size_t);
template Tensor<double> temporal_avg_pool<double>(const Tensor<double>&, std::size_t);
template Tensor<float> temporal_avg_pool_backward<float>(const Tensor<float>&, std::size_t);
template Tensor<double> temporal_avg_pool_backward<double>(const Tensor<double>&, std::size_t);

}  // namespace integral_action
