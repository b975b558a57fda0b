#include "integral_action/nn.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include <Eigen/Core>

namespace integral_action::nn {

namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapMat = Eigen::Map<RowMat<T>>;
template <typename T>
using CMapMat = Eigen::Map<const RowMat<T>>;

// Column buffer for one frame: (C * k * k) x (Ho * Wo).
template <typename T>
void im2col(const T* img, int c, int h, int w, int k, int stride, int pad, int ho, int wo, T* col) {
  for (int ci = 0; ci < c; ++ci) {
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        T* row = col + (static_cast<std::size_t>(ci) * k * k + ky * k + kx) * ho * wo;
        for (int oy = 0; oy < ho; ++oy) {
          const int iy = oy * stride - pad + ky;
          if (iy < 0 || iy >= h) {
            std::fill(row + oy * wo, row + (oy + 1) * wo, T{});
            continue;
          }
          const T* src = img + (static_cast<std::size_t>(ci) * h + iy) * w;
          for (int ox = 0; ox < wo; ++ox) {
            const int ix = ox * stride - pad + kx;
            row[oy * wo + ox] = (ix >= 0 && ix < w) ? src[ix] : T{};
          }
        }
      }
    }
  }
}

template <typename T>
void col2im(const T* col, int c, int h, int w, int k, int stride, int pad, int ho, int wo, T* img) {
  for (int ci = 0; ci < c; ++ci) {
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        const T* row = col + (static_cast<std::size_t>(ci) * k * k + ky * k + kx) * ho * wo;
        for (int oy = 0; oy < ho; ++oy) {
          const int iy = oy * stride - pad + ky;
          if (iy < 0 || iy >= h) continue;
          T* dst = img + (static_cast<std::size_t>(ci) * h + iy) * w;
          for (int ox = 0; ox < wo; ++ox) {
            const int ix = ox * stride - pad + kx;
            if (ix >= 0 && ix < w) dst[ix] += row[oy * wo + ox];
          }
        }
      }
    }
  }
}

std::size_t spatial_size(const Shape& s) {
  std::size_t n = 1;
  for (std::size_t i = 2; i < s.size(); ++i) n *= s[i];
  return n;
}

}  // namespace

// --- Conv2d ---------------------------------------------------------------

template <typename T>
Conv2d<T>::Conv2d(const std::string& name, int in_channels, int out_channels, int kernel, int stride,
                  int padding, bool bias)
    : weight(name + ".weight", {static_cast<std::size_t>(out_channels),
                                static_cast<std::size_t>(in_channels),
                                static_cast<std::size_t>(kernel), static_cast<std::size_t>(kernel)}),
      in_(in_channels),
      out_(out_channels),
      k_(kernel),
      stride_(stride),
      pad_(padding),
      has_bias_(bias) {
  if (bias) this->bias = Parameter<T>(name + ".bias", {static_cast<std::size_t>(out_channels)});
}

template <typename T>
void Conv2d<T>::init(Rng& rng, double sigma) {
  gaussian_init(weight.value, rng, sigma);
  if (has_bias_) bias.value.fill(T{});
}

template <typename T>
void Conv2d<T>::collect(ParameterRefs<T>& out) {
  out.push_back(&weight);
  if (has_bias_) out.push_back(&bias);
}

template <typename T>
Tensor<T> Conv2d<T>::forward(const Tensor<T>& x) {
  if (x.rank() != 4 || x.dim(1) != static_cast<std::size_t>(in_)) {
    throw std::invalid_argument(weight.name + ": expected N x " + std::to_string(in_) +
                                " x H x W input, got " + shape_string(x.shape()));
  }
  input_ = x;
  const int n = static_cast<int>(x.dim(0)), h = static_cast<int>(x.dim(2)),
            w = static_cast<int>(x.dim(3));
  const int ho = static_cast<int>(output_size(h)), wo = static_cast<int>(output_size(w));
  const int rows = in_ * k_ * k_;
  Tensor<T> out({x.dim(0), static_cast<std::size_t>(out_), static_cast<std::size_t>(ho),
                 static_cast<std::size_t>(wo)});
  std::vector<T> col(static_cast<std::size_t>(rows) * ho * wo);
  CMapMat<T> wmat(weight.value.data(), out_, rows);
  for (int f = 0; f < n; ++f) {
    const T* img = x.data() + static_cast<std::size_t>(f) * in_ * h * w;
    T* dst = out.data() + static_cast<std::size_t>(f) * out_ * ho * wo;
    MapMat<T> omat(dst, out_, ho * wo);
    if (k_ == 1 && stride_ == 1 && pad_ == 0) {
      omat.noalias() = wmat * CMapMat<T>(img, in_, h * w);
    } else {
      im2col(img, in_, h, w, k_, stride_, pad_, ho, wo, col.data());
      omat.noalias() = wmat * CMapMat<T>(col.data(), rows, ho * wo);
    }
    if (has_bias_) {
      for (int o = 0; o < out_; ++o) omat.row(o).array() += bias.value[o];
    }
  }
  return out;
}

template <typename T>
Tensor<T> Conv2d<T>::backward(const Tensor<T>& grad_out, bool need_input_grad) {
  const int n = static_cast<int>(input_.dim(0)), h = static_cast<int>(input_.dim(2)),
            w = static_cast<int>(input_.dim(3));
  const int ho = static_cast<int>(grad_out.dim(2)), wo = static_cast<int>(grad_out.dim(3));
  const int rows = in_ * k_ * k_;
  const bool direct = (k_ == 1 && stride_ == 1 && pad_ == 0);
  Tensor<T> grad_in;
  if (need_input_grad) grad_in = Tensor<T>(input_.shape());
  std::vector<T> col(direct ? 0 : static_cast<std::size_t>(rows) * ho * wo);
  std::vector<T> dcol(direct ? 0 : static_cast<std::size_t>(rows) * ho * wo);
  CMapMat<T> wmat(weight.value.data(), out_, rows);
  MapMat<T> gw(weight.grad.data(), out_, rows);
  for (int f = 0; f < n; ++f) {
    const T* img = input_.data() + static_cast<std::size_t>(f) * in_ * h * w;
    CMapMat<T> gmat(grad_out.data() + static_cast<std::size_t>(f) * out_ * ho * wo, out_, ho * wo);
    if (has_bias_) {
      for (int o = 0; o < out_; ++o) bias.grad[o] += gmat.row(o).sum();
    }
    if (direct) {
      gw.noalias() += gmat * CMapMat<T>(img, in_, h * w).transpose();
      if (need_input_grad) {
        MapMat<T>(grad_in.data() + static_cast<std::size_t>(f) * in_ * h * w, in_, h * w).noalias() =
            wmat.transpose() * gmat;
      }
      continue;
    }
    im2col(img, in_, h, w, k_, stride_, pad_, ho, wo, col.data());
    gw.noalias() += gmat * CMapMat<T>(col.data(), rows, ho * wo).transpose();
    if (need_input_grad) {
      MapMat<T>(dcol.data(), rows, ho * wo).noalias() = wmat.transpose() * gmat;
      col2im(dcol.data(), in_, h, w, k_, stride_, pad_, ho, wo,
             grad_in.data() + static_cast<std::size_t>(f) * in_ * h * w);
    }
  }
  input_ = Tensor<T>();
  return grad_in;
}

// --- BatchNorm ------------------------------------------------------------

template <typename T>
BatchNorm<T>::BatchNorm(const std::string& name, int channels, double momentum, double eps)
    : gamma(name + ".gamma", {static_cast<std::size_t>(channels)}, T{1}),
      beta(name + ".beta", {static_cast<std::size_t>(channels)}, T{0}),
      running_mean(name + ".running_mean", {static_cast<std::size_t>(channels)}, T{0}, true),
      running_var(name + ".running_var", {static_cast<std::size_t>(channels)}, T{1}, true),
      channels_(channels),
      momentum_(momentum),
      eps_(eps) {}

template <typename T>
void BatchNorm<T>::collect(ParameterRefs<T>& out) {
  out.push_back(&gamma);
  out.push_back(&beta);
  out.push_back(&running_mean);
  out.push_back(&running_var);
}

template <typename T>
Tensor<T> BatchNorm<T>::forward(const Tensor<T>& x, bool training) {
  if (x.rank() < 2 || x.dim(1) != static_cast<std::size_t>(channels_)) {
    throw std::invalid_argument(gamma.name + ": channel mismatch, got " + shape_string(x.shape()));
  }
  const std::size_t n = x.dim(0), c = x.dim(1), s = spatial_size(x.shape());
  const std::size_t m = n * s;
  Tensor<T> out(x.shape());
  xhat_ = Tensor<T>(x.shape());
  inv_std_.assign(c, T{});
  trained_ = training;
  for (std::size_t ch = 0; ch < c; ++ch) {
    double mean = 0.0, var = 0.0;
    if (training) {
      for (std::size_t i = 0; i < n; ++i) {
        const T* p = x.data() + (i * c + ch) * s;
        for (std::size_t j = 0; j < s; ++j) mean += p[j];
      }
      mean /= static_cast<double>(m);
      for (std::size_t i = 0; i < n; ++i) {
        const T* p = x.data() + (i * c + ch) * s;
        for (std::size_t j = 0; j < s; ++j) var += (p[j] - mean) * (p[j] - mean);
      }
      var /= static_cast<double>(m);
      const double unbiased = m > 1 ? var * static_cast<double>(m) / static_cast<double>(m - 1) : var;
      running_mean.value[ch] =
          static_cast<T>((1.0 - momentum_) * running_mean.value[ch] + momentum_ * mean);
      running_var.value[ch] =
          static_cast<T>((1.0 - momentum_) * running_var.value[ch] + momentum_ * unbiased);
    } else {
      mean = running_mean.value[ch];
      var = running_var.value[ch];
    }
    const double inv = 1.0 / std::sqrt(var + eps_);
    inv_std_[ch] = static_cast<T>(inv);
    const double g = gamma.value[ch], b = beta.value[ch];
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t off = (i * c + ch) * s;
      for (std::size_t j = 0; j < s; ++j) {
        const double xh = (x[off + j] - mean) * inv;
        xhat_[off + j] = static_cast<T>(xh);
        out[off + j] = static_cast<T>(g * xh + b);
      }
    }
  }
  return out;
}

template <typename T>
Tensor<T> BatchNorm<T>::backward(const Tensor<T>& grad_out) {
  const std::size_t n = grad_out.dim(0), c = grad_out.dim(1), s = spatial_size(grad_out.shape());
  const double m = static_cast<double>(n * s);
  Tensor<T> grad_in(grad_out.shape());
  for (std::size_t ch = 0; ch < c; ++ch) {
    double sum_dy = 0.0, sum_dy_xhat = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t off = (i * c + ch) * s;
      for (std::size_t j = 0; j < s; ++j) {
        sum_dy += grad_out[off + j];
        sum_dy_xhat += static_cast<double>(grad_out[off + j]) * xhat_[off + j];
      }
    }
    gamma.grad[ch] += static_cast<T>(sum_dy_xhat);
    beta.grad[ch] += static_cast<T>(sum_dy);
    const double g = gamma.value[ch], inv = inv_std_[ch];
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t off = (i * c + ch) * s;
      for (std::size_t j = 0; j < s; ++j) {
        if (trained_) {
          grad_in[off + j] = static_cast<T>(
              g * inv / m * (m * grad_out[off + j] - sum_dy - xhat_[off + j] * sum_dy_xhat));
        } else {
          grad_in[off + j] = static_cast<T>(g * inv * grad_out[off + j]);
        }
      }
    }
  }
  xhat_ = Tensor<T>();
  return grad_in;
}

// --- LayerNorm ------------------------------------------------------------

template <typename T>
LayerNorm<T>::LayerNorm(const std::string& name, int channels, double eps)
    : gamma(name + ".gamma", {static_cast<std::size_t>(channels)}, T{1}),
      beta(name + ".beta", {static_cast<std::size_t>(channels)}, T{0}),
      channels_(channels),
      eps_(eps) {}

template <typename T>
void LayerNorm<T>::collect(ParameterRefs<T>& out) {
  out.push_back(&gamma);
  out.push_back(&beta);
}

template <typename T>
Tensor<T> LayerNorm<T>::forward(const Tensor<T>& x) {
  if (x.rank() != 2 || x.dim(1) != static_cast<std::size_t>(channels_)) {
    throw std::invalid_argument(gamma.name + ": expected N x " + std::to_string(channels_) +
                                ", got " + shape_string(x.shape()));
  }
  const std::size_t n = x.dim(0), c = x.dim(1);
  Tensor<T> out(x.shape());
  xhat_ = Tensor<T>(x.shape());
  inv_std_.assign(n, T{});
  for (std::size_t i = 0; i < n; ++i) {
    const T* row = x.data() + i * c;
    double mean = 0.0, var = 0.0;
    for (std::size_t j = 0; j < c; ++j) mean += row[j];
    mean /= static_cast<double>(c);
    for (std::size_t j = 0; j < c; ++j) var += (row[j] - mean) * (row[j] - mean);
    var /= static_cast<double>(c);
    const double inv = 1.0 / std::sqrt(var + eps_);
    inv_std_[i] = static_cast<T>(inv);
    for (std::size_t j = 0; j < c; ++j) {
      const double xh = (row[j] - mean) * inv;
      xhat_[i * c + j] = static_cast<T>(xh);
      out[i * c + j] = static_cast<T>(gamma.value[j] * xh + beta.value[j]);
    }
  }
  return out;
}

template <typename T>
Tensor<T> LayerNorm<T>::backward(const Tensor<T>& grad_out) {
  const std::size_t n = grad_out.dim(0), c = grad_out.dim(1);
  Tensor<T> grad_in(grad_out.shape());
  std::vector<double> dxhat(c);
  for (std::size_t i = 0; i < n; ++i) {
    double sum = 0.0, sum_x = 0.0;
    for (std::size_t j = 0; j < c; ++j) {
      const double dy = grad_out[i * c + j];
      gamma.grad[j] += static_cast<T>(dy * xhat_[i * c + j]);
      beta.grad[j] += static_cast<T>(dy);
      dxhat[j] = dy * gamma.value[j];
      sum += dxhat[j];
      sum_x += dxhat[j] * xhat_[i * c + j];
    }
    const double inv = inv_std_[i], cc = static_cast<double>(c);
    for (std::size_t j = 0; j < c; ++j) {
      grad_in[i * c + j] = static_cast<T>(inv / cc * (cc * dxhat[j] - sum - xhat_[i * c + j] * sum_x));
    }
  }
  xhat_ = Tensor<T>();
  return grad_in;
}

// --- Linear ---------------------------------------------------------------

template <typename T>
Linear<T>::Linear(const std::string& name, int in_features, int out_features)
    : weight(name + ".weight", {static_cast<std::size_t>(out_features), static_cast<std::size_t>(in_features)}),
      bias(name + ".bias", {static_cast<std::size_t>(out_features)}),
      in_(in_features),
      out_(out_features) {}

template <typename T>
void Linear<T>::init(Rng& rng, double sigma) {
  gaussian_init(weight.value, rng, sigma);
  bias.value.fill(T{});
}

template <typename T>
void Linear<T>::collect(ParameterRefs<T>& out) {
  out.push_back(&weight);
  out.push_back(&bias);
}

template <typename T>
Tensor<T> Linear<T>::forward(const Tensor<T>& x) {
  if (x.rank() != 2 || x.dim(1) != static_cast<std::size_t>(in_)) {
    throw std::invalid_argument(weight.name + ": expected N x " + std::to_string(in_) + ", got " +
                                shape_string(x.shape()));
  }
  input_ = x;
  const auto n = static_cast<Eigen::Index>(x.dim(0));
  Tensor<T> out({x.dim(0), static_cast<std::size_t>(out_)});
  MapMat<T> o(out.data(), n, out_);
  o.noalias() = CMapMat<T>(x.data(), n, in_) * CMapMat<T>(weight.value.data(), out_, in_).transpose();
  o.rowwise() += Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>>(bias.value.data(), out_);
  return out;
}

template <typename T>
Tensor<T> Linear<T>::backward(const Tensor<T>& grad_out) {
  const auto n = static_cast<Eigen::Index>(input_.dim(0));
  CMapMat<T> g(grad_out.data(), n, out_);
  MapMat<T>(weight.grad.data(), out_, in_).noalias() += g.transpose() * CMapMat<T>(input_.data(), n, in_);
  Eigen::Map<Eigen::Matrix<T, 1, Eigen::Dynamic>>(bias.grad.data(), out_) += g.colwise().sum();
  Tensor<T> grad_in(input_.shape());
  MapMat<T>(grad_in.data(), n, in_).noalias() = g * CMapMat<T>(weight.value.data(), out_, in_);
  input_ = Tensor<T>();
  return grad_in;
}

// --- stateless ops ---------------------------------------------------------

template <typename T>
Tensor<T> ReLU<T>::forward(const Tensor<T>& x) {
  output_ = x;
  for (auto& v : output_.values()) v = v > T{} ? v : T{};
  return output_;
}

template <typename T>
Tensor<T> ReLU<T>::backward(const Tensor<T>& grad_out) const {
  Tensor<T> g = grad_out;
  for (std::size_t i = 0; i < g.size(); ++i) {
    if (!(output_[i] > T{})) g[i] = T{};
  }
  return g;
}

template <typename T>
Tensor<T> MaxPool<T>::forward(const Tensor<T>& x) {
  in_shape_ = x.shape();
  const std::size_t n = x.dim(0), c = x.dim(1);
  const int h = static_cast<int>(x.dim(2)), w = static_cast<int>(x.dim(3));
  const int ho = (h + 2 - 3) / 2 + 1, wo = (w + 2 - 3) / 2 + 1;
  Tensor<T> out({n, c, static_cast<std::size_t>(ho), static_cast<std::size_t>(wo)});
  argmax_.assign(out.size(), 0);
  for (std::size_t p = 0; p < n * c; ++p) {
    const std::size_t base = p * h * w;
    for (int oy = 0; oy < ho; ++oy) {
      for (int ox = 0; ox < wo; ++ox) {
        T best = -std::numeric_limits<T>::infinity();
        std::size_t arg = base;
        for (int ky = 0; ky < 3; ++ky) {
          const int iy = oy * 2 - 1 + ky;
          if (iy < 0 || iy >= h) continue;
          for (int kx = 0; kx < 3; ++kx) {
            const int ix = ox * 2 - 1 + kx;
            if (ix < 0 || ix >= w) continue;
            const std::size_t i = base + static_cast<std::size_t>(iy) * w + ix;
            if (x[i] > best) {
              best = x[i];
              arg = i;
            }
          }
        }
        const std::size_t o = (p * ho + oy) * wo + ox;
        out[o] = best;
        argmax_[o] = arg;
      }
    }
  }
  return out;
}

template <typename T>
Tensor<T> MaxPool<T>::backward(const Tensor<T>& grad_out) const {
  Tensor<T> g(in_shape_);
  for (std::size_t o = 0; o < grad_out.size(); ++o) g[argmax_[o]] += grad_out[o];
  return g;
}

template <typename T>
Tensor<T> global_avg_pool(const Tensor<T>& x) {
  const std::size_t n = x.dim(0), c = x.dim(1), s = spatial_size(x.shape());
  Tensor<T> out({n, c});
  for (std::size_t i = 0; i < n * c; ++i) {
    double acc = 0.0;
    for (std::size_t j = 0; j < s; ++j) acc += x[i * s + j];
    out[i] = static_cast<T>(acc / static_cast<double>(s));
  }
  return out;
}

template <typename T>
Tensor<T> global_avg_pool_backward(const Tensor<T>& grad_out, const Shape& in_shape) {
  Tensor<T> g(in_shape);
  const std::size_t s = spatial_size(in_shape);
  for (std::size_t i = 0; i < grad_out.size(); ++i) {
    const T v = static_cast<T>(grad_out[i] / static_cast<double>(s));
    std::fill(g.data() + i * s, g.data() + (i + 1) * s, v);
  }
  return g;
}

namespace {

template <typename T>
Tensor<T> shift_impl(const Tensor<T>& x, std::size_t clip_len, double fraction, bool adjoint) {
  if (x.rank() < 2 || clip_len == 0 || x.dim(0) % clip_len != 0) {
    throw std::invalid_argument("temporal_shift: batch " + shape_string(x.shape()) +
                                " is not a whole number of clips of length " + std::to_string(clip_len));
  }
  if (fraction < 0.0 || fraction > 0.5) throw std::invalid_argument("temporal_shift: fraction outside [0, 1/2]");
  const std::size_t c = x.dim(1), s = spatial_size(x.shape());
  const std::size_t nshift = static_cast<std::size_t>(std::floor(fraction * static_cast<double>(c)));
  Tensor<T> out = x;
  if (nshift == 0) return out;
  const std::size_t clips = x.dim(0) / clip_len;
  // Forward: group 0 reads t-1, group 1 reads t+1. The adjoint swaps the directions.
  const long dir0 = adjoint ? +1 : -1;
  const long dir1 = -dir0;
  for (std::size_t b = 0; b < clips; ++b) {
    for (std::size_t t = 0; t < clip_len; ++t) {
      const std::size_t frame = b * clip_len + t;
      for (std::size_t ch = 0; ch < 2 * nshift; ++ch) {
        const long src_t = static_cast<long>(t) + (ch < nshift ? dir0 : dir1);
        T* dst = out.data() + (frame * c + ch) * s;
        if (src_t < 0 || src_t >= static_cast<long>(clip_len)) {
          std::fill(dst, dst + s, T{});
        } else {
          const T* src = x.data() + ((b * clip_len + static_cast<std::size_t>(src_t)) * c + ch) * s;
          std::copy(src, src + s, dst);
        }
      }
    }
  }
  return out;
}

}  // namespace

template <typename T>
Tensor<T> temporal_shift(const Tensor<T>& x, std::size_t clip_len, double fraction) {
  return shift_impl(x, clip_len, fraction, false);
}

template <typename T>
Tensor<T> temporal_shift_backward(const Tensor<T>& grad_out, std::size_t clip_len, double fraction) {
  return shift_impl(grad_out, clip_len, fraction, true);
}

template <typename T>
void add_inplace(Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape()) {
    throw std::invalid_argument("add: shape mismatch " + shape_string(a.shape()) + " vs " +
                                shape_string(b.shape()));
  }
  for (std::size_t i = 0; i < a.size(); ++i) a[i] += b[i];
}

#define IA_INSTANTIATE(T)                                                                    \
  template class Conv2d<T>;                                                                  \
  template class BatchNorm<T>;                                                               \
  template class LayerNorm<T>;                                                               \
  template class Linear<T>;                                                                  \
  template class ReLU<T>;                                                                    \
  template class MaxPool<T>;                                                                 \
  template Tensor<T> global_avg_pool<T>(const Tensor<T>&);                                   \
  template Tensor<T> global_avg_pool_backward<T>(const Tensor<T>&, const Shape&);            \
  template Tensor<T> temporal_shift<T>(const Tensor<T>&, std::size_t, double);               \
  template Tensor<T> temporal_shift_backward<T>(const Tensor<T>&, std::size_t, double);      \
  template void add_inplace<T>(Tensor<T>&, const Tensor<T>&);

IA_INSTANTIATE(float)
IA_INSTANTIATE(double)
#undef IA_INSTANTIATE

}  // namespace integral_action::nn
