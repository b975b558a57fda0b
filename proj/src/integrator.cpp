#include "integral_action/integrator.hpp"

#include <cmath>
#include <stdexcept>

namespace integral_action {

const char* to_string(GateSource source) {
  switch (source) {
    case GateSource::kPose: return "pose";
    case GateSource::kAppearance: return "appearance";
    case GateSource::kBoth: return "both";
    case GateSource::kNone: return "none";
  }
  return "?";
}

GateSource gate_source_from_string(const std::string& s) {
  if (s == "pose") return GateSource::kPose;
  if (s == "appearance") return GateSource::kAppearance;
  if (s == "both") return GateSource::kBoth;
  if (s == "none") return GateSource::kNone;
  throw std::invalid_argument("unknown gate source: " + s);
}

namespace {

template <typename T>
void require_same(const Tensor<T>& a, const Tensor<T>& b, const char* what) {
  if (a.shape() != b.shape()) {
    throw std::invalid_argument(std::string(what) + ": shape mismatch " + shape_string(a.shape()) +
                                " vs " + shape_string(b.shape()));
  }
}

}  // namespace

// --- AlignmentBlock ----------------------------------------------------------

template <typename T>
AlignmentBlock<T>::AlignmentBlock(const std::string& name, int in_channels, int out_channels)
    : linear(name + ".linear", in_channels, out_channels), norm(name + ".norm", out_channels) {}

template <typename T>
void AlignmentBlock<T>::collect(nn::ParameterRefs<T>& out) {
  linear.collect(out);
  norm.collect(out);
}

template <typename T>
Tensor<T> AlignmentBlock<T>::forward(const Tensor<T>& f) {
  return relu_.forward(norm.forward(linear.forward(f)));
}

template <typename T>
Tensor<T> AlignmentBlock<T>::backward(const Tensor<T>& grad_out) {
  return linear.backward(norm.backward(relu_.backward(grad_out)));
}

// --- GatingBlock -------------------------------------------------------------

template <typename T>
GatingBlock<T>::GatingBlock(const std::string& name, int in_channels, int out_channels, double eps)
    : linear(name + ".linear", in_channels, out_channels), norm(name + ".norm", out_channels), eps_(eps) {}

template <typename T>
void GatingBlock<T>::collect(nn::ParameterRefs<T>& out) {
  linear.collect(out);
  norm.collect(out);
}

template <typename T>
Tensor<T> GatingBlock<T>::forward(const Tensor<T>& f, bool training) {
  Tensor<T> pre = norm.forward(linear.forward(f), training);
  gate_ = Tensor<T>(pre.shape());
  clamped_.assign(pre.size(), 0);
  for (std::size_t i = 0; i < pre.size(); ++i) {
    double s = 1.0 / (1.0 + std::exp(-static_cast<double>(pre[i])));
    if (s < eps_) {
      s = eps_;
      clamped_[i] = 1;
    } else if (s > 1.0 - eps_) {
      s = 1.0 - eps_;
      clamped_[i] = 1;
    }
    gate_[i] = static_cast<T>(s);
  }
  return gate_;
}

template <typename T>
Tensor<T> GatingBlock<T>::backward(const Tensor<T>& grad_gate) {
  Tensor<T> g(grad_gate.shape());
  for (std::size_t i = 0; i < g.size(); ++i) {
    if (clamped_[i]) continue;
    const double s = gate_[i];
    g[i] = static_cast<T>(grad_gate[i] * s * (1.0 - s));
  }
  return linear.backward(norm.backward(g));
}

// --- aggregation -------------------------------------------------------------

template <typename T>
Tensor<T> integrate(const Tensor<T>& f_a, const Tensor<T>& f_p, const Tensor<T>& gate) {
  require_same(f_a, f_p, "integrate");
  require_same(f_a, gate, "integrate");
  Tensor<T> out(f_a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = gate[i] * f_a[i] + (T{1} - gate[i]) * f_p[i];
  }
  return out;
}

template <typename T>
IntegrateGrads<T> integrate_backward(const Tensor<T>& f_a, const Tensor<T>& f_p, const Tensor<T>& gate,
                                     const Tensor<T>& grad_out) {
  IntegrateGrads<T> g{Tensor<T>(f_a.shape()), Tensor<T>(f_a.shape()), Tensor<T>(f_a.shape())};
  for (std::size_t i = 0; i < grad_out.size(); ++i) {
    g.appearance[i] = gate[i] * grad_out[i];
    g.pose[i] = (T{1} - gate[i]) * grad_out[i];
    g.gate[i] = (f_a[i] - f_p[i]) * grad_out[i];
  }
  return g;
}

template <typename T>
Tensor<T> no_gate_integrate(const Tensor<T>& f_a, const Tensor<T>& f_p) {
  require_same(f_a, f_p, "no_gate_integrate");
  Tensor<T> out = f_a;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += f_p[i];
  return out;
}

template <typename T>
double gate_regularizer(const Tensor<T>& gate) {
  if (gate.empty()) return 0.0;
  double acc = 0.0;
  for (const T g : gate.values()) acc += -std::log1p(-static_cast<double>(g));
  return acc / static_cast<double>(gate.size());
}

template <typename T>
Tensor<T> gate_regularizer_grad(const Tensor<T>& gate) {
  Tensor<T> g(gate.shape());
  const double n = static_cast<double>(gate.size());
  for (std::size_t i = 0; i < g.size(); ++i) {
    g[i] = static_cast<T>(1.0 / ((1.0 - static_cast<double>(gate[i])) * n));
  }
  return g;
}

template <typename T>
Tensor<T> concat_channels(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(0) != b.dim(0)) {
    throw std::invalid_argument("concat_channels: row mismatch " + shape_string(a.shape()) + " vs " +
                                shape_string(b.shape()));
  }
  const std::size_t n = a.dim(0), ca = a.dim(1), cb = b.dim(1);
  Tensor<T> out({n, ca + cb});
  for (std::size_t i = 0; i < n; ++i) {
    std::copy(a.data() + i * ca, a.data() + (i + 1) * ca, out.data() + i * (ca + cb));
    std::copy(b.data() + i * cb, b.data() + (i + 1) * cb, out.data() + i * (ca + cb) + ca);
  }
  return out;
}

template <typename T>
void split_channels(const Tensor<T>& g, std::size_t first, Tensor<T>& a, Tensor<T>& b) {
  const std::size_t n = g.dim(0), c = g.dim(1);
  a = Tensor<T>({n, first});
  b = Tensor<T>({n, c - first});
  for (std::size_t i = 0; i < n; ++i) {
    std::copy(g.data() + i * c, g.data() + i * c + first, a.data() + i * first);
    std::copy(g.data() + i * c + first, g.data() + (i + 1) * c, b.data() + i * (c - first));
  }
}

#define IA_INSTANTIATE(T)                                                                          \
  template class AlignmentBlock<T>;                                                                \
  template class GatingBlock<T>;                                                                   \
  template Tensor<T> integrate<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);           \
  template IntegrateGrads<T> integrate_backward<T>(const Tensor<T>&, const Tensor<T>&,             \
                                                   const Tensor<T>&, const Tensor<T>&);            \
  template Tensor<T> no_gate_integrate<T>(const Tensor<T>&, const Tensor<T>&);                     \
  template double gate_regularizer<T>(const Tensor<T>&);                                           \
  template Tensor<T> gate_regularizer_grad<T>(const Tensor<T>&);                                   \
  template Tensor<T> concat_channels<T>(const Tensor<T>&, const Tensor<T>&);                       \
  template void split_channels<T>(const Tensor<T>&, std::size_t, Tensor<T>&, Tensor<T>&);

IA_INSTANTIATE(float)
IA_INSTANTIATE(double)
#undef IA_INSTANTIATE

}  // namespace integral_action
