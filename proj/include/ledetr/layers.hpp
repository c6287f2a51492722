#pragma once

// Parameterized layers shared by the backbone, encoder and decoder, plus the
// parameter-visiting protocol used by checkpoints and counting.

#include <concepts>
#include <string>
#include <type_traits>
#include <vector>

#include "ledetr/ops.hpp"

namespace ledetr {

/// Self is T or const T.
template <typename Self, typename T>
concept ParamsOf = std::same_as<std::remove_const_t<Self>, T>;

inline constexpr float kLayerNormEps = 1e-5f;

/// Convolution followed by a folded per-channel affine (inference batch norm)
/// and an optional SiLU.
struct ConvBn {
  Tensor4f weight;
  Tensor4f scale;
  Tensor4f shift;
  Conv2dOptions opt;
  bool act = true;
};

/// Fully connected layer: weight (out, in, 1, 1), bias (1, out, 1, 1).
struct Linear {
  Tensor4f weight;
  Tensor4f bias;

  Index in() const { return weight.c(); }
  Index out() const { return weight.n(); }
};

struct LayerNorm {
  Tensor4f gamma;
  Tensor4f beta;
};

/// Linear layers with SiLU between them (none after the last).
struct Mlp {
  std::vector<Linear> layers;
};

/// kernel x kernel conv, padding kernel/2, He-style normal init, identity affine.
ConvBn make_conv_bn(Rng64& rng, Index in, Index out, Index kernel, Index stride, Index groups,
                    bool act);
Linear make_linear(Rng64& rng, Index in, Index out);
LayerNorm make_layernorm(Index dim);
Mlp make_mlp(Rng64& rng, const std::vector<Index>& widths);

Tensor4f forward(const ConvBn& m, const Tensor4f& x);
MatrixR<float> forward(const Linear& m, const Eigen::Ref<const MatrixR<float>>& x);
void forward_inplace(const LayerNorm& m, Eigen::Ref<MatrixR<float>> x);
MatrixR<float> forward(const Mlp& m, const Eigen::Ref<const MatrixR<float>>& x);

/// Zeroes every tensor of a layer: used to switch residual branches off.
template <typename M>
void zero_params(M& m);

template <typename Self, typename F>
  requires ParamsOf<Self, ConvBn>
void for_each_param(Self& m, const std::string& prefix, F&& f) {
  f(prefix + ".weight", m.weight);
  f(prefix + ".bn.scale", m.scale);
  f(prefix + ".bn.shift", m.shift);
}

template <typename Self, typename F>
  requires ParamsOf<Self, Linear>
void for_each_param(Self& m, const std::string& prefix, F&& f) {
  f(prefix + ".weight", m.weight);
  f(prefix + ".bias", m.bias);
}

template <typename Self, typename F>
  requires ParamsOf<Self, LayerNorm>
void for_each_param(Self& m, const std::string& prefix, F&& f) {
  f(prefix + ".gamma", m.gamma);
  f(prefix + ".beta", m.beta);
}

template <typename Self, typename F>
  requires ParamsOf<Self, Mlp>
void for_each_param(Self& m, const std::string& prefix, F&& f) {
  for (std::size_t i = 0; i < m.layers.size(); ++i) {
    for_each_param(m.layers[i], prefix + "." + std::to_string(i), f);
  }
}

/// Total scalar count of everything for_each_param visits.
template <typename M>
Index count_params(const M& m) {
  Index total = 0;
  for_each_param(m, std::string(), [&](const std::string&, const Tensor4f& t) { total += t.size(); });
  return total;
}

template <typename M>
void zero_params(M& m) {
  for_each_param(m, std::string(), [](const std::string&, Tensor4f& t) { t.set_zero(); });
}

/// Closed-form parameter count of a ConvBn.
inline Index conv_bn_params(Index in, Index out, Index kernel, Index groups = 1) {
  return out * (in / groups) * kernel * kernel + 2 * out;
}

inline Index linear_params(Index in, Index out) { return in * out + out; }

}  // namespace ledetr
