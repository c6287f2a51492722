#include "ledetr/layers.hpp"

#include <cmath>

namespace ledetr {

ConvBn make_conv_bn(Rng64& rng, Index in, Index out, Index kernel, Index stride, Index groups,
                    bool act) {
  const Index fan_in = (in / groups) * kernel * kernel;
  ConvBn m;
  m.weight = init_normal(rng, Shape4{out, in / groups, kernel, kernel}, std::sqrt(2.0 / fan_in));
  m.scale = channel_vector(out, 1.0f);
  m.shift = channel_vector(out, 0.0f);
  m.opt = {.stride = stride, .pad = kernel / 2, .groups = groups};
  m.act = act;
  return m;
}

Linear make_linear(Rng64& rng, Index in, Index out) {
  return {init_normal(rng, Shape4{out, in, 1, 1}, 1.0 / std::sqrt(double(in))),
          channel_vector(out, 0.0f)};
}

LayerNorm make_layernorm(Index dim) { return {channel_vector(dim, 1.0f), channel_vector(dim, 0.0f)}; }

Mlp make_mlp(Rng64& rng, const std::vector<Index>& widths) {
  Mlp m;
  for (std::size_t i = 0; i + 1 < widths.size(); ++i) {
    m.layers.push_back(make_linear(rng, widths[i], widths[i + 1]));
  }
  return m;
}

Tensor4f forward(const ConvBn& m, const Tensor4f& x) {
  Tensor4f y = conv2d(x, m.weight, m.opt);
  channel_affine_inplace(y, m.scale, m.shift, m.act);
  return y;
}

MatrixR<float> forward(const Linear& m, const Eigen::Ref<const MatrixR<float>>& x) {
  return linear<float>(x, m.weight, m.bias.span());
}

void forward_inplace(const LayerNorm& m, Eigen::Ref<MatrixR<float>> x) {
  layernorm_inplace<float>(x, m.gamma.span(), m.beta.span(), kLayerNormEps);
}

MatrixR<float> forward(const Mlp& m, const Eigen::Ref<const MatrixR<float>>& x) {
  MatrixR<float> h = x;
  for (std::size_t i = 0; i < m.layers.size(); ++i) {
    h = forward(m.layers[i], h);
    if (i + 1 < m.layers.size()) {
      silu_inplace(std::span<float>(h.data(), static_cast<std::size_t>(h.size())));
    }
  }
  return h;
}

}  // namespace ledetr
