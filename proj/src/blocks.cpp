#include "ledetr/blocks.hpp"

namespace ledetr {

std::string to_string(BlockKind kind) {
  switch (kind) {
    case BlockKind::DSConv: return "DSConv";
    case BlockKind::FusedMBConv: return "FusedMBConv";
    case BlockKind::MBConv: return "MBConv";
    case BlockKind::EfficientNAT: return "EfficientNAT";
  }
  return "?";
}

void BlockSpec::validate() const {
  const std::string name = to_string(kind);
  if (in_ch < 1 || out_ch < 1) throw ConfigError(name + ": channel counts must be >= 1");
  if (stride != 1 && stride != 2) throw ConfigError(name + ": stride must be 1 or 2");
  if (stride == 2 && kind != BlockKind::DSConv && out_ch != 2 * in_ch) {
    throw ConfigError(name + ": stride-2 block must double channels (" + std::to_string(in_ch) +
                      " -> " + std::to_string(out_ch) + ")");
  }
  if (expand < 1) throw ConfigError(name + ": expansion ratio must be >= 1");
  if (na.has_value() != (kind == BlockKind::EfficientNAT)) {
    throw ConfigError(name + ": NA config present iff kind is EfficientNAT");
  }
  if (kind == BlockKind::EfficientNAT) {
    na->validate();
    if (stride != 1 || in_ch != out_ch) throw ConfigError("EfficientNAT: stride 1, in == out");
    if (na->embed() != in_ch) {
      throw ConfigError("EfficientNAT: heads*head_dim " + std::to_string(na->embed()) +
                        " != channels " + std::to_string(in_ch));
    }
  }
}

namespace {

MbConvWeights make_mbconv(Rng64& rng, Index in, Index out, Index stride, Index expand) {
  const Index hidden = in * expand;
  MbConvWeights w;
  w.expand = make_conv_bn(rng, in, hidden, 1, 1, 1, true);
  w.depthwise = make_conv_bn(rng, hidden, hidden, 3, stride, hidden, true);
  w.project = make_conv_bn(rng, hidden, out, 1, 1, 1, false);
  return w;
}

void check_input(const Tensor4f& x, const BlockSpec& spec, BlockKind kind) {
  if (spec.kind != kind) {
    throw ConfigError("expected a " + to_string(kind) + " spec, got " + to_string(spec.kind));
  }
  if (x.c() != spec.in_ch) {
    throw DimensionError(to_string(kind) + ": input " + x.shape().str() + " vs in_ch " +
                         std::to_string(spec.in_ch));
  }
}

Index mbconv_params(Index in, Index out, Index expand) {
  const Index hidden = in * expand;
  return conv_bn_params(in, hidden, 1) + conv_bn_params(hidden, hidden, 3, hidden) +
         conv_bn_params(hidden, out, 1);
}

}  // namespace

NaMixerWeights make_na_mixer(Rng64& rng, const NaConfig& cfg, Index bias_kernel) {
  const Index c = cfg.embed();
  NaMixerWeights w;
  w.norm = make_layernorm(c);
  w.qkv = make_linear(rng, c, 3 * c);
  w.bias = RelBias<float>(cfg.heads, bias_kernel);
  w.proj = make_linear(rng, c, c);
  return w;
}

Block make_block(const BlockSpec& spec, Rng64& rng) {
  spec.validate();
  const Index in = spec.in_ch, out = spec.out_ch;
  switch (spec.kind) {
    case BlockKind::DSConv:
      return {spec, DsConvWeights{make_conv_bn(rng, in, in, 3, spec.stride, in, true),
                                  make_conv_bn(rng, in, out, 1, 1, 1, false)}};
    case BlockKind::FusedMBConv: {
      FusedMbConvWeights w;
      if (spec.expand == 1) {
        w.expand = make_conv_bn(rng, in, out, 3, spec.stride, 1, true);
      } else {
        w.expand = make_conv_bn(rng, in, spec.hidden(), 3, spec.stride, 1, true);
        w.project = make_conv_bn(rng, spec.hidden(), out, 1, 1, 1, false);
      }
      return {spec, w};
    }
    case BlockKind::MBConv:
      return {spec, make_mbconv(rng, in, out, spec.stride, spec.expand)};
    case BlockKind::EfficientNAT:
      return {spec, EfficientNatWeights{make_na_mixer(rng, *spec.na, spec.na->kernel),
                                        make_mbconv(rng, in, in, 1, spec.expand)}};
  }
  throw ConfigError("unknown block kind");
}

Tensor4f dsconv_forward(const Tensor4f& x, const BlockSpec& spec, const DsConvWeights& w) {
  check_input(x, spec, BlockKind::DSConv);
  return forward(w.pointwise, forward(w.depthwise, x));
}

Tensor4f fused_mbconv_forward(const Tensor4f& x, const BlockSpec& spec,
                              const FusedMbConvWeights& w) {
  check_input(x, spec, BlockKind::FusedMBConv);
  Tensor4f y = forward(w.expand, x);
  if (w.project) y = forward(*w.project, y);
  if (spec.residual()) add_inplace(y, x);
  return y;
}

Tensor4f mbconv_branch(const Tensor4f& x, const MbConvWeights& w) {
  return forward(w.project, forward(w.depthwise, forward(w.expand, x)));
}

Tensor4f mbconv_forward(const Tensor4f& x, const BlockSpec& spec, const MbConvWeights& w) {
  check_input(x, spec, BlockKind::MBConv);
  Tensor4f y = mbconv_branch(x, w);
  if (spec.residual()) add_inplace(y, x);
  return y;
}

NaConfig effective_na_config(const NaConfig& cfg, Index height, Index width, bool shrink_window) {
  NaConfig eff = cfg;
  if (shrink_window && eff.span() > std::min(height, width)) {
    eff.dilation = 1;
    eff.kernel = shrink_kernel(eff.kernel, std::min(height, width));
  }
  return eff;
}

Tensor4f na_mixer_forward(const Tensor4f& x, const NaMixerWeights& w, const NaConfig& cfg,
                          bool shrink_window) {
  const Index n = x.n(), c = x.c(), height = x.h(), width = x.w(), hw = height * width;
  if (c != cfg.embed()) {
    throw DimensionError("NA mixer: " + std::to_string(c) + " channels vs heads*head_dim " +
                         std::to_string(cfg.embed()));
  }
  const NaConfig eff = effective_na_config(cfg, height, width, shrink_window);

  MatrixR<float> tokens(n * hw, c);
  for (Index b = 0; b < n; ++b) tokens.middleRows(b * hw, hw) = x.item_matrix(b).transpose();
  forward_inplace(w.norm, tokens);
  const MatrixR<float> qkv = forward(w.qkv, tokens);

  const Shape4 map{n, height, width, c};
  Tensor4f q(map), k(map), v(map);
  MapR<float>(q.data(), n * hw, c) = qkv.leftCols(c);
  MapR<float>(k.data(), n * hw, c) = qkv.middleCols(c, c);
  MapR<float>(v.data(), n * hw, c) = qkv.rightCols(c);
  const Tensor4f attended = na_apply(q, k, v, w.bias, eff);

  const MatrixR<float> projected =
      forward(w.proj, ConstMapR<float>(attended.data(), n * hw, c));
  Tensor4f y(x.shape());
  for (Index b = 0; b < n; ++b) y.item_matrix(b) = projected.middleRows(b * hw, hw).transpose();
  return y;
}

Tensor4f efficient_nat_block_forward(const Tensor4f& x, const BlockSpec& spec,
                                     const EfficientNatWeights& w) {
  check_input(x, spec, BlockKind::EfficientNAT);
  Tensor4f y = add(x, na_mixer_forward(x, w.mixer, *spec.na, spec.shrink_window));
  add_inplace(y, mbconv_branch(y, w.ffn));
  return y;
}

Tensor4f block_forward(const Block& block, const Tensor4f& x) {
  return std::visit(
      [&](const auto& w) -> Tensor4f {
        using W = std::remove_cvref_t<decltype(w)>;
        if constexpr (std::is_same_v<W, DsConvWeights>) {
          return dsconv_forward(x, block.spec, w);
        } else if constexpr (std::is_same_v<W, FusedMbConvWeights>) {
          return fused_mbconv_forward(x, block.spec, w);
        } else if constexpr (std::is_same_v<W, MbConvWeights>) {
          return mbconv_forward(x, block.spec, w);
        } else {
          return efficient_nat_block_forward(x, block.spec, w);
        }
      },
      block.weights);
}

Index block_param_formula(const BlockSpec& spec) {
  const Index in = spec.in_ch, out = spec.out_ch, hidden = spec.hidden();
  switch (spec.kind) {
    case BlockKind::DSConv:
      return conv_bn_params(in, in, 3, in) + conv_bn_params(in, out, 1);
    case BlockKind::FusedMBConv:
      if (spec.expand == 1) return conv_bn_params(in, out, 3);
      return conv_bn_params(in, hidden, 3) + conv_bn_params(hidden, out, 1);
    case BlockKind::MBConv:
      return mbconv_params(in, out, spec.expand);
    case BlockKind::EfficientNAT: {
      const Index table = 2 * spec.na->kernel - 1;
      return 2 * in + linear_params(in, 3 * in) + spec.na->heads * table * table +
             linear_params(in, in) + mbconv_params(in, in, spec.expand);
    }
  }
  return 0;
}

}  // namespace ledetr
