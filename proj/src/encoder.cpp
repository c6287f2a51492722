#include "ledetr/encoder.hpp"

namespace ledetr {

void EncoderSpec::validate() const {
  if (embed_dim < 1 || heads < 1 || embed_dim % heads != 0) {
    throw ConfigError("encoder: embed_dim " + std::to_string(embed_dim) +
                      " not divisible by heads " + std::to_string(heads));
  }
  if (naifi_kernel < 1 || naifi_kernel % 2 == 0) throw ConfigError("encoder: naifi_kernel must be odd");
  if (ffn_dim < 1) throw ConfigError("encoder: ffn_dim must be >= 1");
  if (fusion_depth < 1) throw ConfigError("encoder: fusion_depth must be >= 1");
}

namespace {

FusionNode make_fusion_node(Rng64& rng, Index c, Index depth) {
  FusionNode node;
  for (Index i = 0; i < depth; ++i) {
    FusionUnit u{make_conv_bn(rng, c, c, 3, 1, 1, true), make_conv_bn(rng, c, c, 3, 1, 1, true)};
    node.push_back(std::move(u));
  }
  return node;
}

void check_level(const Tensor4f& t, Index n, Index h, Index w, const char* what) {
  if (t.n() != n || t.h() != h || t.w() != w) {
    throw DimensionError(std::string("pyramid level ") + what + " has shape " + t.shape().str() +
                         ", expected " + std::to_string(h) + "x" + std::to_string(w) + " spatial");
  }
}

}  // namespace

EncoderWeights make_encoder(const EncoderSpec& spec, Rng64& rng) {
  spec.validate();
  const Index c = spec.embed_dim;
  EncoderWeights e;
  e.naifi.input_proj = make_conv_bn(rng, spec.in_channels[2], c, 1, 1, 1, false);
  e.naifi.mixer = make_na_mixer(rng, spec.naifi_na(), spec.naifi_kernel);
  e.naifi.ffn_norm = make_layernorm(c);
  e.naifi.ffn = make_mlp(rng, {c, spec.ffn_dim, c});
  for (std::size_t i = 0; i < 2; ++i) {
    e.input_proj[i] = make_conv_bn(rng, spec.in_channels[i], c, 1, 1, 1, false);
  }
  for (std::size_t i = 0; i < 2; ++i) {
    e.lateral[i] = make_conv_bn(rng, c, c, 1, 1, 1, false);
    e.top_down[i] = make_fusion_node(rng, c, spec.fusion_depth);
  }
  for (std::size_t i = 0; i < 2; ++i) {
    e.downsample[i] = make_conv_bn(rng, c, c, 3, 2, 1, true);
    e.bottom_up[i] = make_fusion_node(rng, c, spec.fusion_depth);
  }
  return e;
}

Tensor4f naifi_forward(const Tensor4f& s5, const EncoderSpec& spec, const NaifiWeights& w) {
  Tensor4f x = forward(w.input_proj, s5);
  Tensor4f y = add(x, na_mixer_forward(x, w.mixer, spec.naifi_na(), true));

  const Index n = y.n(), c = y.c(), hw = y.h() * y.w();
  MatrixR<float> tokens(n * hw, c);
  for (Index b = 0; b < n; ++b) tokens.middleRows(b * hw, hw) = y.item_matrix(b).transpose();
  MatrixR<float> normed = tokens;
  forward_inplace(w.ffn_norm, normed);
  tokens += forward(w.ffn, normed);
  for (Index b = 0; b < n; ++b) y.item_matrix(b) = tokens.middleRows(b * hw, hw).transpose();
  return y;
}

Tensor4f fusion_node_forward(const FusionNode& node, const Tensor4f& x) {
  Tensor4f h = x;
  for (const FusionUnit& u : node) h = forward(u.second, forward(u.first, h));
  return h;
}

FusedPyramid fuse_pyramid(const FeaturePyramid& p, const EncoderSpec& spec,
                          const EncoderWeights& w) {
  const Index n = p.s5.n(), h5 = p.s5.h(), w5 = p.s5.w();
  if (p.s5.c() != spec.embed_dim) {
    throw DimensionError("fuse_pyramid: s5 must carry " + std::to_string(spec.embed_dim) +
                         " channels, got " + p.s5.shape().str());
  }
  check_level(p.s4, n, 2 * h5, 2 * w5, "s4");
  check_level(p.s3, n, 4 * h5, 4 * w5, "s3");

  const Tensor4f e3 = forward(w.input_proj[0], p.s3);
  const Tensor4f e4 = forward(w.input_proj[1], p.s4);
  const Tensor4f& td5 = p.s5;

  auto merge = [](const Tensor4f& base, const Tensor4f& incoming, const FusionNode& node) {
    return add(base, fusion_node_forward(node, add(base, incoming)));
  };

  Tensor4f td4 = merge(e4, upsample_nearest2x(forward(w.lateral[0], td5)), w.top_down[0]);
  Tensor4f td3 = merge(e3, upsample_nearest2x(forward(w.lateral[1], td4)), w.top_down[1]);

  Tensor4f out4 = merge(td4, forward(w.downsample[0], td3), w.bottom_up[0]);
  Tensor4f out5 = merge(td5, forward(w.downsample[1], out4), w.bottom_up[1]);
  return {std::move(td3), std::move(out4), std::move(out5)};
}

FusedPyramid encoder_forward(const FeaturePyramid& p, const EncoderSpec& spec,
                             const EncoderWeights& w) {
  FeaturePyramid q{p.s3, p.s4, naifi_forward(p.s5, spec, w.naifi)};
  return fuse_pyramid(q, spec, w);
}

Memory flatten_memory(std::span<const Tensor4f> levels) {
  if (levels.empty()) throw DimensionError("flatten_memory: no levels");
  Memory m;
  m.batch = levels[0].n();
  m.channels = levels[0].c();
  Index start = 0;
  for (const Tensor4f& t : levels) {
    if (t.n() != m.batch || t.c() != m.channels) {
      throw DimensionError("flatten_memory: level " + t.shape().str() + " disagrees with " +
                           levels[0].shape().str());
    }
    m.levels.push_back({t.h(), t.w(), start});
    start += t.h() * t.w();
  }
  const Index total = start;
  m.tokens.resize(m.batch * total, m.channels);
  m.refs.resize(total, 2);
  for (std::size_t l = 0; l < levels.size(); ++l) {
    const LevelShape& s = m.levels[l];
    for (Index b = 0; b < m.batch; ++b) {
      m.tokens.middleRows(b * total + s.start, s.tokens()) = levels[l].item_matrix(b).transpose();
    }
    for (Index y = 0; y < s.height; ++y) {
      for (Index x = 0; x < s.width; ++x) {
        m.refs(s.start + y * s.width + x, 0) = (static_cast<float>(x) + 0.5f) / s.width;
        m.refs(s.start + y * s.width + x, 1) = (static_cast<float>(y) + 0.5f) / s.height;
      }
    }
  }
  return m;
}

std::vector<Tensor4f> unflatten_memory(const Memory& memory) {
  std::vector<Tensor4f> out;
  const Index total = memory.tokens_per_item();
  for (const LevelShape& s : memory.levels) {
    Tensor4f t(Shape4{memory.batch, memory.channels, s.height, s.width});
    for (Index b = 0; b < memory.batch; ++b) {
      t.item_matrix(b) = memory.tokens.middleRows(b * total + s.start, s.tokens()).transpose();
    }
    out.push_back(std::move(t));
  }
  return out;
}

}  // namespace ledetr
