#pragma once

// Hybrid encoder: NAIFI over the stride-32 map, then top-down / bottom-up
// fusion of all three levels at embed_dim channels.
//
//   e3, e4 = 1x1 projections of s3, s4;  e5 = NAIFI(s5)
//   td5 = e5
//   td4 = e4 + F(e4 + up2x(lat(td5)))     td3 = e3 + F(e3 + up2x(lat(td4)))
//   out3 = td3
//   out4 = td4 + F(td4 + down(out3))      out5 = td5 + F(td5 + down(out4))
//
// F is fusion_depth units of two 3x3 ConvBn+SiLU; with zeroed fusion weights
// every output equals its projected input.

#include <array>
#include <vector>

#include "ledetr/backbone.hpp"

namespace ledetr {

struct EncoderSpec {
  Index embed_dim = 256;
  Index ffn_dim = 1024;
  Index naifi_kernel = 63;
  Index heads = 8;
  Index fusion_depth = 4;
  std::array<Index, 3> in_channels{128, 256, 512};

  /// NAIFI attention config before shrinking.
  NaConfig naifi_na() const {
    return {.kernel = naifi_kernel, .heads = heads, .head_dim = embed_dim / heads};
  }
  void validate() const;
};

struct NaifiWeights {
  ConvBn input_proj;
  NaMixerWeights mixer;
  LayerNorm ffn_norm;
  Mlp ffn;
};

struct FusionUnit {
  ConvBn first;
  ConvBn second;
};

using FusionNode = std::vector<FusionUnit>;

struct EncoderWeights {
  NaifiWeights naifi;
  std::array<ConvBn, 2> input_proj;  // s3, s4
  std::array<ConvBn, 2> lateral;     // td5 -> level 4, td4 -> level 3
  std::array<FusionNode, 2> top_down;
  std::array<ConvBn, 2> downsample;  // out3 -> level 4, out4 -> level 5
  std::array<FusionNode, 2> bottom_up;
};

/// Fused levels at strides 8 / 16 / 32, all embed_dim channels.
using FusedPyramid = std::array<Tensor4f, 3>;

EncoderWeights make_encoder(const EncoderSpec& spec, Rng64& rng);

Tensor4f naifi_forward(const Tensor4f& s5, const EncoderSpec& spec, const NaifiWeights& w);
Tensor4f fusion_node_forward(const FusionNode& node, const Tensor4f& x);

/// p.s5 must already be the NAIFI output (embed_dim channels); s3, s4 are raw
/// backbone features.
FusedPyramid fuse_pyramid(const FeaturePyramid& p, const EncoderSpec& spec,
                          const EncoderWeights& w);

FusedPyramid encoder_forward(const FeaturePyramid& p, const EncoderSpec& spec,
                             const EncoderWeights& w);

struct LevelShape {
  Index height = 0;
  Index width = 0;
  Index start = 0;

  Index tokens() const { return height * width; }
};

/// Flattened multi-scale memory. Rows of item b occupy [b*T, (b+1)*T).
struct Memory {
  Index batch = 1;
  Index channels = 0;
  std::vector<LevelShape> levels;
  MatrixR<float> tokens;
  /// Normalized (x, y) cell centres, one row per token of a single item.
  MatrixR<float> refs;

  Index tokens_per_item() const { return levels.empty() ? 0 : levels.back().start + levels.back().tokens(); }
  auto item(Index b) const { return tokens.middleRows(b * tokens_per_item(), tokens_per_item()); }
};

Memory flatten_memory(std::span<const Tensor4f> levels);
std::vector<Tensor4f> unflatten_memory(const Memory& memory);

template <typename Self, typename F>
  requires ParamsOf<Self, FusionNode>
void for_each_param(Self& node, const std::string& prefix, F&& f) {
  for (std::size_t i = 0; i < node.size(); ++i) {
    const std::string p = prefix + "." + std::to_string(i);
    for_each_param(node[i].first, p + ".conv1", f);
    for_each_param(node[i].second, p + ".conv2", f);
  }
}

template <typename Self, typename F>
  requires ParamsOf<Self, EncoderWeights>
void for_each_param(Self& e, const std::string& prefix, F&& f) {
  for_each_param(e.naifi.input_proj, prefix + ".naifi.input_proj", f);
  for_each_param(e.naifi.mixer, prefix + ".naifi.attn", f);
  for_each_param(e.naifi.ffn_norm, prefix + ".naifi.ffn_norm", f);
  for_each_param(e.naifi.ffn, prefix + ".naifi.ffn", f);
  for (std::size_t i = 0; i < 2; ++i) {
    const std::string s = std::to_string(i);
    for_each_param(e.input_proj[i], prefix + ".input_proj." + s, f);
    for_each_param(e.lateral[i], prefix + ".lateral." + s, f);
    for_each_param(e.top_down[i], prefix + ".top_down." + s, f);
    for_each_param(e.downsample[i], prefix + ".downsample." + s, f);
    for_each_param(e.bottom_up[i], prefix + ".bottom_up." + s, f);
  }
}

}  // namespace ledetr
