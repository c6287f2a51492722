#pragma once

// Convolutional building blocks of the EfficientNAT backbone.
//
//   DSConv       depthwise 3x3 (BN, SiLU) -> pointwise 1x1 (BN)
//   FusedMBConv  3x3 expand (BN, SiLU) -> 1x1 project (BN); a single 3x3 conv at expand 1
//   MBConv       1x1 expand (BN, SiLU) -> depthwise 3x3 (BN, SiLU) -> 1x1 project (BN)
//   EfficientNAT y = x + NA(LN(x)); out = y + MBConv(y)
//
// Fused/plain MBConv add the input back iff stride 1 and in_ch == out_ch.

#include <optional>
#include <string>
#include <variant>

#include "ledetr/layers.hpp"
#include "ledetr/na.hpp"

namespace ledetr {

enum class BlockKind { DSConv, FusedMBConv, MBConv, EfficientNAT };

std::string to_string(BlockKind kind);

struct BlockSpec {
  BlockKind kind = BlockKind::MBConv;
  Index in_ch = 1;
  Index out_ch = 1;
  Index stride = 1;
  Index expand = 4;
  std::optional<NaConfig> na;
  /// Shrink the NA kernel to fit small maps instead of raising WindowError.
  bool shrink_window = false;

  Index hidden() const { return in_ch * expand; }
  bool residual() const {
    return kind != BlockKind::DSConv && stride == 1 && in_ch == out_ch;
  }
  /// Throws ConfigError. Stride-2 blocks must double the width; the DSConv stem,
  /// which lifts image channels into feature space, is exempt.
  void validate() const;
};

struct DsConvWeights {
  ConvBn depthwise;
  ConvBn pointwise;
};

struct FusedMbConvWeights {
  ConvBn expand;
  std::optional<ConvBn> project;
};

struct MbConvWeights {
  ConvBn expand;
  ConvBn depthwise;
  ConvBn project;
};

/// Pre-norm neighborhood-attention token mixer.
struct NaMixerWeights {
  LayerNorm norm;
  Linear qkv;
  RelBias<float> bias;
  Linear proj;
};

struct EfficientNatWeights {
  NaMixerWeights mixer;
  MbConvWeights ffn;
};

using BlockWeights =
    std::variant<DsConvWeights, FusedMbConvWeights, MbConvWeights, EfficientNatWeights>;

struct Block {
  BlockSpec spec;
  BlockWeights weights;
};

Block make_block(const BlockSpec& spec, Rng64& rng);
NaMixerWeights make_na_mixer(Rng64& rng, const NaConfig& cfg, Index bias_kernel);

Tensor4f dsconv_forward(const Tensor4f& x, const BlockSpec& spec, const DsConvWeights& w);
Tensor4f fused_mbconv_forward(const Tensor4f& x, const BlockSpec& spec,
                              const FusedMbConvWeights& w);
Tensor4f mbconv_forward(const Tensor4f& x, const BlockSpec& spec, const MbConvWeights& w);
Tensor4f efficient_nat_block_forward(const Tensor4f& x, const BlockSpec& spec,
                                     const EfficientNatWeights& w);
Tensor4f block_forward(const Block& block, const Tensor4f& x);

/// The three-conv MBConv path without the residual add.
Tensor4f mbconv_branch(const Tensor4f& x, const MbConvWeights& w);

/// NA(LN(x)) projected back to C channels, NCHW in and out, no residual.
Tensor4f na_mixer_forward(const Tensor4f& x, const NaMixerWeights& w, const NaConfig& cfg,
                          bool shrink_window);

/// Kernel the mixer actually runs on an H x W map.
NaConfig effective_na_config(const NaConfig& cfg, Index height, Index width, bool shrink_window);

/// Closed-form parameter count per block kind.
Index block_param_formula(const BlockSpec& spec);

template <typename Self, typename F>
  requires ParamsOf<Self, NaMixerWeights>
void for_each_param(Self& m, const std::string& prefix, F&& f) {
  for_each_param(m.norm, prefix + ".norm", f);
  for_each_param(m.qkv, prefix + ".qkv", f);
  f(prefix + ".rel_bias", m.bias.table);
  for_each_param(m.proj, prefix + ".proj", f);
}

template <typename Self, typename F>
  requires ParamsOf<Self, Block>
void for_each_param(Self& b, const std::string& prefix, F&& f) {
  std::visit(
      [&](auto& w) {
        using W = std::remove_cvref_t<decltype(w)>;
        if constexpr (std::is_same_v<W, DsConvWeights>) {
          for_each_param(w.depthwise, prefix + ".dw", f);
          for_each_param(w.pointwise, prefix + ".pw", f);
        } else if constexpr (std::is_same_v<W, FusedMbConvWeights>) {
          for_each_param(w.expand, prefix + ".expand", f);
          if (w.project) for_each_param(*w.project, prefix + ".project", f);
        } else if constexpr (std::is_same_v<W, MbConvWeights>) {
          for_each_param(w.expand, prefix + ".expand", f);
          for_each_param(w.depthwise, prefix + ".dw", f);
          for_each_param(w.project, prefix + ".project", f);
        } else {
          for_each_param(w.mixer, prefix + ".mixer", f);
          for_each_param(w.ffn.expand, prefix + ".ffn.expand", f);
          for_each_param(w.ffn.depthwise, prefix + ".ffn.dw", f);
          for_each_param(w.ffn.project, prefix + ".ffn.project", f);
        }
      },
      b.weights);
}

}  // namespace ledetr
