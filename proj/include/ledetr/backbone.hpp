#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "ledetr/blocks.hpp"

namespace ledetr {

/// Block-count distributions across stages 1-4.
enum class PatternFamily {
  Balanced,    // P_A: stage 3 == stage 4
  LateHeavy,   // P_B: stage 4 > stage 3
  EarlyHeavy,  // P_C: stage 3 > stage 4
};

std::string to_string(PatternFamily family);

struct PatternEntry {
  std::string_view scale;  // "L" or "X"
  std::string_view id;     // e.g. "P_C-2"
  std::array<Index, 4> stages;
  PatternFamily family;

  /// Lookup name, e.g. "P_C-2@X".
  std::string name() const { return std::string(id) + "@" + std::string(scale); }
};

/// The backbone scale study: 4 L-scale and 9 X-scale stage tuples.
std::span<const PatternEntry> list_patterns();

struct BackboneSpec {
  std::string name;
  std::array<Index, 5> widths{32, 64, 128, 256, 512};
  /// Stem block count followed by the four stage counts.
  std::array<Index, 5> blocks{1, 1, 1, 4, 4};
  NaConfig na_stage{.kernel = 7, .heads = 16, .head_dim = 32};
  Index expand = 4;
  bool shrink_window = true;

  std::array<Index, 4> stage_blocks() const { return {blocks[1], blocks[2], blocks[3], blocks[4]}; }
  void validate() const;
};

/// "M", "L", "X" or a pattern name such as "P_B-1@X".
BackboneSpec backbone_spec(std::string_view name);
std::vector<std::string> backbone_names();

/// Block specs of level 0 (stem) or stages 1-4.
std::vector<BlockSpec> level_block_specs(const BackboneSpec& spec, int level);

struct Backbone {
  BackboneSpec spec;
  std::array<std::vector<Block>, 5> levels;
};

/// Stride 8 / 16 / 32 features.
struct FeaturePyramid {
  Tensor4f s3;
  Tensor4f s4;
  Tensor4f s5;
};

Backbone build_backbone(const BackboneSpec& spec, Rng64& rng);
Backbone build_backbone(std::string_view name, std::uint64_t seed);

/// x is N x 3 x H x W with H, W divisible by 32.
FeaturePyramid backbone_forward(const Backbone& backbone, const Tensor4f& x);

inline std::string level_name(int level) {
  return level == 0 ? "stem" : "stage" + std::to_string(level);
}

template <typename Self, typename F>
  requires ParamsOf<Self, Backbone>
void for_each_param(Self& b, const std::string& prefix, F&& f) {
  for (int level = 0; level < 5; ++level) {
    for (std::size_t i = 0; i < b.levels[level].size(); ++i) {
      for_each_param(b.levels[level][i], prefix + "." + level_name(level) + "." + std::to_string(i),
                     f);
    }
  }
}

}  // namespace ledetr
