#include "ledetr/backbone.hpp"

#include <algorithm>

namespace ledetr {

namespace {

using enum PatternFamily;

constexpr std::array<PatternEntry, 13> kPatterns{{
    {"L", "P_A-1", {1, 1, 4, 4}, Balanced},
    {"L", "P_A-2", {1, 1, 6, 6}, Balanced},
    {"L", "P_B", {1, 1, 4, 8}, LateHeavy},
    {"L", "P_C", {1, 1, 10, 2}, EarlyHeavy},
    {"X", "P_A-1", {2, 2, 8, 8}, Balanced},
    {"X", "P_A-2", {2, 2, 10, 10}, Balanced},
    {"X", "P_A-3", {2, 2, 12, 12}, Balanced},
    {"X", "P_B-1", {2, 2, 8, 10}, LateHeavy},
    {"X", "P_B-2", {2, 2, 4, 12}, LateHeavy},
    {"X", "P_B-3", {2, 2, 2, 15}, LateHeavy},
    {"X", "P_C-1", {2, 2, 15, 2}, EarlyHeavy},
    {"X", "P_C-2", {2, 7, 15, 2}, EarlyHeavy},
    {"X", "P_C-3", {2, 7, 18, 2}, EarlyHeavy},
}};

// Production scales: stem count, then stages 1-4. M's four-entry tuple
// (1, 1, 2, 2) is read as stage counts behind a single stem block.
struct ScaleEntry {
  std::string_view name;
  std::array<Index, 5> blocks;
};

constexpr std::array<ScaleEntry, 3> kScales{{
    {"M", {1, 1, 1, 2, 2}},
    {"L", {1, 1, 1, 4, 4}},
    {"X", {1, 2, 7, 15, 2}},
}};

}  // namespace

std::string to_string(PatternFamily family) {
  switch (family) {
    case Balanced: return "balanced";
    case LateHeavy: return "late-heavy";
    case EarlyHeavy: return "early-heavy";
  }
  return "?";
}

std::span<const PatternEntry> list_patterns() { return kPatterns; }

std::vector<std::string> backbone_names() {
  std::vector<std::string> names;
  for (const auto& s : kScales) names.emplace_back(s.name);
  for (const auto& p : kPatterns) names.push_back(p.name());
  return names;
}

void BackboneSpec::validate() const {
  for (std::size_t i = 1; i < widths.size(); ++i) {
    if (widths[i] != 2 * widths[i - 1]) throw ConfigError(name + ": widths must double per level");
  }
  for (Index b : blocks) {
    if (b < 1) throw ConfigError(name + ": every level needs at least one block");
  }
  na_stage.validate();
  if (na_stage.embed() != widths[4]) {
    throw ConfigError(name + ": final-stage NA width must equal " + std::to_string(widths[4]));
  }
  if (expand < 1) throw ConfigError(name + ": expansion ratio must be >= 1");
}

BackboneSpec backbone_spec(std::string_view name) {
  BackboneSpec spec;
  spec.name = std::string(name);
  for (const auto& s : kScales) {
    if (s.name == name) {
      spec.blocks = s.blocks;
      return spec;
    }
  }
  for (const auto& p : kPatterns) {
    if (p.name() == name) {
      spec.blocks = {1, p.stages[0], p.stages[1], p.stages[2], p.stages[3]};
      return spec;
    }
  }
  std::string valid;
  for (const auto& n : backbone_names()) valid += (valid.empty() ? "" : ", ") + n;
  throw ConfigError("unknown backbone '" + std::string(name) + "'; valid names: " + valid);
}

std::vector<BlockSpec> level_block_specs(const BackboneSpec& spec, int level) {
  std::vector<BlockSpec> out;
  const Index count = spec.blocks[static_cast<std::size_t>(level)];
  if (level == 0) {
    for (Index i = 0; i < count; ++i) {
      out.push_back({.kind = BlockKind::DSConv,
                     .in_ch = i == 0 ? 3 : spec.widths[0],
                     .out_ch = spec.widths[0],
                     .stride = i == 0 ? 2 : 1,
                     .expand = 1});
    }
    return out;
  }
  const Index in = spec.widths[static_cast<std::size_t>(level - 1)];
  const Index width = spec.widths[static_cast<std::size_t>(level)];
  const BlockKind conv_kind = level <= 2 ? BlockKind::FusedMBConv : BlockKind::MBConv;
  out.push_back({.kind = conv_kind, .in_ch = in, .out_ch = width, .stride = 2, .expand = spec.expand});
  for (Index i = 1; i < count; ++i) {
    if (level == 4) {
      out.push_back({.kind = BlockKind::EfficientNAT,
                     .in_ch = width,
                     .out_ch = width,
                     .stride = 1,
                     .expand = spec.expand,
                     .na = spec.na_stage,
                     .shrink_window = spec.shrink_window});
    } else {
      out.push_back({.kind = conv_kind, .in_ch = width, .out_ch = width, .stride = 1,
                     .expand = spec.expand});
    }
  }
  return out;
}

Backbone build_backbone(const BackboneSpec& spec, Rng64& rng) {
  spec.validate();
  Backbone b{spec, {}};
  for (int level = 0; level < 5; ++level) {
    for (const BlockSpec& bs : level_block_specs(spec, level)) {
      b.levels[static_cast<std::size_t>(level)].push_back(make_block(bs, rng));
    }
  }
  return b;
}

Backbone build_backbone(std::string_view name, std::uint64_t seed) {
  Rng64 rng(seed);
  return build_backbone(backbone_spec(name), rng);
}

FeaturePyramid backbone_forward(const Backbone& backbone, const Tensor4f& x) {
  if (x.c() != 3) throw DimensionError("backbone expects 3 input channels, got " + x.shape().str());
  if (x.h() % 32 != 0 || x.w() % 32 != 0) {
    throw DimensionError("backbone input extents must be divisible by 32, got " + x.shape().str());
  }
  FeaturePyramid p;
  Tensor4f h = x;
  for (int level = 0; level < 5; ++level) {
    for (const Block& block : backbone.levels[static_cast<std::size_t>(level)]) {
      h = block_forward(block, h);
    }
    if (level == 2) p.s3 = h;
    if (level == 3) p.s4 = h;
  }
  p.s5 = std::move(h);
  return p;
}

}  // namespace ledetr
