#pragma once

// Deformable-attention DETR decoder with per-layer heads and inference-time
// truncation. Each layer: self-attention -> deformable cross-attention -> FFN,
// post-norm, then score / box heads and inverse-sigmoid box refinement.

#include <iosfwd>
#include <vector>

#include "ledetr/encoder.hpp"

namespace ledetr {

struct DecoderSpec {
  Index hidden_dim = 256;
  Index ffn_dim = 1024;
  Index heads = 8;
  Index layers_trained = 6;
  Index layers_inference = 6;
  Index queries = 300;
  Index num_classes = 80;
  /// Sampling points per level (stride 8, 16, 32).
  std::vector<Index> points{3, 6, 3};

  Index head_dim() const { return hidden_dim / heads; }
  Index total_points() const;
  void validate() const;
};

struct DetectionSet {
  Index layer_index = 0;
  MatrixR<float> boxes;   // queries x 4, normalized (cx, cy, w, h)
  MatrixR<float> logits;  // queries x num_classes
};

struct QuerySelectWeights {
  Linear enc_output;
  LayerNorm enc_norm;
  Linear enc_score;
  Mlp enc_bbox;
};

struct DeformAttnWeights {
  Linear offsets;  // hidden -> heads * points * 2
  Linear weights;  // hidden -> heads * points
  Linear value_proj;
  Linear out_proj;
};

struct DecoderLayerWeights {
  Linear self_in;  // hidden -> 3 * hidden
  Linear self_out;
  LayerNorm norm1;
  DeformAttnWeights cross;
  LayerNorm norm2;
  Mlp ffn;
  LayerNorm norm3;
  Linear score_head;
  Mlp box_head;
};

struct DecoderWeights {
  QuerySelectWeights select;
  Mlp query_pos;
  std::vector<DecoderLayerWeights> layers;
};

DecoderWeights make_decoder(const DecoderSpec& spec, Rng64& rng);
DecoderLayerWeights make_decoder_layer(const DecoderSpec& spec, Rng64& rng);

struct QuerySelection {
  std::vector<Index> indices;
  MatrixR<float> queries;  // k x hidden
  MatrixR<float> refs;     // k x 4, sigmoid space
};

/// Top-k tokens of one memory item by max class score, ties by ascending index.
QuerySelection select_queries(const Memory& memory, Index item, const QuerySelectWeights& w,
                              Index k);

/// Order of top-k by (score desc, index asc).
std::vector<Index> top_k_indices(std::span<const float> scores, Index k);

/// Bilinear sample of an H x W x C row-major token block at normalized (x, y);
/// pixel centres sit at (i + 0.5) / extent and reads clamp to the border.
void bilinear_sample(const float* level, Index height, Index width, Index stride, Index channels,
                     float x, float y, float* out);

/// Core gather: locs is Q x (heads * P * 2), attn is Q x (heads * P) already
/// normalized, value is T x hidden. Returns Q x hidden.
MatrixR<float> deformable_sample(const Eigen::Ref<const MatrixR<float>>& value,
                                 const std::vector<LevelShape>& levels,
                                 const std::vector<Index>& points, Index heads,
                                 const Eigen::Ref<const MatrixR<float>>& locs,
                                 const Eigen::Ref<const MatrixR<float>>& attn);

/// Sampling locations ref_xy + offset / P_l * ref_wh / 2 in the same layout as
/// deformable_sample's locs.
MatrixR<float> sampling_locations(const Eigen::Ref<const MatrixR<float>>& offsets,
                                  const Eigen::Ref<const MatrixR<float>>& refs,
                                  const std::vector<Index>& points, Index heads);

/// Softmax over all sampled points of each head.
MatrixR<float> sampling_weights(const Eigen::Ref<const MatrixR<float>>& logits, Index heads);

MatrixR<float> deformable_cross_attn(const Eigen::Ref<const MatrixR<float>>& query,
                                     const Eigen::Ref<const MatrixR<float>>& refs,
                                     const Eigen::Ref<const MatrixR<float>>& memory,
                                     const std::vector<LevelShape>& levels,
                                     const DecoderSpec& spec, const DeformAttnWeights& w);

/// Dense multi-head self-attention with separate query/key and value inputs.
MatrixR<float> self_attention(const Eigen::Ref<const MatrixR<float>>& qk,
                              const Eigen::Ref<const MatrixR<float>>& v, Index heads,
                              const Linear& in_proj, const Linear& out_proj);

struct LayerState {
  MatrixR<float> queries;
  MatrixR<float> refs;
};

/// One layer: updates state in place and returns the layer's detections.
DetectionSet decoder_layer(LayerState& state, const Eigen::Ref<const MatrixR<float>>& memory,
                           const std::vector<LevelShape>& levels, const DecoderSpec& spec,
                           const Mlp& query_pos, const DecoderLayerWeights& w, Index layer_index);

/// Runs the first n_layers layers on memory item `item`.
std::vector<DetectionSet> decode(const Memory& memory, Index item, const DecoderSpec& spec,
                                 const DecoderWeights& w, Index n_layers);

/// Header plus one row per query: layer_index,class_id,score,cx,cy,w,h.
void write_detections_csv(std::ostream& os, std::span<const DetectionSet> sets);

template <typename Self, typename F>
  requires ParamsOf<Self, DecoderLayerWeights>
void for_each_param(Self& l, const std::string& prefix, F&& f) {
  for_each_param(l.self_in, prefix + ".self_attn.in_proj", f);
  for_each_param(l.self_out, prefix + ".self_attn.out_proj", f);
  for_each_param(l.norm1, prefix + ".norm1", f);
  for_each_param(l.cross.offsets, prefix + ".cross_attn.offsets", f);
  for_each_param(l.cross.weights, prefix + ".cross_attn.weights", f);
  for_each_param(l.cross.value_proj, prefix + ".cross_attn.value_proj", f);
  for_each_param(l.cross.out_proj, prefix + ".cross_attn.out_proj", f);
  for_each_param(l.norm2, prefix + ".norm2", f);
  for_each_param(l.ffn, prefix + ".ffn", f);
  for_each_param(l.norm3, prefix + ".norm3", f);
  for_each_param(l.score_head, prefix + ".score_head", f);
  for_each_param(l.box_head, prefix + ".box_head", f);
}

/// Visits the query-selection heads, the positional MLP and the first
/// `layers` decoder layers (all when negative).
template <typename Self, typename F>
  requires ParamsOf<Self, DecoderWeights>
void for_each_param(Self& d, const std::string& prefix, F&& f, Index layers = -1) {
  for_each_param(d.select.enc_output, prefix + ".enc_output", f);
  for_each_param(d.select.enc_norm, prefix + ".enc_norm", f);
  for_each_param(d.select.enc_score, prefix + ".enc_score", f);
  for_each_param(d.select.enc_bbox, prefix + ".enc_bbox", f);
  for_each_param(d.query_pos, prefix + ".query_pos", f);
  const auto n = layers < 0 ? d.layers.size() : std::min(d.layers.size(), static_cast<std::size_t>(layers));
  for (std::size_t i = 0; i < n; ++i) {
    for_each_param(d.layers[i], prefix + ".layers." + std::to_string(i), f);
  }
}

}  // namespace ledetr
