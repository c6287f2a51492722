#include "ledetr/decoder.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <ostream>

#include "ledetr/parallel.hpp"

namespace ledetr {

Index DecoderSpec::total_points() const {
  return std::accumulate(points.begin(), points.end(), Index{0});
}

void DecoderSpec::validate() const {
  if (hidden_dim < 1 || heads < 1 || hidden_dim % heads != 0) {
    throw ConfigError("decoder: hidden_dim must be divisible by heads");
  }
  if (layers_trained < 1) throw ConfigError("decoder: layers_trained must be >= 1");
  if (layers_inference < 1 || layers_inference > layers_trained) {
    throw ConfigError("decoder: inference layers " + std::to_string(layers_inference) +
                      " outside [1, " + std::to_string(layers_trained) + "]");
  }
  if (queries < 1) throw ConfigError("decoder: queries must be >= 1");
  if (num_classes < 1) throw ConfigError("decoder: num_classes must be >= 1");
  if (points.empty()) throw ConfigError("decoder: at least one sampling level required");
  for (Index p : points) {
    if (p < 1) throw ConfigError("decoder: sampling points per level must be >= 1");
  }
}

DecoderLayerWeights make_decoder_layer(const DecoderSpec& spec, Rng64& rng) {
  const Index c = spec.hidden_dim, hp = spec.heads * spec.total_points();
  DecoderLayerWeights l;
  l.self_in = make_linear(rng, c, 3 * c);
  l.self_out = make_linear(rng, c, c);
  l.norm1 = make_layernorm(c);
  l.cross.offsets = make_linear(rng, c, 2 * hp);
  l.cross.weights = make_linear(rng, c, hp);
  l.cross.value_proj = make_linear(rng, c, c);
  l.cross.out_proj = make_linear(rng, c, c);
  l.norm2 = make_layernorm(c);
  l.ffn = make_mlp(rng, {c, spec.ffn_dim, c});
  l.norm3 = make_layernorm(c);
  l.score_head = make_linear(rng, c, spec.num_classes);
  l.box_head = make_mlp(rng, {c, c, c, 4});
  return l;
}

DecoderWeights make_decoder(const DecoderSpec& spec, Rng64& rng) {
  spec.validate();
  const Index c = spec.hidden_dim;
  DecoderWeights d;
  d.select.enc_output = make_linear(rng, c, c);
  d.select.enc_norm = make_layernorm(c);
  d.select.enc_score = make_linear(rng, c, spec.num_classes);
  d.select.enc_bbox = make_mlp(rng, {c, c, c, 4});
  d.query_pos = make_mlp(rng, {4, 2 * c, c});
  for (Index i = 0; i < spec.layers_trained; ++i) d.layers.push_back(make_decoder_layer(spec, rng));
  return d;
}

std::vector<Index> top_k_indices(std::span<const float> scores, Index k) {
  const auto n = static_cast<Index>(scores.size());
  if (k < 1 || k > n) {
    throw ConfigError("top-k: k = " + std::to_string(k) + " with " + std::to_string(n) + " tokens");
  }
  auto key = [&](Index i) {
    const float s = scores[static_cast<std::size_t>(i)];
    return std::isnan(s) ? -std::numeric_limits<float>::infinity() : s;
  };
  std::vector<Index> idx(static_cast<std::size_t>(n));
  std::iota(idx.begin(), idx.end(), Index{0});
  std::partial_sort(idx.begin(), idx.begin() + k, idx.end(), [&](Index a, Index b) {
    const float sa = key(a), sb = key(b);
    return sa > sb || (sa == sb && a < b);
  });
  idx.resize(static_cast<std::size_t>(k));
  return idx;
}

QuerySelection select_queries(const Memory& memory, Index item, const QuerySelectWeights& w,
                              Index k) {
  const Index total = memory.tokens_per_item();
  if (item < 0 || item >= memory.batch) throw DimensionError("select_queries: item out of range");
  if (total < k) {
    throw ConfigError("select_queries: " + std::to_string(total) + " memory tokens < k = " +
                      std::to_string(k));
  }
  MatrixR<float> out = forward(w.enc_output, memory.item(item));
  forward_inplace(w.enc_norm, out);
  const MatrixR<float> logits = forward(w.enc_score, out);
  std::vector<float> best(static_cast<std::size_t>(total));
  for (Index t = 0; t < total; ++t) best[static_cast<std::size_t>(t)] = logits.row(t).maxCoeff();

  QuerySelection sel;
  sel.indices = top_k_indices(best, k);
  sel.queries.resize(k, out.cols());
  MatrixR<float> anchors(k, 4);
  for (Index i = 0; i < k; ++i) {
    const Index t = sel.indices[static_cast<std::size_t>(i)];
    sel.queries.row(i) = out.row(t);
    Index level = 0;
    while (level + 1 < static_cast<Index>(memory.levels.size()) &&
           t >= memory.levels[static_cast<std::size_t>(level + 1)].start) {
      ++level;
    }
    const float wh = 0.05f * static_cast<float>(1 << level);
    anchors(i, 0) = inverse_sigmoid(memory.refs(t, 0));
    anchors(i, 1) = inverse_sigmoid(memory.refs(t, 1));
    anchors(i, 2) = inverse_sigmoid(wh);
    anchors(i, 3) = inverse_sigmoid(wh);
  }
  sel.refs = (forward(w.enc_bbox, sel.queries) + anchors).unaryExpr([](float v) { return sigmoid(v); });
  return sel;
}

void bilinear_sample(const float* level, Index height, Index width, Index stride, Index channels,
                     float x, float y, float* out) {
  float px = x * static_cast<float>(width) - 0.5f;
  float py = y * static_cast<float>(height) - 0.5f;
  px = std::isnan(px) ? 0.f : std::clamp(px, -1.f, static_cast<float>(width));
  py = std::isnan(py) ? 0.f : std::clamp(py, -1.f, static_cast<float>(height));
  const float fx0 = std::floor(px), fy0 = std::floor(py);
  const float ax = px - fx0, ay = py - fy0;
  const auto x0 = static_cast<Index>(fx0), y0 = static_cast<Index>(fy0);
  const Index xa = std::clamp<Index>(x0, 0, width - 1), xb = std::clamp<Index>(x0 + 1, 0, width - 1);
  const Index ya = std::clamp<Index>(y0, 0, height - 1), yb = std::clamp<Index>(y0 + 1, 0, height - 1);
  const float w00 = (1 - ax) * (1 - ay), w01 = ax * (1 - ay), w10 = (1 - ax) * ay, w11 = ax * ay;
  const float* p00 = level + (ya * width + xa) * stride;
  const float* p01 = level + (ya * width + xb) * stride;
  const float* p10 = level + (yb * width + xa) * stride;
  const float* p11 = level + (yb * width + xb) * stride;
  for (Index c = 0; c < channels; ++c) {
    out[c] = w00 * p00[c] + w01 * p01[c] + w10 * p10[c] + w11 * p11[c];
  }
}

MatrixR<float> deformable_sample(const Eigen::Ref<const MatrixR<float>>& value,
                                 const std::vector<LevelShape>& levels,
                                 const std::vector<Index>& points, Index heads,
                                 const Eigen::Ref<const MatrixR<float>>& locs,
                                 const Eigen::Ref<const MatrixR<float>>& attn) {
  if (levels.size() != points.size()) {
    throw DimensionError("deformable_sample: " + std::to_string(levels.size()) + " levels vs " +
                         std::to_string(points.size()) + " point counts");
  }
  const Index c = value.cols(), d = c / heads, q = locs.rows();
  const Index p_total = std::accumulate(points.begin(), points.end(), Index{0});
  if (c % heads != 0 || locs.cols() != heads * p_total * 2 || attn.cols() != heads * p_total ||
      attn.rows() != q) {
    throw DimensionError("deformable_sample: locs " + dims(locs.rows(), locs.cols()) + ", attn " +
                         dims(attn.rows(), attn.cols()) + " for " + std::to_string(heads) +
                         " heads x " + std::to_string(p_total) + " points");
  }
  const Index total = levels.back().start + levels.back().tokens();
  if (value.rows() != total) throw DimensionError("deformable_sample: value rows vs level shapes");

  MatrixR<float> out = MatrixR<float>::Zero(q, c);
  parallel_for(q, [&](Index b, Index e) {
    std::vector<float> tmp(static_cast<std::size_t>(d));
    for (Index i = b; i < e; ++i) {
      for (Index h = 0; h < heads; ++h) {
        Index slot = h * p_total;
        float* dst = out.data() + i * c + h * d;
        for (std::size_t l = 0; l < levels.size(); ++l) {
          const LevelShape& s = levels[l];
          const float* base = value.data() + s.start * value.outerStride() + h * d;
          for (Index p = 0; p < points[l]; ++p, ++slot) {
            bilinear_sample(base, s.height, s.width, value.outerStride(), d, locs(i, 2 * slot),
                            locs(i, 2 * slot + 1), tmp.data());
            const float a = attn(i, slot);
            for (Index k = 0; k < d; ++k) dst[k] += a * tmp[static_cast<std::size_t>(k)];
          }
        }
      }
    }
  });
  return out;
}

MatrixR<float> sampling_locations(const Eigen::Ref<const MatrixR<float>>& offsets,
                                  const Eigen::Ref<const MatrixR<float>>& refs,
                                  const std::vector<Index>& points, Index heads) {
  const Index p_total = std::accumulate(points.begin(), points.end(), Index{0});
  if (refs.cols() != 4 || refs.rows() != offsets.rows() || offsets.cols() != heads * p_total * 2) {
    throw DimensionError("sampling_locations: offsets " + dims(offsets.rows(), offsets.cols()) +
                         ", refs " + dims(refs.rows(), refs.cols()));
  }
  MatrixR<float> locs(offsets.rows(), offsets.cols());
  for (Index i = 0; i < offsets.rows(); ++i) {
    Index slot = 0;
    for (Index h = 0; h < heads; ++h) {
      for (Index np : points) {
        for (Index p = 0; p < np; ++p, ++slot) {
          const float n = static_cast<float>(np);
          locs(i, 2 * slot) = refs(i, 0) + offsets(i, 2 * slot) / n * refs(i, 2) * 0.5f;
          locs(i, 2 * slot + 1) = refs(i, 1) + offsets(i, 2 * slot + 1) / n * refs(i, 3) * 0.5f;
        }
      }
    }
  }
  return locs;
}

MatrixR<float> sampling_weights(const Eigen::Ref<const MatrixR<float>>& logits, Index heads) {
  if (heads < 1 || logits.cols() % heads != 0) {
    throw DimensionError("sampling_weights: " + std::to_string(logits.cols()) +
                         " columns not divisible by " + std::to_string(heads) + " heads");
  }
  MatrixR<float> w = logits;
  softmax_inplace(std::span<float>(w.data(), static_cast<std::size_t>(w.size())), w.cols() / heads);
  return w;
}

MatrixR<float> deformable_cross_attn(const Eigen::Ref<const MatrixR<float>>& query,
                                     const Eigen::Ref<const MatrixR<float>>& refs,
                                     const Eigen::Ref<const MatrixR<float>>& memory,
                                     const std::vector<LevelShape>& levels,
                                     const DecoderSpec& spec, const DeformAttnWeights& w) {
  const MatrixR<float> value = forward(w.value_proj, memory);
  const MatrixR<float> locs =
      sampling_locations(forward(w.offsets, query), refs, spec.points, spec.heads);
  const MatrixR<float> attn = sampling_weights(forward(w.weights, query), spec.heads);
  return forward(w.out_proj, deformable_sample(value, levels, spec.points, spec.heads, locs, attn));
}

MatrixR<float> self_attention(const Eigen::Ref<const MatrixR<float>>& qk,
                              const Eigen::Ref<const MatrixR<float>>& v, Index heads,
                              const Linear& in_proj, const Linear& out_proj) {
  const Index c = qk.cols(), n = qk.rows();
  if (v.rows() != n || v.cols() != c || in_proj.out() != 3 * c || c % heads != 0) {
    throw DimensionError("self_attention: qk " + dims(n, c) + ", v " + dims(v.rows(), v.cols()));
  }
  const MatrixR<float> qk_proj = forward(in_proj, qk);
  const MatrixR<float> v_proj = forward(in_proj, v);
  const Index d = c / heads;
  const float scale = 1.f / std::sqrt(static_cast<float>(d));
  MatrixR<float> out(n, c);
  parallel_for(heads, [&](Index hb, Index he) {
    for (Index h = hb; h < he; ++h) {
      MatrixR<float> s = (qk_proj.middleCols(h * d, d) * qk_proj.middleCols(c + h * d, d).transpose()) * scale;
      softmax_inplace(std::span<float>(s.data(), static_cast<std::size_t>(s.size())), n);
      out.middleCols(h * d, d) = s * v_proj.middleCols(2 * c + h * d, d);
    }
  });
  return forward(out_proj, out);
}

DetectionSet decoder_layer(LayerState& state, const Eigen::Ref<const MatrixR<float>>& memory,
                           const std::vector<LevelShape>& levels, const DecoderSpec& spec,
                           const Mlp& query_pos, const DecoderLayerWeights& w, Index layer_index) {
  MatrixR<float>& x = state.queries;
  const MatrixR<float> pos = forward(query_pos, state.refs);

  MatrixR<float> with_pos = x + pos;
  x += self_attention(with_pos, x, spec.heads, w.self_in, w.self_out);
  forward_inplace(w.norm1, x);

  with_pos = x + pos;
  x += deformable_cross_attn(with_pos, state.refs, memory, levels, spec, w.cross);
  forward_inplace(w.norm2, x);

  x += forward(w.ffn, x);
  forward_inplace(w.norm3, x);

  DetectionSet det;
  det.layer_index = layer_index;
  det.logits = forward(w.score_head, x);
  const MatrixR<float> delta = forward(w.box_head, x);
  MatrixR<float> refs(state.refs.rows(), 4);
  for (Index i = 0; i < refs.rows(); ++i) {
    for (Index j = 0; j < 4; ++j) refs(i, j) = sigmoid(delta(i, j) + inverse_sigmoid(state.refs(i, j)));
  }
  state.refs = refs;
  det.boxes = std::move(refs);
  return det;
}

std::vector<DetectionSet> decode(const Memory& memory, Index item, const DecoderSpec& spec,
                                 const DecoderWeights& w, Index n_layers) {
  if (n_layers < 1 || n_layers > spec.layers_trained) {
    throw ConfigError("decode: n_layers " + std::to_string(n_layers) + " outside [1, " +
                      std::to_string(spec.layers_trained) + "]");
  }
  if (n_layers > static_cast<Index>(w.layers.size())) {
    throw ConfigError("decode: only " + std::to_string(w.layers.size()) + " decoder layers loaded");
  }
  if (memory.channels != spec.hidden_dim) {
    throw DimensionError("decode: memory channels " + std::to_string(memory.channels) +
                         " vs hidden_dim " + std::to_string(spec.hidden_dim));
  }
  QuerySelection sel = select_queries(memory, item, w.select, spec.queries);
  LayerState state{std::move(sel.queries), std::move(sel.refs)};
  const MatrixR<float> mem = memory.item(item);
  std::vector<DetectionSet> sets;
  for (Index i = 0; i < n_layers; ++i) {
    sets.push_back(decoder_layer(state, mem, memory.levels, spec, w.query_pos,
                                 w.layers[static_cast<std::size_t>(i)], i));
  }
  return sets;
}

void write_detections_csv(std::ostream& os, std::span<const DetectionSet> sets) {
  os << "layer_index,class_id,score,cx,cy,w,h\n";
  for (const DetectionSet& s : sets) {
    for (Index q = 0; q < s.logits.rows(); ++q) {
      Index cls = 0;
      const float best = s.logits.row(q).maxCoeff(&cls);
      os << s.layer_index << ',' << cls << ',' << sigmoid(best);
      for (Index j = 0; j < 4; ++j) os << ',' << s.boxes(q, j);
      os << '\n';
    }
  }
}

}  // namespace ledetr
