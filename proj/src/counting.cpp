#include "ledetr/counting.hpp"

#include <iomanip>
#include <ostream>

namespace ledetr {

namespace {

struct Extent {
  Index h;
  Index w;
};

Index conv_macs(const ConvBn& c, Extent& e) {
  const Index ho = conv_out_extent(e.h, c.weight.h(), c.opt.stride, c.opt.pad);
  const Index wo = conv_out_extent(e.w, c.weight.w(), c.opt.stride, c.opt.pad);
  e = {ho, wo};
  return c.weight.size() * ho * wo;
}

Index linear_macs(const Linear& l, Index rows) { return rows * l.in() * l.out(); }

Index mlp_macs(const Mlp& m, Index rows) {
  Index total = 0;
  for (const Linear& l : m.layers) total += linear_macs(l, rows);
  return total;
}

Index mbconv_macs(const MbConvWeights& w, Extent& e) {
  return conv_macs(w.expand, e) + conv_macs(w.depthwise, e) + conv_macs(w.project, e);
}

Index mixer_macs(const NaMixerWeights& w, const NaConfig& cfg, bool shrink, Extent e) {
  const Index tokens = e.h * e.w;
  const NaConfig eff = effective_na_config(cfg, e.h, e.w, shrink);
  return linear_macs(w.qkv, tokens) + 2 * na_logit_macs(e.h, e.w, eff) + linear_macs(w.proj, tokens);
}

Index block_macs(const Block& b, Extent& e) {
  return std::visit(
      [&](const auto& w) -> Index {
        using W = std::remove_cvref_t<decltype(w)>;
        if constexpr (std::is_same_v<W, DsConvWeights>) {
          return conv_macs(w.depthwise, e) + conv_macs(w.pointwise, e);
        } else if constexpr (std::is_same_v<W, FusedMbConvWeights>) {
          Index m = conv_macs(w.expand, e);
          if (w.project) m += conv_macs(*w.project, e);
          return m;
        } else if constexpr (std::is_same_v<W, MbConvWeights>) {
          return mbconv_macs(w, e);
        } else {
          const Index m = mixer_macs(w.mixer, *b.spec.na, b.spec.shrink_window, e);
          return m + mbconv_macs(w.ffn, e);
        }
      },
      b.weights);
}

Index node_macs(const FusionNode& node, Extent e) {
  Index m = 0;
  for (const FusionUnit& u : node) m += conv_macs(u.first, e) + conv_macs(u.second, e);
  return m;
}

template <typename M>
Index params_of(const M& m) {
  return count_params(m);
}

}  // namespace

OpCount count_conv2d(Index in, Index out, Index kernel, Index stride, Index groups, Index height,
                     Index width, bool bias) {
  if (groups < 1 || in % groups != 0 || out % groups != 0) {
    throw DimensionError("count_conv2d: channels not divisible by groups");
  }
  const Index pad = kernel / 2;
  const Index ho = conv_out_extent(height, kernel, stride, pad);
  const Index wo = conv_out_extent(width, kernel, stride, pad);
  const Index weights = out * (in / groups) * kernel * kernel;
  return {weights + (bias ? out : 0), weights * ho * wo};
}

CountReport count_model(const LeDetr& model, Index height, Index width) {
  if (height % 32 != 0 || width % 32 != 0) {
    throw DimensionError("count_model: input " + std::to_string(height) + "x" +
                         std::to_string(width) + " not divisible by 32");
  }
  CountReport r;
  r.scale = model.spec.scale;
  r.input_h = height;
  r.input_w = width;
  r.inference_layers = model.spec.decoder.layers_inference;

  Extent e{height, width};
  std::array<Extent, 5> level_out{};
  for (int level = 0; level < 5; ++level) {
    const auto& blocks = model.backbone.levels[static_cast<std::size_t>(level)];
    OpCount c;
    for (const Block& b : blocks) {
      c.params += count_params(b);
      c.macs += block_macs(b, e);
    }
    level_out[static_cast<std::size_t>(level)] = e;
    r.lines.push_back({"backbone." + level_name(level), c});
  }

  const EncoderSpec& es = model.spec.encoder;
  const EncoderWeights& ew = model.encoder;
  const Extent e3 = level_out[2], e4 = level_out[3], e5 = level_out[4];
  {
    OpCount c;
    const NaifiWeights& n = ew.naifi;
    c.params = params_of(n.input_proj) + count_params(n.mixer) + params_of(n.ffn_norm) + params_of(n.ffn);
    Extent x = e5;
    c.macs = conv_macs(n.input_proj, x) + mixer_macs(n.mixer, es.naifi_na(), true, x) +
             mlp_macs(n.ffn, x.h * x.w);
    r.lines.push_back({"encoder.naifi", c});
  }
  {
    OpCount c;
    Extent a = e3, b = e4;
    c.params = params_of(ew.input_proj[0]) + params_of(ew.input_proj[1]);
    c.macs = conv_macs(ew.input_proj[0], a) + conv_macs(ew.input_proj[1], b);
    r.lines.push_back({"encoder.input_proj", c});
  }
  {
    OpCount c;
    for (std::size_t i = 0; i < 2; ++i) {
      c.params += params_of(ew.lateral[i]) + count_params(ew.top_down[i]) +
                  params_of(ew.downsample[i]) + count_params(ew.bottom_up[i]);
    }
    Extent l5 = e5, l4 = e4, d3 = e3, d4 = e4;
    c.macs = conv_macs(ew.lateral[0], l5) + node_macs(ew.top_down[0], e4) +
             conv_macs(ew.lateral[1], l4) + node_macs(ew.top_down[1], e3) +
             conv_macs(ew.downsample[0], d3) + node_macs(ew.bottom_up[0], e4) +
             conv_macs(ew.downsample[1], d4) + node_macs(ew.bottom_up[1], e5);
    r.lines.push_back({"encoder.fusion", c});
  }

  const DecoderSpec& ds = model.spec.decoder;
  const DecoderWeights& dw = model.decoder;
  const Index tokens = e3.h * e3.w + e4.h * e4.w + e5.h * e5.w;
  const Index q = ds.queries, hid = ds.hidden_dim, layers = ds.layers_inference;
  {
    OpCount c;
    const QuerySelectWeights& s = dw.select;
    c.params = params_of(s.enc_output) + params_of(s.enc_norm) + params_of(s.enc_score) +
               params_of(s.enc_bbox);
    c.macs = linear_macs(s.enc_output, tokens) + linear_macs(s.enc_score, tokens) +
             mlp_macs(s.enc_bbox, q);
    r.lines.push_back({"decoder.query_select", c});
  }
  r.lines.push_back({"decoder.query_pos", {params_of(dw.query_pos), layers * mlp_macs(dw.query_pos, q)}});
  for (Index i = 0; i < layers; ++i) {
    const DecoderLayerWeights& l = dw.layers[static_cast<std::size_t>(i)];
    OpCount c;
    c.params = count_params(l);
    const Index sampled = q * ds.heads * ds.total_points() * ds.head_dim();
    c.macs = linear_macs(l.self_in, q) + 2 * q * q * hid + linear_macs(l.self_out, q) +
             linear_macs(l.cross.value_proj, tokens) + linear_macs(l.cross.offsets, q) +
             linear_macs(l.cross.weights, q) + 5 * sampled + linear_macs(l.cross.out_proj, q) +
             mlp_macs(l.ffn, q) + linear_macs(l.score_head, q) + mlp_macs(l.box_head, q);
    r.lines.push_back({"decoder.layer" + std::to_string(i), c});
  }

  for (const CountLine& line : r.lines) {
    r.params += line.count.params;
    r.macs += line.count.macs;
  }
  return r;
}

void print_count_report(std::ostream& os, const CountReport& r) {
  const auto flags = os.flags();
  const auto prec = os.precision();
  os << "model " << r.scale << "  input " << r.input_h << "x" << r.input_w
     << "  inference_layers " << r.inference_layers << "\n";
  os << std::left << std::setw(24) << "module" << std::right << std::setw(14) << "params"
     << std::setw(18) << "MACs" << "\n";
  for (const CountLine& l : r.lines) {
    os << std::left << std::setw(24) << l.module << std::right << std::setw(14) << l.count.params
       << std::setw(18) << l.count.macs << "\n";
  }
  os << std::left << std::setw(24) << "total" << std::right << std::setw(14) << r.params
     << std::setw(18) << r.macs << "\n";
  os << std::fixed << std::setprecision(3);
  os << "params (M): " << static_cast<double>(r.params) / 1e6 << "\n";
  os << "GMACs (1 MAC = 1 op): " << r.gmacs() << "\n";
  os << "GFLOPs (1 MAC = 2 FLOPs): " << r.gflops() << "\n";
  os.flags(flags);
  os.precision(prec);
}

}  // namespace ledetr
