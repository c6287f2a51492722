#pragma once

// 2D neighborhood attention over channel-last token maps.
//
// Token maps are Tensor4 values with extents read as (N, H, W, C), C being
// heads * head_dim. Each query attends to a k x k window of keys (optionally
// dilated). Near the borders the window is clamped inward, so every query sees
// exactly k^2 keys; the relative positional bias is still looked up by the true
// query-minus-key offset, which always stays inside the (2k-1)^2 table.

#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "ledetr/ops.hpp"
#include "ledetr/parallel.hpp"
#include "ledetr/tensor.hpp"

namespace ledetr {

struct NaConfig {
  Index kernel = 7;
  Index heads = 1;
  Index head_dim = 32;
  Index dilation = 1;

  Index embed() const { return heads * head_dim; }
  /// Extent covered by one window along an axis.
  Index span() const { return (kernel - 1) * dilation + 1; }

  void validate() const {
    if (kernel < 1 || kernel % 2 == 0) {
      throw ConfigError("neighborhood kernel must be odd and >= 1, got " + std::to_string(kernel));
    }
    if (heads < 1 || head_dim < 1) throw ConfigError("heads and head_dim must be >= 1");
    if (dilation < 1) throw ConfigError("dilation must be >= 1, got " + std::to_string(dilation));
  }
};

/// Per-head relative positional bias, table extents (1, heads, 2k-1, 2k-1).
/// A table built for kernel K serves any smaller kernel through its centre.
template <typename Scalar>
struct RelBias {
  Index kernel = 1;
  Index heads = 1;
  Tensor4<Scalar> table;

  RelBias() = default;
  RelBias(Index heads_, Index kernel_)
      : kernel(kernel_), heads(heads_), table(Shape4{1, heads_, 2 * kernel_ - 1, 2 * kernel_ - 1}) {}

  /// Offsets are query minus key, in dilation steps; |dh|, |dw| < kernel.
  Scalar at(Index head, Index dh, Index dw) const {
    return table(0, head, dh + kernel - 1, dw + kernel - 1);
  }
  Scalar& at(Index head, Index dh, Index dw) {
    return table(0, head, dh + kernel - 1, dw + kernel - 1);
  }
};

/// Largest odd kernel that fits an extent; k itself when it already fits.
inline Index shrink_kernel(Index kernel, Index extent) {
  if (extent < 1) throw ParameterError("shrink_kernel: extent must be >= 1");
  if (kernel <= extent) return kernel;
  return extent % 2 == 1 ? extent : extent - 1;
}

/// First window row (or column) for a query at `pos` along an axis of `extent`.
inline Index window_start(Index pos, Index extent, const NaConfig& cfg) {
  const Index span = cfg.span();
  if (span > extent) {
    throw WindowError("neighborhood span " + std::to_string(span) + " (kernel " +
                      std::to_string(cfg.kernel) + ", dilation " + std::to_string(cfg.dilation) +
                      ") exceeds feature extent " + std::to_string(extent));
  }
  return std::clamp(pos - (cfg.kernel / 2) * cfg.dilation, Index{0}, extent - span);
}

struct WindowOrigin {
  Index h0 = 0;
  Index w0 = 0;
  friend bool operator==(const WindowOrigin&, const WindowOrigin&) = default;
};

inline WindowOrigin neighborhood_origin(Index h, Index w, Index height, Index width,
                                        const NaConfig& cfg) {
  return {window_start(h, height, cfg), window_start(w, width, cfg)};
}

/// Logit multiplies of one NA forward: H*W*heads*k^2*d. Aggregation costs the same.
inline Index na_logit_macs(Index height, Index width, const NaConfig& cfg) {
  return height * width * cfg.heads * cfg.kernel * cfg.kernel * cfg.head_dim;
}

template <typename Scalar>
struct NaOutput {
  Tensor4<Scalar> out;
  /// Softmax weights, extents (N, heads, H*W, k*k), keys row-major from the window origin.
  Tensor4<Scalar> attn;
};

namespace detail {

template <typename Scalar>
void check_na_inputs(const Tensor4<Scalar>& q, const Tensor4<Scalar>& k,
                     const Tensor4<Scalar>& v, const RelBias<Scalar>& bias, const NaConfig& cfg) {
  cfg.validate();
  if (q.shape() != k.shape() || q.shape() != v.shape()) {
    throw DimensionError("na: q/k/v shapes differ: " + q.shape().str() + ", " + k.shape().str() +
                         ", " + v.shape().str());
  }
  if (q.w() != cfg.embed()) {
    throw DimensionError("na: channel extent " + std::to_string(q.w()) + " != heads*head_dim " +
                         std::to_string(cfg.embed()));
  }
  if (bias.heads != cfg.heads || bias.kernel < cfg.kernel) {
    throw DimensionError("na: bias table (heads " + std::to_string(bias.heads) + ", kernel " +
                         std::to_string(bias.kernel) + ") does not cover config");
  }
  window_start(0, q.c(), cfg);
  window_start(0, q.h(), cfg);
}

template <typename Scalar>
void na_kernel(const Tensor4<Scalar>& q, const Tensor4<Scalar>& k, const Tensor4<Scalar>& v,
               const RelBias<Scalar>& bias, const NaConfig& cfg, Tensor4<Scalar>& out,
               Tensor4<Scalar>* attn) {
  const Index height = q.c(), width = q.h(), channels = q.w();
  const Index kk = cfg.kernel, dil = cfg.dilation, d = cfg.head_dim, heads = cfg.heads;
  const Scalar scale = Scalar(1) / std::sqrt(Scalar(d));
  parallel_for(q.n() * heads * height, [&](Index b, Index e) {
    std::vector<Scalar> logits(static_cast<std::size_t>(kk * kk));
    for (Index t = b; t < e; ++t) {
      const Index n = t / (heads * height);
      const Index head = (t / height) % heads;
      const Index qh = t % height;
      const Index h0 = window_start(qh, height, cfg);
      for (Index qw = 0; qw < width; ++qw) {
        const Index w0 = window_start(qw, width, cfg);
        const Index qoff = ((n * height + qh) * width + qw) * channels + head * d;
        const Scalar* qp = q.data() + qoff;
        for (Index i = 0; i < kk; ++i) {
          const Index kh = h0 + i * dil;
          const Index dh = (qh - kh) / dil;
          for (Index j = 0; j < kk; ++j) {
            const Index kw = w0 + j * dil;
            const Scalar* kp = k.data() + ((n * height + kh) * width + kw) * channels + head * d;
            Scalar dot = 0;
            for (Index c = 0; c < d; ++c) dot += qp[c] * kp[c];
            logits[static_cast<std::size_t>(i * kk + j)] =
                (dot + bias.at(head, dh, (qw - kw) / dil)) * scale;
          }
        }
        softmax_inplace(std::span<Scalar>(logits), kk * kk);
        Scalar* op = out.data() + qoff;
        for (Index c = 0; c < d; ++c) op[c] = 0;
        for (Index i = 0; i < kk; ++i) {
          for (Index j = 0; j < kk; ++j) {
            const Scalar a = logits[static_cast<std::size_t>(i * kk + j)];
            const Scalar* vp =
                v.data() + ((n * height + h0 + i * dil) * width + w0 + j * dil) * channels +
                head * d;
            for (Index c = 0; c < d; ++c) op[c] += a * vp[c];
          }
        }
        if (attn != nullptr) {
          Scalar* ap = attn->data() + ((n * heads + head) * height * width + qh * width + qw) *
                                          kk * kk;
          std::copy(logits.begin(), logits.end(), ap);
        }
      }
    }
  });
}

}  // namespace detail

/// NA_k(i) = softmax((Q_i K_rho(i)^T + B) / sqrt(d)) V_rho(i), per head, heads concatenated.
template <typename Scalar>
NaOutput<Scalar> na_forward(const Tensor4<Scalar>& q, const Tensor4<Scalar>& k,
                            const Tensor4<Scalar>& v, const RelBias<Scalar>& bias,
                            const NaConfig& cfg) {
  detail::check_na_inputs(q, k, v, bias, cfg);
  NaOutput<Scalar> res{Tensor4<Scalar>(q.shape()),
                       Tensor4<Scalar>(Shape4{q.n(), cfg.heads, q.c() * q.h(),
                                              cfg.kernel * cfg.kernel})};
  detail::na_kernel(q, k, v, bias, cfg, res.out, &res.attn);
  return res;
}

/// Forward without keeping attention weights (inference path).
template <typename Scalar>
Tensor4<Scalar> na_apply(const Tensor4<Scalar>& q, const Tensor4<Scalar>& k,
                         const Tensor4<Scalar>& v, const RelBias<Scalar>& bias,
                         const NaConfig& cfg) {
  detail::check_na_inputs(q, k, v, bias, cfg);
  Tensor4<Scalar> out(q.shape());
  detail::na_kernel(q, k, v, bias, cfg, out, static_cast<Tensor4<Scalar>*>(nullptr));
  return out;
}

/// Forward inputs plus cached weights: the state na_backward consumes.
template <typename Scalar>
struct NaTape {
  NaConfig cfg;
  Tensor4<Scalar> q, k, v;
  RelBias<Scalar> bias;
  NaOutput<Scalar> fwd;
};

template <typename Scalar>
NaTape<Scalar> na_forward_tape(const Tensor4<Scalar>& q, const Tensor4<Scalar>& k,
                               const Tensor4<Scalar>& v, const RelBias<Scalar>& bias,
                               const NaConfig& cfg) {
  return NaTape<Scalar>{cfg, q, k, v, bias, na_forward(q, k, v, bias, cfg)};
}

template <typename Scalar>
struct NaGrads {
  Tensor4<Scalar> d_q, d_k, d_v;
  RelBias<Scalar> d_bias;
};

/// Analytic gradients of sum(d_out * NA(q, k, v, bias)).
template <typename Scalar>
NaGrads<Scalar> na_backward(const NaTape<Scalar>& tape, const Tensor4<Scalar>& d_out) {
  const NaConfig& cfg = tape.cfg;
  const Tensor4<Scalar>& attn = tape.fwd.attn;
  if (d_out.shape() != tape.fwd.out.shape() ||
      attn.shape() != Shape4{tape.q.n(), cfg.heads, tape.q.c() * tape.q.h(),
                             cfg.kernel * cfg.kernel}) {
    throw DimensionError("na_backward: d_out " + d_out.shape().str() + " vs cached output " +
                         tape.fwd.out.shape().str());
  }
  const Index height = tape.q.c(), width = tape.q.h(), channels = tape.q.w();
  const Index kk = cfg.kernel, dil = cfg.dilation, d = cfg.head_dim;
  const Scalar scale = Scalar(1) / std::sqrt(Scalar(d));
  NaGrads<Scalar> g{Tensor4<Scalar>(tape.q.shape()), Tensor4<Scalar>(tape.q.shape()),
                    Tensor4<Scalar>(tape.q.shape()), RelBias<Scalar>(cfg.heads, tape.bias.kernel)};
  // Heads own disjoint channel slices and bias planes.
  parallel_for(cfg.heads, [&](Index hb, Index he) {
    std::vector<Scalar> ds(static_cast<std::size_t>(kk * kk));
    for (Index head = hb; head < he; ++head) {
      for (Index n = 0; n < tape.q.n(); ++n) {
        for (Index qh = 0; qh < height; ++qh) {
          const Index h0 = window_start(qh, height, cfg);
          for (Index qw = 0; qw < width; ++qw) {
            const Index w0 = window_start(qw, width, cfg);
            const Index qoff = ((n * height + qh) * width + qw) * channels + head * d;
            const Scalar* a =
                attn.data() + ((n * cfg.heads + head) * height * width + qh * width + qw) * kk * kk;
            const Scalar* dout = d_out.data() + qoff;
            Scalar weighted = 0;
            for (Index i = 0; i < kk; ++i) {
              for (Index j = 0; j < kk; ++j) {
                const Index koff = ((n * height + h0 + i * dil) * width + w0 + j * dil) * channels +
                                   head * d;
                const Scalar* vp = tape.v.data() + koff;
                Scalar* dv = g.d_v.data() + koff;
                const Scalar aj = a[i * kk + j];
                Scalar da = 0;
                for (Index c = 0; c < d; ++c) {
                  da += dout[c] * vp[c];
                  dv[c] += aj * dout[c];
                }
                ds[static_cast<std::size_t>(i * kk + j)] = da;
                weighted += aj * da;
              }
            }
            const Scalar* qp = tape.q.data() + qoff;
            Scalar* dq = g.d_q.data() + qoff;
            for (Index i = 0; i < kk; ++i) {
              const Index kh = h0 + i * dil;
              for (Index j = 0; j < kk; ++j) {
                const Index kw = w0 + j * dil;
                const Scalar s =
                    a[i * kk + j] * (ds[static_cast<std::size_t>(i * kk + j)] - weighted) * scale;
                const Index koff = ((n * height + kh) * width + kw) * channels + head * d;
                const Scalar* kp = tape.k.data() + koff;
                Scalar* dk = g.d_k.data() + koff;
                for (Index c = 0; c < d; ++c) {
                  dq[c] += s * kp[c];
                  dk[c] += s * qp[c];
                }
                g.d_bias.at(head, (qh - kh) / dil, (qw - kw) / dil) += s;
              }
            }
          }
        }
      }
    }
  });
  return g;
}

/// Key-allowed matrix over flattened H*W tokens (row = query, column = key).
struct NeighborhoodMask {
  Index height = 1;
  Index width = 1;
  std::vector<std::uint8_t> allowed;

  Index tokens() const { return height * width; }
  bool at(Index query, Index key) const {
    return allowed[static_cast<std::size_t>(query * tokens() + key)] != 0;
  }
};

inline NeighborhoodMask full_mask(Index height, Index width) {
  return {height, width, std::vector<std::uint8_t>(static_cast<std::size_t>(height * width * height * width), 1)};
}

/// Marks each query's k x k (dilated, clamped) window.
inline NeighborhoodMask neighborhood_mask(Index height, Index width, const NaConfig& cfg) {
  cfg.validate();
  NeighborhoodMask m{height, width,
                     std::vector<std::uint8_t>(static_cast<std::size_t>(height * width * height * width), 0)};
  for (Index qh = 0; qh < height; ++qh) {
    for (Index qw = 0; qw < width; ++qw) {
      const WindowOrigin o = neighborhood_origin(qh, qw, height, width, cfg);
      for (Index i = 0; i < cfg.kernel; ++i) {
        for (Index j = 0; j < cfg.kernel; ++j) {
          const Index key = (o.h0 + i * cfg.dilation) * width + o.w0 + j * cfg.dilation;
          m.allowed[static_cast<std::size_t>((qh * width + qw) * m.tokens() + key)] = 1;
        }
      }
    }
  }
  return m;
}

/// Bias lookup for the dense path: relative offset of flattened query/key tokens.
template <typename Scalar>
auto relative_bias_gather(const RelBias<Scalar>& bias, Index width, Index dilation = 1) {
  return [&bias, width, dilation](Index head, Index query, Index key) {
    const Index dh = (query / width - key / width) / dilation;
    const Index dw = (query % width - key % width) / dilation;
    return bias.at(head, dh, dw);
  };
}

inline auto no_bias() {
  return [](Index, Index, Index) { return 0.0; };
}

/// Full O(n^2) attention with masked-out logits excluded from the softmax.
/// bias_gather(head, query, key) supplies the additive bias for allowed pairs.
template <typename Scalar, typename BiasFn>
Tensor4<Scalar> dense_attention_oracle(const Tensor4<Scalar>& q, const Tensor4<Scalar>& k,
                                       const Tensor4<Scalar>& v, const NeighborhoodMask& mask,
                                       Index heads, BiasFn&& bias_gather) {
  if (q.shape() != k.shape() || q.shape() != v.shape()) {
    throw DimensionError("dense attention: q/k/v shapes differ");
  }
  if (heads < 1 || q.w() % heads != 0) throw DimensionError("dense attention: bad head split");
  const Index tokens = q.c() * q.h();
  if (mask.height != q.c() || mask.width != q.h()) {
    throw DimensionError("dense attention: mask extents differ from token map");
  }
  const Index d = q.w() / heads;
  const Scalar scale = Scalar(1) / std::sqrt(Scalar(d));
  Tensor4<Scalar> out(q.shape());
  for (Index n = 0; n < q.n(); ++n) {
    for (Index head = 0; head < heads; ++head) {
      using Strided = Eigen::Map<const MatrixR<Scalar>, 0, Eigen::OuterStride<>>;
      const Index base = n * tokens * q.w() + head * d;
      Strided qh(q.data() + base, tokens, d, Eigen::OuterStride<>(q.w()));
      Strided kh(k.data() + base, tokens, d, Eigen::OuterStride<>(q.w()));
      Strided vh(v.data() + base, tokens, d, Eigen::OuterStride<>(q.w()));
      MatrixR<Scalar> kt = kh.transpose();
      MatrixR<Scalar> logits = matmul<Scalar>(MatrixR<Scalar>(qh), kt);
      parallel_for(tokens, [&](Index r0, Index r1) {
        for (Index i = r0; i < r1; ++i) {
          Scalar m = -std::numeric_limits<Scalar>::infinity();
          for (Index j = 0; j < tokens; ++j) {
            if (mask.at(i, j)) {
              logits(i, j) = (logits(i, j) + static_cast<Scalar>(bias_gather(head, i, j))) * scale;
              m = std::max(m, logits(i, j));
            }
          }
          Scalar sum = 0;
          for (Index j = 0; j < tokens; ++j) {
            logits(i, j) = mask.at(i, j) ? std::exp(logits(i, j) - m) : Scalar(0);
            sum += logits(i, j);
          }
          logits.row(i) /= sum;
        }
      });
      MatrixR<Scalar> o = matmul<Scalar>(logits, MatrixR<Scalar>(vh));
      Eigen::Map<MatrixR<Scalar>, 0, Eigen::OuterStride<>>(out.data() + base, tokens, d,
                                                          Eigen::OuterStride<>(q.w())) = o;
    }
  }
  return out;
}

/// Plain softmax attention over every token, no bias.
template <typename Scalar>
Tensor4<Scalar> dense_attention(const Tensor4<Scalar>& q, const Tensor4<Scalar>& k,
                                const Tensor4<Scalar>& v, Index heads) {
  return dense_attention_oracle(q, k, v, full_mask(q.c(), q.h()), heads, no_bias());
}

}  // namespace ledetr
