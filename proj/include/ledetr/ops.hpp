#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "ledetr/parallel.hpp"
#include "ledetr/rng.hpp"
#include "ledetr/tensor.hpp"

namespace ledetr {

// Row tile of the blocked GEMM paths. Fixed, so results never depend on the
// worker count.
inline constexpr Index kGemmRowTile = 64;

inline std::string dims(Index rows, Index cols) {
  return std::to_string(rows) + "x" + std::to_string(cols);
}

/// c = a * b, accumulated in Scalar.
template <typename Scalar>
MatrixR<Scalar> matmul(const Eigen::Ref<const MatrixR<Scalar>>& a,
                       const Eigen::Ref<const MatrixR<Scalar>>& b) {
  if (a.cols() != b.rows()) {
    throw DimensionError("matmul: " + dims(a.rows(), a.cols()) + " vs " +
                         dims(b.rows(), b.cols()));
  }
  MatrixR<Scalar> c(a.rows(), b.cols());
  const Index tiles = (a.rows() + kGemmRowTile - 1) / kGemmRowTile;
  parallel_for(tiles, [&](Index t0, Index t1) {
    for (Index t = t0; t < t1; ++t) {
      const Index r0 = t * kGemmRowTile;
      const Index rows = std::min(kGemmRowTile, a.rows() - r0);
      c.middleRows(r0, rows).noalias() = a.middleRows(r0, rows) * b;
    }
  });
  return c;
}

/// Fully connected layer over token rows: x (T x in) -> T x out. The weight is
/// stored as an (out, in, 1, 1) tensor; bias as (1, out, 1, 1) or empty.
template <typename Scalar>
MatrixR<Scalar> linear(const Eigen::Ref<const MatrixR<Scalar>>& x, const Tensor4<Scalar>& weight,
                       std::span<const Scalar> bias = {}) {
  const Index out = weight.n();
  const Index in = weight.c() * weight.h() * weight.w();
  if (x.cols() != in) {
    throw DimensionError("linear: input " + dims(x.rows(), x.cols()) + " vs weight " +
                         weight.shape().str());
  }
  if (!bias.empty() && static_cast<Index>(bias.size()) != out) {
    throw DimensionError("linear: bias length " + std::to_string(bias.size()) + " vs " +
                         std::to_string(out) + " outputs");
  }
  ConstMapR<Scalar> w(weight.data(), out, in);
  MatrixR<Scalar> y(x.rows(), out);
  const Index tiles = (x.rows() + kGemmRowTile - 1) / kGemmRowTile;
  parallel_for(tiles, [&](Index t0, Index t1) {
    for (Index t = t0; t < t1; ++t) {
      const Index r0 = t * kGemmRowTile;
      const Index rows = std::min(kGemmRowTile, x.rows() - r0);
      y.middleRows(r0, rows).noalias() = x.middleRows(r0, rows) * w.transpose();
      if (!bias.empty()) {
        for (Index r = r0; r < r0 + rows; ++r) {
          for (Index j = 0; j < out; ++j) y(r, j) += bias[static_cast<std::size_t>(j)];
        }
      }
    }
  });
  return y;
}

/// Stable softmax over consecutive slices of axis_len values, in place.
template <typename Scalar>
void softmax_inplace(std::span<Scalar> x, Index axis_len) {
  if (axis_len < 1) throw ParameterError("softmax: axis length must be >= 1");
  if (static_cast<Index>(x.size()) % axis_len != 0) {
    throw DimensionError("softmax: " + std::to_string(x.size()) +
                         " values do not split into rows of " + std::to_string(axis_len));
  }
  for (std::size_t r0 = 0; r0 < x.size(); r0 += static_cast<std::size_t>(axis_len)) {
    auto row = x.subspan(r0, static_cast<std::size_t>(axis_len));
    Scalar m = -std::numeric_limits<Scalar>::infinity();
    for (Scalar v : row) {
      if (std::isnan(v)) throw NumericError("softmax: NaN input");
      m = std::max(m, v);
    }
    Scalar sum = 0;
    for (Scalar& v : row) {
      v = std::exp(v - m);
      sum += v;
    }
    const Scalar inv = Scalar(1) / sum;
    for (Scalar& v : row) v *= inv;
  }
}

template <typename Scalar>
Tensor4<Scalar> softmax_lastdim(const Tensor4<Scalar>& x, Index axis_len) {
  Tensor4<Scalar> y = x;
  softmax_inplace(y.span(), axis_len);
  return y;
}

struct Conv2dOptions {
  Index stride = 1;
  Index pad = 0;
  Index groups = 1;
};

inline Index conv_out_extent(Index in, Index kernel, Index stride, Index pad) {
  return (in + 2 * pad - kernel) / stride + 1;
}

/// 2D cross-correlation. weight is (OC, IC/groups, kh, kw); bias is empty or OC long.
///
/// Grouped convolutions with one input and one output channel per group take
/// a direct depthwise path; everything else is im2col + GEMM over fixed-size
/// column chunks.
template <typename Scalar>
Tensor4<Scalar> conv2d(const Tensor4<Scalar>& x, const Tensor4<Scalar>& weight,
                       const Conv2dOptions& opt, std::span<const Scalar> bias = {}) {
  const Index groups = opt.groups;
  if (groups < 1 || opt.stride < 1 || opt.pad < 0) {
    throw ParameterError("conv2d: groups/stride must be >= 1 and pad >= 0");
  }
  const Index ic = x.c(), oc = weight.n(), kh = weight.h(), kw = weight.w();
  if (ic % groups != 0 || oc % groups != 0 || weight.c() * groups != ic) {
    throw DimensionError("conv2d: input " + x.shape().str() + " incompatible with weight " +
                         weight.shape().str() + " at groups=" + std::to_string(groups));
  }
  if (x.h() + 2 * opt.pad < kh || x.w() + 2 * opt.pad < kw) {
    throw DimensionError("conv2d: kernel " + dims(kh, kw) + " larger than padded input " +
                         x.shape().str());
  }
  if (!bias.empty() && static_cast<Index>(bias.size()) != oc) {
    throw DimensionError("conv2d: bias length mismatch");
  }
  const Index oh = conv_out_extent(x.h(), kh, opt.stride, opt.pad);
  const Index ow = conv_out_extent(x.w(), kw, opt.stride, opt.pad);
  const Index icg = ic / groups, ocg = oc / groups;
  const Index in_h = x.h(), in_w = x.w(), s = opt.stride, p = opt.pad;
  const Index plane = oh * ow;
  Tensor4<Scalar> y(Shape4{x.n(), oc, oh, ow});

  if (icg == 1 && ocg == 1) {
    parallel_for(x.n() * oc, [&](Index b, Index e) {
      for (Index t = b; t < e; ++t) {
        const Index n = t / oc, c = t % oc;
        const Scalar* src = x.plane(n, c);
        const Scalar* k = weight.plane(c, 0);
        Scalar* dst = y.plane(n, c);
        const Scalar b0 = bias.empty() ? Scalar(0) : bias[static_cast<std::size_t>(c)];
        for (Index oy = 0; oy < oh; ++oy) {
          for (Index ox = 0; ox < ow; ++ox) {
            Scalar acc = 0;
            for (Index ky = 0; ky < kh; ++ky) {
              const Index iy = oy * s - p + ky;
              if (iy < 0 || iy >= in_h) continue;
              for (Index kx = 0; kx < kw; ++kx) {
                const Index ix = ox * s - p + kx;
                if (ix < 0 || ix >= in_w) continue;
                acc += src[iy * in_w + ix] * k[ky * kw + kx];
              }
            }
            dst[oy * ow + ox] = acc + b0;
          }
        }
      }
    });
    return y;
  }

  const Index depth = icg * kh * kw;
  const bool pointwise = kh == 1 && kw == 1 && s == 1 && p == 0;
  const Index chunk = std::clamp<Index>((Index{1} << 18) / depth, 32, 4096);
  const Index chunks = (plane + chunk - 1) / chunk;
  using Stride = Eigen::OuterStride<>;
  parallel_for(x.n() * groups * chunks, [&](Index b, Index e) {
    MatrixR<Scalar> col;
    for (Index t = b; t < e; ++t) {
      const Index n = t / (groups * chunks);
      const Index g = (t / chunks) % groups;
      const Index c0 = (t % chunks) * chunk;
      const Index cols = std::min(chunk, plane - c0);
      ConstMapR<Scalar> wg(weight.data() + g * ocg * depth, ocg, depth);
      Eigen::Map<MatrixR<Scalar>, 0, Stride> out(y.plane(n, g * ocg) + c0, ocg, cols,
                                                  Stride(plane));
      if (pointwise) {
        Eigen::Map<const MatrixR<Scalar>, 0, Stride> src(x.plane(n, g * icg) + c0, icg, cols,
                                                         Stride(plane));
        out.noalias() = wg * src;
      } else {
        col.resize(depth, cols);
        for (Index ci = 0; ci < icg; ++ci) {
          const Scalar* src = x.plane(n, g * icg + ci);
          for (Index ky = 0; ky < kh; ++ky) {
            for (Index kx = 0; kx < kw; ++kx) {
              Scalar* row = col.data() + ((ci * kh + ky) * kw + kx) * cols;
              for (Index j = 0; j < cols; ++j) {
                const Index pos = c0 + j;
                const Index iy = (pos / ow) * s - p + ky;
                const Index ix = (pos % ow) * s - p + kx;
                row[j] = (iy >= 0 && iy < in_h && ix >= 0 && ix < in_w) ? src[iy * in_w + ix]
                                                                        : Scalar(0);
              }
            }
          }
        }
        out.noalias() = wg * col;
      }
      if (!bias.empty()) {
        for (Index o = 0; o < ocg; ++o) {
          out.row(o).array() += bias[static_cast<std::size_t>(g * ocg + o)];
        }
      }
    }
  });
  return y;
}

/// Normalizes each row to zero mean / unit variance, then applies gamma/beta.
template <typename Scalar>
void layernorm_inplace(Eigen::Ref<MatrixR<Scalar>> x, std::span<const Scalar> gamma,
                       std::span<const Scalar> beta, Scalar eps) {
  if (!(eps > 0)) throw ParameterError("layernorm: eps must be > 0");
  const Index d = x.cols();
  if (static_cast<Index>(gamma.size()) != d || static_cast<Index>(beta.size()) != d) {
    throw DimensionError("layernorm: gamma/beta length vs width " + std::to_string(d));
  }
  parallel_for(x.rows(), [&](Index r0, Index r1) {
    for (Index r = r0; r < r1; ++r) {
      Scalar mean = 0;
      for (Index j = 0; j < d; ++j) mean += x(r, j);
      mean /= Scalar(d);
      Scalar var = 0;
      for (Index j = 0; j < d; ++j) var += (x(r, j) - mean) * (x(r, j) - mean);
      var /= Scalar(d);
      const Scalar inv = Scalar(1) / std::sqrt(var + eps);
      for (Index j = 0; j < d; ++j) {
        x(r, j) = (x(r, j) - mean) * inv * gamma[static_cast<std::size_t>(j)] +
                  beta[static_cast<std::size_t>(j)];
      }
    }
  });
}

template <typename Scalar>
MatrixR<Scalar> layernorm(const Eigen::Ref<const MatrixR<Scalar>>& x,
                          std::span<const Scalar> gamma, std::span<const Scalar> beta,
                          Scalar eps) {
  MatrixR<Scalar> y = x;
  layernorm_inplace<Scalar>(y, gamma, beta, eps);
  return y;
}

template <typename Scalar>
Scalar sigmoid(Scalar v) {
  return Scalar(1) / (Scalar(1) + std::exp(-v));
}

template <typename Scalar>
Scalar inverse_sigmoid(Scalar v, Scalar eps = Scalar(1e-5)) {
  v = std::clamp(v, Scalar(0), Scalar(1));
  return std::log(std::max(v, eps) / std::max(Scalar(1) - v, eps));
}

/// x * sigmoid(x)
template <typename Scalar>
Scalar silu(Scalar v) {
  return v / (Scalar(1) + std::exp(-v));
}

template <typename Scalar>
void silu_inplace(std::span<Scalar> x) {
  for (Scalar& v : x) v = silu(v);
}

/// y[n,c] = x[n,c] * scale[c] + shift[c], optionally followed by SiLU.
template <typename Scalar>
void channel_affine_inplace(Tensor4<Scalar>& x, const Tensor4<Scalar>& scale,
                            const Tensor4<Scalar>& shift, bool activate) {
  if (scale.size() != x.c() || shift.size() != x.c()) {
    throw DimensionError("channel affine: " + std::to_string(x.c()) + " channels vs " +
                         scale.shape().str());
  }
  const Index plane = x.h() * x.w();
  parallel_for(x.n() * x.c(), [&](Index b, Index e) {
    for (Index t = b; t < e; ++t) {
      const Index c = t % x.c();
      Scalar* p = x.data() + t * plane;
      const Scalar a = scale[c], s = shift[c];
      for (Index i = 0; i < plane; ++i) {
        const Scalar v = p[i] * a + s;
        p[i] = activate ? silu(v) : v;
      }
    }
  });
}

template <typename Scalar>
void add_inplace(Tensor4<Scalar>& acc, const Tensor4<Scalar>& x) {
  if (acc.shape() != x.shape()) {
    throw DimensionError("add: " + acc.shape().str() + " vs " + x.shape().str());
  }
  for (Index i = 0; i < acc.size(); ++i) acc[i] += x[i];
}

template <typename Scalar>
Tensor4<Scalar> add(Tensor4<Scalar> a, const Tensor4<Scalar>& b) {
  add_inplace(a, b);
  return a;
}

/// Nearest-neighbour x2 upsampling of H and W.
template <typename Scalar>
Tensor4<Scalar> upsample_nearest2x(const Tensor4<Scalar>& x) {
  Tensor4<Scalar> y(Shape4{x.n(), x.c(), 2 * x.h(), 2 * x.w()});
  for (Index n = 0; n < x.n(); ++n) {
    for (Index c = 0; c < x.c(); ++c) {
      for (Index h = 0; h < y.h(); ++h) {
        for (Index w = 0; w < y.w(); ++w) y(n, c, h, w) = x(n, c, h / 2, w / 2);
      }
    }
  }
  return y;
}

/// Item n of an NCHW tensor as (H*W) x C token rows.
template <typename Scalar>
MatrixR<Scalar> to_tokens(const Tensor4<Scalar>& x, Index n) {
  return x.item_matrix(n).transpose();
}

/// Writes (H*W) x C token rows into item n of an NCHW tensor.
template <typename Scalar>
void from_tokens(const Eigen::Ref<const MatrixR<Scalar>>& tokens, Tensor4<Scalar>& x, Index n) {
  if (tokens.rows() != x.h() * x.w() || tokens.cols() != x.c()) {
    throw DimensionError("from_tokens: " + dims(tokens.rows(), tokens.cols()) + " into " +
                         x.shape().str());
  }
  x.item_matrix(n) = tokens.transpose();
}

/// Normal(0, std) samples in flat order; std must be positive.
inline Tensor4f init_normal(Rng64& rng, const Shape4& shape, double stddev) {
  if (!(stddev > 0)) throw ParameterError("init_normal: std must be > 0");
  Tensor4f t(shape);
  for (Index i = 0; i < t.size(); ++i) t[i] = static_cast<float>(rng.normal() * stddev);
  return t;
}

}  // namespace ledetr
