#include <gtest/gtest.h>

#include "ledetr/na.hpp"
#include "test_util.hpp"

namespace ledetr {
namespace {

using testing::random_tensor;

struct NaCase {
  Tensor4d q, k, v;
  RelBias<double> bias;
};

NaCase make_case(Index n, Index h, Index w, const NaConfig& cfg, std::uint64_t seed,
                 bool with_bias = true) {
  const Shape4 s{n, h, w, cfg.embed()};
  NaCase c{random_tensor<double>(s, seed), random_tensor<double>(s, seed + 1),
           random_tensor<double>(s, seed + 2), RelBias<double>(cfg.heads, cfg.kernel)};
  if (with_bias) c.bias.table = random_tensor<double>(c.bias.table.shape(), seed + 3, 0.5);
  return c;
}

/// Literal per-query evaluation of the attention formula in double; shares
/// only window_start with the kernel.
Tensor4d brute_force_na(const NaCase& c, const NaConfig& cfg) {
  const Index height = c.q.c(), width = c.q.h(), ch = c.q.w(), d = cfg.head_dim;
  Tensor4d out(c.q.shape());
  for (Index n = 0; n < c.q.n(); ++n)
    for (Index head = 0; head < cfg.heads; ++head)
      for (Index qh = 0; qh < height; ++qh)
        for (Index qw = 0; qw < width; ++qw) {
          std::vector<double> logits;
          std::vector<std::pair<Index, Index>> keys;
          const Index h0 = window_start(qh, height, cfg), w0 = window_start(qw, width, cfg);
          for (Index i = 0; i < cfg.kernel; ++i)
            for (Index j = 0; j < cfg.kernel; ++j) {
              const Index kh = h0 + i * cfg.dilation, kw = w0 + j * cfg.dilation;
              double dot = 0;
              for (Index e = 0; e < d; ++e)
                dot += c.q(n, qh, qw, head * d + e) * c.k(n, kh, kw, head * d + e);
              dot += c.bias.at(head, (qh - kh) / cfg.dilation, (qw - kw) / cfg.dilation);
              logits.push_back(dot / std::sqrt(double(d)));
              keys.emplace_back(kh, kw);
            }
          double m = -1e300, sum = 0;
          for (double l : logits) m = std::max(m, l);
          for (double& l : logits) sum += (l = std::exp(l - m));
          for (std::size_t t = 0; t < keys.size(); ++t)
            for (Index e = 0; e < d; ++e)
              out(n, qh, qw, head * d + e) +=
                  logits[t] / sum * c.v(n, keys[t].first, keys[t].second, head * d + e);
        }
  return out;
}

TEST(NeighborhoodOrigin, CornersAndInterior) {
  NaConfig cfg{.kernel = 3};
  EXPECT_EQ(neighborhood_origin(0, 0, 5, 5, cfg), (WindowOrigin{0, 0}));
  EXPECT_EQ(neighborhood_origin(2, 2, 5, 5, cfg), (WindowOrigin{1, 1}));
  EXPECT_EQ(neighborhood_origin(4, 4, 5, 5, cfg), (WindowOrigin{2, 2}));
  EXPECT_EQ(neighborhood_origin(4, 0, 5, 5, cfg), (WindowOrigin{2, 0}));
}

TEST(NeighborhoodOrigin, DilatedSpanAndWindowError) {
  NaConfig cfg{.kernel = 3, .dilation = 2};
  EXPECT_EQ(cfg.span(), 5);
  EXPECT_EQ(window_start(3, 7, cfg), 1);
  EXPECT_EQ(window_start(6, 7, cfg), 2);
  EXPECT_THROW(window_start(0, 4, cfg), WindowError);
  EXPECT_THROW(window_start(0, 2, NaConfig{.kernel = 3}), WindowError);
}

TEST(NaConfigTest, RejectsEvenKernel) {
  EXPECT_THROW((NaConfig{.kernel = 4}.validate()), ConfigError);
  EXPECT_THROW((NaConfig{.kernel = 3, .dilation = 0}.validate()), ConfigError);
}

TEST(ShrinkKernel, Examples) {
  EXPECT_EQ(shrink_kernel(63, 20), 19);
  EXPECT_EQ(shrink_kernel(3, 8), 3);
  EXPECT_EQ(shrink_kernel(63, 63), 63);
  EXPECT_EQ(shrink_kernel(7, 1), 1);
  EXPECT_EQ(shrink_kernel(7, 2), 1);
  EXPECT_THROW(shrink_kernel(3, 0), ParameterError);
}

TEST(NaForward, KernelOneReturnsValues) {
  NaConfig cfg{.kernel = 1, .heads = 2, .head_dim = 3};
  const auto c = make_case(1, 4, 5, cfg, 3);
  const auto out = na_forward(c.q, c.k, c.v, c.bias, cfg).out;
  EXPECT_TRUE(bitwise_equal(out, c.v));
}

TEST(NaForward, GlobalWindowEqualsDenseAttention) {
  for (Index k : {3, 5, 7}) {
    NaConfig cfg{.kernel = k, .heads = 2, .head_dim = 4};
    auto c = make_case(1, k, k, cfg, 10 + k, /*with_bias=*/false);
    const auto c32 = std::array{c.q.cast<float>(), c.k.cast<float>(), c.v.cast<float>()};
    const auto out = na_forward(c32[0], c32[1], c32[2], RelBias<float>(2, k), cfg).out;
    const auto dense = dense_attention(c32[0], c32[1], c32[2], 2);
    EXPECT_LE(max_abs_diff(out, dense), 1e-5f) << "k=" << k;
  }
}

TEST(NaForward, MatchesDenseMaskedOracleAndBruteForce) {
  NaConfig cfg{.kernel = 3, .heads = 2, .head_dim = 4};
  const auto c = make_case(1, 6, 6, cfg, 77);
  const auto f = [](const Tensor4d& t) { return t.cast<float>(); };
  RelBias<float> bias32(2, 3);
  bias32.table = c.bias.table.cast<float>();
  const auto out = na_forward(f(c.q), f(c.k), f(c.v), bias32, cfg).out;
  const auto oracle = dense_attention_oracle(f(c.q), f(c.k), f(c.v), neighborhood_mask(6, 6, cfg),
                                             2, relative_bias_gather(bias32, 6));
  EXPECT_LE(max_abs_diff(out, oracle), 1e-5f);
  EXPECT_LE(testing::max_abs_diff_d(out, brute_force_na(c, cfg)), 1e-5);
}

TEST(NaForward, OracleGridProperty) {
  for (Index h = 3; h <= 8; ++h)
    for (Index w = 3; w <= 8; w += 5)
      for (Index k : {1, 3})
        for (Index heads : {1, 2}) {
          NaConfig cfg{.kernel = k, .heads = heads, .head_dim = 2};
          const auto c = make_case(2, h, w, cfg, static_cast<std::uint64_t>(h * 100 + w * 10 + k));
          const auto out = na_forward(c.q, c.k, c.v, c.bias, cfg).out;
          const auto oracle = dense_attention_oracle(c.q, c.k, c.v, neighborhood_mask(h, w, cfg),
                                                     heads, relative_bias_gather(c.bias, w));
          EXPECT_LE(max_abs_diff(out, oracle), 1e-12) << h << "x" << w << " k=" << k;
        }
}

TEST(NaForward, DilatedMatchesOracle) {
  NaConfig cfg{.kernel = 3, .heads = 2, .head_dim = 3, .dilation = 2};
  const auto c = make_case(1, 7, 8, cfg, 5);
  const auto out = na_forward(c.q, c.k, c.v, c.bias, cfg).out;
  const auto oracle = dense_attention_oracle(c.q, c.k, c.v, neighborhood_mask(7, 8, cfg), 2,
                                             relative_bias_gather(c.bias, 8, 2));
  EXPECT_LE(max_abs_diff(out, oracle), 1e-12);
  EXPECT_LE(max_abs_diff(out, brute_force_na(c, cfg)), 1e-12);
}

TEST(NaForward, AttentionRowsAreStochastic) {
  NaConfig cfg{.kernel = 5, .heads = 2, .head_dim = 4};
  const auto c = make_case(1, 9, 7, cfg, 8);
  const auto res = na_forward(c.q.cast<float>(), c.k.cast<float>(), c.v.cast<float>(),
                              RelBias<float>(2, 5), cfg);
  const Index kk = 25;
  for (Index r = 0; r < res.attn.size() / kk; ++r) {
    double sum = 0;
    for (Index j = 0; j < kk; ++j) sum += res.attn[r * kk + j];
    EXPECT_NEAR(sum, 1.0, 1e-6);
  }
}

TEST(NaForward, SmallerKernelUsesCentreOfLargerBiasTable) {
  NaConfig cfg{.kernel = 3, .heads = 1, .head_dim = 2};
  const auto c = make_case(1, 5, 5, cfg, 19);
  RelBias<double> wide(1, 5);
  for (Index dh = -2; dh <= 2; ++dh)
    for (Index dw = -2; dw <= 2; ++dw) wide.at(0, dh, dw) = c.bias.at(0, dh, dw);
  wide.at(0, 4, 4) = 100.0;  // outside the k=3 domain, must be ignored
  const auto a = na_apply(c.q, c.k, c.v, c.bias, cfg);
  const auto b = na_apply(c.q, c.k, c.v, wide, cfg);
  EXPECT_LE(max_abs_diff(a, b), 1e-14);
}

TEST(NaForward, TranslationCovarianceInTheInterior) {
  NaConfig cfg{.kernel = 3, .heads = 1, .head_dim = 2};
  const Index hw = 12;
  auto base = make_case(1, hw, hw, cfg, 4);
  NaCase shifted{Tensor4d(base.q.shape(), 0.25), Tensor4d(base.q.shape(), 0.25),
                 Tensor4d(base.q.shape(), 0.25), base.bias};
  // Pattern confined to the interior, constant padding around it.
  for (auto* t : {&base.q, &base.k, &base.v}) {
    for (Index h = 0; h < hw; ++h)
      for (Index w = 0; w < hw; ++w)
        if (h < 3 || h > 7 || w < 3 || w > 7)
          for (Index e = 0; e < 2; ++e) (*t)(0, h, w, e) = 0.25;
  }
  for (Index h = 3; h <= 7; ++h)
    for (Index w = 3; w <= 7; ++w)
      for (Index e = 0; e < 2; ++e) {
        shifted.q(0, h + 1, w + 1, e) = base.q(0, h, w, e);
        shifted.k(0, h + 1, w + 1, e) = base.k(0, h, w, e);
        shifted.v(0, h + 1, w + 1, e) = base.v(0, h, w, e);
      }
  const auto a = na_apply(base.q, base.k, base.v, base.bias, cfg);
  const auto b = na_apply(shifted.q, shifted.k, shifted.v, shifted.bias, cfg);
  for (Index h = 2; h <= 8; ++h)
    for (Index w = 2; w <= 8; ++w)
      for (Index e = 0; e < 2; ++e) EXPECT_NEAR(a(0, h, w, e), b(0, h + 1, w + 1, e), 1e-12);
}

TEST(NaForward, ShapeAndWindowErrors) {
  NaConfig cfg{.kernel = 3, .heads = 2, .head_dim = 2};
  Tensor4f q(Shape4{1, 4, 4, 4}), bad(Shape4{1, 4, 4, 3});
  EXPECT_THROW(na_forward(q, bad, q, RelBias<float>(2, 3), cfg), DimensionError);
  EXPECT_THROW(na_forward(q, q, q, RelBias<float>(1, 3), cfg), DimensionError);
  Tensor4f tiny(Shape4{1, 2, 4, 4});
  EXPECT_THROW(na_forward(tiny, tiny, tiny, RelBias<float>(2, 3), cfg), WindowError);
}

TEST(NaForward, BitIdenticalAcrossThreadCounts) {
  NaConfig cfg{.kernel = 7, .heads = 4, .head_dim = 8};
  const auto c = make_case(2, 20, 17, cfg, 12);
  const auto q = c.q.cast<float>(), k = c.k.cast<float>(), v = c.v.cast<float>();
  RelBias<float> b(4, 7);
  b.table = c.bias.table.cast<float>();
  NaOutput<float> one, four;
  {
    ThreadScope s(1);
    one = na_forward(q, k, v, b, cfg);
  }
  {
    ThreadScope s(4);
    four = na_forward(q, k, v, b, cfg);
  }
  EXPECT_TRUE(bitwise_equal(one.out, four.out));
  EXPECT_TRUE(bitwise_equal(one.attn, four.attn));
}

TEST(NaLogitMacs, LinearInTokens) {
  NaConfig cfg{.kernel = 7, .heads = 2, .head_dim = 32};
  EXPECT_EQ(na_logit_macs(16, 16, cfg), 16 * 16 * 2 * 49 * 32);
  EXPECT_EQ(na_logit_macs(32, 32, cfg), 4 * na_logit_macs(16, 16, cfg));
}

TEST(DenseOracle, SingleTokenAndFullMask) {
  Tensor4d q = random_tensor<double>(Shape4{1, 1, 1, 4}, 1);
  Tensor4d v = random_tensor<double>(Shape4{1, 1, 1, 4}, 2);
  EXPECT_TRUE(bitwise_equal(dense_attention_oracle(q, q, v, full_mask(1, 1), 2, no_bias()), v));

  NaConfig cfg{.kernel = 5, .heads = 1, .head_dim = 3};
  const auto c = make_case(1, 5, 5, cfg, 31, false);
  const auto full = dense_attention_oracle(c.q, c.k, c.v, full_mask(5, 5), 1, no_bias());
  const auto masked = dense_attention_oracle(c.q, c.k, c.v, neighborhood_mask(5, 5, cfg), 1,
                                             relative_bias_gather(c.bias, 5));
  EXPECT_LE(max_abs_diff(full, masked), 1e-14);
}

TEST(NaBackward, ZeroUpstreamGivesZeroGrads) {
  NaConfig cfg{.kernel = 3, .heads = 2, .head_dim = 2};
  const auto c = make_case(1, 4, 4, cfg, 2);
  const auto tape = na_forward_tape(c.q, c.k, c.v, c.bias, cfg);
  const auto g = na_backward(tape, Tensor4d(c.q.shape()));
  for (const auto* t : {&g.d_q, &g.d_k, &g.d_v, &g.d_bias.table})
    for (double x : t->span()) EXPECT_EQ(x, 0.0);
}

TEST(NaBackward, KernelOneDegenerates) {
  NaConfig cfg{.kernel = 1, .heads = 2, .head_dim = 2};
  const auto c = make_case(1, 3, 4, cfg, 6);
  const auto tape = na_forward_tape(c.q, c.k, c.v, c.bias, cfg);
  const auto dout = random_tensor<double>(c.q.shape(), 99);
  const auto g = na_backward(tape, dout);
  EXPECT_TRUE(bitwise_equal(g.d_v, dout));
  for (const auto* t : {&g.d_q, &g.d_k, &g.d_bias.table})
    for (double x : t->span()) EXPECT_EQ(x, 0.0);
}

TEST(NaBackward, MatchesCentralDifferences) {
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    NaConfig cfg{.kernel = 3, .heads = 2, .head_dim = 3};
    auto c = make_case(1, 4, 4, cfg, 1000 + seed);
    const auto dout = random_tensor<double>(c.q.shape(), 500 + seed);
    const auto g = na_backward(na_forward_tape(c.q, c.k, c.v, c.bias, cfg), dout);
    auto loss = [&] {
      const auto o = na_apply(c.q, c.k, c.v, c.bias, cfg);
      double s = 0;
      for (Index i = 0; i < o.size(); ++i) s += o[i] * dout[i];
      return s;
    };
    auto check = [&](Tensor4d& param, const Tensor4d& grad) {
      std::vector<double*> ptrs;
      for (double& x : param.span()) ptrs.push_back(&x);
      const auto fd = testing::central_difference(ptrs, loss, 1e-4);
      for (std::size_t i = 0; i < fd.size(); ++i) {
        const double denom = std::max({std::abs(fd[i]), std::abs(grad[i]), 1e-6});
        EXPECT_LE(std::abs(fd[i] - grad[i]) / denom, 1e-3) << "entry " << i;
      }
    };
    check(c.q, g.d_q);
    check(c.k, g.d_k);
    check(c.v, g.d_v);
    check(c.bias.table, g.d_bias.table);
  }
}

TEST(NaBackward, RejectsMismatchedUpstream) {
  NaConfig cfg{.kernel = 3, .heads = 1, .head_dim = 2};
  const auto c = make_case(1, 4, 4, cfg, 2);
  const auto tape = na_forward_tape(c.q, c.k, c.v, c.bias, cfg);
  EXPECT_THROW(na_backward(tape, Tensor4d(Shape4{1, 4, 4, 3})), DimensionError);
}

}  // namespace
}  // namespace ledetr
