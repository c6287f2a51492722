#include <gtest/gtest.h>

#include <sstream>

#include "ledetr/io.hpp"
#include "ledetr/ops.hpp"
#include "test_util.hpp"

namespace ledetr {
namespace {

using testing::naive_conv2d;
using testing::random_matrix;
using testing::random_tensor;

TEST(Tensor4Test, RejectsZeroExtentsAndBadData) {
  EXPECT_THROW(Tensor4f(Shape4{1, 0, 2, 2}), DimensionError);
  EXPECT_THROW(Tensor4f(Shape4{1, 1, 2, 2}, std::vector<float>(3)), DimensionError);
}

TEST(Tensor4Test, IndexRoundTrip) {
  Tensor4f t(Shape4{2, 3, 4, 5});
  for (Index n = 0; n < 2; ++n)
    for (Index c = 0; c < 3; ++c)
      for (Index h = 0; h < 4; ++h)
        for (Index w = 0; w < 5; ++w) {
          const Index flat = t.index(n, c, h, w);
          EXPECT_EQ(flat, ((n * 3 + c) * 4 + h) * 5 + w);
          EXPECT_EQ(t.unflatten(flat), (std::array<Index, 4>{n, c, h, w}));
        }
}

TEST(MatmulTest, IdentityAndHandValues) {
  MatrixR<float> eye = MatrixR<float>::Identity(2, 2);
  MatrixR<float> a(2, 3);
  a << 1, 2, 3, 4, 5, 6;
  EXPECT_TRUE(bitwise_equal(matmul<float>(eye, a), a));

  MatrixR<float> x(2, 2), y(2, 1);
  x << 1, 2, 3, 4;
  y << 5, 6;
  const MatrixR<float> c = matmul<float>(x, y);
  EXPECT_EQ(c(0, 0), 17.0f);
  EXPECT_EQ(c(1, 0), 39.0f);
}

TEST(MatmulTest, MatchesTripleLoop) {
  const MatrixR<float> a = random_matrix<float>(7, 5, 1);
  const MatrixR<float> b = random_matrix<float>(5, 3, 2);
  std::vector<double> ad(a.data(), a.data() + a.size()), bd(b.data(), b.data() + b.size());
  const auto ref = testing::naive_matmul(ad, bd, 7, 5, 3);
  const MatrixR<float> c = matmul<float>(a, b);
  for (Index i = 0; i < 21; ++i) EXPECT_NEAR(c.data()[i], ref[i], 1e-6);
}

TEST(MatmulTest, ShapeMismatchNamesBothShapes) {
  MatrixR<float> a(2, 3), b(4, 2);
  try {
    matmul<float>(a, b);
    FAIL();
  } catch (const DimensionError& e) {
    EXPECT_NE(std::string(e.what()).find("2x3"), std::string::npos);
    EXPECT_NE(std::string(e.what()).find("4x2"), std::string::npos);
  }
}

TEST(MatmulTest, Associativity) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto a = random_matrix<float>(4, 6, seed);
    const auto b = random_matrix<float>(6, 5, seed + 100);
    const auto c = random_matrix<float>(5, 3, seed + 200);
    const MatrixR<float> left = matmul<float>(matmul<float>(a, b), c);
    const MatrixR<float> right = matmul<float>(a, matmul<float>(b, c));
    EXPECT_LE((left - right).norm(), 1e-4 * std::max(1.0f, left.norm()));
  }
}

TEST(MatmulTest, TiledPathMatchesAcrossThreadCounts) {
  const auto a = random_matrix<float>(300, 70, 5);
  const auto b = random_matrix<float>(70, 33, 6);
  MatrixR<float> one, four;
  {
    ThreadScope s(1);
    one = matmul<float>(a, b);
  }
  {
    ThreadScope s(4);
    four = matmul<float>(a, b);
  }
  EXPECT_TRUE(bitwise_equal(one, four));
}

TEST(SoftmaxTest, Examples) {
  std::vector<float> u{0, 0, 0};
  softmax_inplace(std::span<float>(u), 3);
  for (float v : u) EXPECT_NEAR(v, 1.0f / 3, 1e-7);

  std::vector<float> single{42.0f};
  softmax_inplace(std::span<float>(single), 1);
  EXPECT_EQ(single[0], 1.0f);

  std::vector<float> big{1000.0f, 0.0f};
  softmax_inplace(std::span<float>(big), 2);
  EXPECT_NEAR(big[0], 1.0f, 1e-6);
  EXPECT_NEAR(big[1], 0.0f, 1e-6);
}

TEST(SoftmaxTest, RejectsNaNAndBadAxis) {
  std::vector<float> x{0.0f, std::nanf("")};
  EXPECT_THROW(softmax_inplace(std::span<float>(x), 2), NumericError);
  EXPECT_THROW(softmax_inplace(std::span<float>(x), 0), ParameterError);
  EXPECT_THROW(softmax_inplace(std::span<float>(x), 3), DimensionError);
}

TEST(SoftmaxTest, RowsArePositiveAndNormalized) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    auto t = random_tensor<float>(Shape4{1, 1, 8, 13}, seed, 2.0 + 0.2 * seed);
    const auto s = softmax_lastdim(t, 13);
    for (Index r = 0; r < 8; ++r) {
      double sum = 0;
      for (Index j = 0; j < 13; ++j) {
        EXPECT_GT(s(0, 0, r, j), 0.0f);
        sum += s(0, 0, r, j);
      }
      EXPECT_NEAR(sum, 1.0, 1e-6);
    }
  }
}

TEST(Conv2dTest, AllOnesKernel) {
  Tensor4f x(Shape4{1, 1, 4, 4}, 1.0f), w(Shape4{1, 1, 3, 3}, 1.0f);
  const auto y = conv2d(x, w, {});
  ASSERT_EQ(y.shape(), (Shape4{1, 1, 2, 2}));
  for (float v : y.span()) EXPECT_EQ(v, 9.0f);
}

TEST(Conv2dTest, DepthwiseIdentityCenter) {
  const auto x = random_tensor<float>(Shape4{2, 5, 7, 6}, 3);
  Tensor4f w(Shape4{5, 1, 3, 3});
  for (Index c = 0; c < 5; ++c) w(c, 0, 1, 1) = 1.0f;
  const auto y = conv2d(x, w, {.stride = 1, .pad = 1, .groups = 5});
  EXPECT_TRUE(bitwise_equal(x, y));
}

TEST(Conv2dTest, MatchesNaiveOracle) {
  const auto x = random_tensor<float>(Shape4{1, 3, 6, 6}, 11);
  const auto w = random_tensor<float>(Shape4{4, 3, 3, 3}, 12);
  const auto y = conv2d(x, w, {.stride = 2, .pad = 1});
  const auto ref = naive_conv2d(x, w, 2, 1, 1);
  ASSERT_EQ(y.shape(), ref.shape());
  EXPECT_LE(testing::max_abs_diff_d(y, ref), 1e-6 * 10);
  // Unpadded variant exercises the valid-only window.
  const auto y2 = conv2d(x, w, {.stride = 2, .pad = 0});
  EXPECT_LE(testing::max_abs_diff_d(y2, naive_conv2d(x, w, 2, 0, 1)), 1e-5);
}

TEST(Conv2dTest, GroupedPointwiseAndBias) {
  const auto x = random_tensor<float>(Shape4{2, 8, 5, 9}, 21);
  const auto wg = random_tensor<float>(Shape4{6, 4, 3, 3}, 22);
  std::vector<float> b{0.5f, -1.0f, 2.0f, 0.0f, 1.0f, 3.0f};
  const auto y = conv2d(x, wg, {.stride = 1, .pad = 1, .groups = 2}, std::span<const float>(b));
  const auto ref = naive_conv2d(x, wg, 1, 1, 2, std::vector<double>(b.begin(), b.end()));
  EXPECT_LE(testing::max_abs_diff_d(y, ref), 1e-5);

  const auto wp = random_tensor<float>(Shape4{5, 8, 1, 1}, 23);
  const auto yp = conv2d(x, wp, {});
  EXPECT_LE(testing::max_abs_diff_d(yp, naive_conv2d(x, wp, 1, 0, 1)), 1e-5);
}

TEST(Conv2dTest, StrideTwoHalvesEvenExtents) {
  for (Index k : {1, 3, 5}) {
    for (Index hw : {4, 8, 16}) {
      Tensor4f x(Shape4{1, 2, hw, hw}, 1.0f), w(Shape4{4, 2, k, k}, 0.1f);
      const auto y = conv2d(x, w, {.stride = 2, .pad = k / 2});
      EXPECT_EQ(y.h(), hw / 2);
      EXPECT_EQ(y.w(), hw / 2);
    }
  }
}

TEST(Conv2dTest, Errors) {
  Tensor4f x(Shape4{1, 4, 2, 2}), w(Shape4{1, 4, 5, 5});
  EXPECT_THROW(conv2d(x, w, {}), DimensionError);
  Tensor4f w2(Shape4{3, 2, 1, 1});
  EXPECT_THROW(conv2d(x, w2, {.groups = 2}), DimensionError);
}

TEST(Conv2dTest, BitIdenticalAcrossThreadCounts) {
  const auto x = random_tensor<float>(Shape4{2, 16, 40, 40}, 31);
  const auto w = random_tensor<float>(Shape4{32, 16, 3, 3}, 32);
  const auto dw = random_tensor<float>(Shape4{16, 1, 3, 3}, 33);
  Tensor4f y1, y4, d1, d4;
  {
    ThreadScope s(1);
    y1 = conv2d(x, w, {.stride = 1, .pad = 1});
    d1 = conv2d(x, dw, {.stride = 2, .pad = 1, .groups = 16});
  }
  {
    ThreadScope s(4);
    y4 = conv2d(x, w, {.stride = 1, .pad = 1});
    d4 = conv2d(x, dw, {.stride = 2, .pad = 1, .groups = 16});
  }
  EXPECT_TRUE(bitwise_equal(y1, y4));
  EXPECT_TRUE(bitwise_equal(d1, d4));
}

TEST(LayerNormTest, Examples) {
  std::vector<float> ones(4, 1.0f), zeros(4, 0.0f);
  MatrixR<float> c = MatrixR<float>::Constant(1, 4, 3.5f);
  const auto y = layernorm<float>(c, ones, zeros, 1e-5f);
  for (Index j = 0; j < 4; ++j) EXPECT_EQ(y(0, j), 0.0f);

  std::vector<float> g2(2, 1.0f), b2(2, 0.0f);
  MatrixR<float> pm(1, 2);
  pm << 1.0f, -1.0f;
  const auto y2 = layernorm<float>(pm, g2, b2, 1e-5f);
  EXPECT_NEAR(y2(0, 0), 1.0f, 1e-5);
  EXPECT_NEAR(y2(0, 1), -1.0f, 1e-5);

  EXPECT_THROW(layernorm<float>(pm, g2, b2, 0.0f), ParameterError);
}

TEST(LayerNormTest, MatchesTwoPassOracle) {
  const auto x = random_matrix<float>(3, 16, 41, 3.0);
  std::vector<float> g(16, 1.0f), b(16, 0.0f);
  const auto y = layernorm<float>(x, g, b, 1e-6f);
  for (Index r = 0; r < 3; ++r) {
    double mean = 0, var = 0;
    for (Index j = 0; j < 16; ++j) mean += x(r, j);
    mean /= 16;
    for (Index j = 0; j < 16; ++j) var += (x(r, j) - mean) * (x(r, j) - mean);
    var /= 16;
    double out_mean = 0, out_var = 0;
    for (Index j = 0; j < 16; ++j) {
      EXPECT_NEAR(y(r, j), (x(r, j) - mean) / std::sqrt(var + 1e-6), 1e-5);
      out_mean += y(r, j);
    }
    out_mean /= 16;
    for (Index j = 0; j < 16; ++j) out_var += (y(r, j) - out_mean) * (y(r, j) - out_mean);
    EXPECT_NEAR(out_mean, 0.0, 1e-5);
    EXPECT_NEAR(out_var / 16, 1.0, 1e-5);
  }
}

TEST(InitNormalTest, DeterministicAndCalibrated) {
  Rng64 a(42), b(42);
  const auto ta = init_normal(a, Shape4{1, 1, 10, 10}, 1.0);
  const auto tb = init_normal(b, Shape4{1, 1, 10, 10}, 1.0);
  EXPECT_TRUE(bitwise_equal(ta, tb));

  Rng64 z(1);
  EXPECT_THROW(init_normal(z, Shape4{}, 0.0), ParameterError);

  Rng64 rng(7);
  const auto t = init_normal(rng, Shape4{1, 1, 1, 100000}, 0.02);
  double mean = 0, sq = 0;
  for (float v : t.span()) mean += v;
  mean /= t.size();
  for (float v : t.span()) sq += (v - mean) * (v - mean);
  const double sd = std::sqrt(sq / (t.size() - 1));
  EXPECT_NEAR(sd, 0.02, 0.05 * 0.02);
  EXPECT_NEAR(mean, 0.0, 0.001);
}

TEST(Rng64Test, KnownSplitmixSequence) {
  // Reference values of splitmix64 seeded with 0.
  Rng64 rng(0);
  EXPECT_EQ(rng.next_u64(), 0xE220A8397B1DCDAFull);
  EXPECT_EQ(rng.next_u64(), 0x6E789E6AA1B965F4ull);
}

TEST(TensorDumpTest, HeaderLayoutAndRoundTrip) {
  const auto t = random_tensor<float>(Shape4{2, 3, 4, 5}, 9);
  std::stringstream ss;
  write_tensor(ss, t);
  const std::string bytes = ss.str();
  ASSERT_EQ(bytes.size(), kTensorHeaderBytes + 4 * 120);
  EXPECT_EQ(bytes.substr(0, 4), "LET4");
  EXPECT_EQ(static_cast<unsigned char>(bytes[4]), 1);  // version, little-endian
  EXPECT_EQ(static_cast<unsigned char>(bytes[8]), 2);  // N
  EXPECT_EQ(static_cast<unsigned char>(bytes[12]), 3);
  EXPECT_EQ(static_cast<unsigned char>(bytes[16]), 4);
  EXPECT_EQ(static_cast<unsigned char>(bytes[20]), 5);
  const auto back = read_tensor(ss);
  EXPECT_TRUE(bitwise_equal(t, back));

  std::stringstream bad("LETX....");
  EXPECT_THROW(read_tensor(bad), Error);
}

}  // namespace
}  // namespace ledetr
