#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "slicerec/tensor_ops.hpp"
#include "support/grad_check.hpp"

using namespace slicerec;
using slicerec::testing::random_tensor;

namespace {

// Reference triple loop over batched matrices of identical batch shape.
std::vector<double> naive_batched_matmul(const Tensor& a, const Tensor& b) {
  const std::size_t batch = a.dim(0), M = a.dim(1), K = a.dim(2), P = b.dim(2);
  std::vector<double> out(batch * M * P, 0.0);
  for (std::size_t n = 0; n < batch; ++n)
    for (std::size_t i = 0; i < M; ++i)
      for (std::size_t j = 0; j < P; ++j) {
        double acc = 0.0;
        for (std::size_t k = 0; k < K; ++k) acc += a[(n * M + i) * K + k] * b[(n * K + k) * P + j];
        out[(n * M + i) * P + j] = acc;
      }
  return out;
}

// Direct 7-deep loop cross-correlation with zero padding.
std::vector<double> naive_conv3d(const Tensor& x, const Tensor& w, const Tensor& b) {
  const std::size_t n1 = x.dim(0), n2 = x.dim(1), n3 = x.dim(2), ci = x.dim(3), co = w.dim(4);
  std::vector<double> out(n1 * n2 * n3 * co);
  for (std::size_t i = 0; i < n1; ++i)
    for (std::size_t j = 0; j < n2; ++j)
      for (std::size_t k = 0; k < n3; ++k)
        for (std::size_t o = 0; o < co; ++o) {
          double acc = b[o];
          for (int a = -1; a <= 1; ++a)
            for (int c = -1; c <= 1; ++c)
              for (int d = -1; d <= 1; ++d) {
                const long si = static_cast<long>(i) + a, sj = static_cast<long>(j) + c,
                           sk = static_cast<long>(k) + d;
                if (si < 0 || sj < 0 || sk < 0 || si >= static_cast<long>(n1) || sj >= static_cast<long>(n2) ||
                    sk >= static_cast<long>(n3))
                  continue;
                for (std::size_t ch = 0; ch < ci; ++ch) {
                  const double xv = x[((si * n2 + sj) * n3 + sk) * ci + ch];
                  const double wv = w[((((a + 1) * 3 + (c + 1)) * 3 + (d + 1)) * ci + ch) * co + o];
                  acc += xv * wv;
                }
              }
          out[((i * n2 + j) * n3 + k) * co + o] = acc;
        }
  return out;
}

}  // namespace

TEST(Tensor, RejectsMismatchedData) {
  EXPECT_THROW(Tensor({2, 3}, std::vector<double>(5)), DimensionError);
  EXPECT_THROW(Tensor(Shape{2, 0}), DimensionError);
}

TEST(Matmul, IdentityLeavesOperandUnchanged) {
  std::mt19937_64 rng(1);
  Tensor eye({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1});
  Tensor b = random_tensor({3, 3}, rng, false);
  EXPECT_EQ(matmul(eye, b).values(), b.values());

  Tensor a({2, 2}, {1, 2, 3, 4});
  Tensor i2({2, 2}, {1, 0, 0, 1});
  EXPECT_EQ(matmul(a, i2).values(), (std::vector<double>{1, 2, 3, 4}));
}

TEST(Matmul, MatchesTripleLoop) {
  std::mt19937_64 rng(7);
  Tensor a = random_tensor({2, 3, 4}, rng, false);
  Tensor b = random_tensor({2, 4, 5}, rng, false);
  const auto expected = naive_batched_matmul(a, b);
  const Tensor c = matmul(a, b);
  ASSERT_EQ(c.shape(), (Shape{2, 3, 5}));
  for (std::size_t i = 0; i < expected.size(); ++i) EXPECT_NEAR(c[i], expected[i], 1e-12);
}

TEST(Matmul, BroadcastsBatchAxes) {
  std::mt19937_64 rng(8);
  Tensor a = random_tensor({2, 3, 4}, rng, false);
  Tensor w = random_tensor({4, 5}, rng, false);
  const Tensor c = matmul(a, w);
  ASSERT_EQ(c.shape(), (Shape{2, 3, 5}));
  Tensor w_batched({2, 4, 5}, [&] {
    std::vector<double> v(w.values());
    v.insert(v.end(), w.values().begin(), w.values().end());
    return v;
  }());
  const auto expected = naive_batched_matmul(a, w_batched);
  for (std::size_t i = 0; i < expected.size(); ++i) EXPECT_NEAR(c[i], expected[i], 1e-12);
}

TEST(Matmul, ShapeMismatchReportsBothShapes) {
  Tensor a({2, 3}), b({4, 2});
  try {
    matmul(a, b);
    FAIL() << "expected DimensionError";
  } catch (const DimensionError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("(2,3)"), std::string::npos);
    EXPECT_NE(msg.find("(4,2)"), std::string::npos);
  }
}

TEST(Softmax, UniformForEqualInputs) {
  const Tensor y = softmax_rows(Tensor({3}, {0, 0, 0}));
  for (double v : y.values()) EXPECT_NEAR(v, 1.0 / 3.0, 1e-15);
}

TEST(Softmax, LargeInputsDoNotOverflow) {
  const Tensor y = softmax_rows(Tensor({2}, {1000, 1000}));
  EXPECT_DOUBLE_EQ(y[0], 0.5);
  EXPECT_DOUBLE_EQ(y[1], 0.5);
}

TEST(Softmax, MatchesExtendedPrecisionFormula) {
  std::mt19937_64 rng(3);
  const Tensor x = random_tensor({17}, rng, false, -5.0, 5.0);
  const Tensor y = softmax_rows(x);
  long double total = 0.0L;
  for (double v : x.values()) total += std::exp(static_cast<long double>(v));
  for (std::size_t i = 0; i < 17; ++i) {
    const long double expected = std::exp(static_cast<long double>(x[i])) / total;
    EXPECT_NEAR(y[i], static_cast<double>(expected), 1e-12 * static_cast<double>(expected));
  }
}

TEST(Softmax, RowsSumToOneAndIgnoreRowShift) {
  std::mt19937_64 rng(4);
  for (int trial = 0; trial < 20; ++trial) {
    const Tensor x = random_tensor({5, 9}, rng, false, -20.0, 20.0);
    std::vector<double> shifted(x.values());
    for (std::size_t r = 0; r < 5; ++r)
      for (std::size_t i = 0; i < 9; ++i) shifted[r * 9 + i] += static_cast<double>(r) * 3.7 - 4.0;
    const Tensor y = softmax_rows(x);
    const Tensor ys = softmax_rows(Tensor({5, 9}, shifted));
    for (std::size_t r = 0; r < 5; ++r) {
      double total = 0.0;
      for (std::size_t i = 0; i < 9; ++i) {
        total += y[r * 9 + i];
        EXPECT_NEAR(y[r * 9 + i], ys[r * 9 + i], 1e-12);
      }
      EXPECT_NEAR(total, 1.0, 1e-12);
    }
  }
}

TEST(Softmax, NonFiniteInputIsNumericError) {
  EXPECT_THROW(softmax_rows(Tensor({2}, {std::nan(""), 1.0})), NumericError);
}

TEST(Conv3d, DeltaKernelIsIdentity) {
  std::mt19937_64 rng(5);
  const std::size_t c = 3;
  const Tensor x = random_tensor({4, 3, 5, c}, rng, false);
  std::vector<double> w(27 * c * c, 0.0);
  for (std::size_t ch = 0; ch < c; ++ch) w[(13 * c + ch) * c + ch] = 1.0;
  const Tensor y = conv3d(x, Tensor({3, 3, 3, c, c}, w), Tensor::zeros({c}));
  ASSERT_EQ(y.shape(), x.shape());
  EXPECT_EQ(y.values(), x.values());
}

TEST(Conv3d, OnesKernelCountsTaps) {
  const Tensor y = conv3d(Tensor::ones({5, 5, 5, 1}), Tensor::ones({3, 3, 3, 1, 1}), Tensor::zeros({1}));
  EXPECT_DOUBLE_EQ(y[(2 * 5 + 2) * 5 + 2], 27.0);
  EXPECT_DOUBLE_EQ(y[0], 8.0);          // corner sees 2x2x2
  EXPECT_DOUBLE_EQ(y[(0 * 5 + 2) * 5 + 2], 18.0);  // face centre
}

TEST(Conv3d, MatchesNestedLoopOracle) {
  std::mt19937_64 rng(6);
  const Tensor x = random_tensor({3, 4, 5, 2}, rng, false);
  const Tensor w = random_tensor({3, 3, 3, 2, 3}, rng, false);
  const Tensor b = random_tensor({3}, rng, false);
  const auto expected = naive_conv3d(x, w, b);
  const Tensor y = conv3d(x, w, b);
  ASSERT_EQ(y.shape(), (Shape{3, 4, 5, 3}));
  for (std::size_t i = 0; i < expected.size(); ++i) EXPECT_NEAR(y[i], expected[i], 1e-12);
}

TEST(Conv3d, PreservesSpatialShape) {
  for (Shape s : {Shape{1, 1, 1, 2}, Shape{2, 7, 3, 2}, Shape{6, 1, 4, 2}}) {
    const Tensor y = conv3d(Tensor::ones(s), Tensor::ones({3, 3, 3, 2, 4}), Tensor::zeros({4}));
    EXPECT_EQ(y.shape(), (Shape{s[0], s[1], s[2], 4}));
  }
}

TEST(Conv3d, ChannelMismatchIsDimensionError) {
  EXPECT_THROW(conv3d(Tensor::ones({2, 2, 2, 3}), Tensor::ones({3, 3, 3, 2, 1}), Tensor::zeros({1})),
               DimensionError);
  EXPECT_THROW(conv3d(Tensor::ones({2, 2, 2, 2}), Tensor::ones({5, 5, 5, 2, 1}), Tensor::zeros({1})),
               DimensionError);
}

TEST(LayerNorm, ConstantVectorMapsToZero) {
  const Tensor y = layer_norm(Tensor({4}, 3.25), Tensor::ones({4}), Tensor::zeros({4}));
  for (double v : y.values()) EXPECT_EQ(v, 0.0);
}

TEST(LayerNorm, ZeroGammaGivesBeta) {
  std::mt19937_64 rng(9);
  const Tensor beta({3}, {0.5, -1.0, 2.0});
  const Tensor y = layer_norm(random_tensor({4, 3}, rng, false), Tensor::zeros({3}), beta);
  for (std::size_t r = 0; r < 4; ++r)
    for (std::size_t i = 0; i < 3; ++i) EXPECT_EQ(y[r * 3 + i], beta[i]);
}

TEST(LayerNorm, OutputHasZeroMean) {
  std::mt19937_64 rng(10);
  const Tensor y = layer_norm(random_tensor({32}, rng, false, -4, 9), Tensor::ones({32}), Tensor::zeros({32}));
  double m = 0.0, v = 0.0;
  for (double x : y.values()) m += x;
  m /= 32;
  for (double x : y.values()) v += (x - m) * (x - m);
  EXPECT_NEAR(m, 0.0, 1e-10);
  EXPECT_NEAR(v / 32, 1.0, 1e-3);  // eps shifts the variance slightly
}

TEST(Gelu, ZeroAndTanhFormula) {
  const Tensor y = gelu(Tensor({3}, {0.0, 1.0, -2.0}));
  EXPECT_EQ(y[0], 0.0);
  const auto ref = [](double x) {
    return 0.5 * x * (1 + std::tanh(std::sqrt(2 / M_PI) * (x + 0.044715 * x * x * x)));
  };
  EXPECT_NEAR(y[1], ref(1.0), 1e-15);
  EXPECT_NEAR(y[2], ref(-2.0), 1e-15);
}

TEST(Dropout, EvalModeIsIdentity) {
  std::mt19937_64 rng(11);
  const Tensor x = random_tensor({100}, rng, false);
  const Tensor y = dropout(x, 0.5, rng, false);
  EXPECT_EQ(y.values(), x.values());
}

TEST(Dropout, SurvivorFractionAndScaling) {
  std::mt19937_64 rng(12);
  const Tensor y = dropout(Tensor::ones({1000000}), 0.1, rng, true);
  std::size_t alive = 0;
  for (double v : y.values()) {
    if (v != 0.0) {
      ++alive;
      EXPECT_DOUBLE_EQ(v, 1.0 / 0.9);
    }
  }
  EXPECT_NEAR(static_cast<double>(alive) / 1e6, 0.9, 0.01);
}

TEST(Dropout, RejectsProbabilityOutsideRange) {
  std::mt19937_64 rng(13);
  EXPECT_THROW(dropout(Tensor::ones({3}), 1.0, rng, true), ParameterError);
  EXPECT_THROW(dropout(Tensor::ones({3}), -0.1, rng, false), ParameterError);
}

TEST(Permute, InverseRestoresData) {
  std::mt19937_64 rng(14);
  const Tensor x = random_tensor({2, 3, 4, 5}, rng, false);
  const std::vector<std::size_t> perm{2, 0, 3, 1};
  const Tensor y = permute(x, perm);
  EXPECT_EQ(y.shape(), (Shape{4, 2, 5, 3}));
  EXPECT_EQ(y[((1 * 2 + 1) * 5 + 4) * 3 + 2], x[((1 * 3 + 2) * 4 + 1) * 5 + 4]);
  EXPECT_EQ(permute(y, inverse_permutation(perm)).values(), x.values());
  EXPECT_THROW(permute(x, {0, 0, 1, 2}), ParameterError);
}

TEST(Broadcast, AddsAlongMissingAxes) {
  const Tensor a({2, 3}, {1, 2, 3, 4, 5, 6});
  const Tensor b({3}, {10, 20, 30});
  EXPECT_EQ(add(a, b).values(), (std::vector<double>{11, 22, 33, 14, 25, 36}));
  const Tensor col({2, 1}, {100, 200});
  EXPECT_EQ(add(a, col).values(), (std::vector<double>{101, 102, 103, 204, 205, 206}));
  EXPECT_THROW(add(a, Tensor({2})), DimensionError);
}
