// Copyright 2026 The D2Rec Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "d2rec/nncore.hpp"

#include <cmath>
#include <vector>

#include "gtest/gtest.h"

namespace d2rec {
namespace {

Matrix RandomMatrix(int rows, int cols, Rng& rng, double scale = 1.0) {
  Matrix m(rows, cols);
  for (double& v : m.Values()) v = (2.0 * Uniform01(rng) - 1.0) * scale;
  return m;
}

// Random matrix kept away from the ReLU kink.
Matrix AwayFromZero(int rows, int cols, Rng& rng) {
  Matrix m = RandomMatrix(rows, cols, rng);
  for (double& v : m.Values()) v += v >= 0.0 ? 0.1 : -0.1;
  return m;
}

// Loss = sum(upstream .* f(x)) so that d loss / d x = backward(upstream).
double Weighted(const Matrix& y, const Matrix& w) {
  double s = 0.0;
  for (std::size_t k = 0; k < y.size(); ++k) s += y.Values()[k] * w.Values()[k];
  return s;
}

GradCheckResult CheckOne(const std::function<double()>& loss, Matrix& param,
                         const Matrix& analytic) {
  std::vector<std::span<double>> p = {param.Values()};
  std::vector<std::span<const double>> a = {analytic.Values()};
  return GradCheck(loss, p, a, 1e-5, 1e-4);
}

TEST(MatrixTest, ShapeAndIdentity) {
  const Matrix id = Matrix::Identity(3);
  EXPECT_EQ(id.rows(), 3);
  EXPECT_EQ(id(1, 1), 1.0);
  EXPECT_EQ(id(0, 2), 0.0);
  EXPECT_EQ(id.ShapeString(), "[3x3]");
  EXPECT_THROW(Matrix(2, 2, std::vector<double>{1.0}), DimensionError);
}

TEST(AffineTest, IdentityWeightsPassThrough) {
  AffineLayer layer(3, 3);
  layer.weight = Matrix::Identity(3);
  Rng rng(1);
  const Matrix x = RandomMatrix(4, 3, rng);
  EXPECT_EQ(AffineForward(layer, x), x);
}

TEST(AffineTest, HandExample) {
  AffineLayer layer(2, 2);
  layer.weight = Matrix::Identity(2);
  layer.bias = {1.0, 1.0};
  const Matrix y = AffineForward(layer, Matrix(1, 2, {1.0, 2.0}));
  EXPECT_EQ(y, Matrix(1, 2, {2.0, 3.0}));
}

TEST(AffineTest, ShapeMismatchNamesBothShapes) {
  AffineLayer layer(3, 2);
  try {
    AffineForward(layer, Matrix(4, 5));
    FAIL() << "expected DimensionError";
  } catch (const DimensionError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("4x5"), std::string::npos) << msg;
    EXPECT_NE(msg.find("3x2"), std::string::npos) << msg;
  }
}

TEST(AffineTest, GradientsMatchFiniteDifferences) {
  Rng rng(2);
  AffineLayer layer = AffineLayer::Glorot(3, 4, rng);
  for (double& b : layer.bias) b = Uniform01(rng);
  Matrix x = RandomMatrix(5, 3, rng);
  const Matrix up = RandomMatrix(5, 4, rng);
  auto loss = [&] { return Weighted(AffineForward(layer, x), up); };
  layer.ZeroGrad();
  const Matrix dx = AffineBackward(layer, x, up);

  std::vector<std::span<double>> p = {layer.weight.Values(), layer.bias, x.Values()};
  std::vector<std::span<const double>> a = {layer.grad_weight.Values(), layer.grad_bias,
                                            dx.Values()};
  const auto res = GradCheck(loss, p, a, 1e-5, 1e-6);
  EXPECT_TRUE(res.passed) << res.report;
  EXPECT_LT(res.max_rel_error, 1e-6);
  EXPECT_EQ(res.n_checked, 12u + 4u + 15u);
}

TEST(AffineTest, BackwardAccumulates) {
  Rng rng(3);
  AffineLayer layer = AffineLayer::Glorot(2, 2, rng);
  const Matrix x = RandomMatrix(3, 2, rng);
  const Matrix up = RandomMatrix(3, 2, rng);
  layer.ZeroGrad();
  AffineBackward(layer, x, up);
  const Matrix once = layer.grad_weight;
  AffineBackward(layer, x, up);
  for (std::size_t k = 0; k < once.size(); ++k)
    EXPECT_DOUBLE_EQ(layer.grad_weight.Values()[k], 2.0 * once.Values()[k]);
  layer.ZeroGrad();
  for (double g : layer.grad_weight.Values()) EXPECT_EQ(g, 0.0);
}

TEST(ElementwiseTest, Examples) {
  EXPECT_EQ(Sigmoid(0.0), 0.5);
  const Matrix r = Relu(Matrix(1, 2, {-3.0, 2.0}));
  EXPECT_EQ(r, Matrix(1, 2, {0.0, 2.0}));
  const auto d = RowDot(Matrix(1, 3, {1.0, 2.0, 3.0}), Matrix(1, 3, {4.0, 5.0, 6.0}));
  ASSERT_EQ(d.size(), 1u);
  EXPECT_EQ(d[0], 32.0);
  EXPECT_EQ(Hadamard(Matrix(1, 2, {2.0, 3.0}), Matrix(1, 2, {4.0, 5.0})),
            Matrix(1, 2, {8.0, 15.0}));
}

TEST(ElementwiseTest, ShapeMismatchThrows) {
  EXPECT_THROW(Hadamard(Matrix(2, 2), Matrix(2, 3)), DimensionError);
  EXPECT_THROW(RowDot(Matrix(2, 2), Matrix(3, 2)), DimensionError);
  EXPECT_THROW(ReluBackward(Matrix(2, 2), Matrix(1, 2)), DimensionError);
  EXPECT_THROW(SigmoidBackward(Matrix(2, 2), Matrix(2, 1)), DimensionError);
}

TEST(ElementwiseTest, SigmoidStableAtExtremes) {
  EXPECT_EQ(Sigmoid(500.0), 1.0);
  EXPECT_GE(Sigmoid(-500.0), 0.0);
  EXPECT_TRUE(std::isfinite(Sigmoid(-500.0)));
  EXPECT_TRUE(Sigmoid(Matrix(1, 2, {-500.0, 500.0})).AllFinite());
  EXPECT_EQ(Sigmoid(-800.0), 0.0);
}

TEST(ElementwiseTest, ReluDerivativeAtZeroIsZero) {
  const Matrix g = ReluBackward(Matrix(1, 3, {0.0, 1.0, -1.0}), Matrix(1, 3, 1.0));
  EXPECT_EQ(g, Matrix(1, 3, {0.0, 1.0, 0.0}));
}

// Every backward operator against central differences on random shapes up
// to 8x8.
TEST(ElementwiseTest, BackwardOperatorsMatchFiniteDifferences) {
  Rng rng(4);
  for (int trial = 0; trial < 20; ++trial) {
    const int rows = 1 + static_cast<int>(UniformIndex(rng, 8));
    const int cols = 1 + static_cast<int>(UniformIndex(rng, 8));
    const Matrix up = RandomMatrix(rows, cols, rng);

    Matrix x = AwayFromZero(rows, cols, rng);
    {
      const Matrix dx = ReluBackward(x, up);
      const auto res = CheckOne([&] { return Weighted(Relu(x), up); }, x, dx);
      EXPECT_TRUE(res.passed) << "relu " << res.report;
    }
    {
      Matrix z = RandomMatrix(rows, cols, rng, 4.0);
      const Matrix dz = SigmoidBackward(Sigmoid(z), up);
      const auto res = CheckOne([&] { return Weighted(Sigmoid(z), up); }, z, dz);
      EXPECT_TRUE(res.passed) << "sigmoid " << res.report;
    }
    {
      Matrix a = RandomMatrix(rows, cols, rng);
      Matrix b = RandomMatrix(rows, cols, rng);
      const auto [da, db] = HadamardBackward(a, b, up);
      auto loss = [&] { return Weighted(Hadamard(a, b), up); };
      EXPECT_TRUE(CheckOne(loss, a, da).passed) << "hadamard a";
      EXPECT_TRUE(CheckOne(loss, b, db).passed) << "hadamard b";
    }
    {
      Matrix a = RandomMatrix(rows, cols, rng);
      Matrix b = RandomMatrix(rows, cols, rng);
      std::vector<double> w(rows);
      for (double& v : w) v = 2.0 * Uniform01(rng) - 1.0;
      const auto [da, db] = RowDotBackward(a, b, w);
      auto loss = [&] {
        const auto d = RowDot(a, b);
        double s = 0.0;
        for (int r = 0; r < rows; ++r) s += d[r] * w[r];
        return s;
      };
      EXPECT_TRUE(CheckOne(loss, a, da).passed) << "rowdot a";
      EXPECT_TRUE(CheckOne(loss, b, db).passed) << "rowdot b";
    }
  }
}

TEST(ElementwiseTest, ForwardTotalOnFiniteInputs) {
  Rng rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    const Matrix x = RandomMatrix(8, 8, rng, 1000.0);
    EXPECT_TRUE(Relu(x).AllFinite());
    EXPECT_TRUE(Sigmoid(x).AllFinite());
    EXPECT_TRUE(Hadamard(x, x).AllFinite());
  }
}

TEST(AdamTest, ZeroGradientIsFixedPoint) {
  std::vector<double> p = {1.0, -2.0, 3.0};
  const auto before = p;
  const std::vector<double> g(3, 0.0);
  AdamState st(3, 0.01);
  for (int k = 0; k < 5; ++k) AdamStep(p, g, st);
  EXPECT_EQ(p, before);
  EXPECT_EQ(st.step, 5);
}

TEST(AdamTest, FirstStepIsLearningRate) {
  std::vector<double> p = {0.0};
  const std::vector<double> g = {1.0};
  AdamState st(1, 0.1);
  AdamStep(p, g, st);
  // m_hat = 1, v_hat = 1, so the step is -lr / (1 + eps).
  EXPECT_NEAR(p[0], -0.09999999900000009, 1e-15);
}

TEST(AdamTest, DeterministicTrajectories) {
  auto run = [] {
    Rng rng(6);
    std::vector<double> p(4, 0.5);
    AdamState st(4, 0.01);
    for (int k = 0; k < 50; ++k) {
      std::vector<double> g(4);
      for (double& v : g) v = Uniform01(rng) - 0.5;
      AdamStep(p, g, st);
    }
    return p;
  };
  EXPECT_EQ(run(), run());
}

TEST(AdamTest, ShapeMismatchThrows) {
  std::vector<double> p(3, 0.0);
  const std::vector<double> g(2, 0.0);
  AdamState st(3);
  EXPECT_THROW(AdamStep(p, g, st), DimensionError);
}

TEST(GradCheckTest, QuadraticIsExact) {
  std::vector<double> p = {0.3, -1.2, 2.5, 0.0};
  auto loss = [&] {
    double s = 0.0;
    for (double v : p) s += 0.5 * v * v;
    return s;
  };
  const std::vector<double> analytic = p;
  std::vector<std::span<double>> params = {p};
  std::vector<std::span<const double>> grads = {analytic};
  const auto res = GradCheck(loss, params, grads, 1e-5, 1e-6);
  EXPECT_LT(res.max_rel_error, 1e-9);
  EXPECT_TRUE(res.passed);
  // Parameters are restored.
  EXPECT_EQ(p, analytic);
}

TEST(GradCheckTest, CorruptedGradientFails) {
  std::vector<double> p = {0.3, -1.2, 2.5};
  auto loss = [&] {
    double s = 0.0;
    for (double v : p) s += 0.5 * v * v;
    return s;
  };
  std::vector<double> analytic = p;
  for (double& v : analytic) v *= 2.0;
  std::vector<std::span<double>> params = {p};
  std::vector<std::span<const double>> grads = {analytic};
  const auto res = GradCheck(loss, params, grads, 1e-5, 1e-4);
  EXPECT_NEAR(res.max_rel_error, 0.5, 1e-6);
  EXPECT_FALSE(res.passed);
}

TEST(GradCheckTest, NonFiniteLossReportsCoordinate) {
  // Finite at the base point, NaN once the second coordinate steps below 0.
  std::vector<double> p = {1.0, 1e-6};
  auto loss = [&] { return std::log(p[1]) + p[0]; };
  const std::vector<double> analytic = {1.0, 1e6};
  std::vector<std::span<double>> params = {p};
  std::vector<std::span<const double>> grads = {analytic};
  const auto res = GradCheck(loss, params, grads, 1e-5, 1e-4);
  EXPECT_FALSE(res.finite);
  EXPECT_FALSE(res.passed);
  EXPECT_EQ(res.worst_index, 1u);
  EXPECT_FALSE(res.report.empty());
}

}  // namespace
}  // namespace d2rec
