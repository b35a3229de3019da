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

#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "d2rec/common.hpp"

namespace d2rec {

// Row-major dense matrix of doubles.
class Matrix {
 public:
  Matrix() = default;
  Matrix(int rows, int cols, double fill = 0.0)
      : rows_(rows), cols_(cols), values_(static_cast<std::size_t>(rows) * cols, fill) {}
  Matrix(int rows, int cols, std::vector<double> values);

  static Matrix Identity(int n);

  int rows() const { return rows_; }
  int cols() const { return cols_; }
  std::size_t size() const { return values_.size(); }

  double& operator()(int r, int c) { return values_[Index(r, c)]; }
  double operator()(int r, int c) const { return values_[Index(r, c)]; }

  std::span<double> Row(int r) {
    return {values_.data() + static_cast<std::size_t>(r) * cols_,
            static_cast<std::size_t>(cols_)};
  }
  std::span<const double> Row(int r) const {
    return {values_.data() + static_cast<std::size_t>(r) * cols_,
            static_cast<std::size_t>(cols_)};
  }
  std::span<double> Values() { return values_; }
  std::span<const double> Values() const { return values_; }

  void Fill(double v) { std::fill(values_.begin(), values_.end(), v); }
  bool AllFinite() const;
  std::string ShapeString() const;

  friend bool operator==(const Matrix&, const Matrix&) = default;

 private:
  std::size_t Index(int r, int c) const {
    return static_cast<std::size_t>(r) * cols_ + c;
  }

  int rows_ = 0;
  int cols_ = 0;
  std::vector<double> values_;
};

// y = x * weight + bias, weight is [in x out].
struct AffineLayer {
  Matrix weight;
  std::vector<double> bias;
  Matrix grad_weight;
  std::vector<double> grad_bias;

  AffineLayer() = default;
  AffineLayer(int in, int out);

  // Glorot-uniform weights, zero bias.
  static AffineLayer Glorot(int in, int out, Rng& rng);

  int in() const { return weight.rows(); }
  int out() const { return weight.cols(); }
  void ZeroGrad();

  friend bool operator==(const AffineLayer&, const AffineLayer&) = default;
};

Matrix AffineForward(const AffineLayer& layer, const Matrix& x);
// Accumulates weight/bias gradients and returns dLoss/dx.
Matrix AffineBackward(AffineLayer& layer, const Matrix& x, const Matrix& upstream);

Matrix Relu(const Matrix& x);
// Derivative at exactly zero is taken as zero.
Matrix ReluBackward(const Matrix& x, const Matrix& upstream);

double Sigmoid(double x);
Matrix Sigmoid(const Matrix& x);
Matrix SigmoidBackward(const Matrix& output, const Matrix& upstream);

Matrix Hadamard(const Matrix& a, const Matrix& b);
std::pair<Matrix, Matrix> HadamardBackward(const Matrix& a, const Matrix& b,
                                           const Matrix& upstream);

// Per-row inner products, one entry per row.
std::vector<double> RowDot(const Matrix& a, const Matrix& b);
std::pair<Matrix, Matrix> RowDotBackward(const Matrix& a, const Matrix& b,
                                         std::span<const double> upstream);

struct AdamState {
  std::vector<double> m;
  std::vector<double> v;
  std::int64_t step = 0;
  double lr = 0.001;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  AdamState() = default;
  explicit AdamState(std::size_t n, double learning_rate = 0.001)
      : m(n, 0.0), v(n, 0.0), lr(learning_rate) {}
};

void AdamStep(std::span<double> params, std::span<const double> grads,
              AdamState& state);

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t worst_index = 0;  // flattened over all parameter spans
  std::size_t n_checked = 0;
  bool finite = true;
  bool passed = false;
  std::string report;
};

// Central differences on every coordinate of `params` (modified in place and
// restored). Relative error is |a - n| / max(|a|, |n|, 1e-12).
GradCheckResult GradCheck(const std::function<double()>& loss,
                          std::span<const std::span<double>> params,
                          std::span<const std::span<const double>> analytic,
                          double h, double tolerance);

}  // namespace d2rec
