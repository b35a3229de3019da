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

#include <algorithm>
#include <cmath>

#include <fmt/format.h>

namespace d2rec {

namespace {

void RequireSameShape(const Matrix& a, const Matrix& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw DimensionError(fmt::format("{}: shapes {} and {} differ", op,
                                     a.ShapeString(), b.ShapeString()));
}

}  // namespace

Matrix::Matrix(int rows, int cols, std::vector<double> values)
    : rows_(rows), cols_(cols), values_(std::move(values)) {
  if (values_.size() != static_cast<std::size_t>(rows) * cols)
    throw DimensionError(fmt::format("{} values for a {}x{} matrix",
                                     values_.size(), rows, cols));
}

Matrix Matrix::Identity(int n) {
  Matrix m(n, n);
  for (int k = 0; k < n; ++k) m(k, k) = 1.0;
  return m;
}

bool Matrix::AllFinite() const {
  return std::all_of(values_.begin(), values_.end(),
                     [](double v) { return std::isfinite(v); });
}

std::string Matrix::ShapeString() const { return fmt::format("[{}x{}]", rows_, cols_); }

AffineLayer::AffineLayer(int in, int out)
    : weight(in, out), bias(out, 0.0), grad_weight(in, out), grad_bias(out, 0.0) {}

AffineLayer AffineLayer::Glorot(int in, int out, Rng& rng) {
  AffineLayer layer(in, out);
  const double limit = std::sqrt(6.0 / (in + out));
  for (double& w : layer.weight.Values()) w = (2.0 * Uniform01(rng) - 1.0) * limit;
  return layer;
}

void AffineLayer::ZeroGrad() {
  grad_weight.Fill(0.0);
  std::fill(grad_bias.begin(), grad_bias.end(), 0.0);
}

Matrix AffineForward(const AffineLayer& layer, const Matrix& x) {
  if (x.cols() != layer.in())
    throw DimensionError(fmt::format("affine: input {} does not match weight {}",
                                     x.ShapeString(), layer.weight.ShapeString()));
  const int out = layer.out();
  Matrix y(x.rows(), out);
  for (int r = 0; r < x.rows(); ++r) {
    auto yr = y.Row(r);
    std::copy(layer.bias.begin(), layer.bias.end(), yr.begin());
    const auto xr = x.Row(r);
    for (int k = 0; k < layer.in(); ++k) {
      const double xk = xr[k];
      if (xk == 0.0) continue;
      const auto wk = layer.weight.Row(k);
      for (int c = 0; c < out; ++c) yr[c] += xk * wk[c];
    }
  }
  return y;
}

Matrix AffineBackward(AffineLayer& layer, const Matrix& x, const Matrix& upstream) {
  if (x.cols() != layer.in() || upstream.cols() != layer.out() ||
      upstream.rows() != x.rows())
    throw DimensionError(fmt::format(
        "affine backward: input {} / upstream {} vs weight {}", x.ShapeString(),
        upstream.ShapeString(), layer.weight.ShapeString()));
  Matrix dx(x.rows(), layer.in());
  for (int r = 0; r < x.rows(); ++r) {
    const auto xr = x.Row(r);
    const auto gr = upstream.Row(r);
    auto dxr = dx.Row(r);
    for (int c = 0; c < layer.out(); ++c) layer.grad_bias[c] += gr[c];
    for (int k = 0; k < layer.in(); ++k) {
      const auto wk = layer.weight.Row(k);
      auto gwk = layer.grad_weight.Row(k);
      double acc = 0.0;
      for (int c = 0; c < layer.out(); ++c) {
        acc += gr[c] * wk[c];
        gwk[c] += xr[k] * gr[c];
      }
      dxr[k] = acc;
    }
  }
  return dx;
}

Matrix Relu(const Matrix& x) {
  Matrix y = x;
  for (double& v : y.Values()) v = v > 0.0 ? v : 0.0;
  return y;
}

Matrix ReluBackward(const Matrix& x, const Matrix& upstream) {
  RequireSameShape(x, upstream, "relu backward");
  Matrix g = upstream;
  const auto xv = x.Values();
  auto gv = g.Values();
  for (std::size_t k = 0; k < gv.size(); ++k)
    if (!(xv[k] > 0.0)) gv[k] = 0.0;
  return g;
}

double Sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

Matrix Sigmoid(const Matrix& x) {
  Matrix y = x;
  for (double& v : y.Values()) v = Sigmoid(v);
  return y;
}

Matrix SigmoidBackward(const Matrix& output, const Matrix& upstream) {
  RequireSameShape(output, upstream, "sigmoid backward");
  Matrix g = upstream;
  const auto yv = output.Values();
  auto gv = g.Values();
  for (std::size_t k = 0; k < gv.size(); ++k) gv[k] *= yv[k] * (1.0 - yv[k]);
  return g;
}

Matrix Hadamard(const Matrix& a, const Matrix& b) {
  RequireSameShape(a, b, "hadamard");
  Matrix y = a;
  auto yv = y.Values();
  const auto bv = b.Values();
  for (std::size_t k = 0; k < yv.size(); ++k) yv[k] *= bv[k];
  return y;
}

std::pair<Matrix, Matrix> HadamardBackward(const Matrix& a, const Matrix& b,
                                           const Matrix& upstream) {
  RequireSameShape(a, b, "hadamard backward");
  RequireSameShape(a, upstream, "hadamard backward");
  return {Hadamard(upstream, b), Hadamard(upstream, a)};
}

std::vector<double> RowDot(const Matrix& a, const Matrix& b) {
  RequireSameShape(a, b, "rowdot");
  std::vector<double> out(a.rows(), 0.0);
  for (int r = 0; r < a.rows(); ++r) {
    const auto ar = a.Row(r);
    const auto br = b.Row(r);
    double s = 0.0;
    for (int c = 0; c < a.cols(); ++c) s += ar[c] * br[c];
    out[r] = s;
  }
  return out;
}

std::pair<Matrix, Matrix> RowDotBackward(const Matrix& a, const Matrix& b,
                                         std::span<const double> upstream) {
  RequireSameShape(a, b, "rowdot backward");
  if (upstream.size() != static_cast<std::size_t>(a.rows()))
    throw DimensionError(fmt::format("rowdot backward: {} upstream values for {}",
                                     upstream.size(), a.ShapeString()));
  Matrix da(a.rows(), a.cols());
  Matrix db(a.rows(), a.cols());
  for (int r = 0; r < a.rows(); ++r) {
    for (int c = 0; c < a.cols(); ++c) {
      da(r, c) = upstream[r] * b(r, c);
      db(r, c) = upstream[r] * a(r, c);
    }
  }
  return {std::move(da), std::move(db)};
}

void AdamStep(std::span<double> params, std::span<const double> grads,
              AdamState& state) {
  if (params.size() != grads.size() || state.m.size() != params.size() ||
      state.v.size() != params.size())
    throw DimensionError(fmt::format("adam: {} params, {} grads, {} moments",
                                     params.size(), grads.size(), state.m.size()));
  ++state.step;
  const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
  for (std::size_t k = 0; k < params.size(); ++k) {
    const double g = grads[k];
    state.m[k] = state.beta1 * state.m[k] + (1.0 - state.beta1) * g;
    state.v[k] = state.beta2 * state.v[k] + (1.0 - state.beta2) * g * g;
    const double m_hat = state.m[k] / bc1;
    const double v_hat = state.v[k] / bc2;
    params[k] -= state.lr * m_hat / (std::sqrt(v_hat) + state.eps);
  }
}

GradCheckResult GradCheck(const std::function<double()>& loss,
                          std::span<const std::span<double>> params,
                          std::span<const std::span<const double>> analytic,
                          double h, double tolerance) {
  if (params.size() != analytic.size())
    throw DimensionError("grad check: parameter and gradient lists differ");
  GradCheckResult result;
  std::size_t flat = 0;
  for (std::size_t t = 0; t < params.size(); ++t) {
    if (params[t].size() != analytic[t].size())
      throw DimensionError(fmt::format("grad check: tensor {} has {} params, {} grads",
                                       t, params[t].size(), analytic[t].size()));
    for (std::size_t k = 0; k < params[t].size(); ++k, ++flat) {
      double& p = params[t][k];
      const double saved = p;
      p = saved + h;
      const double up = loss();
      p = saved - h;
      const double down = loss();
      p = saved;
      if (!std::isfinite(up) || !std::isfinite(down)) {
        result.finite = false;
        result.worst_index = flat;
        result.report = fmt::format("non-finite loss at coordinate {} (tensor {}, entry {})",
                                    flat, t, k);
        result.n_checked = flat + 1;
        return result;
      }
      const double numeric = (up - down) / (2.0 * h);
      const double a = analytic[t][k];
      const double denom = std::max({std::abs(a), std::abs(numeric), 1e-12});
      const double rel = std::abs(a - numeric) / denom;
      if (rel > result.max_rel_error) {
        result.max_rel_error = rel;
        result.worst_index = flat;
        result.report = fmt::format(
            "worst coordinate {} (tensor {}, entry {}): analytic {:.6e}, numeric {:.6e}",
            flat, t, k, a, numeric);
      }
    }
  }
  result.n_checked = flat;
  result.passed = result.max_rel_error < tolerance;
  return result;
}

}  // namespace d2rec
