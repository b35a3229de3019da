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

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "d2rec/dataio.hpp"
#include "d2rec/graph_embed.hpp"
#include "d2rec/nncore.hpp"

namespace d2rec {

enum class Variant {
  kFull,
  // Heads read freely trained embedding tables instead of graph embeddings.
  kNoNetworkEmbeddings,
  // h1=h2=h3 and h4=h5=h6: one entangled factor per side.
  kNoDisentanglement,
};

enum class OmegaMode {
  // prediction = omega * ReLU(gamma_ui . delta_ui)
  kScalePrediction,
  // prediction = ReLU(gamma_ui . delta_ui); omega weights the squared error
  kWeightLoss,
};

std::string VariantName(Variant v);
Variant ParseVariant(const std::string& name);
std::string OmegaModeName(OmegaMode m);
OmegaMode ParseOmegaMode(const std::string& name);

struct ModelConfig {
  int d_emb = 64;
  int d_factor = 0;  // 0 means d_emb
  int head_depth = 1;
  Variant variant = Variant::kFull;
  double kappa = 0.5;
  double omega_max = 100.0;
  OmegaMode omega_mode = OmegaMode::kScalePrediction;
  // Learnable offset inside the exposure sigmoid.
  bool exposure_bias = false;
  // Clamp predictions to [1, 5] at inference.
  bool clamp_predictions = false;
  // Train copies of the graph embeddings together with the heads.
  bool fine_tune_embeddings = false;

  int FactorDim() const { return d_factor > 0 ? d_factor : d_emb; }
  bool UsesFreeTables() const {
    return variant == Variant::kNoNetworkEmbeddings || fine_tune_embeddings;
  }
  void Validate() const;

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

// Feed-forward head: affine layers joined by ReLU. The outer ReLU that
// produces a factor is applied by the caller.
struct Head {
  std::vector<AffineLayer> layers;
  friend bool operator==(const Head&, const Head&) = default;
};

enum HeadIndex { kAlphaUser = 0, kGammaUser, kDeltaUser, kAlphaItem, kGammaItem, kDeltaItem };

struct D2RecParams {
  ModelConfig config;
  std::array<Head, 6> heads;
  double exposure_bias = 0.0;
  double grad_exposure_bias = 0.0;
  // Present only when config.UsesFreeTables().
  std::optional<Matrix> user_table;
  std::optional<Matrix> item_table;
  std::optional<Matrix> grad_user_table;
  std::optional<Matrix> grad_item_table;

  void ZeroGrad();
  // Copies h1 into h2, h3 and h4 into h5, h6 under kNoDisentanglement.
  void SyncTiedHeads();
  // Trainable tensors and matching gradients, in a fixed order. Tied copies
  // are excluded.
  std::vector<std::span<double>> ParamViews();
  std::vector<std::span<const double>> GradViews();

  friend bool operator==(const D2RecParams&, const D2RecParams&) = default;
};

// Free tables start from uniform(-0.01, 0.01); under fine-tuning they start
// from the supplied graph embeddings.
D2RecParams InitParams(const ModelConfig& config, int n_users, int n_items,
                       std::uint64_t seed, const EmbeddingTable* theta = nullptr,
                       const EmbeddingTable* beta = nullptr);

struct FactorBundle {
  Matrix alpha_u, gamma_u, delta_u;
  Matrix alpha_i, gamma_i, delta_i;
};

struct CombinedFactors {
  Matrix alpha_ui, gamma_ui, delta_ui;
};

struct LossReport {
  double rating_loss = 0.0;
  double exposure_loss = 0.0;
  double discrepancy_loss = 0.0;
  double total = 0.0;
  double kappa = 0.0;
  std::size_t n_positive = 0;
  // Set when the batch had no exposure=1 rows (rating term is then 0).
  bool no_positive_rows = false;
};

// Graph embeddings the heads read from; ignored for free-table variants.
struct EmbeddingInputs {
  const EmbeddingTable* theta = nullptr;
  const EmbeddingTable* beta = nullptr;
};

// Factor heads applied to aligned rows of user and item embeddings.
FactorBundle Disentangle(const Matrix& theta_batch, const Matrix& beta_batch,
                         const D2RecParams& params);
CombinedFactors Combine(const FactorBundle& bundle);
// sigmoid(alpha_ui . gamma_ui + bias) per row.
std::vector<double> PredictExposure(const CombinedFactors& cf, double bias = 0.0);
// 1 + p/(1-p) * (1-q)/q, clamped to [1, omega_max]. Throws ConfigError for p
// outside (0, 1).
std::vector<double> Reweight(double positive_rate, std::span<const double> exposure_prob,
                             double omega_max);
// omega * ReLU(gamma_ui . delta_ui) per row.
std::vector<double> PredictRating(const CombinedFactors& cf, std::span<const double> omega);

// Biased (V-statistic) squared MMD with a Gaussian RBF kernel
// exp(-|a-b|^2 / (2 sigma^2)). Without `sigma` the bandwidth is the median
// pairwise distance over the pooled rows (1.0 if that median is zero).
double Mmd2(const Matrix& x, const Matrix& y, std::optional<double> sigma = std::nullopt);

// Same value as Mmd2; adds scale * d(mmd2)/dx and d/dy into grad_x, grad_y.
// With the median bandwidth the derivative includes the path through the
// bandwidth.
double Mmd2WithGrad(const Matrix& x, const Matrix& y, std::optional<double> sigma,
                    double scale, Matrix& grad_x, Matrix& grad_y);

double MedianPairwiseDistance(const Matrix& x, const Matrix& y);

// Sum of the six within-side pairwise MMD terms. Needs >= 2 rows.
double DiscrepancyLoss(const FactorBundle& bundle);
// Adds scale * d(DiscrepancyLoss)/d(factor) into `grads`.
double DiscrepancyLossWithGrad(const FactorBundle& bundle, double scale,
                               FactorBundle& grads);

// L = sum over exposure=1 rows of (y - yhat)^2 (omega-weighted under
// kWeightLoss); L_exp = binary cross-entropy with probabilities clamped to
// [1e-7, 1-1e-7]; total = L + L_exp - kappa * L_disc.
LossReport Losses(std::span<const ExposureRow> batch, std::span<const double> prediction,
                  std::span<const double> exposure_prob, double discrepancy, double kappa,
                  std::span<const double> loss_weights = {});

// Full forward pass with the intermediates needed for backpropagation.
struct ForwardPass {
  Matrix theta_batch, beta_batch;
  struct HeadTrace {
    std::vector<Matrix> inputs;
    std::vector<Matrix> pre;  // pre-activation of each layer
  };
  std::array<HeadTrace, 6> traces;
  FactorBundle bundle;
  CombinedFactors combined;
  std::vector<double> exposure_logit;
  std::vector<double> exposure_prob;
  std::vector<double> omega;
  std::vector<double> rating_dot;  // gamma_ui . delta_ui
  std::vector<double> prediction;
};

ForwardPass Forward(const D2RecParams& params, const EmbeddingInputs& emb,
                    std::span<const int> users, std::span<const int> items,
                    double positive_rate, std::span<const double> frozen_omega = {});

// Objective of one batch. Gradients are accumulated into `params` when
// `accumulate_grads` is set. Omega never carries gradient; `frozen_omega`
// pins its value (used by the gradient checker).
LossReport BatchObjective(D2RecParams& params, const EmbeddingInputs& emb,
                          std::span<const ExposureRow> batch, double positive_rate,
                          bool accumulate_grads, std::span<const double> frozen_omega = {});

// Rating predictions for (user, item) pairs as used at inference time.
std::vector<double> PredictPairs(const D2RecParams& params, const EmbeddingInputs& emb,
                                 std::span<const int> users, std::span<const int> items,
                                 double positive_rate);

// Toy instance for checking the analytic gradient of the full objective.
struct GradCheckSetup {
  int n_users = 6;
  int n_items = 6;
  int batch = 6;
  int d_emb = 8;
  int d_factor = 4;
  int head_depth = 1;
  Variant variant = Variant::kFull;
  OmegaMode omega_mode = OmegaMode::kScalePrediction;
  double h = 1e-5;
  double tolerance = 1e-4;
};

// Random embeddings, parameters and batch; omega is frozen at its forward
// value since it carries no gradient.
GradCheckResult FullObjectiveGradCheck(const GradCheckSetup& setup, std::uint64_t seed);

// Binary checkpoint: "D2CKP", u32 version, u32 section count, then per
// section u32 name length, name, u32 rows, u32 cols, rows*cols float64. Heads
// are sections h1..h6 (deeper layers h1.1, h1.2, ...) holding weights then
// bias as one (in + 1) x out block.
void WriteCheckpoint(const std::string& path, const D2RecParams& params);
D2RecParams ReadCheckpoint(const std::string& path, const ModelConfig& config);

// JSON sidecar: model config plus the training positive rate.
void WriteModelSidecar(const std::string& path, const ModelConfig& config,
                       double positive_rate);
std::pair<ModelConfig, double> ReadModelSidecar(const std::string& path);

}  // namespace d2rec
