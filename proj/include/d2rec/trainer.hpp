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
#include <vector>

#include "d2rec/dataio.hpp"
#include "d2rec/graph_embed.hpp"
#include "d2rec/model.hpp"

namespace d2rec {

struct TrainConfig {
  ModelConfig model;  // model.d_emb is the embedding size
  int batch_size = 512;
  double lr = 0.001;
  int max_epochs = 200;
  int patience = 10;
  int negatives_per_positive = 1;
  // Draw fresh negatives every epoch; otherwise one table is reused.
  bool resample_negatives = true;
  std::uint64_t seed = 0;

  void Validate() const;
};

// Hyperparameter grids exposed for sweeps.
inline constexpr int kEmbeddingSizeGrid[] = {32, 64, 128, 256};
inline constexpr int kBatchSizeGrid[] = {64, 128, 512, 1000};
inline constexpr double kLearningRateGrid[] = {0.0001, 0.001, 0.01};

struct EpochRecord {
  int epoch = 0;  // 1-based
  double rating_loss = 0.0;
  double exposure_loss = 0.0;
  double discrepancy_loss = 0.0;
  double total = 0.0;
  double train_mse = 0.0;
};

struct TrainHistory {
  std::vector<EpochRecord> epochs;
  int best_epoch = 0;  // 0 when no epoch completed
  bool stopped_early = false;
};

// Seeded shuffle, then contiguous chunks. A trailing chunk of a single row is
// merged into the previous one.
std::vector<std::vector<ExposureRow>> MakeBatches(std::span<const ExposureRow> rows,
                                                  int batch_size, std::uint64_t epoch_seed);

// True iff the last `patience` epochs never went below the minimum train MSE
// reached before them.
bool EarlyStop(std::span<const double> train_mse, int patience);
bool EarlyStop(const TrainHistory& history, int patience);

// Hooks for observing and scripting a run.
struct TrainHooks {
  std::function<void(const EpochRecord&, const D2RecParams&)> on_epoch;
  // Replaces the measured train MSE of an epoch (1-based); scripted traces.
  std::function<double(int epoch, double measured)> mse_override;
};

struct TrainResult {
  D2RecParams params;  // snapshot of the best-MSE epoch
  TrainHistory history;
  double positive_rate = 0.0;
};

// Adam over the batch objective; stops after `patience` epochs without a new
// train-MSE minimum and returns the best snapshot.
TrainResult Train(int n_users, int n_items, std::span<const Rating> train_ratings,
                  const EmbeddingInputs& emb, const TrainConfig& cfg,
                  const TrainHooks& hooks = {});
TrainResult Train(const Dataset& ds, std::span<const Rating> train_ratings,
                  const EmbeddingTable* theta, const EmbeddingTable* beta,
                  const TrainConfig& cfg, const TrainHooks& hooks = {});

// Mean squared error of the model over rated pairs.
double RatingMse(const D2RecParams& params, const EmbeddingInputs& emb,
                 std::span<const Rating> ratings, double positive_rate);

// Objective summed over all batches of `table` with no parameter update.
LossReport EvaluateObjective(const D2RecParams& params, const EmbeddingInputs& emb,
                             const ExposureTable& table, int batch_size, std::uint64_t seed);

// `epoch,rating_loss,exposure_loss,discrepancy_loss,total,train_mse`
void WriteHistoryCsv(const std::string& path, const TrainHistory& history);

}  // namespace d2rec
