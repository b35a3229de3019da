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

#include "d2rec/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include <fmt/format.h>

#include "csv_util.hpp"

namespace d2rec {

void TrainConfig::Validate() const {
  model.Validate();
  if (batch_size < 2) throw ConfigError("train.batch_size must be >= 2");
  if (!(lr > 0.0)) throw ConfigError("train.lr must be > 0");
  if (max_epochs < 0) throw ConfigError("train.max_epochs must be >= 0");
  if (patience < 1) throw ConfigError("train.patience must be >= 1");
  if (max_epochs > 0 && patience > max_epochs)
    throw ConfigError("train.patience must not exceed train.max_epochs");
  if (negatives_per_positive < 0)
    throw ConfigError("train.negatives_per_positive must be >= 0");
}

std::vector<std::vector<ExposureRow>> MakeBatches(std::span<const ExposureRow> rows,
                                                  int batch_size, std::uint64_t epoch_seed) {
  std::vector<std::size_t> order(rows.size());
  std::iota(order.begin(), order.end(), 0);
  Rng rng(epoch_seed);
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<std::vector<ExposureRow>> batches;
  for (std::size_t b = 0; b < order.size(); b += batch_size) {
    const std::size_t e = std::min(order.size(), b + static_cast<std::size_t>(batch_size));
    if (e - b == 1 && !batches.empty()) {
      batches.back().push_back(rows[order[b]]);
      break;
    }
    auto& batch = batches.emplace_back();
    batch.reserve(e - b);
    for (std::size_t k = b; k < e; ++k) batch.push_back(rows[order[k]]);
  }
  return batches;
}

bool EarlyStop(std::span<const double> train_mse, int patience) {
  const std::size_t n = train_mse.size();
  if (patience < 1 || n <= static_cast<std::size_t>(patience)) return false;
  const std::size_t split = n - patience;
  const double best_before = *std::min_element(train_mse.begin(), train_mse.begin() + split);
  return std::all_of(train_mse.begin() + split, train_mse.end(),
                     [&](double v) { return v >= best_before; });
}

bool EarlyStop(const TrainHistory& history, int patience) {
  std::vector<double> mse;
  for (const auto& r : history.epochs) mse.push_back(r.train_mse);
  return EarlyStop(mse, patience);
}

double RatingMse(const D2RecParams& params, const EmbeddingInputs& emb,
                 std::span<const Rating> ratings, double positive_rate) {
  if (ratings.empty()) return 0.0;
  std::vector<int> users, items;
  users.reserve(ratings.size());
  items.reserve(ratings.size());
  for (const auto& r : ratings) {
    users.push_back(r.user);
    items.push_back(r.item);
  }
  const auto pred = PredictPairs(params, emb, users, items, positive_rate);
  double sse = 0.0;
  for (std::size_t k = 0; k < ratings.size(); ++k) {
    const double e = ratings[k].rating - pred[k];
    sse += e * e;
  }
  return sse / static_cast<double>(ratings.size());
}

LossReport EvaluateObjective(const D2RecParams& params, const EmbeddingInputs& emb,
                             const ExposureTable& table, int batch_size, std::uint64_t seed) {
  D2RecParams scratch = params;
  LossReport sum;
  sum.kappa = params.config.kappa;
  for (const auto& batch : MakeBatches(table.rows, batch_size, seed)) {
    const LossReport r =
        BatchObjective(scratch, emb, batch, table.positive_rate, /*accumulate_grads=*/false);
    sum.rating_loss += r.rating_loss;
    sum.exposure_loss += r.exposure_loss;
    sum.discrepancy_loss += r.discrepancy_loss;
    sum.total += r.total;
    sum.n_positive += r.n_positive;
  }
  sum.no_positive_rows = sum.n_positive == 0;
  return sum;
}

TrainResult Train(int n_users, int n_items, std::span<const Rating> train_ratings,
                  const EmbeddingInputs& emb, const TrainConfig& cfg, const TrainHooks& hooks) {
  cfg.Validate();
  const ModelConfig& mc = cfg.model;
  if (train_ratings.empty()) throw DomainError("training set is empty");
  if (mc.variant != Variant::kNoNetworkEmbeddings) {
    if (!emb.theta || !emb.beta) throw Error("graph embeddings are required for this variant");
    if (emb.theta->dim != mc.d_emb || emb.beta->dim != mc.d_emb)
      throw DimensionError(fmt::format("embedding dims {}/{} do not match d_emb {}",
                                       emb.theta->dim, emb.beta->dim, mc.d_emb));
    if (emb.theta->n_nodes != n_users || emb.beta->n_nodes != n_items)
      throw DimensionError(fmt::format("embedding rows {}/{} do not match {} users, {} items",
                                       emb.theta->n_nodes, emb.beta->n_nodes, n_users,
                                       n_items));
  }

  TrainResult result;
  D2RecParams params = InitParams(mc, n_users, n_items, DeriveSeed(cfg.seed, 1), emb.theta,
                                  emb.beta);
  ExposureTable table = BuildExposureTable(train_ratings, n_items, cfg.negatives_per_positive,
                                           DeriveSeed(cfg.seed, 2, 0));
  result.positive_rate = table.positive_rate;
  result.params = params;
  if (cfg.max_epochs == 0) return result;

  std::vector<AdamState> adam;
  for (const auto& view : params.ParamViews()) adam.emplace_back(view.size(), cfg.lr);

  double best_mse = std::numeric_limits<double>::infinity();
  std::vector<double> mse_trace;
  for (int epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    if (cfg.resample_negatives && epoch > 1)
      table = BuildExposureTable(train_ratings, n_items, cfg.negatives_per_positive,
                                 DeriveSeed(cfg.seed, 2, epoch - 1));
    const auto batches = MakeBatches(table.rows, cfg.batch_size, DeriveSeed(cfg.seed, 3, epoch));
    EpochRecord rec;
    rec.epoch = epoch;
    for (std::size_t b = 0; b < batches.size(); ++b) {
      params.ZeroGrad();
      const LossReport rep =
          BatchObjective(params, emb, batches[b], result.positive_rate, /*accumulate_grads=*/true);
      if (!std::isfinite(rep.total))
        throw TrainingError(fmt::format(
            "non-finite loss at epoch {} batch {}: rating {} exposure {} discrepancy {}", epoch,
            b, rep.rating_loss, rep.exposure_loss, rep.discrepancy_loss));
      auto views = params.ParamViews();
      auto grads = params.GradViews();
      for (std::size_t t = 0; t < views.size(); ++t) {
        for (double g : grads[t])
          if (!std::isfinite(g))
            throw TrainingError(
                fmt::format("non-finite gradient at epoch {} batch {} tensor {}", epoch, b, t));
        AdamStep(views[t], grads[t], adam[t]);
      }
      params.SyncTiedHeads();
      rec.rating_loss += rep.rating_loss;
      rec.exposure_loss += rep.exposure_loss;
      rec.discrepancy_loss += rep.discrepancy_loss;
      rec.total += rep.total;
    }
    rec.train_mse = RatingMse(params, emb, train_ratings, result.positive_rate);
    if (hooks.mse_override) rec.train_mse = hooks.mse_override(epoch, rec.train_mse);
    if (!std::isfinite(rec.train_mse))
      throw TrainingError(fmt::format("non-finite train MSE at epoch {}", epoch));

    result.history.epochs.push_back(rec);
    mse_trace.push_back(rec.train_mse);
    if (rec.train_mse < best_mse) {
      best_mse = rec.train_mse;
      result.history.best_epoch = epoch;
      result.params = params;
    }
    if (hooks.on_epoch) hooks.on_epoch(rec, params);
    if (EarlyStop(mse_trace, cfg.patience)) {
      result.history.stopped_early = true;
      break;
    }
  }
  return result;
}

TrainResult Train(const Dataset& ds, std::span<const Rating> train_ratings,
                  const EmbeddingTable* theta, const EmbeddingTable* beta,
                  const TrainConfig& cfg, const TrainHooks& hooks) {
  return Train(ds.n_users, ds.n_items, train_ratings, EmbeddingInputs{theta, beta}, cfg, hooks);
}

void WriteHistoryCsv(const std::string& path, const TrainHistory& history) {
  auto out = csv::OpenOut(path);
  out << "epoch,rating_loss,exposure_loss,discrepancy_loss,total,train_mse\n";
  for (const auto& r : history.epochs)
    out << fmt::format("{},{},{},{},{},{}\n", r.epoch, r.rating_loss, r.exposure_loss,
                       r.discrepancy_loss, r.total, r.train_mse);
}

}  // namespace d2rec
