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
#include <set>

#include "gtest/gtest.h"
#include "test_util.hpp"

namespace d2rec {
namespace {

std::vector<ExposureRow> NumberedRows(int n) {
  std::vector<ExposureRow> rows;
  for (int k = 0; k < n; ++k) rows.push_back({k, k, 1, 3.0});
  return rows;
}

std::vector<std::size_t> Sizes(const std::vector<std::vector<ExposureRow>>& batches) {
  std::vector<std::size_t> s;
  for (const auto& b : batches) s.push_back(b.size());
  return s;
}

TEST(MakeBatchesTest, ChunkSizes) {
  EXPECT_EQ(Sizes(MakeBatches(NumberedRows(10), 4, 1)), (std::vector<std::size_t>{4, 4, 2}));
  EXPECT_EQ(Sizes(MakeBatches(NumberedRows(9), 4, 1)), (std::vector<std::size_t>{4, 5}));
  EXPECT_EQ(Sizes(MakeBatches(NumberedRows(3), 8, 1)), (std::vector<std::size_t>{3}));
}

TEST(MakeBatchesTest, SeededPermutation) {
  const auto rows = NumberedRows(50);
  const auto a = MakeBatches(rows, 8, 7);
  EXPECT_EQ(a, MakeBatches(rows, 8, 7));
  EXPECT_NE(a, MakeBatches(rows, 8, 8));
  std::multiset<int> seen;
  for (const auto& b : a)
    for (const auto& r : b) seen.insert(r.user);
  EXPECT_EQ(seen.size(), 50u);
  EXPECT_EQ(std::set<int>(seen.begin(), seen.end()).size(), 50u);
}

TEST(EarlyStopTest, Examples) {
  EXPECT_FALSE(EarlyStop(std::vector<double>{5, 4, 3}, 10));
  std::vector<double> flat = {3.0};
  for (int k = 0; k < 10; ++k) flat.push_back(3.1);
  EXPECT_TRUE(EarlyStop(flat, 10));
  std::vector<double> reset = {3.0};
  for (int k = 0; k < 9; ++k) reset.push_back(3.1);
  reset.push_back(2.9);
  EXPECT_FALSE(EarlyStop(reset, 10));
  // Equal to the minimum is not an improvement.
  std::vector<double> ties(11, 3.0);
  EXPECT_TRUE(EarlyStop(ties, 10));
}

struct Fixture {
  int n_users = 20;
  int n_items = 20;
  EmbeddingTable theta, beta;
  std::vector<Rating> ratings;
};

// 200 ratings from a low-rank pattern over random 8-dim embeddings.
Fixture MakeFixture(std::uint64_t seed, int dim = 8) {
  Fixture fx;
  Rng rng(seed);
  fx.theta = EmbeddingTable(fx.n_users, dim);
  fx.beta = EmbeddingTable(fx.n_items, dim);
  for (float& v : fx.theta.values) v = static_cast<float>(Uniform01(rng) * 2.0 - 1.0);
  for (float& v : fx.beta.values) v = static_cast<float>(Uniform01(rng) * 2.0 - 1.0);
  for (int u = 0; u < fx.n_users; ++u) {
    for (int i = 0; i < fx.n_items; ++i) {
      if ((u + i) % 2 != 0) continue;
      double s = 0.0;
      for (int d = 0; d < dim; ++d) s += fx.theta.Row(u)[d] * fx.beta.Row(i)[d];
      fx.ratings.push_back({u, i, std::clamp(std::round(3.0 + s), 1.0, 5.0)});
    }
  }
  return fx;
}

TrainConfig SmallTrainConfig(std::uint64_t seed) {
  TrainConfig cfg;
  cfg.model.d_emb = 8;
  cfg.batch_size = 32;
  cfg.lr = 0.01;
  cfg.max_epochs = 30;
  cfg.patience = 10;
  cfg.seed = seed;
  return cfg;
}

TEST(TrainTest, ZeroEpochsReturnsInitialParams) {
  const Fixture fx = MakeFixture(1);
  TrainConfig cfg = SmallTrainConfig(3);
  cfg.max_epochs = 0;
  const auto res = Train(fx.n_users, fx.n_items, fx.ratings, {&fx.theta, &fx.beta}, cfg);
  EXPECT_TRUE(res.history.epochs.empty());
  EXPECT_EQ(res.history.best_epoch, 0);
  EXPECT_EQ(res.params, InitParams(cfg.model, fx.n_users, fx.n_items, DeriveSeed(3, 1),
                                   &fx.theta, &fx.beta));
}

TEST(TrainTest, PlateauStopsAfterPatienceAndRestoresSnapshot) {
  const Fixture fx = MakeFixture(2);
  TrainConfig cfg = SmallTrainConfig(4);
  cfg.max_epochs = 100;
  D2RecParams at_seven;
  TrainHooks hooks;
  hooks.mse_override = [](int epoch, double) {
    return epoch <= 7 ? 10.0 - epoch : 3.5;
  };
  hooks.on_epoch = [&](const EpochRecord& rec, const D2RecParams& p) {
    if (rec.epoch == 7) at_seven = p;
  };
  const auto res = Train(fx.n_users, fx.n_items, fx.ratings, {&fx.theta, &fx.beta}, cfg, hooks);
  EXPECT_EQ(res.history.epochs.size(), 17u);
  EXPECT_TRUE(res.history.stopped_early);
  EXPECT_EQ(res.history.best_epoch, 7);
  EXPECT_EQ(res.params, at_seven);
}

TEST(TrainTest, ReturnedParamsMatchMinimumRecordedMse) {
  const Fixture fx = MakeFixture(3);
  const TrainConfig cfg = SmallTrainConfig(5);
  const EmbeddingInputs emb{&fx.theta, &fx.beta};
  const auto res = Train(fx.n_users, fx.n_items, fx.ratings, emb, cfg);
  ASSERT_FALSE(res.history.epochs.empty());
  const auto best = std::min_element(
      res.history.epochs.begin(), res.history.epochs.end(),
      [](const EpochRecord& a, const EpochRecord& b) { return a.train_mse < b.train_mse; });
  EXPECT_EQ(best->epoch, res.history.best_epoch);
  EXPECT_DOUBLE_EQ(RatingMse(res.params, emb, fx.ratings, res.positive_rate), best->train_mse);
  for (const auto& rec : res.history.epochs) {
    EXPECT_TRUE(std::isfinite(rec.total));
    EXPECT_NEAR(rec.total,
                rec.rating_loss + rec.exposure_loss - cfg.model.kappa * rec.discrepancy_loss,
                1e-9 * std::max(1.0, std::abs(rec.total)));
  }
}

TEST(TrainTest, LearnsOnSmallSyntheticSet) {
  std::vector<double> ratio;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const Fixture fx = MakeFixture(10 + seed);
    ASSERT_EQ(fx.ratings.size(), 200u);
    const auto res =
        Train(fx.n_users, fx.n_items, fx.ratings, {&fx.theta, &fx.beta}, SmallTrainConfig(seed));
    ratio.push_back(res.history.epochs.back().train_mse / res.history.epochs.front().train_mse);
  }
  std::sort(ratio.begin(), ratio.end());
  EXPECT_LT(ratio[2], 1.0);
}

TEST(TrainTest, DeterministicForFixedSeed) {
  const Fixture fx = MakeFixture(4);
  TrainConfig cfg = SmallTrainConfig(9);
  cfg.max_epochs = 5;
  cfg.patience = 5;
  const EmbeddingInputs emb{&fx.theta, &fx.beta};
  const auto a = Train(fx.n_users, fx.n_items, fx.ratings, emb, cfg);
  const auto b = Train(fx.n_users, fx.n_items, fx.ratings, emb, cfg);
  EXPECT_EQ(a.params, b.params);
  ASSERT_EQ(a.history.epochs.size(), b.history.epochs.size());
  for (std::size_t e = 0; e < a.history.epochs.size(); ++e)
    EXPECT_EQ(a.history.epochs[e].total, b.history.epochs[e].total);
}

TEST(TrainTest, VariantsTrain) {
  const Fixture fx = MakeFixture(5);
  for (Variant v : {Variant::kNoNetworkEmbeddings, Variant::kNoDisentanglement}) {
    TrainConfig cfg = SmallTrainConfig(2);
    cfg.max_epochs = 3;
    cfg.patience = 3;
    cfg.model.variant = v;
    const auto res = Train(fx.n_users, fx.n_items, fx.ratings, {&fx.theta, &fx.beta}, cfg);
    EXPECT_EQ(res.history.epochs.size(), 3u) << VariantName(v);
    if (v == Variant::kNoDisentanglement) {
      EXPECT_EQ(res.params.heads[kAlphaUser], res.params.heads[kDeltaUser]);
      EXPECT_EQ(res.params.heads[kAlphaItem], res.params.heads[kGammaItem]);
    }
  }
}

TEST(TrainTest, NonFiniteLossAborts) {
  Fixture fx = MakeFixture(6);
  fx.theta.values[0] = std::numeric_limits<float>::quiet_NaN();
  TrainConfig cfg = SmallTrainConfig(1);
  cfg.max_epochs = 2;
  cfg.patience = 2;
  EXPECT_THROW(Train(fx.n_users, fx.n_items, fx.ratings, {&fx.theta, &fx.beta}, cfg),
               TrainingError);
}

TEST(TrainConfigTest, Validation) {
  TrainConfig cfg;
  cfg.batch_size = 0;
  EXPECT_THROW(cfg.Validate(), ConfigError);
  cfg = TrainConfig{};
  cfg.patience = 300;
  EXPECT_THROW(cfg.Validate(), ConfigError);
  cfg = TrainConfig{};
  cfg.lr = -1.0;
  EXPECT_THROW(cfg.Validate(), ConfigError);
}

TEST(HistoryCsvTest, Header) {
  TrainHistory h;
  h.epochs.push_back({1, 1.0, 2.0, 3.0, 1.5, 0.5});
  const auto path = (d2rec::testing::TempDir() / "h.csv").string();
  WriteHistoryCsv(path, h);
  const std::string text = d2rec::testing::ReadFile(path);
  EXPECT_EQ(text.substr(0, text.find('\n')),
            "epoch,rating_loss,exposure_loss,discrepancy_loss,total,train_mse");
}

}  // namespace
}  // namespace d2rec
