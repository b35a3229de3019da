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

#include "d2rec/graph_embed.hpp"

#include <cmath>
#include <numeric>

#include "gtest/gtest.h"
#include "test_util.hpp"

namespace d2rec {
namespace {

WalkConfig SmallConfig() {
  WalkConfig cfg;
  cfg.walks_per_node = 20;
  cfg.walk_length = 20;
  cfg.window = 3;
  cfg.negatives = 5;
  cfg.sgns_epochs = 5;
  cfg.dim = 16;
  return cfg;
}

Adjacency Cliques(int n_cliques, int size) {
  std::vector<std::pair<int, int>> edges;
  for (int c = 0; c < n_cliques; ++c)
    for (int a = 0; a < size; ++a)
      for (int b = a + 1; b < size; ++b) edges.emplace_back(c * size + a, c * size + b);
  return BuildSocialAdjacency(n_cliques * size, edges);
}

TEST(WalkTest, SelfLoopForcesStationaryWalk) {
  const Adjacency adj = BuildSocialAdjacency(1, {});
  WalkConfig cfg;
  cfg.walks_per_node = 1;
  cfg.walk_length = 5;
  const auto walks = GenerateWalks(adj, cfg, 1);
  ASSERT_EQ(walks.size(), 1u);
  EXPECT_EQ(walks[0], (Walk{0, 0, 0, 0, 0}));
}

TEST(WalkTest, PathGraphBouncesBack) {
  const std::vector<std::pair<int, int>> edges = {{0, 1}};
  const Adjacency adj = BuildSocialAdjacency(2, edges);
  WalkConfig cfg;
  cfg.walks_per_node = 1;
  cfg.walk_length = 3;
  const auto walks = GenerateWalks(adj, cfg, 1);
  ASSERT_EQ(walks.size(), 2u);
  EXPECT_EQ(walks[0], (Walk{0, 1, 0}));
}

TEST(WalkTest, CycleWithSmallQPrefersOutward) {
  std::vector<std::pair<int, int>> edges;
  for (int v = 0; v < 100; ++v) edges.emplace_back(v, (v + 1) % 100);
  const Adjacency adj = BuildSocialAdjacency(100, edges);
  Rng rng(3);
  int outward = 0, back = 0;
  // Transition from node 1 having arrived from node 0: back is 0, outward 2.
  for (int k = 0; k < 10000; ++k) {
    const int next = NextNode(adj, 0, 1, 1.0, 0.25, rng);
    (next == 0 ? back : outward) += 1;
  }
  EXPECT_GT(outward, back);
  // Weights 1 : 4, so outward is about 80%.
  EXPECT_NEAR(outward / 10000.0, 0.8, 0.02);
}

TEST(WalkTest, TransitionFrequenciesMatchBiasedWeights) {
  // Gadget: prev=0, cur=1; neighbors of 1 are 0 (return), 2 (also adjacent
  // to 0) and 3 (outward).
  const std::vector<std::pair<int, int>> edges = {{0, 1}, {0, 2}, {1, 2}, {1, 3}};
  const Adjacency adj = BuildSocialAdjacency(4, edges);
  const double p = 2.0, q = 0.5;
  const auto w = TransitionWeights(adj, 0, 1, p, q);
  ASSERT_EQ(adj[1], (std::vector<int>{0, 2, 3}));
  EXPECT_EQ(w, (std::vector<double>{0.5, 1.0, 2.0}));
  const double total = std::accumulate(w.begin(), w.end(), 0.0);
  Rng rng(17);
  std::vector<int> counts(4, 0);
  const int n = 100000;
  for (int k = 0; k < n; ++k) ++counts[NextNode(adj, 0, 1, p, q, rng)];
  for (int k = 0; k < 3; ++k) {
    const double expected = w[k] / total;
    EXPECT_NEAR(counts[adj[1][k]] / static_cast<double>(n), expected, 0.05 * expected);
  }
}

TEST(WalkTest, DeterministicAndThreadIndependent) {
  const Adjacency adj = Cliques(3, 6);
  WalkConfig cfg = SmallConfig();
  cfg.return_param_p = 0.5;
  cfg.inout_param_q = 2.0;
  const auto a = GenerateWalks(adj, cfg, 9, 1);
  const auto b = GenerateWalks(adj, cfg, 9, 1);
  const auto c = GenerateWalks(adj, cfg, 9, 4);
  EXPECT_EQ(a, b);
  EXPECT_EQ(a, c);
  EXPECT_EQ(a.size(), 18u * cfg.walks_per_node);
  for (const auto& w : a) EXPECT_EQ(w.size(), static_cast<std::size_t>(cfg.walk_length));
}

TEST(SkipGramTest, ZeroEpochsReturnsInitialization) {
  const Adjacency adj = Cliques(2, 5);
  WalkConfig cfg = SmallConfig();
  cfg.sgns_epochs = 0;
  const auto walks = GenerateWalks(adj, cfg, 1);
  const auto trained = TrainSkipGram(walks, cfg, 10, 5);
  cfg.sgns_epochs = 3;
  const auto other = TrainSkipGram(walks, cfg, 10, 5);
  EXPECT_NE(trained.table, other.table);
  // The initialization is a function of the seed only.
  WalkConfig zero = cfg;
  zero.sgns_epochs = 0;
  EXPECT_EQ(TrainSkipGram(walks, zero, 10, 5).table, trained.table);
}

TEST(SkipGramTest, CliquesSeparate) {
  const Adjacency adj = Cliques(2, 5);
  const WalkConfig cfg = SmallConfig();
  const auto walks = GenerateWalks(adj, cfg, 2);
  const auto res = TrainSkipGram(walks, cfg, 10, 3);
  ASSERT_TRUE(res.table.AllFinite());
  double intra = 0.0, inter = 0.0;
  int n_intra = 0, n_inter = 0;
  for (int a = 0; a < 10; ++a) {
    for (int b = a + 1; b < 10; ++b) {
      const double c = Cosine(res.table.Row(a), res.table.Row(b));
      if (a / 5 == b / 5) {
        intra += c;
        ++n_intra;
      } else {
        inter += c;
        ++n_inter;
      }
    }
  }
  EXPECT_GT(intra / n_intra, inter / n_inter);
}

TEST(SkipGramTest, NeighborhoodObjectiveNonDecreasing) {
  // 20-node ring of 4-cliques.
  std::vector<std::pair<int, int>> edges;
  for (int c = 0; c < 5; ++c) {
    for (int a = 0; a < 4; ++a)
      for (int b = a + 1; b < 4; ++b) edges.emplace_back(c * 4 + a, c * 4 + b);
    edges.emplace_back(c * 4, ((c + 1) % 5) * 4 + 1);
  }
  const Adjacency adj = BuildSocialAdjacency(20, edges);
  WalkConfig cfg = SmallConfig();
  cfg.walks_per_node = 10;
  cfg.sgns_epochs = 8;
  // A small rate keeps every epoch on the ascending part of the curve.
  cfg.sgns_lr = 0.001;
  const auto walks = GenerateWalks(adj, cfg, 4);
  const auto res = TrainSkipGram(walks, cfg, 20, 4, /*track_objective=*/true);
  ASSERT_EQ(res.epoch_objective.size(), 9u);
  // Context vectors start at zero: every score is 0 and each of the 1 + k
  // terms is log(1/2).
  EXPECT_NEAR(res.epoch_objective[0], (1 + cfg.negatives) * std::log(0.5), 1e-6);
  EXPECT_GT(res.epoch_objective.back(), res.epoch_objective[0] + 0.1);
  for (std::size_t e = 1; e < res.epoch_objective.size(); ++e)
    EXPECT_GE(res.epoch_objective[e], res.epoch_objective[e - 1]) << "epoch " << e;
}

TEST(UserEmbeddingsTest, SingleUserAndDistinctRows) {
  const std::vector<RatingRecord> one = {{"u1", "i1", 4}};
  const Dataset ds1 = BuildDataset(one, {});
  const auto t1 = UserEmbeddings(ds1, SmallConfig(), 3);
  EXPECT_EQ(t1.n_nodes, 1);
  EXPECT_EQ(t1.dim, 16);
  EXPECT_TRUE(t1.AllFinite());

  const std::vector<RatingRecord> two = {{"u1", "i1", 4}, {"u2", "i1", 3}};
  const auto t2 = UserEmbeddings(BuildDataset(two, {}), SmallConfig(), 3);
  EXPECT_NE(std::vector<float>(t2.Row(0).begin(), t2.Row(0).end()),
            std::vector<float>(t2.Row(1).begin(), t2.Row(1).end()));
}

TEST(UserEmbeddingsTest, CommunitiesRecoverableByNearestCentroid) {
  // Two communities of 30 users: dense inside, a few cross links.
  const int n = 60;
  Rng rng(5);
  std::vector<SocialEdge> edges;
  for (int a = 0; a < n; ++a) {
    for (int b = a + 1; b < n; ++b) {
      const bool same = (a < 30) == (b < 30);
      if (Uniform01(rng) < (same ? 0.3 : 0.01))
        edges.push_back({"u" + std::to_string(a), "u" + std::to_string(b)});
    }
  }
  std::vector<RatingRecord> recs;
  for (int a = 0; a < n; ++a) recs.push_back({"u" + std::to_string(a), "i0", 3});
  const Dataset ds = BuildDataset(recs, edges);
  WalkConfig cfg = SmallConfig();
  cfg.walk_length = 30;
  const auto table = UserEmbeddings(ds, cfg, 8);
  std::vector<double> centroid[2] = {std::vector<double>(cfg.dim, 0.0),
                                     std::vector<double>(cfg.dim, 0.0)};
  for (int u = 0; u < n; ++u) {
    const int label = u < 30 ? 0 : 1;
    for (int d = 0; d < cfg.dim; ++d) centroid[label][d] += table.Row(u)[d] / 30.0;
  }
  int correct = 0;
  for (int u = 0; u < n; ++u) {
    double dist[2] = {0.0, 0.0};
    for (int c = 0; c < 2; ++c)
      for (int d = 0; d < cfg.dim; ++d) {
        const double diff = table.Row(u)[d] - centroid[c][d];
        dist[c] += diff * diff;
      }
    const int predicted = dist[0] < dist[1] ? 0 : 1;
    correct += predicted == (u < 30 ? 0 : 1);
  }
  EXPECT_GT(correct / static_cast<double>(n), 0.9);
}

TEST(ItemEmbeddingsTest, ShapeColdItemsAndCoRatedSimilarity) {
  // Items 0 and 1 share raters u0..u4; item 2 is rated by u5..u9; item 3 by
  // nobody.
  std::vector<RatingRecord> recs;
  for (int u = 0; u < 5; ++u) {
    recs.push_back({"u" + std::to_string(u), "i0", 4});
    recs.push_back({"u" + std::to_string(u), "i1", 4});
  }
  for (int u = 5; u < 10; ++u) recs.push_back({"u" + std::to_string(u), "i2", 4});
  DatasetBuilder builder;
  for (const auto& r : recs) builder.AddRating(r);
  builder.AddItem("i3");
  const Dataset ds = std::move(builder).Build();
  const WalkConfig cfg = SmallConfig();
  const auto res = ItemEmbeddings(ds, cfg, 6);
  EXPECT_EQ(res.table.n_nodes, 4);
  EXPECT_EQ(res.table.dim, cfg.dim);
  EXPECT_EQ(res.untrained_items, std::vector<int>{3});
  EXPECT_GT(Cosine(res.table.Row(0), res.table.Row(1)),
            Cosine(res.table.Row(0), res.table.Row(2)));
  // The cold row is the seeded initialization of its graph node.
  const auto walks = GenerateWalks(ds.bipartite_adj, cfg, DeriveSeed(6, 21));
  WalkConfig zero = cfg;
  zero.sgns_epochs = 0;
  const auto init = TrainSkipGram(walks, zero, ds.n_users + ds.n_items, DeriveSeed(6, 22));
  const auto cold = res.table.Row(3);
  const auto expect = init.table.Row(ds.ItemNode(3));
  EXPECT_TRUE(std::equal(cold.begin(), cold.end(), expect.begin()));
}

TEST(EmbeddingIoTest, BinaryLayoutAndRoundTrip) {
  const auto dir = d2rec::testing::TempDir();
  const EmbeddingTable t = InitEmbeddingTable(3, 2, 1);
  const auto path = (dir / "t.emb").string();
  WriteEmbeddingBinary(path, t);
  const std::string bytes = d2rec::testing::ReadFile(path);
  ASSERT_EQ(bytes.size(), 5u + 4 + 4 + 6 * 4);
  EXPECT_EQ(bytes.substr(0, 5), "D2EMB");
  EXPECT_EQ(static_cast<unsigned char>(bytes[5]), 3);
  EXPECT_EQ(static_cast<unsigned char>(bytes[9]), 2);
  EXPECT_EQ(ReadEmbeddingBinary(path), t);
  WriteEmbeddingCsv((dir / "t.csv").string(), t);
}

TEST(WalkConfigTest, RejectsInvalidValues) {
  WalkConfig cfg;
  cfg.walk_length = 1;
  EXPECT_THROW(cfg.Validate(), ConfigError);
  cfg = WalkConfig{};
  cfg.inout_param_q = 0.0;
  EXPECT_THROW(cfg.Validate(), ConfigError);
}

}  // namespace
}  // namespace d2rec
