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
#include <span>
#include <string>
#include <vector>

#include "d2rec/common.hpp"
#include "d2rec/dataio.hpp"

namespace d2rec {

// Parameters for biased second-order random walks and the skip-gram model
// trained on them.
struct WalkConfig {
  int walks_per_node = 10;
  int walk_length = 40;
  double return_param_p = 1.0;  // weight 1/p for stepping back
  double inout_param_q = 1.0;   // weight 1/q for moving outward
  int window = 5;
  int negatives = 5;
  int sgns_epochs = 5;
  double sgns_lr = 0.025;
  int dim = 64;

  // Throws ConfigError on invalid values.
  void Validate() const;
};

// Dense row-major node vectors.
struct EmbeddingTable {
  int n_nodes = 0;
  int dim = 0;
  std::vector<float> values;

  EmbeddingTable() = default;
  EmbeddingTable(int n, int d)
      : n_nodes(n), dim(d), values(static_cast<std::size_t>(n) * d, 0.0f) {}

  std::span<float> Row(int v) {
    return {values.data() + static_cast<std::size_t>(v) * dim,
            static_cast<std::size_t>(dim)};
  }
  std::span<const float> Row(int v) const {
    return {values.data() + static_cast<std::size_t>(v) * dim,
            static_cast<std::size_t>(dim)};
  }
  bool AllFinite() const;

  friend bool operator==(const EmbeddingTable&, const EmbeddingTable&) = default;
};

using Walk = std::vector<int>;

// Unnormalized second-order weights over the neighbors of `cur` after
// arriving from `prev`: 1/p back to prev, 1 for neighbors of prev, 1/q
// otherwise. Adjacency lists must be sorted.
std::vector<double> TransitionWeights(const Adjacency& adj, int prev, int cur,
                                      double p, double q);

// One biased step. `prev` < 0 means the walk has just started (uniform).
int NextNode(const Adjacency& adj, int prev, int cur, double p, double q,
             Rng& rng);

// walks_per_node walks from every node with degree >= 1, ordered by round
// then node. Each (round, node) walk has its own derived seed, so the result
// does not depend on `threads`.
std::vector<Walk> GenerateWalks(const Adjacency& adj, const WalkConfig& cfg,
                                std::uint64_t seed, int threads = 1);

// Uniform(-0.5/dim, 0.5/dim) rows.
EmbeddingTable InitEmbeddingTable(int n_nodes, int dim, std::uint64_t seed);

struct SkipGramResult {
  EmbeddingTable table;
  // Negative-sampling log-likelihood per in-window pair, with the negative
  // term in expectation, measured at the start and after each epoch. Empty
  // unless tracking was requested.
  std::vector<double> epoch_objective;
};

SkipGramResult TrainSkipGram(std::span<const Walk> walks, const WalkConfig& cfg,
                             int n_nodes, std::uint64_t seed,
                             bool track_objective = false);

// Embeddings from the social graph only, indexed by user.
EmbeddingTable UserEmbeddings(const Dataset& ds, const WalkConfig& cfg,
                              std::uint64_t seed, int threads = 1);

struct ItemEmbeddingResult {
  EmbeddingTable table;
  // Items without interactions; their rows keep the seeded initialization.
  std::vector<int> untrained_items;
};

// Walks over the user-item graph; only item rows are returned.
ItemEmbeddingResult ItemEmbeddings(int n_users, int n_items,
                                   const Adjacency& bipartite_adj,
                                   const WalkConfig& cfg, std::uint64_t seed,
                                   int threads = 1);
ItemEmbeddingResult ItemEmbeddings(const Dataset& ds, const WalkConfig& cfg,
                                   std::uint64_t seed, int threads = 1);

double Cosine(std::span<const float> a, std::span<const float> b);

// Binary layout: "D2EMB", u32 n_nodes, u32 dim (little-endian), then
// row-major float32 values.
void WriteEmbeddingBinary(const std::string& path, const EmbeddingTable& table);
EmbeddingTable ReadEmbeddingBinary(const std::string& path);
void WriteEmbeddingCsv(const std::string& path, const EmbeddingTable& table);

}  // namespace d2rec
