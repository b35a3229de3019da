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

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <thread>

#include <fmt/format.h>

#include "csv_util.hpp"
#include "d2rec/binary_io.hpp"
#include "d2rec/common.hpp"

namespace d2rec {

namespace {

constexpr char kEmbeddingMagic[6] = "D2EMB";

bool IsNeighbor(const Adjacency& adj, int a, int b) {
  const auto& nb = adj[a];
  return std::binary_search(nb.begin(), nb.end(), b);
}

const Adjacency& SortedView(const Adjacency& adj, Adjacency& storage) {
  const bool sorted = std::all_of(adj.begin(), adj.end(), [](const auto& nb) {
    return std::is_sorted(nb.begin(), nb.end());
  });
  if (sorted) return adj;
  storage = adj;
  for (auto& nb : storage) std::sort(nb.begin(), nb.end());
  return storage;
}

float Sigmoid(float x) {
  if (x >= 0) return 1.0f / (1.0f + std::exp(-x));
  const float e = std::exp(x);
  return e / (1.0f + e);
}

float LogSigmoid(float x) {
  // log(sigmoid(x)) = -log1p(exp(-x)), stable for both signs.
  if (x >= 0) return -std::log1p(std::exp(-x));
  return x - std::log1p(std::exp(x));
}

float Dot(const float* a, const float* b, int n) {
  float s = 0.0f;
  for (int k = 0; k < n; ++k) s += a[k] * b[k];
  return s;
}

// Cumulative unigram^0.75 distribution over walk tokens.
std::vector<double> NegativeCdf(std::span<const Walk> walks, int n_nodes) {
  std::vector<double> counts(n_nodes, 0.0);
  for (const auto& w : walks)
    for (int v : w) counts[v] += 1.0;
  std::vector<double> cdf(n_nodes);
  double acc = 0.0;
  for (int v = 0; v < n_nodes; ++v) {
    acc += std::pow(counts[v], 0.75);
    cdf[v] = acc;
  }
  return cdf;
}

int SampleNegative(const std::vector<double>& cdf, Rng& rng) {
  const double r = Uniform01(rng) * cdf.back();
  auto it = std::upper_bound(cdf.begin(), cdf.end(), r);
  if (it == cdf.end()) --it;
  return static_cast<int>(it - cdf.begin());
}

// Mean over in-window pairs of log sig(v.c+) + k * E_n[log sig(-v.c_n)],
// with the negative expectation taken exactly under the sampling law.
double NeighborhoodObjective(std::span<const Walk> walks,
                             const EmbeddingTable& in,
                             const std::vector<float>& out, int window,
                             int negatives, const std::vector<double>& cdf) {
  const int dim = in.dim;
  const int n = in.n_nodes;
  std::vector<double> neg_term(n, std::numeric_limits<double>::quiet_NaN());
  auto negative = [&](int v) {
    if (std::isnan(neg_term[v])) {
      const float* center = in.values.data() + static_cast<std::size_t>(v) * dim;
      double acc = 0.0;
      double prev = 0.0;
      for (int u = 0; u < n; ++u) {
        const double prob = (cdf[u] - prev) / cdf.back();
        prev = cdf[u];
        if (prob == 0.0) continue;
        const float* ctx = out.data() + static_cast<std::size_t>(u) * dim;
        acc += prob * LogSigmoid(-Dot(center, ctx, dim));
      }
      neg_term[v] = negatives * acc;
    }
    return neg_term[v];
  };
  double total = 0.0;
  std::size_t count = 0;
  for (const auto& walk : walks) {
    const int len = static_cast<int>(walk.size());
    for (int pos = 0; pos < len; ++pos) {
      const float* center = in.values.data() + static_cast<std::size_t>(walk[pos]) * dim;
      const int lo = std::max(0, pos - window);
      const int hi = std::min(len - 1, pos + window);
      for (int c = lo; c <= hi; ++c) {
        if (c == pos) continue;
        const float* ctx = out.data() + static_cast<std::size_t>(walk[c]) * dim;
        total += LogSigmoid(Dot(center, ctx, dim)) + negative(walk[pos]);
        ++count;
      }
    }
  }
  return count == 0 ? 0.0 : total / static_cast<double>(count);
}

}  // namespace

void WalkConfig::Validate() const {
  if (walks_per_node < 0) throw ConfigError("walk.walks_per_node must be >= 0");
  if (walk_length < 2) throw ConfigError("walk.walk_length must be >= 2");
  if (!(return_param_p > 0.0)) throw ConfigError("walk.return_param_p must be > 0");
  if (!(inout_param_q > 0.0)) throw ConfigError("walk.inout_param_q must be > 0");
  if (window < 1) throw ConfigError("walk.window must be >= 1");
  if (negatives < 0) throw ConfigError("walk.negatives must be >= 0");
  if (sgns_epochs < 0) throw ConfigError("walk.sgns_epochs must be >= 0");
  if (!(sgns_lr > 0.0)) throw ConfigError("walk.sgns_lr must be > 0");
  if (dim < 1) throw ConfigError("walk.dim must be >= 1");
}

bool EmbeddingTable::AllFinite() const {
  return std::all_of(values.begin(), values.end(),
                     [](float v) { return std::isfinite(v); });
}

std::vector<double> TransitionWeights(const Adjacency& adj, int prev, int cur,
                                      double p, double q) {
  const auto& nb = adj[cur];
  std::vector<double> w(nb.size());
  for (std::size_t k = 0; k < nb.size(); ++k) {
    const int x = nb[k];
    if (x == prev) {
      w[k] = 1.0 / p;
    } else if (IsNeighbor(adj, prev, x)) {
      w[k] = 1.0;
    } else {
      w[k] = 1.0 / q;
    }
  }
  return w;
}

int NextNode(const Adjacency& adj, int prev, int cur, double p, double q,
             Rng& rng) {
  const auto& nb = adj[cur];
  if (nb.size() == 1) return nb[0];
  if (prev < 0 || (p == 1.0 && q == 1.0)) return nb[UniformIndex(rng, nb.size())];
  const std::vector<double> w = TransitionWeights(adj, prev, cur, p, q);
  const double total = std::accumulate(w.begin(), w.end(), 0.0);
  double r = Uniform01(rng) * total;
  for (std::size_t k = 0; k < w.size(); ++k) {
    r -= w[k];
    if (r < 0.0) return nb[k];
  }
  return nb.back();
}

std::vector<Walk> GenerateWalks(const Adjacency& adj_in, const WalkConfig& cfg,
                                std::uint64_t seed, int threads) {
  cfg.Validate();
  Adjacency storage;
  const Adjacency& adj = SortedView(adj_in, storage);
  const int n = static_cast<int>(adj.size());
  std::vector<int> starts;
  for (int v = 0; v < n; ++v)
    if (!adj[v].empty()) starts.push_back(v);

  const std::size_t total = starts.size() * static_cast<std::size_t>(cfg.walks_per_node);
  std::vector<Walk> walks(total);
  auto work = [&](std::size_t begin, std::size_t end) {
    for (std::size_t slot = begin; slot < end; ++slot) {
      const std::size_t round = slot / starts.size();
      const int start = starts[slot % starts.size()];
      Rng rng(DeriveSeed(seed, round, static_cast<std::uint64_t>(start)));
      Walk& walk = walks[slot];
      walk.reserve(cfg.walk_length);
      walk.push_back(start);
      int prev = -1;
      int cur = start;
      while (static_cast<int>(walk.size()) < cfg.walk_length) {
        const int next = NextNode(adj, prev, cur, cfg.return_param_p,
                                  cfg.inout_param_q, rng);
        walk.push_back(next);
        prev = cur;
        cur = next;
      }
    }
  };
  threads = std::max(1, threads);
  if (threads == 1 || total < 2) {
    work(0, total);
  } else {
    std::vector<std::thread> pool;
    const std::size_t chunk = (total + threads - 1) / threads;
    for (int t = 0; t < threads; ++t) {
      const std::size_t b = std::min(total, t * chunk);
      const std::size_t e = std::min(total, b + chunk);
      if (b < e) pool.emplace_back(work, b, e);
    }
    for (auto& th : pool) th.join();
  }
  return walks;
}

EmbeddingTable InitEmbeddingTable(int n_nodes, int dim, std::uint64_t seed) {
  EmbeddingTable table(n_nodes, dim);
  Rng rng(seed);
  const double scale = 0.5 / dim;
  for (float& v : table.values)
    v = static_cast<float>((2.0 * Uniform01(rng) - 1.0) * scale);
  return table;
}

SkipGramResult TrainSkipGram(std::span<const Walk> walks, const WalkConfig& cfg,
                             int n_nodes, std::uint64_t seed,
                             bool track_objective) {
  cfg.Validate();
  SkipGramResult result;
  result.table = InitEmbeddingTable(n_nodes, cfg.dim, DeriveSeed(seed, 1));
  EmbeddingTable& in = result.table;
  std::vector<float> out(in.values.size(), 0.0f);
  const std::vector<double> cdf = NegativeCdf(walks, n_nodes);
  auto track = [&] {
    if (track_objective && !walks.empty())
      result.epoch_objective.push_back(
          NeighborhoodObjective(walks, in, out, cfg.window, cfg.negatives, cdf));
  };
  track();
  if (walks.empty() || cfg.sgns_epochs == 0) return result;

  Rng rng(DeriveSeed(seed, 2));
  const int dim = cfg.dim;
  std::vector<float> grad_center(dim);
  std::vector<std::size_t> order(walks.size());
  std::iota(order.begin(), order.end(), 0);

  std::size_t total_tokens = 0;
  for (const auto& w : walks) total_tokens += w.size();
  const double total_steps =
      static_cast<double>(total_tokens) * static_cast<double>(cfg.sgns_epochs);
  std::size_t step = 0;

  for (int epoch = 0; epoch < cfg.sgns_epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t wi : order) {
      const Walk& walk = walks[wi];
      const int len = static_cast<int>(walk.size());
      for (int pos = 0; pos < len; ++pos, ++step) {
        // Linear decay to 1e-4 of the initial rate.
        const float lr = static_cast<float>(
            cfg.sgns_lr * std::max(1e-4, 1.0 - static_cast<double>(step) / total_steps));
        float* center = in.values.data() + static_cast<std::size_t>(walk[pos]) * dim;
        const int lo = std::max(0, pos - cfg.window);
        const int hi = std::min(len - 1, pos + cfg.window);
        for (int c = lo; c <= hi; ++c) {
          if (c == pos) continue;
          std::fill(grad_center.begin(), grad_center.end(), 0.0f);
          const int context = walk[c];
          for (int k = 0; k <= cfg.negatives; ++k) {
            int target = context;
            float label = 1.0f;
            if (k > 0) {
              target = SampleNegative(cdf, rng);
              if (target == context) continue;
              label = 0.0f;
            }
            float* ctx = out.data() + static_cast<std::size_t>(target) * dim;
            const float g = (label - Sigmoid(Dot(center, ctx, dim))) * lr;
            for (int d = 0; d < dim; ++d) {
              grad_center[d] += g * ctx[d];
              ctx[d] += g * center[d];
            }
          }
          for (int d = 0; d < dim; ++d) center[d] += grad_center[d];
        }
      }
    }
    track();
  }
  return result;
}

EmbeddingTable UserEmbeddings(const Dataset& ds, const WalkConfig& cfg,
                              std::uint64_t seed, int threads) {
  const auto walks = GenerateWalks(ds.social_adj, cfg, DeriveSeed(seed, 11), threads);
  return TrainSkipGram(walks, cfg, ds.n_users, DeriveSeed(seed, 12)).table;
}

ItemEmbeddingResult ItemEmbeddings(int n_users, int n_items,
                                   const Adjacency& bipartite_adj,
                                   const WalkConfig& cfg, std::uint64_t seed,
                                   int threads) {
  if (static_cast<int>(bipartite_adj.size()) != n_users + n_items)
    throw DimensionError(fmt::format("bipartite adjacency has {} nodes, expected {}",
                                     bipartite_adj.size(), n_users + n_items));
  const auto walks = GenerateWalks(bipartite_adj, cfg, DeriveSeed(seed, 21), threads);
  const EmbeddingTable all =
      TrainSkipGram(walks, cfg, n_users + n_items, DeriveSeed(seed, 22)).table;
  ItemEmbeddingResult result;
  result.table = EmbeddingTable(n_items, cfg.dim);
  for (int i = 0; i < n_items; ++i) {
    const auto src = all.Row(n_users + i);
    std::copy(src.begin(), src.end(), result.table.Row(i).begin());
    if (bipartite_adj[n_users + i].empty()) result.untrained_items.push_back(i);
  }
  return result;
}

ItemEmbeddingResult ItemEmbeddings(const Dataset& ds, const WalkConfig& cfg,
                                   std::uint64_t seed, int threads) {
  return ItemEmbeddings(ds.n_users, ds.n_items, ds.bipartite_adj, cfg, seed, threads);
}

double Cosine(std::span<const float> a, std::span<const float> b) {
  double ab = 0.0, aa = 0.0, bb = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) {
    ab += static_cast<double>(a[k]) * b[k];
    aa += static_cast<double>(a[k]) * a[k];
    bb += static_cast<double>(b[k]) * b[k];
  }
  if (aa == 0.0 || bb == 0.0) return 0.0;
  return ab / std::sqrt(aa * bb);
}

void WriteEmbeddingBinary(const std::string& path, const EmbeddingTable& table) {
  auto out = csv::OpenOut(path);
  binary::WriteMagic(out, kEmbeddingMagic);
  binary::WriteU32(out, static_cast<std::uint32_t>(table.n_nodes));
  binary::WriteU32(out, static_cast<std::uint32_t>(table.dim));
  for (float v : table.values) binary::WriteF32(out, v);
  if (!out) throw Error("failed writing " + path);
}

EmbeddingTable ReadEmbeddingBinary(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path);
  binary::ExpectMagic(in, kEmbeddingMagic, path);
  const auto n = binary::ReadU32(in);
  const auto dim = binary::ReadU32(in);
  EmbeddingTable table(static_cast<int>(n), static_cast<int>(dim));
  for (float& v : table.values) v = binary::ReadF32(in);
  return table;
}

void WriteEmbeddingCsv(const std::string& path, const EmbeddingTable& table) {
  auto out = csv::OpenOut(path);
  for (int v = 0; v < table.n_nodes; ++v) {
    out << v;
    for (float x : table.Row(v)) out << ',' << fmt::format("{}", x);
    out << '\n';
  }
}

}  // namespace d2rec
