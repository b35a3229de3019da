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

#include "d2rec/evaluator.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <unordered_set>

#include <fmt/format.h>

#include "csv_util.hpp"

namespace d2rec {

RatingErrors MaeMse(std::span<const double> y, std::span<const double> yhat) {
  if (y.empty()) throw DomainError("mae/mse of an empty sample");
  if (y.size() != yhat.size())
    throw DimensionError(fmt::format("mae/mse: {} targets vs {} predictions", y.size(),
                                     yhat.size()));
  double abs_sum = 0.0, sq_sum = 0.0;
  for (std::size_t k = 0; k < y.size(); ++k) {
    const double e = y[k] - yhat[k];
    abs_sum += std::abs(e);
    sq_sum += e * e;
  }
  const double n = static_cast<double>(y.size());
  return {abs_sum / n, sq_sum / n};
}

double HitRatioAtK(const std::vector<std::vector<int>>& ranked_lists,
                   const std::vector<std::vector<int>>& positives, int k) {
  if (ranked_lists.size() != positives.size())
    throw DimensionError("hit ratio: ranked lists and positives differ in length");
  std::size_t users = 0, hits = 0;
  for (std::size_t u = 0; u < ranked_lists.size(); ++u) {
    if (positives[u].empty()) continue;
    ++users;
    const auto& list = ranked_lists[u];
    const auto top = std::min<std::size_t>(list.size(), k);
    const bool hit = std::any_of(list.begin(), list.begin() + top, [&](int item) {
      return std::find(positives[u].begin(), positives[u].end(), item) != positives[u].end();
    });
    if (hit) ++hits;
  }
  return users == 0 ? 0.0 : static_cast<double>(hits) / static_cast<double>(users);
}

double DcgAtK(std::span<const double> truths, int k) {
  double dcg = 0.0;
  const auto top = std::min<std::size_t>(truths.size(), k);
  for (std::size_t r = 0; r < top; ++r)
    dcg += (std::exp2(truths[r]) - 1.0) / std::log2(static_cast<double>(r) + 2.0);
  return dcg;
}

std::optional<double> NdcgAtK(std::span<const double> truths, int k) {
  std::vector<double> ideal(truths.begin(), truths.end());
  std::sort(ideal.begin(), ideal.end(), std::greater<>());
  const double idcg = DcgAtK(ideal, k);
  if (idcg <= 0.0) return std::nullopt;
  return DcgAtK(truths, k) / idcg;
}

double MeanNdcgAtK(const std::vector<std::vector<double>>& truths, int k) {
  double sum = 0.0;
  std::size_t n = 0;
  for (const auto& t : truths) {
    if (const auto v = NdcgAtK(t, k)) {
      sum += *v;
      ++n;
    }
  }
  return n == 0 ? 0.0 : sum / static_cast<double>(n);
}

std::vector<int> RankCandidates(std::span<const int> items, std::span<const double> scores) {
  std::vector<std::size_t> order(items.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (scores[a] != scores[b]) return scores[a] > scores[b];
    return items[a] < items[b];
  });
  std::vector<int> ranked(items.size());
  for (std::size_t r = 0; r < order.size(); ++r) ranked[r] = items[order[r]];
  return ranked;
}

Scorer MakeModelScorer(const D2RecParams& params, const EmbeddingInputs& emb,
                       double positive_rate) {
  return [&params, emb, positive_rate](std::span<const int> users, std::span<const int> items) {
    return PredictPairs(params, emb, users, items, positive_rate);
  };
}

SeenItems CollectSeenItems(int n_users, std::span<const Rating> ratings) {
  SeenItems seen(n_users);
  for (const auto& r : ratings) seen[r.user].push_back(r.item);
  for (auto& s : seen) {
    std::sort(s.begin(), s.end());
    s.erase(std::unique(s.begin(), s.end()), s.end());
  }
  return seen;
}

MetricsReport Evaluate(const Scorer& scorer, const TestSubset& subset,
                       const RankingProtocol& protocol, const SeenItems& seen, int n_items) {
  if (subset.rows.empty()) throw DomainError("evaluation subset is empty");
  if (protocol.k < 1) throw ConfigError("ranking.k must be >= 1");
  if (protocol.candidates_per_positive < 0)
    throw ConfigError("ranking.candidates_per_positive must be >= 0");
  MetricsReport report;
  report.subset_popularity = subset.n_per_item;
  report.protocol = protocol;
  report.n_ratings = subset.rows.size();

  std::vector<int> users, items;
  std::vector<double> truth;
  for (const auto& r : subset.rows) {
    users.push_back(r.user);
    items.push_back(r.item);
    truth.push_back(r.rating);
  }
  const std::vector<double> pred = scorer(users, items);
  const RatingErrors errs = MaeMse(truth, pred);
  report.mae = errs.mae;
  report.mse = errs.mse;

  // Positives per user, ascending user index.
  std::map<int, std::map<int, double>> positives;
  for (const auto& r : subset.rows) positives[r.user][r.item] = r.rating;

  std::vector<int> cand_users, cand_items;
  std::vector<std::size_t> offsets{0};
  for (const auto& [user, pos] : positives) {
    std::unordered_set<int> excluded(pos.size() * 2);
    for (const auto& [item, y] : pos) excluded.insert(item);
    if (user < static_cast<int>(seen.size()))
      excluded.insert(seen[user].begin(), seen[user].end());
    std::size_t n_excluded = 0;
    for (int i : excluded) n_excluded += (i >= 0 && i < n_items) ? 1 : 0;
    const std::size_t available = static_cast<std::size_t>(n_items) - n_excluded;
    const std::size_t want = std::min(
        available, pos.size() * static_cast<std::size_t>(protocol.candidates_per_positive));
    Rng rng(DeriveSeed(protocol.seed, static_cast<std::uint64_t>(user)));
    std::vector<int> pool;
    if (2 * want < available) {
      // Sparse case: rejection sampling against the excluded set.
      while (pool.size() < want) {
        const int i = static_cast<int>(UniformIndex(rng, n_items));
        if (excluded.insert(i).second) pool.push_back(i);
      }
    } else {
      for (int i = 0; i < n_items; ++i)
        if (!excluded.count(i)) pool.push_back(i);
      for (std::size_t k = 0; k < want; ++k) {
        const std::size_t j = k + UniformIndex(rng, pool.size() - k);
        std::swap(pool[k], pool[j]);
      }
    }
    for (const auto& [item, y] : pos) {
      cand_users.push_back(user);
      cand_items.push_back(item);
    }
    for (std::size_t k = 0; k < want; ++k) {
      cand_users.push_back(user);
      cand_items.push_back(pool[k]);
    }
    offsets.push_back(cand_items.size());
  }
  const std::vector<double> scores = scorer(cand_users, cand_items);

  std::vector<std::vector<int>> ranked_lists, positive_lists;
  std::vector<std::vector<double>> ranked_truths;
  std::size_t u = 0;
  for (const auto& [user, pos] : positives) {
    const std::size_t b = offsets[u], e = offsets[u + 1];
    ++u;
    const std::span<const int> ci(cand_items.data() + b, e - b);
    const std::span<const double> cs(scores.data() + b, e - b);
    std::vector<int> ranked = RankCandidates(ci, cs);
    std::vector<double> t;
    t.reserve(ranked.size());
    for (int item : ranked) {
      auto it = pos.find(item);
      t.push_back(it == pos.end() ? 0.0 : it->second);
    }
    std::vector<int> pl;
    for (const auto& [item, y] : pos) pl.push_back(item);
    ranked_lists.push_back(std::move(ranked));
    positive_lists.push_back(std::move(pl));
    ranked_truths.push_back(std::move(t));
  }
  report.n_users = positives.size();
  report.hr_at_k = HitRatioAtK(ranked_lists, positive_lists, protocol.k);
  report.ndcg_at_k = MeanNdcgAtK(ranked_truths, protocol.k);
  return report;
}

void WriteReportCsv(const std::string& path, std::span<const MetricsReport> reports) {
  auto out = csv::OpenOut(path);
  // The cutoff itself is recorded with the protocol, not in the header.
  out << "subset_popularity,mae,mse,hr@k,ndcg@k,n_ratings,n_users\n";
  for (const auto& r : reports)
    out << fmt::format("{},{},{},{},{},{},{}\n", r.subset_popularity, r.mae, r.mse, r.hr_at_k,
                       r.ndcg_at_k, r.n_ratings, r.n_users);
}

}  // namespace d2rec
