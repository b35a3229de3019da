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

#include "gtest/gtest.h"
#include "test_util.hpp"

namespace d2rec {
namespace {

// Maximum DCG over every ordering of the truths.
double BruteIdcg(std::vector<double> truths, int k) {
  std::sort(truths.begin(), truths.end());
  double best = 0.0;
  do {
    best = std::max(best, DcgAtK(truths, k));
  } while (std::next_permutation(truths.begin(), truths.end()));
  return best;
}

TEST(MaeMseTest, Examples) {
  const std::vector<double> y = {5.0, 3.0}, yhat = {4.0, 5.0};
  const auto e = MaeMse(y, yhat);
  EXPECT_EQ(e.mae, 1.5);
  EXPECT_EQ(e.mse, 2.5);
  const auto one = MaeMse(std::vector<double>{1.0}, std::vector<double>{5.0});
  EXPECT_EQ(one.mae, 4.0);
  EXPECT_EQ(one.mse, 16.0);
  const auto same = MaeMse(y, y);
  EXPECT_EQ(same.mae, 0.0);
  EXPECT_EQ(same.mse, 0.0);
  EXPECT_THROW(MaeMse({}, {}), DomainError);
  EXPECT_THROW(MaeMse(y, std::vector<double>{1.0}), DimensionError);
}

TEST(MaeMseTest, MatchesTwoPassOracle) {
  Rng rng(1);
  std::vector<double> y(500), yhat(500);
  for (std::size_t k = 0; k < y.size(); ++k) {
    y[k] = 1.0 + static_cast<double>(UniformIndex(rng, 5));
    yhat[k] = 6.0 * Uniform01(rng);
  }
  std::vector<double> abs_err(y.size()), sq_err(y.size());
  for (std::size_t k = 0; k < y.size(); ++k) {
    abs_err[k] = std::abs(y[k] - yhat[k]);
    sq_err[k] = abs_err[k] * abs_err[k];
  }
  const double n = static_cast<double>(y.size());
  const auto e = MaeMse(y, yhat);
  EXPECT_NEAR(e.mae, std::accumulate(abs_err.begin(), abs_err.end(), 0.0) / n, 1e-12);
  EXPECT_NEAR(e.mse, std::accumulate(sq_err.begin(), sq_err.end(), 0.0) / n, 1e-12);
}

TEST(HitRatioTest, Examples) {
  // Positive item 0 at ranks 2, 15 and 7.
  auto list_with_positive_at = [](int rank) {
    std::vector<int> list(100);
    std::iota(list.begin(), list.end(), 1);
    list.insert(list.begin() + (rank - 1), 0);
    return list;
  };
  const std::vector<std::vector<int>> positives = {{0}, {0}, {0}};
  EXPECT_NEAR(HitRatioAtK({list_with_positive_at(2), list_with_positive_at(15),
                           list_with_positive_at(7)},
                          positives, 10),
              2.0 / 3.0, 1e-15);
  EXPECT_EQ(HitRatioAtK({list_with_positive_at(1)}, {{0}}, 10), 1.0);
  EXPECT_EQ(HitRatioAtK({list_with_positive_at(11)}, {{0}}, 10), 0.0);
  // A user without positives is left out.
  EXPECT_EQ(HitRatioAtK({list_with_positive_at(1), list_with_positive_at(1)}, {{0}, {}}, 10),
            1.0);
}

TEST(NdcgTest, HandExamples) {
  const std::vector<double> good = {3.0, 1.0}, bad = {1.0, 3.0};
  EXPECT_NEAR(DcgAtK(good, 2), 7.630929753571458, 1e-12);
  EXPECT_NEAR(DcgAtK(bad, 2), 5.4165082750002025, 1e-12);
  EXPECT_NEAR(*NdcgAtK(good, 2), 1.0, 1e-15);
  EXPECT_NEAR(*NdcgAtK(bad, 2), 0.7098097413968655, 1e-12);
  EXPECT_FALSE(NdcgAtK(std::vector<double>{0.0, 0.0}, 2).has_value());
  EXPECT_NEAR(MeanNdcgAtK({good, bad, {0.0, 0.0}}, 2), (1.0 + 0.7098097413968655) / 2.0,
              1e-12);
}

TEST(NdcgTest, MatchesBruteForceIdealAndStaysInRange) {
  Rng rng(2);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<double> truths(6);
    for (double& t : truths) t = static_cast<double>(UniformIndex(rng, 6));
    const int k = 1 + static_cast<int>(UniformIndex(rng, 6));
    const auto n = NdcgAtK(truths, k);
    const double idcg = BruteIdcg(truths, k);
    if (idcg == 0.0) {
      EXPECT_FALSE(n.has_value());
      continue;
    }
    ASSERT_TRUE(n.has_value());
    EXPECT_NEAR(*n, DcgAtK(truths, k) / idcg, 1e-12);
    EXPECT_GE(*n, 0.0);
    EXPECT_LE(*n, 1.0 + 1e-12);
  }
}

TEST(RankTest, DescendingWithIndexTieBreak) {
  const std::vector<int> items = {7, 3, 5, 1};
  const std::vector<double> scores = {1.0, 2.0, 2.0, 0.5};
  EXPECT_EQ(RankCandidates(items, scores), (std::vector<int>{3, 5, 7, 1}));
}

TEST(RankTest, RelabelingInvariantWithDistinctScores) {
  Rng rng(3);
  std::vector<int> items(30);
  std::iota(items.begin(), items.end(), 0);
  std::vector<double> scores(30), truth(30, 0.0);
  for (double& s : scores) s = Uniform01(rng);
  for (int k = 0; k < 4; ++k) truth[UniformIndex(rng, 30)] = 1.0 + k;
  std::vector<int> relabel = items;
  std::shuffle(relabel.begin(), relabel.end(), rng);
  std::vector<int> relabeled_items(30);
  std::map<int, double> truth_by_new;
  for (int k = 0; k < 30; ++k) {
    relabeled_items[k] = relabel[k];
    truth_by_new[relabel[k]] = truth[k];
  }
  auto truths_in_order = [](const std::vector<int>& ranked, auto lookup) {
    std::vector<double> t;
    for (int item : ranked) t.push_back(lookup(item));
    return t;
  };
  const auto a = truths_in_order(RankCandidates(items, scores),
                                 [&](int i) { return truth[i]; });
  const auto b = truths_in_order(RankCandidates(relabeled_items, scores),
                                 [&](int i) { return truth_by_new[i]; });
  EXPECT_EQ(a, b);
  EXPECT_EQ(*NdcgAtK(a, 10), *NdcgAtK(b, 10));
}

TestSubset OnePositivePerUser(int n_users, int n_items, Rng& rng) {
  TestSubset subset;
  subset.n_per_item = 1;
  for (int u = 0; u < n_users; ++u)
    subset.rows.push_back({u, static_cast<int>(UniformIndex(rng, n_items)),
                           1.0 + static_cast<double>(UniformIndex(rng, 5))});
  return subset;
}

TEST(EvaluateTest, PerfectOracleModel) {
  Rng rng(4);
  const int n_users = 30, n_items = 500;
  const TestSubset subset = OnePositivePerUser(n_users, n_items, rng);
  std::map<std::pair<int, int>, double> truth;
  for (const auto& r : subset.rows) truth[{r.user, r.item}] = r.rating;
  const Scorer oracle = [&](std::span<const int> users, std::span<const int> items) {
    std::vector<double> s(users.size(), 0.0);
    for (std::size_t k = 0; k < s.size(); ++k) {
      const auto it = truth.find({users[k], items[k]});
      if (it != truth.end()) s[k] = it->second;
    }
    return s;
  };
  const SeenItems seen = CollectSeenItems(n_users, subset.rows);
  const auto rep = Evaluate(oracle, subset, {10, 99, 1}, seen, n_items);
  EXPECT_EQ(rep.mae, 0.0);
  EXPECT_EQ(rep.mse, 0.0);
  EXPECT_EQ(rep.hr_at_k, 1.0);
  EXPECT_NEAR(rep.ndcg_at_k, 1.0, 1e-12);
  EXPECT_EQ(rep.n_ratings, 30u);
  EXPECT_EQ(rep.n_users, 30u);
}

TEST(EvaluateTest, ConstantScoreMatchesRandomPermutationExpectation) {
  // A lone positive at a uniform position among 100 candidates:
  // E[nDCG@10] = (1/100) * sum_{r<=10} 1/log2(1+r).
  double expected = 0.0;
  for (int r = 1; r <= 10; ++r) expected += 1.0 / std::log2(1.0 + r);
  expected /= 100.0;
  EXPECT_NEAR(expected, 0.04543559338088346, 1e-15);

  const int n_items = 5000;
  const Scorer constant = [](std::span<const int> users, std::span<const int>) {
    return std::vector<double>(users.size(), 3.0);
  };
  double total = 0.0, hr = 0.0;
  const int trials = 200;
  for (int t = 0; t < trials; ++t) {
    Rng rng(DeriveSeed(99, t));
    const TestSubset subset = OnePositivePerUser(10, n_items, rng);
    const auto rep = Evaluate(constant, subset, {10, 99, static_cast<std::uint64_t>(t)},
                              CollectSeenItems(10, subset.rows), n_items);
    total += rep.ndcg_at_k;
    hr += rep.hr_at_k;
  }
  EXPECT_NEAR(total / trials, expected, 0.02);
  EXPECT_NEAR(hr / trials, 0.1, 0.02);
}

TEST(EvaluateTest, DeterministicAndCandidatesUnseen) {
  Rng rng(5);
  const int n_users = 8, n_items = 120;
  const TestSubset subset = OnePositivePerUser(n_users, n_items, rng);
  std::vector<std::pair<int, int>> scored;
  const Scorer recorder = [&](std::span<const int> users, std::span<const int> items) {
    std::vector<double> s(users.size());
    for (std::size_t k = 0; k < s.size(); ++k) {
      scored.emplace_back(users[k], items[k]);
      s[k] = std::sin(users[k] * 31.0 + items[k]);
    }
    return s;
  };
  // Mark a block of items as seen in train for every user.
  std::vector<Rating> train;
  for (int u = 0; u < n_users; ++u)
    for (int i = 0; i < 15; ++i) train.push_back({u, i, 3.0});
  std::vector<Rating> all = train;
  all.insert(all.end(), subset.rows.begin(), subset.rows.end());
  const SeenItems seen = CollectSeenItems(n_users, all);
  const auto a = Evaluate(recorder, subset, {10, 99, 3}, seen, n_items);
  const auto first = scored;
  scored.clear();
  const auto b = Evaluate(recorder, subset, {10, 99, 3}, seen, n_items);
  EXPECT_EQ(first, scored);
  EXPECT_EQ(a.ndcg_at_k, b.ndcg_at_k);
  EXPECT_EQ(a.hr_at_k, b.hr_at_k);
  std::map<int, int> positive;
  for (const auto& r : subset.rows) positive[r.user] = r.item;
  for (const auto& [u, i] : scored) {
    if (i == positive[u]) continue;
    EXPECT_GE(i, 15) << "seen train item used as candidate";
  }
}

TEST(EvaluateTest, EmptySubsetRejected) {
  const Scorer s = [](std::span<const int> u, std::span<const int>) {
    return std::vector<double>(u.size(), 0.0);
  };
  EXPECT_THROW(Evaluate(s, TestSubset{}, {}, SeenItems{}, 10), DomainError);
}

TEST(ReportCsvTest, Header) {
  MetricsReport r;
  r.subset_popularity = 5;
  const auto path = (d2rec::testing::TempDir() / "r.csv").string();
  WriteReportCsv(path, std::vector<MetricsReport>{r});
  const std::string text = d2rec::testing::ReadFile(path);
  EXPECT_EQ(text.substr(0, text.find('\n')),
            "subset_popularity,mae,mse,hr@k,ndcg@k,n_ratings,n_users");
}

}  // namespace
}  // namespace d2rec
