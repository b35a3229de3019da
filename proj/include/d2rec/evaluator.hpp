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
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "d2rec/dataio.hpp"
#include "d2rec/model.hpp"

namespace d2rec {

struct RankingProtocol {
  int k = 10;
  int candidates_per_positive = 99;
  std::uint64_t seed = 0;
};

struct MetricsReport {
  double mae = 0.0;
  double mse = 0.0;
  double hr_at_k = 0.0;
  double ndcg_at_k = 0.0;
  std::size_t n_ratings = 0;
  std::size_t n_users = 0;
  int subset_popularity = 0;
  RankingProtocol protocol;
};

struct RatingErrors {
  double mae = 0.0;
  double mse = 0.0;
};

RatingErrors MaeMse(std::span<const double> y, std::span<const double> yhat);

// Fraction of users with at least one positive in their top-k. Users without
// positives are left out of both counts.
double HitRatioAtK(const std::vector<std::vector<int>>& ranked_lists,
                   const std::vector<std::vector<int>>& positives, int k);

// DCG@k with gain 2^y - 1 and discount log2(1 + rank).
double DcgAtK(std::span<const double> truths_in_rank_order, int k);
// nullopt when the ideal DCG is zero.
std::optional<double> NdcgAtK(std::span<const double> truths_in_rank_order, int k);
// Mean over users with a defined nDCG.
double MeanNdcgAtK(const std::vector<std::vector<double>>& truths_in_rank_order, int k);

// Orders candidates by descending score; ties go to the smaller item index.
std::vector<int> RankCandidates(std::span<const int> items, std::span<const double> scores);

// Scores for aligned (user, item) pairs.
using Scorer =
    std::function<std::vector<double>(std::span<const int> users, std::span<const int> items)>;

Scorer MakeModelScorer(const D2RecParams& params, const EmbeddingInputs& emb,
                       double positive_rate);

// Items each user must not receive as sampled negatives (train and test).
using SeenItems = std::vector<std::vector<int>>;
SeenItems CollectSeenItems(int n_users, std::span<const Rating> ratings);

// Rating metrics over every subset row; ranking metrics per user over the
// user's positives plus candidates_per_positive unseen items per positive.
MetricsReport Evaluate(const Scorer& scorer, const TestSubset& subset,
                       const RankingProtocol& protocol, const SeenItems& seen, int n_items);

// `subset_popularity,mae,mse,hr@k,ndcg@k,n_ratings,n_users`
void WriteReportCsv(const std::string& path, std::span<const MetricsReport> reports);

}  // namespace d2rec
