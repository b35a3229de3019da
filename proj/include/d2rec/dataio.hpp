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
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "d2rec/common.hpp"

namespace d2rec {

// A rating as it appears in an input file.
struct RatingRecord {
  std::string user_id;
  std::string item_id;
  double rating = 0.0;
};

// Directed trust statement "truster trusts trustee".
struct SocialEdge {
  std::string truster;
  std::string trustee;
};

// A rating over dense internal indices.
struct Rating {
  int user = 0;
  int item = 0;
  double rating = 0.0;

  friend bool operator==(const Rating&, const Rating&) = default;
};

// Bidirectional external <-> internal id map. Internal ids are dense and
// assigned in first-seen order.
class IdMap {
 public:
  int Intern(const std::string& external);
  std::optional<int> Find(const std::string& external) const;
  const std::string& External(int internal) const { return external_[internal]; }
  int size() const { return static_cast<int>(external_.size()); }

 private:
  std::vector<std::string> external_;
  std::unordered_map<std::string, int> internal_;
};

using Adjacency = std::vector<std::vector<int>>;

struct Dataset {
  int n_users = 0;
  int n_items = 0;
  std::vector<Rating> ratings;
  // Undirected trust graph over users; every user has degree >= 1.
  Adjacency social_adj;
  // Users are nodes [0, n_users), item i is node n_users + i.
  Adjacency bipartite_adj;
  IdMap users;
  IdMap items;

  int ItemNode(int item) const { return n_users + item; }
};

// Incremental construction with explicit control over id order. Duplicate
// (user, item) ratings keep the position of the first occurrence and the
// value of the last.
class DatasetBuilder {
 public:
  int AddUser(const std::string& id) { return users_.Intern(id); }
  int AddItem(const std::string& id) { return items_.Intern(id); }
  void AddRating(const RatingRecord& record);
  void AddEdge(const SocialEdge& edge);
  Dataset Build() &&;

 private:
  IdMap users_;
  IdMap items_;
  std::vector<Rating> ratings_;
  std::unordered_map<std::uint64_t, std::size_t> rating_slot_;
  std::vector<std::pair<int, int>> edges_;
};

std::vector<RatingRecord> LoadRatings(const std::string& path,
                                      bool has_header = false);
std::vector<SocialEdge> LoadSocial(const std::string& path,
                                   bool has_header = false);
// Headerless writers in the formats the loaders read.
void WriteRatingRecords(const std::string& path, std::span<const RatingRecord> records);
void WriteSocialEdges(const std::string& path, std::span<const SocialEdge> edges);

// Ids are assigned in first-appearance order over ratings, then edges.
// Edge endpoints unseen so far become users with no ratings.
Dataset BuildDataset(std::span<const RatingRecord> ratings,
                     std::span<const SocialEdge> edges);

// Sorted, de-duplicated undirected adjacency with self-loops added for
// isolated nodes.
Adjacency BuildSocialAdjacency(int n_users,
                               std::span<const std::pair<int, int>> edges);
// User-item graph; nodes without ratings keep an empty neighbor list.
Adjacency BuildBipartiteAdjacency(int n_users, int n_items,
                                  std::span<const Rating> ratings);

struct TrainTestSplit {
  std::vector<Rating> train;
  std::vector<Rating> test_pool;
};

// Seeded shuffle; the first floor(train_fraction * N) ratings go to train.
TrainTestSplit SplitTrainTest(const Dataset& ds, double train_fraction,
                              std::uint64_t seed);

struct TestSubset {
  int n_per_item = 0;
  std::vector<Rating> rows;
};

// Every item with at least n_per_item ratings in the pool contributes
// exactly n_per_item of them, drawn without replacement. Returns nullopt
// when no item qualifies.
std::optional<TestSubset> MakePopularitySubset(std::span<const Rating> pool,
                                               int n_per_item,
                                               std::uint64_t seed);

struct ExposureRow {
  int user = 0;
  int item = 0;
  int exposure = 0;
  std::optional<double> rating;

  friend bool operator==(const ExposureRow&, const ExposureRow&) = default;
};

// Users for which fewer negatives than requested could be drawn.
struct CoverageShortfall {
  int user = 0;
  int requested = 0;
  int drawn = 0;
};

struct ExposureTable {
  std::vector<ExposureRow> rows;
  double positive_rate = 0.0;
  std::vector<CoverageShortfall> coverage;

  std::size_t NumPositives() const;
};

// One positive row per training rating, in input order, followed by
// per-user negatives (ascending user index) drawn uniformly without
// replacement from items the user did not rate in train.
ExposureTable BuildExposureTable(std::span<const Rating> train, int n_items,
                                 int negatives_per_positive,
                                 std::uint64_t seed);

// CSV layout `user_idx,item_idx,exposure,rating` with an empty rating for
// negatives. Plain rating lists are written with exposure=1.
void WriteRatingsCsv(const std::string& path, std::span<const Rating> rows);
std::vector<Rating> ReadRatingsCsv(const std::string& path);
void WriteExposureCsv(const std::string& path, const ExposureTable& table);
ExposureTable ReadExposureCsv(const std::string& path);

// `idx,external_id`
void WriteIdMap(const std::string& path, const IdMap& ids);
IdMap ReadIdMap(const std::string& path);
// `node,neighbor`, one line per directed adjacency entry.
void WriteAdjacencyCsv(const std::string& path, const Adjacency& adj);
Adjacency ReadAdjacencyCsv(const std::string& path, int n_nodes);

std::string SubsetFileName(int n_per_item);

}  // namespace d2rec
