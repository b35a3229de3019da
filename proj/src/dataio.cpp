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

#include "d2rec/dataio.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <unordered_set>

#include <fmt/format.h>

#include "csv_util.hpp"
#include "d2rec/common.hpp"

namespace d2rec {

namespace {

std::uint64_t PairKey(int user, int item) {
  return (static_cast<std::uint64_t>(static_cast<std::uint32_t>(user)) << 32) |
         static_cast<std::uint32_t>(item);
}

}  // namespace

int IdMap::Intern(const std::string& external) {
  auto [it, inserted] =
      internal_.try_emplace(external, static_cast<int>(external_.size()));
  if (inserted) external_.push_back(external);
  return it->second;
}

std::optional<int> IdMap::Find(const std::string& external) const {
  auto it = internal_.find(external);
  if (it == internal_.end()) return std::nullopt;
  return it->second;
}

void DatasetBuilder::AddRating(const RatingRecord& record) {
  const int u = users_.Intern(record.user_id);
  const int i = items_.Intern(record.item_id);
  auto [it, inserted] = rating_slot_.try_emplace(PairKey(u, i), ratings_.size());
  if (inserted) {
    ratings_.push_back({u, i, record.rating});
  } else {
    ratings_[it->second].rating = record.rating;
  }
}

void DatasetBuilder::AddEdge(const SocialEdge& edge) {
  const int a = users_.Intern(edge.truster);
  const int b = users_.Intern(edge.trustee);
  edges_.emplace_back(a, b);
}

Dataset DatasetBuilder::Build() && {
  Dataset ds;
  ds.n_users = users_.size();
  ds.n_items = items_.size();
  ds.ratings = std::move(ratings_);
  ds.social_adj = BuildSocialAdjacency(ds.n_users, edges_);
  ds.bipartite_adj = BuildBipartiteAdjacency(ds.n_users, ds.n_items, ds.ratings);
  ds.users = std::move(users_);
  ds.items = std::move(items_);
  return ds;
}

std::vector<RatingRecord> LoadRatings(const std::string& path,
                                      bool has_header) {
  std::vector<RatingRecord> out;
  csv::ForEachRow(path, has_header, [&](const auto& f, std::size_t line) {
    if (f.size() != 3)
      throw ParseError(path, line,
                       fmt::format("expected 3 fields, got {}", f.size()));
    if (f[0].empty() || f[1].empty())
      throw ParseError(path, line, "empty id");
    const auto rating = csv::ParseDouble(f[2]);
    if (!rating) throw ParseError(path, line, "rating is not a number");
    if (!(*rating >= 1.0 && *rating <= 5.0))
      throw ParseError(path, line,
                       fmt::format("rating {} outside [1, 5]", *rating));
    out.push_back({std::string(f[0]), std::string(f[1]), *rating});
  });
  return out;
}

std::vector<SocialEdge> LoadSocial(const std::string& path, bool has_header) {
  std::vector<SocialEdge> out;
  csv::ForEachRow(path, has_header, [&](const auto& f, std::size_t line) {
    if (f.size() != 2)
      throw ParseError(path, line,
                       fmt::format("expected 2 fields, got {}", f.size()));
    if (f[0].empty() || f[1].empty())
      throw ParseError(path, line, "empty id");
    out.push_back({std::string(f[0]), std::string(f[1])});
  });
  return out;
}

void WriteRatingRecords(const std::string& path, std::span<const RatingRecord> records) {
  auto out = csv::OpenOut(path);
  for (const auto& r : records) out << fmt::format("{},{},{}\n", r.user_id, r.item_id, r.rating);
}

void WriteSocialEdges(const std::string& path, std::span<const SocialEdge> edges) {
  auto out = csv::OpenOut(path);
  for (const auto& e : edges) out << e.truster << ',' << e.trustee << '\n';
}

Dataset BuildDataset(std::span<const RatingRecord> ratings,
                     std::span<const SocialEdge> edges) {
  if (ratings.empty()) throw DomainError("dataset needs at least one rating");
  DatasetBuilder builder;
  for (const auto& r : ratings) builder.AddRating(r);
  for (const auto& e : edges) builder.AddEdge(e);
  return std::move(builder).Build();
}

Adjacency BuildSocialAdjacency(int n_users,
                               std::span<const std::pair<int, int>> edges) {
  Adjacency adj(n_users);
  for (const auto& [a, b] : edges) {
    adj[a].push_back(b);
    if (a != b) adj[b].push_back(a);
  }
  for (int u = 0; u < n_users; ++u) {
    auto& nb = adj[u];
    std::sort(nb.begin(), nb.end());
    nb.erase(std::unique(nb.begin(), nb.end()), nb.end());
    if (nb.empty()) nb.push_back(u);
  }
  return adj;
}

Adjacency BuildBipartiteAdjacency(int n_users, int n_items,
                                  std::span<const Rating> ratings) {
  Adjacency adj(n_users + n_items);
  for (const auto& r : ratings) {
    adj[r.user].push_back(n_users + r.item);
    adj[n_users + r.item].push_back(r.user);
  }
  for (auto& nb : adj) {
    std::sort(nb.begin(), nb.end());
    nb.erase(std::unique(nb.begin(), nb.end()), nb.end());
  }
  return adj;
}

TrainTestSplit SplitTrainTest(const Dataset& ds, double train_fraction,
                              std::uint64_t seed) {
  if (!(train_fraction > 0.0 && train_fraction < 1.0))
    throw DomainError(
        fmt::format("train_fraction {} must lie in (0, 1)", train_fraction));
  std::vector<std::size_t> order(ds.ratings.size());
  std::iota(order.begin(), order.end(), 0);
  Rng rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  const auto n_train = static_cast<std::size_t>(
      std::floor(train_fraction * static_cast<double>(order.size())));
  TrainTestSplit split;
  split.train.reserve(n_train);
  split.test_pool.reserve(order.size() - n_train);
  for (std::size_t k = 0; k < order.size(); ++k) {
    (k < n_train ? split.train : split.test_pool).push_back(ds.ratings[order[k]]);
  }
  return split;
}

std::optional<TestSubset> MakePopularitySubset(std::span<const Rating> pool,
                                               int n_per_item,
                                               std::uint64_t seed) {
  if (n_per_item < 1) throw DomainError("n_per_item must be >= 1");
  std::map<int, std::vector<std::size_t>> by_item;
  for (std::size_t k = 0; k < pool.size(); ++k) by_item[pool[k].item].push_back(k);

  TestSubset subset;
  subset.n_per_item = n_per_item;
  Rng rng(seed);
  for (auto& [item, rows] : by_item) {
    if (static_cast<int>(rows.size()) < n_per_item) continue;
    // Partial Fisher-Yates: the first n_per_item slots are a uniform sample.
    for (int k = 0; k < n_per_item; ++k) {
      const std::size_t j = k + UniformIndex(rng, rows.size() - k);
      std::swap(rows[k], rows[j]);
      subset.rows.push_back(pool[rows[k]]);
    }
  }
  if (subset.rows.empty()) return std::nullopt;
  return subset;
}

std::size_t ExposureTable::NumPositives() const {
  return static_cast<std::size_t>(
      std::count_if(rows.begin(), rows.end(),
                    [](const ExposureRow& r) { return r.exposure == 1; }));
}

ExposureTable BuildExposureTable(std::span<const Rating> train, int n_items,
                                 int negatives_per_positive,
                                 std::uint64_t seed) {
  if (negatives_per_positive < 0)
    throw DomainError("negatives_per_positive must be >= 0");
  ExposureTable table;
  std::map<int, std::vector<int>> rated;
  std::map<int, int> n_pos;
  for (const auto& r : train) {
    table.rows.push_back({r.user, r.item, 1, r.rating});
    rated[r.user].push_back(r.item);
    ++n_pos[r.user];
  }
  Rng rng(seed);
  std::vector<int> complement;
  for (auto& [user, items] : rated) {
    std::sort(items.begin(), items.end());
    items.erase(std::unique(items.begin(), items.end()), items.end());
    const int requested = negatives_per_positive * n_pos[user];
    const int available = n_items - static_cast<int>(items.size());
    if (requested == 0) continue;
    if (requested >= available) {
      for (int i = 0, k = 0; i < n_items; ++i) {
        if (k < static_cast<int>(items.size()) && items[k] == i) {
          ++k;
          continue;
        }
        table.rows.push_back({user, i, 0, std::nullopt});
      }
      if (requested > available)
        table.coverage.push_back({user, requested, available});
    } else if (2 * requested < available) {
      std::unordered_set<int> taken(items.begin(), items.end());
      for (int k = 0; k < requested;) {
        const int i = static_cast<int>(UniformIndex(rng, n_items));
        if (!taken.insert(i).second) continue;
        table.rows.push_back({user, i, 0, std::nullopt});
        ++k;
      }
    } else {
      complement.clear();
      for (int i = 0, k = 0; i < n_items; ++i) {
        if (k < static_cast<int>(items.size()) && items[k] == i) {
          ++k;
          continue;
        }
        complement.push_back(i);
      }
      for (int k = 0; k < requested; ++k) {
        const std::size_t j = k + UniformIndex(rng, complement.size() - k);
        std::swap(complement[k], complement[j]);
        table.rows.push_back({user, complement[k], 0, std::nullopt});
      }
    }
  }
  table.positive_rate =
      table.rows.empty()
          ? 0.0
          : static_cast<double>(train.size()) / static_cast<double>(table.rows.size());
  return table;
}

void WriteRatingsCsv(const std::string& path, std::span<const Rating> rows) {
  auto out = csv::OpenOut(path);
  out << "user_idx,item_idx,exposure,rating\n";
  for (const auto& r : rows) out << fmt::format("{},{},1,{}\n", r.user, r.item, r.rating);
}

namespace {

ExposureRow ParseExposureLine(const std::string& path,
                              const std::vector<std::string_view>& f,
                              std::size_t line) {
  if (f.size() != 4)
    throw ParseError(path, line, fmt::format("expected 4 fields, got {}", f.size()));
  const auto u = csv::ParseInt(f[0]);
  const auto i = csv::ParseInt(f[1]);
  const auto e = csv::ParseInt(f[2]);
  if (!u || !i || !e || *u < 0 || *i < 0 || (*e != 0 && *e != 1))
    throw ParseError(path, line, "bad index or exposure field");
  ExposureRow row{static_cast<int>(*u), static_cast<int>(*i), static_cast<int>(*e),
                  std::nullopt};
  if (!f[3].empty()) {
    const auto y = csv::ParseDouble(f[3]);
    if (!y) throw ParseError(path, line, "rating is not a number");
    row.rating = *y;
  }
  if ((row.exposure == 1) != row.rating.has_value())
    throw ParseError(path, line, "exposure flag and rating presence disagree");
  return row;
}

}  // namespace

std::vector<Rating> ReadRatingsCsv(const std::string& path) {
  std::vector<Rating> out;
  csv::ForEachRow(path, true, [&](const auto& f, std::size_t line) {
    const ExposureRow row = ParseExposureLine(path, f, line);
    if (row.exposure != 1) throw ParseError(path, line, "expected a rated row");
    out.push_back({row.user, row.item, *row.rating});
  });
  return out;
}

void WriteExposureCsv(const std::string& path, const ExposureTable& table) {
  auto out = csv::OpenOut(path);
  out << "user_idx,item_idx,exposure,rating\n";
  for (const auto& r : table.rows) {
    if (r.rating)
      out << fmt::format("{},{},{},{}\n", r.user, r.item, r.exposure, *r.rating);
    else
      out << fmt::format("{},{},{},\n", r.user, r.item, r.exposure);
  }
}

ExposureTable ReadExposureCsv(const std::string& path) {
  ExposureTable table;
  csv::ForEachRow(path, true, [&](const auto& f, std::size_t line) {
    table.rows.push_back(ParseExposureLine(path, f, line));
  });
  if (!table.rows.empty())
    table.positive_rate = static_cast<double>(table.NumPositives()) /
                          static_cast<double>(table.rows.size());
  return table;
}

void WriteIdMap(const std::string& path, const IdMap& ids) {
  auto out = csv::OpenOut(path);
  out << "idx,external_id\n";
  for (int k = 0; k < ids.size(); ++k) out << k << ',' << ids.External(k) << '\n';
}

IdMap ReadIdMap(const std::string& path) {
  IdMap ids;
  csv::ForEachRow(path, true, [&](const auto& f, std::size_t line) {
    if (f.size() != 2) throw ParseError(path, line, "expected idx,external_id");
    const auto idx = csv::ParseInt(f[0]);
    if (!idx || *idx != ids.size())
      throw ParseError(path, line, "indices must be dense and ascending");
    ids.Intern(std::string(f[1]));
  });
  return ids;
}

void WriteAdjacencyCsv(const std::string& path, const Adjacency& adj) {
  auto out = csv::OpenOut(path);
  out << "node,neighbor\n";
  for (std::size_t v = 0; v < adj.size(); ++v)
    for (int w : adj[v]) out << v << ',' << w << '\n';
}

Adjacency ReadAdjacencyCsv(const std::string& path, int n_nodes) {
  Adjacency adj(n_nodes);
  csv::ForEachRow(path, true, [&](const auto& f, std::size_t line) {
    if (f.size() != 2) throw ParseError(path, line, "expected node,neighbor");
    const auto v = csv::ParseInt(f[0]);
    const auto w = csv::ParseInt(f[1]);
    if (!v || !w || *v < 0 || *w < 0 || *v >= n_nodes || *w >= n_nodes)
      throw ParseError(path, line, "node index out of range");
    adj[*v].push_back(static_cast<int>(*w));
  });
  return adj;
}

std::string SubsetFileName(int n_per_item) {
  return fmt::format("test_pop{}.csv", n_per_item);
}

}  // namespace d2rec
