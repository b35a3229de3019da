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

#include "d2rec/synth.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <fmt/format.h>

#include "csv_util.hpp"
#include "json.hpp"

namespace d2rec {

namespace {

constexpr int kMaxOffsetAdjustments = 64;
constexpr double kOffsetStep = 0.5;

std::vector<std::pair<int, int>> MutualKnnEdges(const Matrix& features, int k) {
  const int n = features.rows();
  k = std::min(k, n - 1);
  std::vector<std::vector<int>> knn(n);
  std::vector<std::pair<double, int>> dist;
  for (int a = 0; a < n; ++a) {
    dist.clear();
    for (int b = 0; b < n; ++b) {
      if (b == a) continue;
      double s = 0.0;
      for (int d = 0; d < features.cols(); ++d) {
        const double diff = features(a, d) - features(b, d);
        s += diff * diff;
      }
      dist.emplace_back(s, b);
    }
    if (k <= 0) continue;
    std::partial_sort(dist.begin(), dist.begin() + k, dist.end());
    for (int j = 0; j < k; ++j) knn[a].push_back(dist[j].second);
    std::sort(knn[a].begin(), knn[a].end());
  }
  std::vector<std::pair<int, int>> edges;
  for (int a = 0; a < n; ++a)
    for (int b : knn[a])
      if (a < b && std::binary_search(knn[b].begin(), knn[b].end(), a)) edges.emplace_back(a, b);
  return edges;
}

}  // namespace

void SynthConfig::Validate() const {
  if (n_users < 1 || n_items < 1) throw ConfigError("synth: n_users and n_items must be >= 1");
  if (latent_dim < 1) throw ConfigError("synth.latent_dim must be >= 1");
  if (!(confound_strength >= 0.0)) throw ConfigError("synth.confound_strength must be >= 0");
  if (!(exposure_scale >= 0.0)) throw ConfigError("synth.exposure_scale must be >= 0");
  if (!(popularity_shape > 0.0)) throw ConfigError("synth.popularity_shape must be > 0");
  if (social_knn < 0) throw ConfigError("synth.social_knn must be >= 0");
  if (!(rating_noise_sd >= 0.0)) throw ConfigError("synth.rating_noise_sd must be >= 0");
}

double SynthOracle::Affinity(int user, int item) const {
  const auto p = user_preference.Row(user);
  const auto q = item_attribute.Row(item);
  double s = 0.0;
  for (std::size_t d = 0; d < p.size(); ++d) s += p[d] * q[d];
  return s / std::sqrt(static_cast<double>(p.size()));
}

double SynthOracle::MeanRating(int user, int item) const {
  const double confound = config.confound_in_rating ? config.confound_strength : 0.0;
  return 3.0 + Affinity(user, item) +
         confound * user_conformity[user] * item_popularity[item];
}

double SynthOracle::ExposureProbability(int user, int item) const {
  const double logit = config.exposure_scale * Affinity(user, item) +
                       config.confound_strength * user_conformity[user] * item_popularity[item] -
                       exposure_offset;
  return Sigmoid(logit);
}

double SynthOracle::SampleRating(int user, int item, Rng& rng) const {
  const double noise =
      config.rating_noise_sd > 0.0
          ? std::normal_distribution<double>(0.0, config.rating_noise_sd)(rng)
          : 0.0;
  return std::clamp(std::round(MeanRating(user, item) + noise), 1.0, 5.0);
}

SynthData Generate(const SynthConfig& cfg) {
  cfg.Validate();
  SynthData out;
  SynthOracle& o = out.oracle;
  o.config = cfg;
  Rng rng(DeriveSeed(cfg.seed, 1));
  std::normal_distribution<double> normal(0.0, 1.0);
  o.user_preference = Matrix(cfg.n_users, cfg.latent_dim);
  o.item_attribute = Matrix(cfg.n_items, cfg.latent_dim);
  for (double& v : o.user_preference.Values()) v = normal(rng);
  for (double& v : o.item_attribute.Values()) v = normal(rng);
  o.user_conformity.resize(cfg.n_users);
  for (double& c : o.user_conformity) c = Uniform01(rng);
  o.item_popularity.resize(cfg.n_items);
  for (double& s : o.item_popularity) s = std::pow(1.0 - Uniform01(rng), -1.0 / cfg.popularity_shape);
  const double max_pop = *std::max_element(o.item_popularity.begin(), o.item_popularity.end());
  for (double& s : o.item_popularity) s /= max_pop;

  // Exposure; lower the offset and redraw until every user saw something.
  o.exposure_offset = cfg.exposure_offset;
  std::vector<std::pair<int, int>> exposed;
  for (int attempt = 0;; ++attempt) {
    Rng erng(DeriveSeed(cfg.seed, 2, attempt));
    exposed.clear();
    std::vector<int> per_user(cfg.n_users, 0);
    for (int u = 0; u < cfg.n_users; ++u) {
      for (int i = 0; i < cfg.n_items; ++i) {
        if (Uniform01(erng) < o.ExposureProbability(u, i)) {
          exposed.emplace_back(u, i);
          ++per_user[u];
        }
      }
    }
    if (std::all_of(per_user.begin(), per_user.end(), [](int c) { return c > 0; })) break;
    if (attempt + 1 >= kMaxOffsetAdjustments)
      throw DomainError("synth: could not give every user an exposure");
    o.exposure_offset -= kOffsetStep;
    o.offset_adjustments = attempt + 1;
  }

  Rng rrng(DeriveSeed(cfg.seed, 3));
  DatasetBuilder builder;
  for (int u = 0; u < cfg.n_users; ++u) builder.AddUser(fmt::format("u{}", u));
  for (int i = 0; i < cfg.n_items; ++i) builder.AddItem(fmt::format("i{}", i));
  for (const auto& [u, i] : exposed) {
    RatingRecord rec{fmt::format("u{}", u), fmt::format("i{}", i), o.SampleRating(u, i, rrng)};
    builder.AddRating(rec);
    out.records.push_back(std::move(rec));
  }

  // Homophily: mutual kNN over preference and conformity.
  Matrix features(cfg.n_users, cfg.latent_dim + 1);
  for (int u = 0; u < cfg.n_users; ++u) {
    for (int d = 0; d < cfg.latent_dim; ++d) features(u, d) = o.user_preference(u, d);
    features(u, cfg.latent_dim) = o.user_conformity[u];
  }
  for (const auto& [a, b] : MutualKnnEdges(features, cfg.social_knn)) {
    SocialEdge e{fmt::format("u{}", a), fmt::format("u{}", b)};
    builder.AddEdge(e);
    out.edges.push_back(std::move(e));
  }
  out.dataset = std::move(builder).Build();
  return out;
}

TestSubset UnbiasedTestset(const SynthOracle& oracle, int n_per_item, std::uint64_t seed) {
  if (n_per_item < 1) throw DomainError("n_per_item must be >= 1");
  const int n_users = oracle.config.n_users;
  const int n_items = oracle.config.n_items;
  if (n_per_item > n_users)
    throw DomainError(fmt::format("n_per_item {} exceeds {} users", n_per_item, n_users));
  TestSubset subset;
  subset.n_per_item = n_per_item;
  Rng rng(seed);
  std::vector<int> users(n_users);
  std::iota(users.begin(), users.end(), 0);
  for (int i = 0; i < n_items; ++i) {
    for (int k = 0; k < n_per_item; ++k) {
      const std::size_t j = k + UniformIndex(rng, users.size() - k);
      std::swap(users[k], users[j]);
      subset.rows.push_back({users[k], i, oracle.SampleRating(users[k], i, rng)});
    }
  }
  return subset;
}

void WriteOracleJson(const std::string& path, const SynthOracle& o) {
  const SynthConfig& c = o.config;
  nlohmann::ordered_json j;
  j["config"] = {{"n_users", c.n_users},
                 {"n_items", c.n_items},
                 {"latent_dim", c.latent_dim},
                 {"confound_strength", c.confound_strength},
                 {"confound_in_rating", c.confound_in_rating},
                 {"exposure_scale", c.exposure_scale},
                 {"exposure_offset", c.exposure_offset},
                 {"popularity_shape", c.popularity_shape},
                 {"social_knn", c.social_knn},
                 {"rating_noise_sd", c.rating_noise_sd},
                 {"seed", c.seed}};
  j["exposure_offset_used"] = o.exposure_offset;
  j["offset_adjustments"] = o.offset_adjustments;
  j["user_conformity"] = o.user_conformity;
  j["item_popularity"] = o.item_popularity;
  auto rows = [](const Matrix& m) {
    std::vector<std::vector<double>> out;
    for (int r = 0; r < m.rows(); ++r) out.emplace_back(m.Row(r).begin(), m.Row(r).end());
    return out;
  };
  j["user_preference"] = rows(o.user_preference);
  j["item_attribute"] = rows(o.item_attribute);
  auto out = csv::OpenOut(path);
  out << j.dump(1) << '\n';
}

}  // namespace d2rec
