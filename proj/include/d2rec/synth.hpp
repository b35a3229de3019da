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
#include <string>
#include <vector>

#include "d2rec/dataio.hpp"
#include "d2rec/nncore.hpp"

namespace d2rec {

// Generator for social-recommendation data where item popularity and user
// conformity confound both exposure and ratings.
struct SynthConfig {
  int n_users = 500;
  int n_items = 800;
  int latent_dim = 8;
  // Weight of conformity * popularity in the exposure logit and the rating.
  double confound_strength = 3.0;
  // When false the confounder only drives exposure.
  bool confound_in_rating = true;
  double exposure_scale = 1.0;
  double exposure_offset = 4.0;
  // Pareto shape of the popularity draw; smaller is heavier-tailed.
  double popularity_shape = 1.2;
  int social_knn = 10;
  double rating_noise_sd = 0.5;
  std::uint64_t seed = 0;

  void Validate() const;
};

struct SynthOracle {
  SynthConfig config;
  Matrix user_preference;  // n_users x latent_dim
  Matrix item_attribute;   // n_items x latent_dim
  std::vector<double> user_conformity;  // Uniform(0, 1)
  std::vector<double> item_popularity;  // in (0, 1]
  // Offset actually used after any regeneration.
  double exposure_offset = 0.0;
  int offset_adjustments = 0;

  // p_u . q_i / sqrt(latent_dim)
  double Affinity(int user, int item) const;
  // Mean of the rating before noise, rounding and clamping.
  double MeanRating(int user, int item) const;
  double ExposureProbability(int user, int item) const;
  // Integer rating on 1..5.
  double SampleRating(int user, int item, Rng& rng) const;
};

struct SynthData {
  Dataset dataset;  // user k is "u<k>", item k is "i<k>"; ids are identity-mapped
  SynthOracle oracle;
  std::vector<SocialEdge> edges;
  std::vector<RatingRecord> records;
};

SynthData Generate(const SynthConfig& cfg);

// n_per_item users per item drawn uniformly without replacement, each rated
// by the oracle with no exposure mechanism involved.
TestSubset UnbiasedTestset(const SynthOracle& oracle, int n_per_item, std::uint64_t seed);

// Generator parameters, regeneration outcome and latent draws as JSON.
void WriteOracleJson(const std::string& path, const SynthOracle& oracle);

}  // namespace d2rec
