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

#include "d2rec/evaluator.hpp"
#include "d2rec/graph_embed.hpp"
#include "d2rec/model.hpp"
#include "d2rec/synth.hpp"
#include "d2rec/trainer.hpp"

namespace d2rec::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitRuntime = 2;
inline constexpr int kExitVerification = 3;

// Raised when a command needs a file that an earlier command produces.
class MissingArtifact : public ConfigError {
 public:
  MissingArtifact(const std::string& path, const std::string& producer);
};

// One JSON document with a section per concern. Every field is optional.
struct RunConfig {
  std::uint64_t seed = 0;
  // Raw inputs for `split`; default to the files `synth` writes into --out.
  std::string ratings_path;
  std::string social_path;
  bool has_header = false;
  SynthConfig synth;
  int unbiased_per_item = 5;
  double train_fraction = 0.8;
  std::vector<int> popularity = {2, 3, 5, 10};
  WalkConfig walk;  // walk.dim follows train.model.d_emb
  TrainConfig train;
  RankingProtocol protocol;
  GradCheckSetup gradcheck;

  void Validate() const;
};

// Throws ConfigError naming the offending field path, e.g. "train.lr".
RunConfig ParseRunConfig(const std::string& json_text);
// Resolved configuration, including defaults, as pretty-printed JSON.
std::string RunConfigToJson(const RunConfig& config);

// Entry point; returns the process exit code.
int Run(int argc, char** argv);

}  // namespace d2rec::cli
