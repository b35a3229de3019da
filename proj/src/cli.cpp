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


#include "d2rec/cli.hpp"

#include <fmt/format.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <optional>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"

namespace d2rec::cli {

namespace fs = std::filesystem;
using nlohmann::json;
using nlohmann::ordered_json;

MissingArtifact::MissingArtifact(const std::string& path, const std::string& producer)
    : ConfigError(fmt::format("missing artifact {}; produce it with `d2rec {}`", path,
                              producer)) {}

namespace {

// Typed access to one JSON object with field paths in every error.
class Section {
 public:
  Section(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(Where() + "expected an object");
  }

  // Rejects keys the caller did not list.
  void Allow(std::initializer_list<const char*> keys) const {
    for (const auto& [key, value] : j_.items()) {
      bool known = false;
      for (const char* k : keys) known = known || key == k;
      if (!known) throw ConfigError(fmt::format("{}: unknown field", Join(key)));
    }
  }

  bool Has(const char* key) const { return j_.contains(key); }

  Section Sub(const char* key) const { return Section(j_.at(key), Join(key)); }

  void Get(const char* key, int& out) const {
    if (!Has(key)) return;
    const json& v = j_.at(key);
    if (!v.is_number_integer()) throw ConfigError(Join(key) + ": expected an integer");
    const auto x = v.get<long long>();
    if (x < INT32_MIN || x > INT32_MAX) throw ConfigError(Join(key) + ": out of range");
    out = static_cast<int>(x);
  }
  void Get(const char* key, std::uint64_t& out) const {
    if (!Has(key)) return;
    const json& v = j_.at(key);
    if (!v.is_number_unsigned())
      throw ConfigError(Join(key) + ": expected a non-negative integer");
    out = v.get<std::uint64_t>();
  }
  void Get(const char* key, double& out) const {
    if (!Has(key)) return;
    const json& v = j_.at(key);
    if (!v.is_number()) throw ConfigError(Join(key) + ": expected a number");
    out = v.get<double>();
  }
  void Get(const char* key, bool& out) const {
    if (!Has(key)) return;
    const json& v = j_.at(key);
    if (!v.is_boolean()) throw ConfigError(Join(key) + ": expected true or false");
    out = v.get<bool>();
  }
  void Get(const char* key, std::string& out) const {
    if (!Has(key)) return;
    const json& v = j_.at(key);
    if (!v.is_string()) throw ConfigError(Join(key) + ": expected a string");
    out = v.get<std::string>();
  }
  void Get(const char* key, std::vector<int>& out) const {
    if (!Has(key)) return;
    const json& v = j_.at(key);
    if (!v.is_array()) throw ConfigError(Join(key) + ": expected an array of integers");
    std::vector<int> xs;
    for (std::size_t i = 0; i < v.size(); ++i) {
      if (!v[i].is_number_integer())
        throw ConfigError(fmt::format("{}[{}]: expected an integer", Join(key), i));
      xs.push_back(v[i].get<int>());
    }
    out = std::move(xs);
  }
  template <typename Enum>
  void GetEnum(const char* key, Enum& out, Enum (*parse)(const std::string&)) const {
    std::string name;
    Get(key, name);
    if (name.empty()) return;
    try {
      out = parse(name);
    } catch (const ConfigError& e) {
      throw ConfigError(fmt::format("{}: {}", Join(key), e.what()));
    }
  }

  std::string Join(const std::string& key) const {
    return path_.empty() ? key : path_ + "." + key;
  }

 private:
  std::string Where() const { return path_.empty() ? "config: " : path_ + ": "; }

  const json& j_;
  std::string path_;
};

void Checked(const char* section, const std::function<void()>& validate) {
  try {
    validate();
  } catch (const ConfigError& e) {
    throw ConfigError(fmt::format("{}: {}", section, e.what()));
  }
}

}  // namespace

void RunConfig::Validate() const {
  Checked("synth", [&] { synth.Validate(); });
  if (unbiased_per_item < 1) throw ConfigError("synth.unbiased_per_item: must be >= 1");
  if (!(train_fraction > 0.0 && train_fraction < 1.0))
    throw ConfigError("split.train_fraction: must lie in (0, 1)");
  if (popularity.empty()) throw ConfigError("split.popularity: must not be empty");
  for (std::size_t i = 0; i < popularity.size(); ++i)
    if (popularity[i] < 1)
      throw ConfigError(fmt::format("split.popularity[{}]: must be >= 1", i));
  Checked("walk", [&] { walk.Validate(); });
  Checked("train", [&] { train.Validate(); });
  if (walk.dim != train.model.d_emb)
    throw ConfigError("walk.dim: must equal model.d_emb");
  if (protocol.k < 1) throw ConfigError("eval.k: must be >= 1");
  if (protocol.candidates_per_positive < 0)
    throw ConfigError("eval.candidates_per_positive: must be >= 0");
  if (gradcheck.n_users < 1 || gradcheck.n_items < 1 || gradcheck.batch < 1 ||
      gradcheck.d_emb < 1 || gradcheck.d_factor < 1 || gradcheck.head_depth < 1)
    throw ConfigError("gradcheck: sizes must be >= 1");
  if (!(gradcheck.h > 0.0)) throw ConfigError("gradcheck.h: must be > 0");
}

RunConfig ParseRunConfig(const std::string& json_text) {
  json root;
  try {
    root = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw ConfigError(fmt::format("config: not valid JSON ({})", e.what()));
  }
  RunConfig c;
  const Section top(root, "");
  top.Allow({"seed", "data", "synth", "split", "walk", "model", "train", "eval", "gradcheck"});
  top.Get("seed", c.seed);

  if (top.Has("data")) {
    const Section s = top.Sub("data");
    s.Allow({"ratings", "social", "has_header"});
    s.Get("ratings", c.ratings_path);
    s.Get("social", c.social_path);
    s.Get("has_header", c.has_header);
  }
  if (top.Has("synth")) {
    const Section s = top.Sub("synth");
    s.Allow({"n_users", "n_items", "latent_dim", "confound_strength", "confound_in_rating",
             "exposure_scale", "exposure_offset", "popularity_shape", "social_knn",
             "rating_noise_sd", "unbiased_per_item"});
    s.Get("n_users", c.synth.n_users);
    s.Get("n_items", c.synth.n_items);
    s.Get("latent_dim", c.synth.latent_dim);
    s.Get("confound_strength", c.synth.confound_strength);
    s.Get("confound_in_rating", c.synth.confound_in_rating);
    s.Get("exposure_scale", c.synth.exposure_scale);
    s.Get("exposure_offset", c.synth.exposure_offset);
    s.Get("popularity_shape", c.synth.popularity_shape);
    s.Get("social_knn", c.synth.social_knn);
    s.Get("rating_noise_sd", c.synth.rating_noise_sd);
    s.Get("unbiased_per_item", c.unbiased_per_item);
  }
  if (top.Has("split")) {
    const Section s = top.Sub("split");
    s.Allow({"train_fraction", "popularity"});
    s.Get("train_fraction", c.train_fraction);
    s.Get("popularity", c.popularity);
  }
  if (top.Has("walk")) {
    const Section s = top.Sub("walk");
    s.Allow({"walks_per_node", "walk_length", "p", "q", "window", "negatives", "sgns_epochs",
             "sgns_lr"});
    s.Get("walks_per_node", c.walk.walks_per_node);
    s.Get("walk_length", c.walk.walk_length);
    s.Get("p", c.walk.return_param_p);
    s.Get("q", c.walk.inout_param_q);
    s.Get("window", c.walk.window);
    s.Get("negatives", c.walk.negatives);
    s.Get("sgns_epochs", c.walk.sgns_epochs);
    s.Get("sgns_lr", c.walk.sgns_lr);
  }
  ModelConfig& m = c.train.model;
  if (top.Has("model")) {
    const Section s = top.Sub("model");
    s.Allow({"d_emb", "d_factor", "head_depth", "variant", "kappa", "omega_max", "omega_mode",
             "exposure_bias", "clamp_predictions", "fine_tune_embeddings"});
    s.Get("d_emb", m.d_emb);
    s.Get("d_factor", m.d_factor);
    s.Get("head_depth", m.head_depth);
    s.GetEnum("variant", m.variant, &ParseVariant);
    s.Get("kappa", m.kappa);
    s.Get("omega_max", m.omega_max);
    s.GetEnum("omega_mode", m.omega_mode, &ParseOmegaMode);
    s.Get("exposure_bias", m.exposure_bias);
    s.Get("clamp_predictions", m.clamp_predictions);
    s.Get("fine_tune_embeddings", m.fine_tune_embeddings);
  }
  c.walk.dim = m.d_emb;
  if (top.Has("train")) {
    const Section s = top.Sub("train");
    s.Allow({"batch_size", "lr", "max_epochs", "patience", "negatives_per_positive",
             "resample_negatives"});
    s.Get("batch_size", c.train.batch_size);
    s.Get("lr", c.train.lr);
    s.Get("max_epochs", c.train.max_epochs);
    s.Get("patience", c.train.patience);
    s.Get("negatives_per_positive", c.train.negatives_per_positive);
    s.Get("resample_negatives", c.train.resample_negatives);
  }
  if (top.Has("eval")) {
    const Section s = top.Sub("eval");
    s.Allow({"k", "candidates_per_positive"});
    s.Get("k", c.protocol.k);
    s.Get("candidates_per_positive", c.protocol.candidates_per_positive);
  }
  if (top.Has("gradcheck")) {
    GradCheckSetup& g = c.gradcheck;
    const Section s = top.Sub("gradcheck");
    s.Allow({"n_users", "n_items", "batch", "d_emb", "d_factor", "head_depth", "variant",
             "omega_mode", "h", "tolerance"});
    s.Get("n_users", g.n_users);
    s.Get("n_items", g.n_items);
    s.Get("batch", g.batch);
    s.Get("d_emb", g.d_emb);
    s.Get("d_factor", g.d_factor);
    s.Get("head_depth", g.head_depth);
    s.GetEnum("variant", g.variant, &ParseVariant);
    s.GetEnum("omega_mode", g.omega_mode, &ParseOmegaMode);
    s.Get("h", g.h);
    s.Get("tolerance", g.tolerance);
  }
  return c;
}

std::string RunConfigToJson(const RunConfig& c) {
  ordered_json j;
  j["seed"] = c.seed;
  j["data"] = {{"ratings", c.ratings_path},
               {"social", c.social_path},
               {"has_header", c.has_header}};
  const SynthConfig& s = c.synth;
  j["synth"] = {{"n_users", s.n_users},
                {"n_items", s.n_items},
                {"latent_dim", s.latent_dim},
                {"confound_strength", s.confound_strength},
                {"confound_in_rating", s.confound_in_rating},
                {"exposure_scale", s.exposure_scale},
                {"exposure_offset", s.exposure_offset},
                {"popularity_shape", s.popularity_shape},
                {"social_knn", s.social_knn},
                {"rating_noise_sd", s.rating_noise_sd},
                {"unbiased_per_item", c.unbiased_per_item}};
  j["split"] = {{"train_fraction", c.train_fraction}, {"popularity", c.popularity}};
  const WalkConfig& w = c.walk;
  j["walk"] = {{"walks_per_node", w.walks_per_node},
               {"walk_length", w.walk_length},
               {"p", w.return_param_p},
               {"q", w.inout_param_q},
               {"window", w.window},
               {"negatives", w.negatives},
               {"sgns_epochs", w.sgns_epochs},
               {"sgns_lr", w.sgns_lr}};
  const ModelConfig& m = c.train.model;
  j["model"] = {{"d_emb", m.d_emb},
                {"d_factor", m.d_factor},
                {"head_depth", m.head_depth},
                {"variant", VariantName(m.variant)},
                {"kappa", m.kappa},
                {"omega_max", m.omega_max},
                {"omega_mode", OmegaModeName(m.omega_mode)},
                {"exposure_bias", m.exposure_bias},
                {"clamp_predictions", m.clamp_predictions},
                {"fine_tune_embeddings", m.fine_tune_embeddings}};
  const TrainConfig& t = c.train;
  j["train"] = {{"batch_size", t.batch_size},
                {"lr", t.lr},
                {"max_epochs", t.max_epochs},
                {"patience", t.patience},
                {"negatives_per_positive", t.negatives_per_positive},
                {"resample_negatives", t.resample_negatives}};
  j["eval"] = {{"k", c.protocol.k},
               {"candidates_per_positive", c.protocol.candidates_per_positive}};
  const GradCheckSetup& g = c.gradcheck;
  j["gradcheck"] = {{"n_users", g.n_users},
                    {"n_items", g.n_items},
                    {"batch", g.batch},
                    {"d_emb", g.d_emb},
                    {"d_factor", g.d_factor},
                    {"head_depth", g.head_depth},
                    {"variant", VariantName(g.variant)},
                    {"omega_mode", OmegaModeName(g.omega_mode)},
                    {"h", g.h},
                    {"tolerance", g.tolerance}};
  return j.dump(2) + "\n";
}

namespace {

struct Context {
  RunConfig config;
  fs::path out;
  int threads = 1;

  std::string Path(const std::string& name) const { return (out / name).string(); }

  // Path of an artifact an earlier command must have written.
  std::string Need(const std::string& name, const std::string& producer) const {
    const std::string p = Path(name);
    if (!fs::exists(p)) throw MissingArtifact(p, producer);
    return p;
  }
};

void WriteText(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path);
  out << text;
}

std::string ReadText(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot read config " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

int ThreadsFromEnv() {
  const char* v = std::getenv("D2REC_THREADS");
  if (v == nullptr || *v == '\0') return 1;
  char* end = nullptr;
  const long n = std::strtol(v, &end, 10);
  if (*end != '\0' || n < 1) throw ConfigError(fmt::format("D2REC_THREADS: bad value '{}'", v));
  return static_cast<int>(n);
}

std::uint64_t TrainSeed(const RunConfig& c) { return DeriveSeed(c.seed, 40); }

// ---- synth ----

int CmdSynth(const Context& ctx) {
  SynthConfig sc = ctx.config.synth;
  sc.seed = DeriveSeed(ctx.config.seed, 1);
  const SynthData data = Generate(sc);
  WriteRatingRecords(ctx.Path("ratings.csv"), data.records);
  WriteSocialEdges(ctx.Path("social.csv"), data.edges);
  WriteOracleJson(ctx.Path("oracle.json"), data.oracle);

  const TestSubset unbiased =
      UnbiasedTestset(data.oracle, ctx.config.unbiased_per_item, DeriveSeed(ctx.config.seed, 2));
  std::vector<RatingRecord> records;
  records.reserve(unbiased.rows.size());
  for (const Rating& r : unbiased.rows)
    records.push_back({data.dataset.users.External(r.user), data.dataset.items.External(r.item),
                       r.rating});
  WriteRatingRecords(ctx.Path("unbiased_test.csv"), records);

  if (data.oracle.offset_adjustments > 0)
    std::cerr << fmt::format("synth: exposure offset lowered to {} after {} regeneration(s)\n",
                             data.oracle.exposure_offset, data.oracle.offset_adjustments);
  std::cout << fmt::format("synth: {} users, {} items, {} ratings, {} edges, {} unbiased rows\n",
                           data.dataset.n_users, data.dataset.n_items, data.records.size(),
                           data.edges.size(), unbiased.rows.size());
  return kExitOk;
}

// ---- split ----

std::string InputPath(const Context& ctx, const std::string& configured, const char* field,
                      const std::string& fallback) {
  if (!configured.empty()) {
    if (!fs::exists(configured))
      throw ConfigError(fmt::format("data.{}: file not found: {}", field, configured));
    return configured;
  }
  return ctx.Need(fallback, "synth");
}

int CmdSplit(const Context& ctx) {
  const RunConfig& c = ctx.config;
  const auto records = LoadRatings(InputPath(ctx, c.ratings_path, "ratings", "ratings.csv"),
                                   c.has_header);
  const auto edges = LoadSocial(InputPath(ctx, c.social_path, "social", "social.csv"),
                                c.has_header);
  std::vector<RatingRecord> unbiased;
  const std::string unbiased_path = ctx.Path("unbiased_test.csv");
  if (c.ratings_path.empty() && fs::exists(unbiased_path)) unbiased = LoadRatings(unbiased_path);

  DatasetBuilder builder;
  for (const auto& r : records) builder.AddRating(r);
  for (const auto& e : edges) builder.AddEdge(e);
  std::vector<Rating> unbiased_rows;
  unbiased_rows.reserve(unbiased.size());
  for (const auto& r : unbiased)
    unbiased_rows.push_back({builder.AddUser(r.user_id), builder.AddItem(r.item_id), r.rating});
  const Dataset ds = std::move(builder).Build();

  const TrainTestSplit split = SplitTrainTest(ds, c.train_fraction, DeriveSeed(c.seed, 10));
  WriteIdMap(ctx.Path("users.csv"), ds.users);
  WriteIdMap(ctx.Path("items.csv"), ds.items);
  WriteAdjacencyCsv(ctx.Path("social_adj.csv"), ds.social_adj);
  WriteRatingsCsv(ctx.Path("train.csv"), split.train);
  WriteRatingsCsv(ctx.Path("test_pool.csv"), split.test_pool);
  for (int n : c.popularity) {
    const auto subset = MakePopularitySubset(split.test_pool, n, DeriveSeed(c.seed, 20, n));
    if (!subset) std::cerr << fmt::format("split: no item has {} test ratings\n", n);
    WriteRatingsCsv(ctx.Path(SubsetFileName(n)),
                    subset ? std::span<const Rating>(subset->rows) : std::span<const Rating>());
  }
  if (!unbiased_rows.empty()) WriteRatingsCsv(ctx.Path("test_unbiased.csv"), unbiased_rows);
  std::cout << fmt::format("split: {} train, {} test pool, {} unbiased\n", split.train.size(),
                           split.test_pool.size(), unbiased_rows.size());
  return kExitOk;
}

// ---- shared loading ----

struct SplitArtifacts {
  int n_users = 0;
  int n_items = 0;
  std::vector<Rating> train;
};

SplitArtifacts LoadSplit(const Context& ctx) {
  SplitArtifacts a;
  a.n_users = ReadIdMap(ctx.Need("users.csv", "split")).size();
  a.n_items = ReadIdMap(ctx.Need("items.csv", "split")).size();
  a.train = ReadRatingsCsv(ctx.Need("train.csv", "split"));
  return a;
}

struct LoadedEmbeddings {
  std::optional<EmbeddingTable> theta;
  std::optional<EmbeddingTable> beta;
  EmbeddingInputs Inputs() const {
    return {theta ? &*theta : nullptr, beta ? &*beta : nullptr};
  }
};

LoadedEmbeddings LoadEmbeddings(const Context& ctx, const ModelConfig& model) {
  LoadedEmbeddings e;
  if (model.variant == Variant::kNoNetworkEmbeddings) return e;
  e.theta = ReadEmbeddingBinary(ctx.Need("theta.emb", "embed"));
  e.beta = ReadEmbeddingBinary(ctx.Need("beta.emb", "embed"));
  return e;
}

// Named evaluation subsets in report order; empty subsets are skipped.
std::vector<std::pair<std::string, TestSubset>> LoadSubsets(const Context& ctx,
                                                            bool with_unbiased) {
  std::vector<std::pair<std::string, TestSubset>> out;
  for (int n : ctx.config.popularity) {
    TestSubset s{n, ReadRatingsCsv(ctx.Need(SubsetFileName(n), "split"))};
    out.emplace_back(std::to_string(n), std::move(s));
  }
  const std::string unbiased = ctx.Path("test_unbiased.csv");
  if (with_unbiased && fs::exists(unbiased))
    out.emplace_back("unbiased", TestSubset{0, ReadRatingsCsv(unbiased)});
  return out;
}

// ---- embed ----

int CmdEmbed(const Context& ctx) {
  const RunConfig& c = ctx.config;
  const SplitArtifacts a = LoadSplit(ctx);
  Dataset social;
  social.n_users = a.n_users;
  social.social_adj = ReadAdjacencyCsv(ctx.Need("social_adj.csv", "split"), a.n_users);
  const EmbeddingTable theta = UserEmbeddings(social, c.walk, DeriveSeed(c.seed, 30), ctx.threads);

  const Adjacency bipartite = BuildBipartiteAdjacency(a.n_users, a.n_items, a.train);
  const ItemEmbeddingResult beta = ItemEmbeddings(a.n_users, a.n_items, bipartite, c.walk,
                                                  DeriveSeed(c.seed, 31), ctx.threads);
  WriteEmbeddingBinary(ctx.Path("theta.emb"), theta);
  WriteEmbeddingBinary(ctx.Path("beta.emb"), beta.table);
  WriteEmbeddingCsv(ctx.Path("theta.csv"), theta);
  WriteEmbeddingCsv(ctx.Path("beta.csv"), beta.table);
  std::cout << fmt::format("embed: theta {}x{}, beta {}x{} ({} items without train ratings)\n",
                           theta.n_nodes, theta.dim, beta.table.n_nodes, beta.table.dim,
                           beta.untrained_items.size());
  return kExitOk;
}

// ---- train ----

TrainResult TrainVariant(const SplitArtifacts& a,
                         const LoadedEmbeddings& emb, const TrainConfig& tc) {
  TrainHooks hooks;
  hooks.on_epoch = [](const EpochRecord& r, const D2RecParams&) {
    std::cerr << fmt::format("epoch {:3d}  L {:.4f}  L_exp {:.4f}  L_disc {:.4f}  mse {:.4f}\n",
                             r.epoch, r.rating_loss, r.exposure_loss, r.discrepancy_loss,
                             r.train_mse);
  };
  return Train(a.n_users, a.n_items, a.train, emb.Inputs(), tc, hooks);
}

int CmdTrain(const Context& ctx) {
  TrainConfig tc = ctx.config.train;
  tc.seed = TrainSeed(ctx.config);
  const SplitArtifacts a = LoadSplit(ctx);
  const LoadedEmbeddings emb = LoadEmbeddings(ctx, tc.model);
  const TrainResult res = TrainVariant(a, emb, tc);

  WriteCheckpoint(ctx.Path("model.ckpt"), res.params);
  WriteModelSidecar(ctx.Path("model.json"), tc.model, res.positive_rate);
  WriteHistoryCsv(ctx.Path("history.csv"), res.history);
  WriteExposureCsv(ctx.Path("exposure.csv"),
                   BuildExposureTable(a.train, a.n_items, tc.negatives_per_positive,
                                      DeriveSeed(tc.seed, 2, 0)));
  std::cout << fmt::format("train: {} epochs, best epoch {}{}\n", res.history.epochs.size(),
                           res.history.best_epoch,
                           res.history.stopped_early ? " (stopped early)" : "");
  return kExitOk;
}

// ---- eval ----

int CmdEval(const Context& ctx) {
  const RunConfig& c = ctx.config;
  const auto [model, positive_rate] = ReadModelSidecar(ctx.Need("model.json", "train"));
  const D2RecParams params = ReadCheckpoint(ctx.Need("model.ckpt", "train"), model);
  const SplitArtifacts a = LoadSplit(ctx);
  const LoadedEmbeddings emb = LoadEmbeddings(ctx, model);
  const Scorer scorer = MakeModelScorer(params, emb.Inputs(), positive_rate);

  auto subsets = LoadSubsets(ctx, true);
  std::vector<Rating> seen_ratings = a.train;
  const auto pool = ReadRatingsCsv(ctx.Need("test_pool.csv", "split"));
  seen_ratings.insert(seen_ratings.end(), pool.begin(), pool.end());
  for (const auto& [name, s] : subsets)
    if (name == "unbiased") seen_ratings.insert(seen_ratings.end(), s.rows.begin(), s.rows.end());
  const SeenItems seen = CollectSeenItems(a.n_users, seen_ratings);

  RankingProtocol protocol = c.protocol;
  protocol.seed = DeriveSeed(c.seed, 50);
  std::vector<MetricsReport> reports;
  std::vector<MetricsReport> unbiased;
  for (const auto& [name, s] : subsets) {
    if (s.rows.empty()) {
      std::cerr << fmt::format("eval: subset {} is empty, skipped\n", name);
      continue;
    }
    MetricsReport r = Evaluate(scorer, s, protocol, seen, a.n_items);
    (name == "unbiased" ? unbiased : reports).push_back(r);
  }
  WriteReportCsv(ctx.Path("report.csv"), reports);
  if (!unbiased.empty()) WriteReportCsv(ctx.Path("report_unbiased.csv"), unbiased);

  ordered_json pj;
  pj["k"] = protocol.k;
  pj["candidates_per_positive"] = protocol.candidates_per_positive;
  pj["seed"] = protocol.seed;
  pj["candidates"] = "unseen items drawn uniformly per positive";
  pj["seen_items"] = "train, test pool and unbiased test ratings";
  pj["negative_relevance"] = 0;
  pj["tie_break"] = "ascending internal item index";
  WriteText(ctx.Path("report.protocol.json"), pj.dump(2) + "\n");

  for (const auto& r : reports)
    std::cout << fmt::format("eval: popularity {:>2}  mae {:.4f}  mse {:.4f}  hr@{} {:.4f}  "
                             "ndcg@{} {:.4f}\n",
                             r.subset_popularity, r.mae, r.mse, protocol.k, r.hr_at_k,
                             protocol.k, r.ndcg_at_k);
  for (const auto& r : unbiased)
    std::cout << fmt::format("eval: unbiased       mae {:.4f}  mse {:.4f}\n", r.mae, r.mse);
  return kExitOk;
}

// ---- ablate ----

int CmdAblate(const Context& ctx) {
  const SplitArtifacts a = LoadSplit(ctx);
  const auto subsets = LoadSubsets(ctx, true);
  LoadedEmbeddings emb;
  emb.theta = ReadEmbeddingBinary(ctx.Need("theta.emb", "embed"));
  emb.beta = ReadEmbeddingBinary(ctx.Need("beta.emb", "embed"));

  std::string table = "variant";
  for (const auto& [name, s] : subsets) table += fmt::format(",mae@{0},mse@{0}", name);
  table += '\n';
  for (Variant v : {Variant::kFull, Variant::kNoNetworkEmbeddings, Variant::kNoDisentanglement}) {
    TrainConfig tc = ctx.config.train;
    tc.model.variant = v;
    tc.seed = TrainSeed(ctx.config);
    std::cerr << fmt::format("ablate: training {}\n", VariantName(v));
    const TrainResult res = TrainVariant(a, emb, tc);
    table += VariantName(v);
    for (const auto& [name, s] : subsets) {
      if (s.rows.empty()) {
        table += ",,";
        continue;
      }
      std::vector<int> users, items;
      std::vector<double> truth;
      for (const Rating& r : s.rows) {
        users.push_back(r.user);
        items.push_back(r.item);
        truth.push_back(r.rating);
      }
      const auto pred = PredictPairs(res.params, emb.Inputs(), users, items, res.positive_rate);
      const RatingErrors e = MaeMse(truth, pred);
      table += fmt::format(",{},{}", e.mae, e.mse);
    }
    table += '\n';
  }
  WriteText(ctx.Path("ablation.csv"), table);
  std::cout << table;
  return kExitOk;
}

// ---- gradcheck ----

int CmdGradcheck(const Context& ctx) {
  const GradCheckResult r =
      FullObjectiveGradCheck(ctx.config.gradcheck, DeriveSeed(ctx.config.seed, 60));
  std::cout << fmt::format("gradcheck: max relative error {:.3e} over {} parameters ({})\n",
                           r.max_rel_error, r.n_checked, r.passed ? "pass" : "FAIL");
  if (!r.passed) {
    std::cout << r.report << '\n';
    return kExitVerification;
  }
  return kExitOk;
}

}  // namespace

int Run(int argc, char** argv) {
  CLI::App app{"D2Rec: causal disentanglement for social recommendation"};
  app.require_subcommand(1);
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out_dir = ".";
  app.add_option("--config", config_path, "JSON config file")->check(CLI::ExistingFile);
  app.add_option("--seed", seed, "Overrides the config seed");
  app.add_option("--out", out_dir, "Artifact directory");

  using Command = int (*)(const Context&);
  const std::vector<std::tuple<const char*, const char*, Command>> commands = {
      {"synth", "Generate a synthetic confounded dataset and its oracle", &CmdSynth},
      {"split", "Index the data, split train/test and draw popularity subsets", &CmdSplit},
      {"embed", "Learn user and item graph embeddings", &CmdEmbed},
      {"train", "Train the model and write a checkpoint", &CmdTrain},
      {"eval", "Score the checkpoint on every test subset", &CmdEval},
      {"ablate", "Train all three variants and compare rating errors", &CmdAblate},
      {"gradcheck", "Finite-difference check of the full objective", &CmdGradcheck},
  };
  for (const auto& [name, help, fn] : commands) app.add_subcommand(name, help)->fallthrough();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }

  const std::string command = app.get_subcommands().front()->get_name();
  try {
    Context ctx;
    if (!config_path.empty()) ctx.config = ParseRunConfig(ReadText(config_path));
    if (seed) ctx.config.seed = *seed;
    ctx.config.Validate();
    ctx.threads = ThreadsFromEnv();
    ctx.out = out_dir;
    fs::create_directories(ctx.out);
    WriteText(ctx.Path(command + ".config.json"), RunConfigToJson(ctx.config));
    for (const auto& [name, help, fn] : commands)
      if (command == name) return fn(ctx);
    return kExitUsage;
  } catch (const ConfigError& e) {
    std::cerr << "d2rec " << command << ": " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "d2rec " << command << ": " << e.what() << '\n';
    return kExitRuntime;
  }
}

}  // namespace d2rec::cli
