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

#include "d2rec/model.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include <fmt/format.h>

#include "csv_util.hpp"
#include "d2rec/binary_io.hpp"
#include "json.hpp"

namespace d2rec {

namespace {

constexpr char kCheckpointMagic[6] = "D2CKP";
constexpr std::uint32_t kCheckpointVersion = 1;
constexpr double kProbClamp = 1e-7;

const char* kHeadNames[6] = {"h1", "h2", "h3", "h4", "h5", "h6"};

bool IsTied(const ModelConfig& c) { return c.variant == Variant::kNoDisentanglement; }

// Heads whose parameters are trained; the others are tied copies.
bool HeadIsFree(const ModelConfig& c, int h) {
  return !IsTied(c) || h == kAlphaUser || h == kAlphaItem;
}

Matrix HeadForward(const Head& head, const Matrix& x, ForwardPass::HeadTrace* trace) {
  Matrix cur = x;
  for (std::size_t l = 0; l < head.layers.size(); ++l) {
    if (l > 0) cur = Relu(cur);
    Matrix pre = AffineForward(head.layers[l], cur);
    if (trace) {
      trace->inputs.push_back(std::move(cur));
      trace->pre.push_back(pre);
    }
    cur = std::move(pre);
  }
  return Relu(cur);
}

// Returns dLoss/d(head input).
Matrix HeadBackward(Head& head, const ForwardPass::HeadTrace& trace, const Matrix& d_factor) {
  Matrix grad = ReluBackward(trace.pre.back(), d_factor);
  for (int l = static_cast<int>(head.layers.size()) - 1; l >= 0; --l) {
    grad = AffineBackward(head.layers[l], trace.inputs[l], grad);
    if (l > 0) grad = ReluBackward(trace.pre[l - 1], grad);
  }
  return grad;
}

Matrix GatherRows(const EmbeddingTable* table, const std::optional<Matrix>& free_table,
                  std::span<const int> ids, const char* what) {
  if (free_table) {
    Matrix out(static_cast<int>(ids.size()), free_table->cols());
    for (std::size_t r = 0; r < ids.size(); ++r) {
      const auto src = free_table->Row(ids[r]);
      std::copy(src.begin(), src.end(), out.Row(static_cast<int>(r)).begin());
    }
    return out;
  }
  if (!table) throw Error(fmt::format("no {} embeddings supplied", what));
  Matrix out(static_cast<int>(ids.size()), table->dim);
  for (std::size_t r = 0; r < ids.size(); ++r) {
    if (ids[r] < 0 || ids[r] >= table->n_nodes)
      throw DimensionError(fmt::format("{} index {} outside table of {} rows", what, ids[r],
                                       table->n_nodes));
    const auto src = table->Row(ids[r]);
    auto dst = out.Row(static_cast<int>(r));
    for (std::size_t k = 0; k < src.size(); ++k) dst[k] = src[k];
  }
  return out;
}

void AddInto(Matrix& dst, const Matrix& src) {
  auto d = dst.Values();
  const auto s = src.Values();
  for (std::size_t k = 0; k < d.size(); ++k) d[k] += s[k];
}

// Pairwise geometry of the pooled rows [x; y], upper triangle only.
struct PooledDistances {
  int m = 0, n = 0, dim = 0;
  std::vector<const double*> rows;
  std::vector<double> sq;  // squared distances, index Tri(i, j) with i < j

  PooledDistances(const Matrix& x, const Matrix& y) : m(x.rows()), n(y.rows()), dim(x.cols()) {
    rows.reserve(m + n);
    for (int r = 0; r < m; ++r) rows.push_back(x.Row(r).data());
    for (int r = 0; r < n; ++r) rows.push_back(y.Row(r).data());
    const int total = m + n;
    sq.resize(static_cast<std::size_t>(total) * (total - 1) / 2);
    std::size_t k = 0;
    for (int i = 0; i < total; ++i) {
      const double* a = rows[i];
      for (int j = i + 1; j < total; ++j, ++k) {
        const double* b = rows[j];
        double s = 0.0;
        for (int d = 0; d < dim; ++d) {
          const double diff = a[d] - b[d];
          s += diff * diff;
        }
        sq[k] = s;
      }
    }
  }

  int total() const { return m + n; }
};

struct MedianInfo {
  double value = 0.0;
  // Flat triangle indices of the order statistics that define the median and
  // their weights (one index for an odd count, two halves for an even one).
  std::size_t idx[2] = {0, 0};
  double weight[2] = {0.0, 0.0};
};

MedianInfo Median(const std::vector<double>& sq) {
  const std::size_t p = sq.size();
  std::vector<std::size_t> order(p);
  for (std::size_t k = 0; k < p; ++k) order[k] = k;
  auto less = [&](std::size_t a, std::size_t b) {
    return sq[a] < sq[b] || (sq[a] == sq[b] && a < b);
  };
  MedianInfo info;
  const std::size_t hi = p / 2;
  std::nth_element(order.begin(), order.begin() + hi, order.end(), less);
  const std::size_t upper = order[hi];
  if (p % 2 == 1) {
    info.idx[0] = upper;
    info.weight[0] = 1.0;
    info.value = std::sqrt(sq[upper]);
  } else {
    const std::size_t lower = *std::max_element(order.begin(), order.begin() + hi, less);
    info.idx[0] = lower;
    info.idx[1] = upper;
    info.weight[0] = info.weight[1] = 0.5;
    info.value = 0.5 * (std::sqrt(sq[lower]) + std::sqrt(sq[upper]));
  }
  return info;
}

double Mmd2Impl(const Matrix& x, const Matrix& y, std::optional<double> sigma_opt,
                double scale, Matrix* grad_x, Matrix* grad_y) {
  if (x.rows() == 0 || y.rows() == 0) throw DomainError("mmd2: empty sample");
  if (x.cols() != y.cols())
    throw DimensionError(fmt::format("mmd2: {} vs {}", x.ShapeString(), y.ShapeString()));
  const PooledDistances pd(x, y);
  const int m = pd.m, n = pd.n, total = pd.total();

  double sigma = 1.0;
  bool sigma_has_grad = false;
  MedianInfo median;
  if (sigma_opt) {
    if (!(*sigma_opt > 0.0)) throw DomainError("mmd2: bandwidth must be positive");
    sigma = *sigma_opt;
  } else if (total >= 2) {
    median = Median(pd.sq);
    if (median.value > 0.0) {
      sigma = median.value;
      sigma_has_grad = true;
    }
  }
  const double inv_two_s2 = 1.0 / (2.0 * sigma * sigma);
  const double cxx = 1.0 / (static_cast<double>(m) * m);
  const double cyy = 1.0 / (static_cast<double>(n) * n);
  const double cxy = -1.0 / (static_cast<double>(m) * n);

  // Ordered-pair sum: diagonals contribute 1 each, off-diagonals twice.
  double sxx = 0.0, syy = 0.0, sxy = 0.0;
  std::vector<double> kernel(pd.sq.size());
  for (std::size_t k = 0; k < pd.sq.size(); ++k) kernel[k] = std::exp(-pd.sq[k] * inv_two_s2);
  {
    std::size_t k = 0;
    for (int i = 0; i < total; ++i) {
      for (int j = i + 1; j < total; ++j, ++k) {
        if (j < m) {
          sxx += kernel[k];
        } else if (i >= m) {
          syy += kernel[k];
        } else {
          sxy += kernel[k];
        }
      }
    }
  }
  {
    // The cross sum above runs x-major; averaging it with the y-major order
    // makes the result exactly symmetric in (x, y).
    double sxy_t = 0.0;
    for (int j = m; j < total; ++j) {
      for (int i = 0; i < m; ++i) {
        const std::size_t k = static_cast<std::size_t>(i) * total -
                              static_cast<std::size_t>(i) * (i + 1) / 2 + (j - i - 1);
        sxy_t += kernel[k];
      }
    }
    sxy = 0.5 * (sxy + sxy_t);
  }
  const double value = cxx * (m + 2.0 * sxx) + cyy * (n + 2.0 * syy) + 2.0 * cxy * sxy;
  if (!grad_x) return value;

  const int dim = pd.dim;
  auto grad_row = [&](int r) -> double* {
    return r < m ? grad_x->Row(r).data() : grad_y->Row(r - m).data();
  };
  const double inv_s2 = 1.0 / (sigma * sigma);
  double d_sigma = 0.0;
  std::size_t k = 0;
  for (int i = 0; i < total; ++i) {
    const double* a = pd.rows[i];
    double* ga = grad_row(i);
    for (int j = i + 1; j < total; ++j, ++k) {
      const double c = j < m ? cxx : (i >= m ? cyy : cxy);
      const double ck = c * kernel[k];
      if (sigma_has_grad) d_sigma += 2.0 * ck * pd.sq[k];
      const double t = -2.0 * ck * inv_s2 * scale;
      if (t == 0.0) continue;
      const double* b = pd.rows[j];
      double* gb = grad_row(j);
      for (int d = 0; d < dim; ++d) {
        const double diff = t * (a[d] - b[d]);
        ga[d] += diff;
        gb[d] -= diff;
      }
    }
  }
  if (sigma_has_grad) {
    d_sigma *= scale / (sigma * sigma * sigma);
    // Map flat triangle indices back to (i, j) for the median pair(s).
    for (int s = 0; s < 2; ++s) {
      if (median.weight[s] == 0.0) continue;
      const std::size_t target = median.idx[s];
      std::size_t base = 0;
      int i = 0;
      while (base + (total - 1 - i) <= target) {
        base += total - 1 - i;
        ++i;
      }
      const int j = i + 1 + static_cast<int>(target - base);
      const double dist = std::sqrt(pd.sq[target]);
      if (dist == 0.0) continue;
      const double f = d_sigma * median.weight[s] / dist;
      double* gi = grad_row(i);
      double* gj = grad_row(j);
      for (int d = 0; d < dim; ++d) {
        const double diff = f * (pd.rows[i][d] - pd.rows[j][d]);
        gi[d] += diff;
        gj[d] -= diff;
      }
    }
  }
  return value;
}

struct FactorPair {
  Matrix FactorBundle::*a;
  Matrix FactorBundle::*b;
};

constexpr FactorPair kDiscrepancyPairs[6] = {
    {&FactorBundle::alpha_u, &FactorBundle::gamma_u},
    {&FactorBundle::alpha_u, &FactorBundle::delta_u},
    {&FactorBundle::gamma_u, &FactorBundle::delta_u},
    {&FactorBundle::alpha_i, &FactorBundle::gamma_i},
    {&FactorBundle::gamma_i, &FactorBundle::delta_i},
    {&FactorBundle::alpha_i, &FactorBundle::delta_i},
};

void RequireBatch(const FactorBundle& bundle) {
  if (bundle.alpha_u.rows() < 2)
    throw DomainError("discrepancy loss needs a batch of at least 2 rows");
}

}  // namespace

std::string VariantName(Variant v) {
  switch (v) {
    case Variant::kFull: return "full";
    case Variant::kNoNetworkEmbeddings: return "no_network_embeddings";
    case Variant::kNoDisentanglement: return "no_disentanglement";
  }
  return "unknown";
}

Variant ParseVariant(const std::string& name) {
  if (name == "full") return Variant::kFull;
  if (name == "no_network_embeddings") return Variant::kNoNetworkEmbeddings;
  if (name == "no_disentanglement") return Variant::kNoDisentanglement;
  throw ConfigError("unknown variant '" + name + "'");
}

std::string OmegaModeName(OmegaMode m) {
  return m == OmegaMode::kScalePrediction ? "scale_prediction" : "weight_loss";
}

OmegaMode ParseOmegaMode(const std::string& name) {
  if (name == "scale_prediction") return OmegaMode::kScalePrediction;
  if (name == "weight_loss") return OmegaMode::kWeightLoss;
  throw ConfigError("unknown omega mode '" + name + "'");
}

void ModelConfig::Validate() const {
  if (d_emb < 1) throw ConfigError("model.d_emb must be >= 1");
  if (d_factor < 0) throw ConfigError("model.d_factor must be >= 0");
  if (head_depth < 1) throw ConfigError("model.head_depth must be >= 1");
  if (!(kappa >= 0.0)) throw ConfigError("model.kappa must be >= 0");
  if (!(omega_max >= 1.0)) throw ConfigError("model.omega_max must be >= 1");
}

void D2RecParams::ZeroGrad() {
  for (auto& head : heads)
    for (auto& layer : head.layers) layer.ZeroGrad();
  grad_exposure_bias = 0.0;
  if (grad_user_table) grad_user_table->Fill(0.0);
  if (grad_item_table) grad_item_table->Fill(0.0);
}

void D2RecParams::SyncTiedHeads() {
  if (!IsTied(config)) return;
  heads[kGammaUser] = heads[kDeltaUser] = heads[kAlphaUser];
  heads[kGammaItem] = heads[kDeltaItem] = heads[kAlphaItem];
}

std::vector<std::span<double>> D2RecParams::ParamViews() {
  std::vector<std::span<double>> views;
  for (int h = 0; h < 6; ++h) {
    if (!HeadIsFree(config, h)) continue;
    for (auto& layer : heads[h].layers) {
      views.push_back(layer.weight.Values());
      views.push_back(layer.bias);
    }
  }
  if (config.exposure_bias) views.push_back({&exposure_bias, 1});
  if (user_table) views.push_back(user_table->Values());
  if (item_table) views.push_back(item_table->Values());
  return views;
}

std::vector<std::span<const double>> D2RecParams::GradViews() {
  std::vector<std::span<const double>> views;
  for (int h = 0; h < 6; ++h) {
    if (!HeadIsFree(config, h)) continue;
    for (auto& layer : heads[h].layers) {
      views.push_back(layer.grad_weight.Values());
      views.push_back(layer.grad_bias);
    }
  }
  if (config.exposure_bias) views.push_back({&grad_exposure_bias, 1});
  if (grad_user_table) views.push_back(grad_user_table->Values());
  if (grad_item_table) views.push_back(grad_item_table->Values());
  return views;
}

D2RecParams InitParams(const ModelConfig& config, int n_users, int n_items,
                       std::uint64_t seed, const EmbeddingTable* theta,
                       const EmbeddingTable* beta) {
  config.Validate();
  D2RecParams params;
  params.config = config;
  Rng rng(DeriveSeed(seed, 101));
  const int df = config.FactorDim();
  for (auto& head : params.heads) {
    for (int l = 0; l < config.head_depth; ++l)
      head.layers.push_back(AffineLayer::Glorot(l == 0 ? config.d_emb : df, df, rng));
  }
  params.SyncTiedHeads();
  if (config.UsesFreeTables()) {
    auto make_table = [&](int n, const EmbeddingTable* init, std::uint64_t salt) {
      Matrix t(n, config.d_emb);
      if (config.variant != Variant::kNoNetworkEmbeddings && init) {
        if (init->n_nodes != n || init->dim != config.d_emb)
          throw DimensionError("fine-tune embeddings do not match model dimensions");
        for (std::size_t k = 0; k < t.size(); ++k) t.Values()[k] = init->values[k];
      } else {
        Rng trng(DeriveSeed(seed, salt));
        for (double& v : t.Values()) v = (2.0 * Uniform01(trng) - 1.0) * 0.01;
      }
      return t;
    };
    params.user_table = make_table(n_users, theta, 102);
    params.item_table = make_table(n_items, beta, 103);
    params.grad_user_table = Matrix(n_users, config.d_emb);
    params.grad_item_table = Matrix(n_items, config.d_emb);
  }
  return params;
}

FactorBundle Disentangle(const Matrix& theta_batch, const Matrix& beta_batch,
                         const D2RecParams& params) {
  if (theta_batch.rows() != beta_batch.rows())
    throw DimensionError(fmt::format("disentangle: user batch {} vs item batch {}",
                                     theta_batch.ShapeString(), beta_batch.ShapeString()));
  FactorBundle b;
  b.alpha_u = HeadForward(params.heads[kAlphaUser], theta_batch, nullptr);
  b.gamma_u = HeadForward(params.heads[kGammaUser], theta_batch, nullptr);
  b.delta_u = HeadForward(params.heads[kDeltaUser], theta_batch, nullptr);
  b.alpha_i = HeadForward(params.heads[kAlphaItem], beta_batch, nullptr);
  b.gamma_i = HeadForward(params.heads[kGammaItem], beta_batch, nullptr);
  b.delta_i = HeadForward(params.heads[kDeltaItem], beta_batch, nullptr);
  return b;
}

CombinedFactors Combine(const FactorBundle& b) {
  return {Hadamard(b.alpha_u, b.alpha_i), Hadamard(b.gamma_u, b.gamma_i),
          Hadamard(b.delta_u, b.delta_i)};
}

std::vector<double> PredictExposure(const CombinedFactors& cf, double bias) {
  std::vector<double> s = RowDot(cf.alpha_ui, cf.gamma_ui);
  for (double& v : s) v = Sigmoid(v + bias);
  return s;
}

std::vector<double> Reweight(double positive_rate, std::span<const double> exposure_prob,
                             double omega_max) {
  if (!(positive_rate > 0.0 && positive_rate < 1.0))
    throw ConfigError(fmt::format("positive rate {} must lie in (0, 1)", positive_rate));
  const double odds = positive_rate / (1.0 - positive_rate);
  std::vector<double> w(exposure_prob.size());
  for (std::size_t k = 0; k < w.size(); ++k) {
    const double q = exposure_prob[k];
    const double raw = 1.0 + odds * ((1.0 - q) / q);
    w[k] = std::clamp(std::isnan(raw) ? omega_max : raw, 1.0, omega_max);
  }
  return w;
}

std::vector<double> PredictRating(const CombinedFactors& cf, std::span<const double> omega) {
  std::vector<double> z = RowDot(cf.gamma_ui, cf.delta_ui);
  if (omega.size() != z.size())
    throw DimensionError(fmt::format("predict_rating: {} weights for {} rows", omega.size(),
                                     z.size()));
  for (std::size_t k = 0; k < z.size(); ++k) z[k] = omega[k] * std::max(0.0, z[k]);
  return z;
}

double Mmd2(const Matrix& x, const Matrix& y, std::optional<double> sigma) {
  return Mmd2Impl(x, y, sigma, 0.0, nullptr, nullptr);
}

double Mmd2WithGrad(const Matrix& x, const Matrix& y, std::optional<double> sigma,
                    double scale, Matrix& grad_x, Matrix& grad_y) {
  if (grad_x.rows() != x.rows() || grad_x.cols() != x.cols() || grad_y.rows() != y.rows() ||
      grad_y.cols() != y.cols())
    throw DimensionError("mmd2: gradient buffers do not match inputs");
  return Mmd2Impl(x, y, sigma, scale, &grad_x, &grad_y);
}

double MedianPairwiseDistance(const Matrix& x, const Matrix& y) {
  const PooledDistances pd(x, y);
  if (pd.sq.empty()) return 0.0;
  return Median(pd.sq).value;
}

double DiscrepancyLoss(const FactorBundle& bundle) {
  RequireBatch(bundle);
  double total = 0.0;
  for (const auto& p : kDiscrepancyPairs) total += Mmd2(bundle.*p.a, bundle.*p.b);
  return total;
}

double DiscrepancyLossWithGrad(const FactorBundle& bundle, double scale,
                               FactorBundle& grads) {
  RequireBatch(bundle);
  double total = 0.0;
  for (const auto& p : kDiscrepancyPairs) {
    total += Mmd2WithGrad(bundle.*p.a, bundle.*p.b, std::nullopt, scale, grads.*p.a,
                          grads.*p.b);
  }
  return total;
}

LossReport Losses(std::span<const ExposureRow> batch, std::span<const double> prediction,
                  std::span<const double> exposure_prob, double discrepancy, double kappa,
                  std::span<const double> loss_weights) {
  if (prediction.size() != batch.size() || exposure_prob.size() != batch.size())
    throw DimensionError("losses: prediction vectors do not match batch");
  LossReport rep;
  rep.kappa = kappa;
  rep.discrepancy_loss = discrepancy;
  for (std::size_t r = 0; r < batch.size(); ++r) {
    const auto& row = batch[r];
    const double q = std::clamp(exposure_prob[r], kProbClamp, 1.0 - kProbClamp);
    if (row.exposure == 1) {
      const double err = *row.rating - prediction[r];
      const double w = loss_weights.empty() ? 1.0 : loss_weights[r];
      rep.rating_loss += w * err * err;
      rep.exposure_loss -= std::log(q);
      ++rep.n_positive;
    } else {
      rep.exposure_loss -= std::log(1.0 - q);
    }
  }
  rep.no_positive_rows = rep.n_positive == 0;
  rep.total = rep.rating_loss + rep.exposure_loss - kappa * rep.discrepancy_loss;
  return rep;
}

ForwardPass Forward(const D2RecParams& params, const EmbeddingInputs& emb,
                    std::span<const int> users, std::span<const int> items,
                    double positive_rate, std::span<const double> frozen_omega) {
  const ModelConfig& cfg = params.config;
  ForwardPass f;
  f.theta_batch = GatherRows(emb.theta, params.user_table, users, "user");
  f.beta_batch = GatherRows(emb.beta, params.item_table, items, "item");
  if (f.theta_batch.cols() != cfg.d_emb || f.beta_batch.cols() != cfg.d_emb)
    throw DimensionError(fmt::format("embedding dims {}/{} do not match model d_emb {}",
                                     f.theta_batch.cols(), f.beta_batch.cols(), cfg.d_emb));
  Matrix* factors[6] = {&f.bundle.alpha_u, &f.bundle.gamma_u, &f.bundle.delta_u,
                        &f.bundle.alpha_i, &f.bundle.gamma_i, &f.bundle.delta_i};
  for (int h = 0; h < 6; ++h) {
    if (!HeadIsFree(cfg, h)) continue;
    const Matrix& input = h < kAlphaItem ? f.theta_batch : f.beta_batch;
    *factors[h] = HeadForward(params.heads[h], input, &f.traces[h]);
  }
  if (IsTied(cfg)) {
    f.bundle.gamma_u = f.bundle.delta_u = f.bundle.alpha_u;
    f.bundle.gamma_i = f.bundle.delta_i = f.bundle.alpha_i;
  }
  f.combined = Combine(f.bundle);
  f.exposure_logit = RowDot(f.combined.alpha_ui, f.combined.gamma_ui);
  const double bias = cfg.exposure_bias ? params.exposure_bias : 0.0;
  f.exposure_prob.resize(f.exposure_logit.size());
  for (std::size_t r = 0; r < f.exposure_logit.size(); ++r) {
    f.exposure_logit[r] += bias;
    f.exposure_prob[r] = Sigmoid(f.exposure_logit[r]);
  }
  if (!frozen_omega.empty()) {
    if (frozen_omega.size() != users.size())
      throw DimensionError("frozen omega does not match batch size");
    f.omega.assign(frozen_omega.begin(), frozen_omega.end());
  } else {
    f.omega = Reweight(positive_rate, f.exposure_prob, cfg.omega_max);
  }
  f.rating_dot = RowDot(f.combined.gamma_ui, f.combined.delta_ui);
  f.prediction.resize(f.rating_dot.size());
  for (std::size_t r = 0; r < f.rating_dot.size(); ++r) {
    const double relu = std::max(0.0, f.rating_dot[r]);
    f.prediction[r] = cfg.omega_mode == OmegaMode::kScalePrediction ? f.omega[r] * relu : relu;
  }
  return f;
}

LossReport BatchObjective(D2RecParams& params, const EmbeddingInputs& emb,
                          std::span<const ExposureRow> batch, double positive_rate,
                          bool accumulate_grads, std::span<const double> frozen_omega) {
  const ModelConfig& cfg = params.config;
  const int n = static_cast<int>(batch.size());
  std::vector<int> users(n), items(n);
  for (int r = 0; r < n; ++r) {
    users[r] = batch[r].user;
    items[r] = batch[r].item;
  }
  ForwardPass f = Forward(params, emb, users, items, positive_rate, frozen_omega);
  const int df = cfg.FactorDim();
  FactorBundle g{Matrix(n, df), Matrix(n, df), Matrix(n, df),
                 Matrix(n, df), Matrix(n, df), Matrix(n, df)};
  const double disc = accumulate_grads ? DiscrepancyLossWithGrad(f.bundle, -cfg.kappa, g)
                                       : DiscrepancyLoss(f.bundle);
  const bool weight_loss = cfg.omega_mode == OmegaMode::kWeightLoss;
  const LossReport rep = Losses(batch, f.prediction, f.exposure_prob, disc, cfg.kappa,
                                weight_loss ? std::span<const double>(f.omega)
                                            : std::span<const double>());
  if (!accumulate_grads) return rep;

  // Row-wise derivatives of the rating and exposure terms.
  std::vector<double> d_rating_dot(n, 0.0), d_logit(n, 0.0);
  for (int r = 0; r < n; ++r) {
    const auto& row = batch[r];
    const double q = f.exposure_prob[r];
    const bool inside = q > kProbClamp && q < 1.0 - kProbClamp;
    if (row.exposure == 1) {
      if (f.rating_dot[r] > 0.0) {
        const double err = *row.rating - f.prediction[r];
        d_rating_dot[r] = -2.0 * err * f.omega[r];
      }
      if (inside) d_logit[r] = -(1.0 - q);
    } else if (inside) {
      d_logit[r] = q;
    }
  }
  auto [d_alpha_ui, d_gamma_ui_exp] =
      RowDotBackward(f.combined.alpha_ui, f.combined.gamma_ui, d_logit);
  auto [d_gamma_ui, d_delta_ui] =
      RowDotBackward(f.combined.gamma_ui, f.combined.delta_ui, d_rating_dot);
  AddInto(d_gamma_ui, d_gamma_ui_exp);
  if (cfg.exposure_bias)
    for (double d : d_logit) params.grad_exposure_bias += d;

  auto accumulate = [](Matrix& gu, Matrix& gi, const Matrix& u, const Matrix& i,
                       const Matrix& upstream) {
    auto [du, di] = HadamardBackward(u, i, upstream);
    AddInto(gu, du);
    AddInto(gi, di);
  };
  accumulate(g.alpha_u, g.alpha_i, f.bundle.alpha_u, f.bundle.alpha_i, d_alpha_ui);
  accumulate(g.gamma_u, g.gamma_i, f.bundle.gamma_u, f.bundle.gamma_i, d_gamma_ui);
  accumulate(g.delta_u, g.delta_i, f.bundle.delta_u, f.bundle.delta_i, d_delta_ui);

  if (IsTied(cfg)) {
    AddInto(g.alpha_u, g.gamma_u);
    AddInto(g.alpha_u, g.delta_u);
    AddInto(g.alpha_i, g.gamma_i);
    AddInto(g.alpha_i, g.delta_i);
  }
  Matrix d_theta(n, cfg.d_emb), d_beta(n, cfg.d_emb);
  const Matrix* factor_grads[6] = {&g.alpha_u, &g.gamma_u, &g.delta_u,
                                   &g.alpha_i, &g.gamma_i, &g.delta_i};
  for (int h = 0; h < 6; ++h) {
    if (!HeadIsFree(cfg, h)) continue;
    const Matrix d_in = HeadBackward(params.heads[h], f.traces[h], *factor_grads[h]);
    if (params.user_table) AddInto(h < kAlphaItem ? d_theta : d_beta, d_in);
  }
  if (params.user_table) {
    for (int r = 0; r < n; ++r) {
      auto gu = params.grad_user_table->Row(users[r]);
      auto gi = params.grad_item_table->Row(items[r]);
      const auto su = d_theta.Row(r);
      const auto si = d_beta.Row(r);
      for (int d = 0; d < cfg.d_emb; ++d) {
        gu[d] += su[d];
        gi[d] += si[d];
      }
    }
  }
  return rep;
}

std::vector<double> PredictPairs(const D2RecParams& params, const EmbeddingInputs& emb,
                                 std::span<const int> users, std::span<const int> items,
                                 double positive_rate) {
  if (users.size() != items.size())
    throw DimensionError("predict: user and item lists differ in length");
  constexpr std::size_t kChunk = 4096;
  std::vector<double> out;
  out.reserve(users.size());
  for (std::size_t b = 0; b < users.size(); b += kChunk) {
    const std::size_t e = std::min(users.size(), b + kChunk);
    const ForwardPass f =
        Forward(params, emb, users.subspan(b, e - b), items.subspan(b, e - b), positive_rate);
    for (double y : f.prediction)
      out.push_back(params.config.clamp_predictions ? std::clamp(y, 1.0, 5.0) : y);
  }
  return out;
}

namespace {

void WriteSection(std::ostream& out, const std::string& name, const Matrix& m) {
  binary::WriteU32(out, static_cast<std::uint32_t>(name.size()));
  out.write(name.data(), static_cast<std::streamsize>(name.size()));
  binary::WriteU32(out, static_cast<std::uint32_t>(m.rows()));
  binary::WriteU32(out, static_cast<std::uint32_t>(m.cols()));
  for (double v : m.Values()) binary::WriteF64(out, v);
}

std::string LayerName(int h, std::size_t l) {
  return l == 0 ? kHeadNames[h] : fmt::format("{}.{}", kHeadNames[h], l);
}

Matrix PackLayer(const AffineLayer& layer) {
  Matrix m(layer.in() + 1, layer.out());
  for (int r = 0; r < layer.in(); ++r)
    std::copy(layer.weight.Row(r).begin(), layer.weight.Row(r).end(), m.Row(r).begin());
  std::copy(layer.bias.begin(), layer.bias.end(), m.Row(layer.in()).begin());
  return m;
}

}  // namespace

GradCheckResult FullObjectiveGradCheck(const GradCheckSetup& setup, std::uint64_t seed) {
  if (setup.n_users < 1 || setup.n_items < 1 || setup.batch < 2)
    throw ConfigError("gradcheck needs >= 1 user, >= 1 item and a batch of >= 2");
  Rng rng(DeriveSeed(seed, 201));
  auto random_table = [&](int n) {
    EmbeddingTable t(n, setup.d_emb);
    for (float& v : t.values) v = static_cast<float>(2.0 * Uniform01(rng) - 1.0);
    return t;
  };
  const EmbeddingTable theta = random_table(setup.n_users);
  const EmbeddingTable beta = random_table(setup.n_items);
  std::vector<ExposureRow> batch;
  for (int r = 0; r < setup.batch; ++r) {
    ExposureRow row{r % setup.n_users, r % setup.n_items, r % 2 == 0 ? 1 : 0, std::nullopt};
    if (row.exposure == 1) row.rating = 1.0 + static_cast<double>(UniformIndex(rng, 5));
    batch.push_back(row);
  }

  ModelConfig cfg;
  cfg.d_emb = setup.d_emb;
  cfg.d_factor = setup.d_factor;
  cfg.head_depth = setup.head_depth;
  cfg.variant = setup.variant;
  cfg.omega_mode = setup.omega_mode;
  cfg.exposure_bias = true;
  D2RecParams params = InitParams(cfg, setup.n_users, setup.n_items, seed, &theta, &beta);
  // Nonzero biases keep pre-activations off the ReLU kink.
  for (auto& head : params.heads)
    for (auto& layer : head.layers)
      for (double& b : layer.bias) b = 0.2 * (Uniform01(rng) - 0.5);
  params.exposure_bias = 0.2 * (Uniform01(rng) - 0.5);
  params.SyncTiedHeads();

  const EmbeddingInputs emb{&theta, &beta};
  const double positive_rate = 0.5;
  std::vector<int> users, items;
  for (const auto& row : batch) {
    users.push_back(row.user);
    items.push_back(row.item);
  }
  const std::vector<double> omega = Forward(params, emb, users, items, positive_rate).omega;
  params.ZeroGrad();
  BatchObjective(params, emb, batch, positive_rate, true, omega);
  std::vector<std::vector<double>> grads;
  for (auto g : params.GradViews()) grads.emplace_back(g.begin(), g.end());
  const std::vector<std::span<const double>> analytic(grads.begin(), grads.end());
  const auto views = params.ParamViews();
  auto loss = [&] {
    params.SyncTiedHeads();
    return BatchObjective(params, emb, batch, positive_rate, false, omega).total;
  };
  return GradCheck(loss, views, analytic, setup.h, setup.tolerance);
}

void WriteCheckpoint(const std::string& path, const D2RecParams& params) {
  std::vector<std::pair<std::string, Matrix>> sections;
  for (int h = 0; h < 6; ++h)
    for (std::size_t l = 0; l < params.heads[h].layers.size(); ++l)
      sections.emplace_back(LayerName(h, l), PackLayer(params.heads[h].layers[l]));
  if (params.config.exposure_bias)
    sections.emplace_back("exp_bias", Matrix(1, 1, params.exposure_bias));
  if (params.user_table) sections.emplace_back("user_table", *params.user_table);
  if (params.item_table) sections.emplace_back("item_table", *params.item_table);

  auto out = csv::OpenOut(path);
  binary::WriteMagic(out, kCheckpointMagic);
  binary::WriteU32(out, kCheckpointVersion);
  binary::WriteU32(out, static_cast<std::uint32_t>(sections.size()));
  for (const auto& [name, m] : sections) WriteSection(out, name, m);
  if (!out) throw Error("failed writing " + path);
}

D2RecParams ReadCheckpoint(const std::string& path, const ModelConfig& config) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path);
  binary::ExpectMagic(in, kCheckpointMagic, path);
  if (binary::ReadU32(in) != kCheckpointVersion)
    throw Error(path + ": unsupported checkpoint version");
  const std::uint32_t n_sections = binary::ReadU32(in);
  std::vector<std::pair<std::string, Matrix>> sections;
  for (std::uint32_t s = 0; s < n_sections; ++s) {
    const std::uint32_t len = binary::ReadU32(in);
    std::string name(len, '\0');
    in.read(name.data(), len);
    const auto rows = static_cast<int>(binary::ReadU32(in));
    const auto cols = static_cast<int>(binary::ReadU32(in));
    Matrix m(rows, cols);
    for (double& v : m.Values()) v = binary::ReadF64(in);
    sections.emplace_back(std::move(name), std::move(m));
  }
  auto find = [&](const std::string& name) -> const Matrix& {
    for (const auto& [n, m] : sections)
      if (n == name) return m;
    throw Error(path + ": missing section " + name);
  };
  int n_users = 0, n_items = 0;
  if (config.UsesFreeTables()) {
    n_users = find("user_table").rows();
    n_items = find("item_table").rows();
  }
  D2RecParams params = InitParams(config, n_users, n_items, 0);
  for (int h = 0; h < 6; ++h) {
    for (std::size_t l = 0; l < params.heads[h].layers.size(); ++l) {
      AffineLayer& layer = params.heads[h].layers[l];
      const Matrix& m = find(LayerName(h, l));
      if (m.rows() != layer.in() + 1 || m.cols() != layer.out())
        throw DimensionError(fmt::format("{}: section {} has shape {}, expected [{}x{}]", path,
                                         LayerName(h, l), m.ShapeString(), layer.in() + 1,
                                         layer.out()));
      for (int r = 0; r < layer.in(); ++r)
        std::copy(m.Row(r).begin(), m.Row(r).end(), layer.weight.Row(r).begin());
      std::copy(m.Row(layer.in()).begin(), m.Row(layer.in()).end(), layer.bias.begin());
    }
  }
  if (config.exposure_bias) params.exposure_bias = find("exp_bias")(0, 0);
  if (config.UsesFreeTables()) {
    params.user_table = find("user_table");
    params.item_table = find("item_table");
  }
  return params;
}

void WriteModelSidecar(const std::string& path, const ModelConfig& c, double positive_rate) {
  nlohmann::ordered_json j;
  j["variant"] = VariantName(c.variant);
  j["kappa"] = c.kappa;
  j["omega_max"] = c.omega_max;
  j["omega_mode"] = OmegaModeName(c.omega_mode);
  j["d_emb"] = c.d_emb;
  j["d_factor"] = c.FactorDim();
  j["head_depth"] = c.head_depth;
  j["exposure_bias"] = c.exposure_bias;
  j["clamp_predictions"] = c.clamp_predictions;
  j["fine_tune_embeddings"] = c.fine_tune_embeddings;
  j["positive_rate"] = positive_rate;
  auto out = csv::OpenOut(path);
  out << j.dump(2) << '\n';
}

std::pair<ModelConfig, double> ReadModelSidecar(const std::string& path) {
  auto in = csv::OpenIn(path);
  nlohmann::json j;
  try {
    in >> j;
    ModelConfig c;
    c.variant = ParseVariant(j.at("variant").get<std::string>());
    c.kappa = j.at("kappa").get<double>();
    c.omega_max = j.at("omega_max").get<double>();
    c.omega_mode = ParseOmegaMode(j.at("omega_mode").get<std::string>());
    c.d_emb = j.at("d_emb").get<int>();
    c.d_factor = j.at("d_factor").get<int>();
    c.head_depth = j.at("head_depth").get<int>();
    c.exposure_bias = j.at("exposure_bias").get<bool>();
    c.clamp_predictions = j.at("clamp_predictions").get<bool>();
    c.fine_tune_embeddings = j.at("fine_tune_embeddings").get<bool>();
    return {c, j.at("positive_rate").get<double>()};
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(path + ": " + e.what());
  }
}

}  // namespace d2rec
