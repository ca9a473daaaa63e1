/*
 * Copyright 2026 The labelembed Authors.
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     https://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#pragma once

#include <algorithm>
#include <chrono>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include <Eigen/Cholesky>

#include "labelembed/common.hpp"
#include "labelembed/compat.hpp"
#include "labelembed/dataset.hpp"
#include "labelembed/embedding.hpp"

namespace labelembed {

// OWA rank weights: alpha_k and beta_k = alpha_1 + ... + alpha_k, k >= 1.
struct LossWeights {
  std::vector<double> alpha;  // alpha[k-1] = alpha_k
  std::vector<double> beta;   // beta[k-1]  = beta_k

  std::size_t size() const { return alpha.size(); }
  double beta_at(std::size_t k) const {
    if (k < 1 || k > beta.size()) fail("LossWeights: beta index ", k, " out of range [1, ", beta.size(), "]");
    return beta[k - 1];
  }
};

// alpha_k = 1/k.
inline LossWeights harmonic_weights(std::size_t num_classes) {
  if (num_classes == 0) fail("harmonic_weights: C must be >= 1");
  LossWeights w;
  w.alpha.resize(num_classes);
  w.beta.resize(num_classes);
  double sum = 0.0;
  for (std::size_t k = 1; k <= num_classes; ++k) {
    w.alpha[k - 1] = 1.0 / static_cast<double>(k);
    sum += w.alpha[k - 1];
    w.beta[k - 1] = sum;
  }
  return w;
}

struct RankingConfig {
  double eta = 0.01;
  std::size_t epochs = 50;
  double mu = 0.0;
  bool learn_W = true;
  bool learn_Phi = false;
  std::uint64_t seed = 0;
  double validation_fraction = 0.2;
  std::size_t patience = 5;
  double init_scale = 1e-3;  // stddev of the random W init

  void validate(bool has_prior) const {
    if (!(eta > 0.0)) fail("ranking config: eta must be > 0");
    if (!learn_W && !learn_Phi) fail("ranking config: at least one of learn_W / learn_Phi must be set");
    if (mu < 0.0) fail("ranking config: mu must be >= 0");
    if (learn_Phi && mu > 0.0 && !has_prior) fail("ranking config: mu > 0 requires a prior embedding");
    if (learn_Phi && eta * mu > 1.0) fail("ranking config: eta * mu must be <= 1 (got ", eta * mu, ")");
    if (epochs == 0) fail("ranking config: epochs must be >= 1");
    if (!(validation_fraction >= 0.0 && validation_fraction < 1.0))
      fail("ranking config: validation_fraction must be in [0, 1)");
  }
};

struct TrainReport {
  std::size_t epochs_run = 0;
  std::vector<double> validation_accuracy;  // one per epoch run
  std::size_t stopping_epoch = 0;           // 1-based epoch of the returned snapshot
  double best_validation_accuracy = 0.0;
  double final_objective = 0.0;
  double wall_seconds = 0.0;
};

// Per-run knobs that are not hyperparameters.
struct TrainOptions {
  std::vector<int> label_space;   // classes ranked during training; default: classes in the data
  std::optional<Matrix> W_init;   // default: N(0, init_scale^2)
};

namespace detail {

inline std::vector<int> resolve_label_space(const SampleView& data, const ClassEmbedding& phi,
                                            const std::vector<int>& requested) {
  std::vector<int> space = requested.empty() ? data.classes() : requested;
  std::sort(space.begin(), space.end());
  space.erase(std::unique(space.begin(), space.end()), space.end());
  if (space.size() < 2) fail("training needs at least 2 classes in the label space");
  for (int y : space)
    if (y < 0 || static_cast<std::size_t>(y) >= phi.num_classes())
      fail("label space class ", y, " has no embedding column (C = ", phi.num_classes(), ")");
  for (std::size_t i = 0; i < data.size(); ++i)
    if (!std::binary_search(space.begin(), space.end(), data.label(i)))
      fail("training label ", data.label(i), " is not in the label space");
  return space;
}

inline Matrix random_init(std::size_t d, std::size_t e, double scale, std::uint64_t seed) {
  Rng rng(seed);
  Matrix w(static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(e));
  for (Eigen::Index j = 0; j < w.cols(); ++j)
    for (Eigen::Index i = 0; i < w.rows(); ++i) w(i, j) = scale * rng.normal();
  return w;
}

}  // namespace detail

// l(x, y_true, y) = Delta(y_true, y) + F(x, y) - F(x, y_true), 0/1 Delta.
// Not clamped.
inline double hinge_term(const CompatModel& m, const ClassEmbedding& phi, const Vector& x, int y_true, int y) {
  const ScoreVector s = score_all(m, x, phi);
  const double delta = y == y_true ? 0.0 : 1.0;
  return delta + s[static_cast<std::size_t>(y)] - s[static_cast<std::size_t>(y_true)];
}

// Number of classes in `label_space` (all columns when empty) with l > 0.
inline std::size_t rank_upper_bound(const CompatModel& m, const ClassEmbedding& phi, const Vector& x, int y_true,
                                    std::span<const int> label_space = {}) {
  const ScoreVector s = score_all(m, x, phi);
  const double true_score = s[static_cast<std::size_t>(y_true)];
  std::size_t count = 0;
  auto visit = [&](int y) {
    const double l = (y == y_true ? 0.0 : 1.0) + s[static_cast<std::size_t>(y)] - true_score;
    if (l > 0.0) ++count;
  };
  if (label_space.empty())
    for (std::size_t y = 0; y < s.size(); ++y) visit(static_cast<int>(y));
  else
    for (int y : label_space) visit(y);
  return count;
}

// (1/N) sum_n (beta_r / r) sum_y max(0, l(x_n, y_n, y)), r = r_Delta(x_n, y_n);
// a sample with r = 0 contributes 0. Weights are harmonic over |label_space|.
inline double warp_objective(const CompatModel& m, const ClassEmbedding& phi, const SampleView& data,
                             std::span<const int> label_space = {}) {
  if (data.empty()) return 0.0;
  std::vector<int> space(label_space.begin(), label_space.end());
  if (space.empty())
    for (std::size_t y = 0; y < phi.num_classes(); ++y) space.push_back(static_cast<int>(y));
  const LossWeights w = harmonic_weights(space.size());
  double total = 0.0;
  for (std::size_t n = 0; n < data.size(); ++n) {
    const ScoreVector s = score_all(m, data.row_d(n), phi);
    const int yt = data.label(n);
    const double true_score = s[static_cast<std::size_t>(yt)];
    std::size_t r = 0;
    double hinge_sum = 0.0;
    for (int y : space) {
      const double l = (y == yt ? 0.0 : 1.0) + s[static_cast<std::size_t>(y)] - true_score;
      if (l > 0.0) {
        ++r;
        hinge_sum += l;
      }
    }
    if (r > 0) total += w.beta_at(r) / static_cast<double>(r) * hinge_sum;
  }
  return total / static_cast<double>(data.size());
}

// What a single SGD step may touch.
struct StepContext {
  double eta = 0.01;
  double mu = 0.0;
  bool update_W = true;
  bool update_Phi = false;
  const ClassEmbedding* prior = nullptr;  // required when mu > 0 and update_Phi
};

// Applies the update for a violating pair (y, ybar) found at draw k over a
// label space of `num_labels` classes. With s = eta * beta_floor((L-1)/k) and
// a = W' theta(x) taken before the step:
//   W        += s * theta(x) [phi(y) - phi(ybar)]'
//   phi(y)    = (1 - eta mu) phi(y)    + eta mu phiA(y)    + s a
//   phi(ybar) = (1 - eta mu) phi(ybar) + eta mu phiA(ybar) - s a
// W entries are updated as W(i,j) += (s * x_i) * d_j with d = phi(y) - phi(ybar).
inline void apply_ranking_update(CompatModel& m, ClassEmbedding& phi, const Vector& x, int y, int ybar,
                                 std::size_t k, std::size_t num_labels, const LossWeights& weights,
                                 const StepContext& ctx) {
  if (k < 1 || k + 1 > num_labels) fail("ranking update: draw index k = ", k, " outside [1, ", num_labels - 1, "]");
  const double step = ctx.eta * weights.beta_at((num_labels - 1) / k);
  const Vector projected = ctx.update_Phi ? Vector(m.W.transpose() * x) : Vector();
  if (ctx.update_W) {
    const Vector d = phi.phi.col(y) - phi.phi.col(ybar);
    for (Eigen::Index j = 0; j < m.W.cols(); ++j)
      for (Eigen::Index i = 0; i < m.W.rows(); ++i) m.W(i, j) += (step * x(i)) * d(j);
  }
  if (ctx.update_Phi) {
    auto py = phi.phi.col(y);
    auto pb = phi.phi.col(ybar);
    if (ctx.mu > 0.0) {
      if (ctx.prior == nullptr) fail("ranking update: mu > 0 requires a prior embedding");
      const double keep = 1.0 - ctx.eta * ctx.mu;
      const double pull = ctx.eta * ctx.mu;
      py = keep * py + pull * ctx.prior->phi.col(y) + step * projected;
      pb = keep * pb + pull * ctx.prior->phi.col(ybar) - step * projected;
    } else {
      py += step * projected;
      pb -= step * projected;
    }
    phi.l2_normalized = false;
    phi.centered = false;
  }
}

struct StepOutcome {
  bool updated = false;
  int violator = -1;
  std::size_t draws = 0;
};

// One iteration of the inner loop: draw ybar != y uniformly (with
// replacement) from the label space up to L-1 times and update on the first
// violator. `y_pos` is y's index in `label_space`.
inline StepOutcome ranking_step(CompatModel& m, ClassEmbedding& phi, const Vector& x, int y, std::size_t y_pos,
                                std::span<const int> label_space, const LossWeights& weights,
                                const StepContext& ctx, Rng& rng) {
  const std::size_t num_labels = label_space.size();
  const Vector projected = m.W.transpose() * x;
  const double true_score = projected.dot(phi.phi.col(y));
  StepOutcome out;
  for (std::size_t k = 1; k < num_labels; ++k) {
    auto j = static_cast<std::size_t>(rng.uniform_index(num_labels - 1));
    if (j >= y_pos) ++j;
    const int ybar = label_space[j];
    out.draws = k;
    const double l = 1.0 + projected.dot(phi.phi.col(ybar)) - true_score;
    if (l > 0.0) {
      apply_ranking_update(m, phi, x, y, ybar, k, num_labels, weights, ctx);
      out.updated = true;
      out.violator = ybar;
      return out;
    }
  }
  return out;
}

inline double accuracy(const CompatModel& m, const ClassEmbedding& phi, const SampleView& data,
                       std::span<const int> candidates) {
  if (data.empty()) return 0.0;
  std::size_t correct = 0;
  for (std::size_t n = 0; n < data.size(); ++n)
    if (predict(m, data.row_d(n), phi, candidates) == data.label(n)) ++correct;
  return static_cast<double>(correct) / static_cast<double>(data.size());
}

struct RankingResult {
  CompatModel model;
  ClassEmbedding phi;
  TrainReport report;
};

namespace detail {

// Epoch loop with early stopping on monitor top-1. `commit` stores the
// current parameters as the best snapshot.
template <typename RunEpoch, typename Evaluate, typename Commit>
void early_stopping_loop(std::size_t epochs, std::size_t patience, RunEpoch&& run_epoch, Evaluate&& evaluate,
                         Commit&& commit, TrainReport& report) {
  double best = -1.0;
  std::size_t since_best = 0;
  for (std::size_t epoch = 1; epoch <= epochs; ++epoch) {
    run_epoch(epoch);
    const double acc = evaluate();
    report.validation_accuracy.push_back(acc);
    report.epochs_run = epoch;
    if (acc > best) {
      best = acc;
      report.stopping_epoch = epoch;
      report.best_validation_accuracy = acc;
      commit();
      since_best = 0;
    } else if (++since_best >= patience) {
      break;
    }
  }
}

}  // namespace detail

// Ranking SGD over the WARP objective (zero-shot ALE, few-shot ALE, WSABIE).
//   learn_W only          Phi fixed; mu ignored
//   learn_Phi only        W fixed (W_init or random)
//   learn_W and learn_Phi epochs alternate, W first
// Returns the snapshot with the best validation top-1.
inline RankingResult train_ranking(const SampleView& data, const ClassEmbedding& phi_init,
                                   const ClassEmbedding* phi_prior, const RankingConfig& cfg,
                                   const TrainOptions& opts = {}) {
  const auto t0 = std::chrono::steady_clock::now();
  cfg.validate(phi_prior != nullptr);
  if (data.empty()) fail("train_ranking: empty training set");
  if (phi_prior && (phi_prior->dim() != phi_init.dim() || phi_prior->num_classes() != phi_init.num_classes()))
    fail("train_ranking: prior embedding shape differs from the initial embedding");
  const auto space = detail::resolve_label_space(data, phi_init, opts.label_space);
  const LossWeights weights = harmonic_weights(space.size());

  auto [fit, val] = stratified_holdout(data, cfg.validation_fraction, derive_seed(cfg.seed, 1));
  if (fit.empty()) fail("train_ranking: validation carve left no training samples");
  const SampleView& monitor = val.empty() ? fit : val;

  CompatModel model;
  if (opts.W_init) {
    if (static_cast<std::size_t>(opts.W_init->rows()) != data.dim() ||
        static_cast<std::size_t>(opts.W_init->cols()) != phi_init.dim())
      fail("train_ranking: W_init shape mismatch");
    model.W = *opts.W_init;
  } else {
    model.W = detail::random_init(data.dim(), phi_init.dim(), cfg.init_scale, derive_seed(cfg.seed, 3));
  }
  ClassEmbedding phi = phi_init;
  if (cfg.learn_Phi) phi.source = EmbeddingSource::kLearned;

  std::vector<std::size_t> pos_of(phi.num_classes(), 0);
  for (std::size_t i = 0; i < space.size(); ++i) pos_of[static_cast<std::size_t>(space[i])] = i;

  Rng rng(derive_seed(cfg.seed, 2));
  StepContext ctx;
  ctx.eta = cfg.eta;
  ctx.mu = cfg.learn_Phi ? cfg.mu : 0.0;
  ctx.prior = phi_prior;

  RankingResult best{model, phi, {}};
  auto run_epoch = [&](std::size_t epoch) {
    const bool alternate = cfg.learn_W && cfg.learn_Phi;
    ctx.update_W = alternate ? (epoch % 2 == 1) : cfg.learn_W;
    ctx.update_Phi = alternate ? (epoch % 2 == 0) : cfg.learn_Phi;
    for (std::size_t t = 0; t < fit.size(); ++t) {
      const auto n = static_cast<std::size_t>(rng.uniform_index(fit.size()));
      const int y = fit.label(n);
      ranking_step(model, phi, fit.row_d(n), y, pos_of[static_cast<std::size_t>(y)], space, weights, ctx, rng);
    }
    if (!model.W.allFinite() || !phi.phi.allFinite()) fail("train_ranking: diverged (non-finite parameters)");
  };
  auto evaluate = [&] { return accuracy(model, phi, monitor, space); };
  auto commit = [&] {
    best.model = model;
    best.phi = phi;
  };
  detail::early_stopping_loop(cfg.epochs, cfg.patience, run_epoch, evaluate, commit, best.report);
  best.report.final_objective = warp_objective(best.model, best.phi, fit, space);
  best.report.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return best;
}

// Multiclass structured hinge, one sample: max_y l(x, y_true, y) over
// the label space (>= 0 since y = y_true contributes 0).
inline double max_hinge(const CompatModel& m, const ClassEmbedding& phi, const Vector& x, int y_true,
                        std::span<const int> label_space, int* argmax = nullptr) {
  const ScoreVector s = score_all(m, x, phi);
  const double true_score = s[static_cast<std::size_t>(y_true)];
  double best = 0.0;
  int best_y = y_true;
  for (int y : label_space) {
    if (y == y_true) continue;
    const double l = 1.0 + s[static_cast<std::size_t>(y)] - true_score;
    if (l > best) {
      best = l;
      best_y = y;
    }
  }
  if (argmax) *argmax = best_y;
  return best;
}

inline double ssvm_objective(const CompatModel& m, const ClassEmbedding& phi, const SampleView& data,
                             std::span<const int> label_space) {
  if (data.empty()) return 0.0;
  double total = 0.0;
  for (std::size_t n = 0; n < data.size(); ++n) total += max_hinge(m, phi, data.row_d(n), data.label(n), label_space);
  return total / static_cast<double>(data.size());
}

// W += eta * theta(x) [phi(y) - phi(y*)]' for the max violator y*, when the
// max hinge is positive. Returns whether an update happened.
inline bool ssvm_step(CompatModel& m, const ClassEmbedding& phi, const Vector& x, int y,
                      std::span<const int> label_space, double eta) {
  int violator = y;
  if (!(max_hinge(m, phi, x, y, label_space, &violator) > 0.0)) return false;
  const Vector d = phi.phi.col(y) - phi.phi.col(violator);
  for (Eigen::Index j = 0; j < m.W.cols(); ++j)
    for (Eigen::Index i = 0; i < m.W.rows(); ++i) m.W(i, j) += (eta * x(i)) * d(j);
  return true;
}

struct SsvmResult {
  CompatModel model;
  TrainReport report;
};

// Phi is fixed. Uses eta, epochs, seed, validation_fraction, patience and
// init_scale from `cfg`.
inline SsvmResult train_ssvm(const SampleView& data, const ClassEmbedding& phi, const RankingConfig& cfg,
                             const TrainOptions& opts = {}) {
  const auto t0 = std::chrono::steady_clock::now();
  RankingConfig checked = cfg;
  checked.learn_W = true;
  checked.learn_Phi = false;
  checked.validate(false);
  if (data.empty()) fail("train_ssvm: empty training set");
  const auto space = detail::resolve_label_space(data, phi, opts.label_space);
  auto [fit, val] = stratified_holdout(data, cfg.validation_fraction, derive_seed(cfg.seed, 1));
  if (fit.empty()) fail("train_ssvm: validation carve left no training samples");
  const SampleView& monitor = val.empty() ? fit : val;

  CompatModel model(opts.W_init ? *opts.W_init
                                : detail::random_init(data.dim(), phi.dim(), cfg.init_scale, derive_seed(cfg.seed, 3)));
  if (model.dim_in() != data.dim() || model.dim_out() != phi.dim()) fail("train_ssvm: W_init shape mismatch");
  Rng rng(derive_seed(cfg.seed, 2));
  SsvmResult best{model, {}};
  auto run_epoch = [&](std::size_t) {
    for (std::size_t t = 0; t < fit.size(); ++t) {
      const auto n = static_cast<std::size_t>(rng.uniform_index(fit.size()));
      ssvm_step(model, phi, fit.row_d(n), fit.label(n), space, cfg.eta);
    }
    if (!model.W.allFinite()) fail("train_ssvm: diverged (non-finite parameters)");
  };
  auto evaluate = [&] { return accuracy(model, phi, monitor, space); };
  auto commit = [&] { best.model = model; };
  detail::early_stopping_loop(cfg.epochs, cfg.patience, run_epoch, evaluate, commit, best.report);
  best.report.final_objective = ssvm_objective(best.model, phi, fit, space);
  best.report.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return best;
}

// argmin_W sum_n ||W' theta(x_n) - phi(y_n)||^2 + lambda ||W||_F^2
//   = (Theta'Theta + lambda I)^-1 Theta' Y   (primal, D <= N)
//   = Theta' (Theta Theta' + lambda I)^-1 Y  (dual, D > N)
inline CompatModel train_ridge(const SampleView& data, const ClassEmbedding& phi, double lambda) {
  if (!(lambda > 0.0)) fail("train_ridge: lambda must be > 0");
  if (data.empty()) fail("train_ridge: empty training set");
  const auto n = static_cast<Eigen::Index>(data.size());
  const auto d = static_cast<Eigen::Index>(data.dim());
  Matrix theta(n, d);
  Matrix targets(n, phi.phi.rows());
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto idx = static_cast<std::size_t>(i);
    theta.row(i) = data.row(idx).cast<double>();
    const int y = data.label(idx);
    if (y < 0 || static_cast<std::size_t>(y) >= phi.num_classes()) fail("train_ridge: label ", y, " has no embedding");
    targets.row(i) = phi.phi.col(y).transpose();
  }
  Matrix w;
  if (d <= n) {
    Matrix gram = theta.transpose() * theta;
    gram.diagonal().array() += lambda;
    w = gram.ldlt().solve(theta.transpose() * targets);
  } else {
    Matrix gram = theta * theta.transpose();
    gram.diagonal().array() += lambda;
    w = theta.transpose() * gram.ldlt().solve(targets);
  }
  if (!w.allFinite()) fail("train_ridge: solve produced non-finite weights");
  return CompatModel(std::move(w));
}

}  // namespace labelembed
