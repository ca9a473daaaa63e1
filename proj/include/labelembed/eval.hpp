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
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "labelembed/common.hpp"
#include "labelembed/compat.hpp"
#include "labelembed/dap.hpp"
#include "labelembed/dataset.hpp"
#include "labelembed/embedding.hpp"

namespace labelembed {

struct EvalReport {
  double top1 = 0.0;
  std::size_t n_eval = 0;
  std::size_t n_correct = 0;
  std::vector<double> per_class_accuracy;  // C entries, NaN for classes without eval samples
  std::optional<double> mean_attribute_auc;
  std::vector<std::optional<double>> per_attribute_auc;  // nullopt: excluded (single class present)
  std::vector<std::size_t> excluded_attributes;
};

inline double top1_accuracy(std::span<const int> predictions, std::span<const int> labels) {
  if (predictions.size() != labels.size()) fail("top1_accuracy: size mismatch");
  if (labels.empty()) fail("top1_accuracy: empty evaluation set");
  std::size_t correct = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) correct += predictions[i] == labels[i];
  return static_cast<double>(correct) / static_cast<double>(labels.size());
}

// Mann-Whitney AUC with midranks for ties:
//   (sum of positive ranks - P(P+1)/2) / (P * N).
// nullopt when the column lacks positives or negatives.
inline std::optional<double> rank_auc(std::span<const double> scores, std::span<const std::uint8_t> truth) {
  if (scores.size() != truth.size()) fail("rank_auc: size mismatch");
  const std::size_t n = scores.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  double positive_rank_sum = 0.0;
  std::size_t positives = 0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j < n && scores[order[j]] == scores[order[i]]) ++j;
    const double midrank = 0.5 * static_cast<double>(i + 1 + j);  // mean of ranks i+1..j
    for (std::size_t k = i; k < j; ++k)
      if (truth[order[k]]) {
        positive_rank_sum += midrank;
        ++positives;
      }
    i = j;
  }
  const std::size_t negatives = n - positives;
  if (positives == 0 || negatives == 0) return std::nullopt;
  const double p = static_cast<double>(positives);
  return (positive_rank_sum - p * (p + 1.0) / 2.0) / (p * static_cast<double>(negatives));
}

using BinaryMatrix = Eigen::Matrix<std::uint8_t, Eigen::Dynamic, Eigen::Dynamic>;

// Per-attribute AUC over N x E score and 0/1 truth matrices.
inline std::vector<std::optional<double>> attribute_auc(const Matrix& scores, const BinaryMatrix& truth) {
  if (scores.rows() != truth.rows() || scores.cols() != truth.cols()) fail("attribute_auc: shape mismatch");
  if (!scores.allFinite()) fail("attribute_auc: non-finite scores");
  std::vector<std::optional<double>> out(static_cast<std::size_t>(scores.cols()));
  std::vector<double> s(static_cast<std::size_t>(scores.rows()));
  std::vector<std::uint8_t> t(static_cast<std::size_t>(scores.rows()));
  for (Eigen::Index e = 0; e < scores.cols(); ++e) {
    for (Eigen::Index n = 0; n < scores.rows(); ++n) {
      s[static_cast<std::size_t>(n)] = scores(n, e);
      t[static_cast<std::size_t>(n)] = truth(n, e) ? 1 : 0;
    }
    out[static_cast<std::size_t>(e)] = rank_auc(s, t);
  }
  return out;
}

// Zero mean, unit variance over every entry of an N x C score batch.
// A constant batch maps to zeros.
inline Matrix standardize_scores(const Matrix& batch) {
  if (batch.size() == 0) return batch;
  const double mean = batch.mean();
  const double var = (batch.array() - mean).square().mean();
  Matrix out = batch.array() - mean;
  if (var > 0.0) out /= std::sqrt(var);
  return out;
}

// weight * a + (1 - weight) * b. Inputs are expected to be standardized.
inline ScoreVector late_fuse(const ScoreVector& a, const ScoreVector& b, double weight = 0.5) {
  if (a.size() != b.size()) fail("late_fuse: score vectors cover different class sets");
  if (weight == 1.0) return a;
  if (weight == 0.0) return b;
  return ScoreVector{weight * a.scores + (1.0 - weight) * b.scores};
}

// Standardizes each system over the batch, then fuses row by row.
inline Matrix late_fuse_batch(const Matrix& a, const Matrix& b, double weight = 0.5) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) fail("late_fuse: batch shapes differ");
  const Matrix sa = standardize_scores(a);
  const Matrix sb = standardize_scores(b);
  Matrix out(a.rows(), a.cols());
  for (Eigen::Index n = 0; n < a.rows(); ++n)
    out.row(n) = late_fuse(ScoreVector{sa.row(n).transpose()}, ScoreVector{sb.row(n).transpose()}, weight)
                     .scores.transpose();
  return out;
}

namespace detail {

inline std::vector<int> eval_candidates(const SampleView& data, std::span<const int> candidates) {
  if (!candidates.empty()) return {candidates.begin(), candidates.end()};
  return data.classes();
}

// Fills top1 / per-class accuracy from a predictor.
template <typename Predict>
EvalReport evaluate_predictions(const SampleView& data, std::size_t num_classes, Predict&& predict_row) {
  if (data.empty()) fail("evaluate: empty evaluation set");
  EvalReport report;
  report.n_eval = data.size();
  std::vector<std::size_t> hits(num_classes, 0), totals(num_classes, 0);
  for (std::size_t n = 0; n < data.size(); ++n) {
    const int y = data.label(n);
    const bool hit = predict_row(n) == y;
    report.n_correct += hit;
    ++totals[static_cast<std::size_t>(y)];
    hits[static_cast<std::size_t>(y)] += hit;
  }
  report.top1 = static_cast<double>(report.n_correct) / static_cast<double>(report.n_eval);
  report.per_class_accuracy.assign(num_classes, std::numeric_limits<double>::quiet_NaN());
  for (std::size_t c = 0; c < num_classes; ++c)
    if (totals[c]) report.per_class_accuracy[c] = static_cast<double>(hits[c]) / static_cast<double>(totals[c]);
  return report;
}

inline void fill_auc(EvalReport& report, const Matrix& scores, const SampleView& data, const AttributeTable& truth_tab) {
  if (static_cast<std::size_t>(scores.cols()) != truth_tab.num_attributes())
    fail("evaluate: ", scores.cols(), " attribute scores for ", truth_tab.num_attributes(), " attributes");
  BinaryMatrix truth(scores.rows(), scores.cols());
  for (Eigen::Index n = 0; n < scores.rows(); ++n)
    for (Eigen::Index e = 0; e < scores.cols(); ++e)
      truth(n, e) = truth_tab.assoc(data.label(static_cast<std::size_t>(n)), e) > 0.0;
  report.per_attribute_auc = attribute_auc(scores, truth);
  double sum = 0.0;
  std::size_t used = 0;
  for (std::size_t e = 0; e < report.per_attribute_auc.size(); ++e) {
    if (report.per_attribute_auc[e]) {
      sum += *report.per_attribute_auc[e];
      ++used;
    } else {
      report.excluded_attributes.push_back(e);
    }
  }
  if (used) report.mean_attribute_auc = sum / static_cast<double>(used);
}

}  // namespace detail

// Bilinear model. When `truth_tab` (binary, one row per class) is given and
// the embedding dimension matches its attribute count, per-attribute AUC of
// theta(x)'W is reported too.
inline EvalReport evaluate(const CompatModel& m, const ClassEmbedding& phi, const SampleView& data,
                           std::span<const int> candidates = {}, const AttributeTable* truth_tab = nullptr) {
  const auto cands = detail::eval_candidates(data, candidates);
  Matrix attr(static_cast<Eigen::Index>(data.size()), static_cast<Eigen::Index>(m.dim_out()));
  auto report = detail::evaluate_predictions(data, std::max(data.num_classes(), phi.num_classes()), [&](std::size_t n) {
    const Vector x = data.row_d(n);
    check_dims(m, x, phi);
    const Vector projected = m.W.transpose() * x;
    attr.row(static_cast<Eigen::Index>(n)) = projected.transpose();
    return argmax_class(score_projected(projected, phi), cands);
  });
  if (truth_tab && truth_tab->num_attributes() == m.dim_out()) detail::fill_auc(report, attr, data, *truth_tab);
  return report;
}

// DAP bank; AUC uses p_e(x) against the binary table.
inline EvalReport evaluate_dap(const AttributeClassifierBank& bank, const AttributeTable& tab, const SampleView& data,
                               std::span<const int> candidates = {}) {
  const auto cands = detail::eval_candidates(data, candidates);
  Matrix probs(static_cast<Eigen::Index>(data.size()), static_cast<Eigen::Index>(bank.num_attributes()));
  auto report = detail::evaluate_predictions(data, std::max(data.num_classes(), tab.num_classes()), [&](std::size_t n) {
    const Vector p = attribute_probabilities(bank, data.row_d(n));
    probs.row(static_cast<Eigen::Index>(n)) = p.transpose();
    return argmax_class(dap_log_scores(p, tab), cands);
  });
  detail::fill_auc(report, probs, data, tab);
  return report;
}

// Predictions from a precomputed N x C score batch.
inline EvalReport evaluate_scores(const Matrix& scores, const SampleView& data, std::span<const int> candidates = {}) {
  if (static_cast<std::size_t>(scores.rows()) != data.size()) fail("evaluate: score rows != eval samples");
  const auto cands = detail::eval_candidates(data, candidates);
  return detail::evaluate_predictions(data, std::max<std::size_t>(data.num_classes(), scores.cols()),
                                      [&](std::size_t n) {
                                        return argmax_class(ScoreVector{scores.row(static_cast<Eigen::Index>(n)).transpose()},
                                                            cands);
                                      });
}

// Flat `key = value` lines, then optional CSV blocks headed `[name]`.
inline std::string format_report(const EvalReport& r) {
  std::ostringstream out;
  out << "top1 = " << io::format_real(r.top1) << '\n';
  out << "n_eval = " << r.n_eval << '\n';
  out << "n_correct = " << r.n_correct << '\n';
  if (r.mean_attribute_auc) {
    out << "mean_attribute_auc = " << io::format_real(*r.mean_attribute_auc) << '\n';
    out << "excluded_attributes = ";
    for (std::size_t i = 0; i < r.excluded_attributes.size(); ++i) out << (i ? "," : "") << r.excluded_attributes[i];
    out << '\n';
  }
  out << "\n[per_class]\nclass,accuracy\n";
  for (std::size_t c = 0; c < r.per_class_accuracy.size(); ++c)
    if (!std::isnan(r.per_class_accuracy[c])) out << c << ',' << io::format_real(r.per_class_accuracy[c]) << '\n';
  if (!r.per_attribute_auc.empty()) {
    out << "\n[per_attribute]\nattribute,auc\n";
    for (std::size_t e = 0; e < r.per_attribute_auc.size(); ++e)
      out << e << ',' << (r.per_attribute_auc[e] ? io::format_real(*r.per_attribute_auc[e]) : "excluded") << '\n';
  }
  return out.str();
}

}  // namespace labelembed
