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
#include <cstdint>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include <Eigen/SVD>

#include "labelembed/common.hpp"
#include "labelembed/dataset.hpp"

namespace labelembed {

enum class EmbeddingSource { kAttribute, kHierarchy, kExternal, kOvr, kGaussian, kHadamard, kFused, kLearned };
enum class Encoding { kContinuous, kZeroOne, kPlusMinus };

// E x C matrix; column y is the embedding of class y.
struct ClassEmbedding {
  Matrix phi;
  EmbeddingSource source = EmbeddingSource::kAttribute;
  Encoding encoding = Encoding::kContinuous;
  bool centered = false;
  bool l2_normalized = false;
  std::vector<std::string> class_names;  // empty, or one per column

  std::size_t dim() const { return static_cast<std::size_t>(phi.rows()); }
  std::size_t num_classes() const { return static_cast<std::size_t>(phi.cols()); }
  auto column(int y) const { return phi.col(y); }

  void validate() const {
    if (!phi.allFinite()) fail("class embedding has non-finite entries");
    if (l2_normalized) {
      for (Eigen::Index y = 0; y < phi.cols(); ++y)
        if (std::abs(phi.col(y).norm() - 1.0) > 1e-6)
          fail("class embedding flagged l2-normalized but column ", y, " has norm ", phi.col(y).norm());
    }
    if (!centered && !l2_normalized) {
      if (encoding == Encoding::kZeroOne && !(phi.array() == 0.0 || phi.array() == 1.0).all())
        fail("zero-one embedding has entries outside {0,1}");
      if (encoding == Encoding::kPlusMinus && !(phi.array() == -1.0 || phi.array() == 1.0).all())
        fail("plus-minus embedding has entries outside {-1,+1}");
    }
  }
};

enum class ThresholdPolicy { kGlobalMean, kFixed };

struct EmbeddingRecipe {
  Encoding encoding = Encoding::kContinuous;
  ThresholdPolicy threshold_policy = ThresholdPolicy::kGlobalMean;
  double threshold = 0.0;  // used by kFixed
  bool center = false;
  bool l2 = true;
  std::optional<std::size_t> svd_rank;
  std::optional<std::pair<std::size_t, std::uint64_t>> sample_dims;  // (count, seed)
};

// Strict `>` against the threshold; the global-mean policy uses the mean of
// every entry.
inline AttributeTable binarize(const AttributeTable& tab, ThresholdPolicy policy, double fixed = 0.0) {
  const double t = policy == ThresholdPolicy::kGlobalMean ? tab.assoc.mean() : fixed;
  AttributeTable out = tab;
  out.assoc = (tab.assoc.array() > t).cast<double>().matrix();
  out.is_binary = true;
  return out;
}

inline ClassEmbedding to_plus_minus(const ClassEmbedding& e) {
  if (e.encoding != Encoding::kZeroOne) fail("to_plus_minus: input encoding must be zero-one");
  if (e.centered || e.l2_normalized) fail("to_plus_minus: input must be unnormalized");
  if (!(e.phi.array() == 0.0 || e.phi.array() == 1.0).all()) fail("to_plus_minus: entries outside {0,1}");
  ClassEmbedding out = e;
  out.phi = (2.0 * e.phi.array() - 1.0).matrix();
  out.encoding = Encoding::kPlusMinus;
  return out;
}

// Subtracts the per-dimension mean over the `over` columns from every column.
inline ClassEmbedding center(const ClassEmbedding& e, std::span<const int> over) {
  if (over.empty()) fail("center: empty class set");
  Vector mean = Vector::Zero(e.phi.rows());
  for (int y : over) {
    if (y < 0 || static_cast<std::size_t>(y) >= e.num_classes()) fail("center: class ", y, " out of range");
    mean += e.phi.col(y);
  }
  mean /= static_cast<double>(over.size());
  ClassEmbedding out = e;
  out.phi.colwise() -= mean;
  out.centered = true;
  return out;
}

inline ClassEmbedding l2_normalize(const ClassEmbedding& e) {
  ClassEmbedding out = e;
  for (Eigen::Index y = 0; y < e.phi.cols(); ++y) {
    const double norm = e.phi.col(y).norm();
    if (!(norm > 0.0)) {
      if (!e.class_names.empty())
        fail("l2_normalize: zero column for class ", y, " (", e.class_names[static_cast<std::size_t>(y)], ")");
      fail("l2_normalize: zero column for class ", y);
    }
    out.phi.col(y) /= norm;
  }
  out.l2_normalized = true;
  return out;
}

// Raw attribute embedding: column y = row y of the table, encoded.
inline ClassEmbedding encode_attributes(const AttributeTable& tab, const EmbeddingRecipe& recipe) {
  tab.validate();
  ClassEmbedding e;
  e.source = EmbeddingSource::kAttribute;
  Matrix assoc = tab.assoc;
  if (recipe.encoding != Encoding::kContinuous) {
    if (tab.is_binary && tab.is_zero_one()) {
      // already {0,1}
    } else if (tab.is_binary) {
      assoc = (tab.assoc.array() > 0.0).cast<double>().matrix();
    } else {
      assoc = binarize(tab, recipe.threshold_policy, recipe.threshold).assoc;
    }
  }
  e.phi = assoc.transpose();
  e.encoding = recipe.encoding == Encoding::kContinuous ? Encoding::kContinuous : Encoding::kZeroOne;
  if (recipe.encoding == Encoding::kPlusMinus) e = to_plus_minus(e);
  return e;
}

inline void validate_recipe(const ClassEmbedding& e, const EmbeddingRecipe& recipe) {
  if (recipe.center && e.l2_normalized) fail("recipe: centering after l2-normalization is not allowed");
  if (recipe.svd_rank && recipe.sample_dims) fail("recipe: svd_rank and sample_dims are mutually exclusive");
  if (recipe.svd_rank && (*recipe.svd_rank < 1 || *recipe.svd_rank > std::min(e.dim(), e.num_classes())))
    fail("recipe: svd_rank ", *recipe.svd_rank, " out of range [1, ", std::min(e.dim(), e.num_classes()), "]");
  if (recipe.sample_dims && (recipe.sample_dims->first < 1 || recipe.sample_dims->first > e.dim()))
    fail("recipe: sample count ", recipe.sample_dims->first, " out of range [1, ", e.dim(), "]");
}

inline ClassEmbedding svd_reduce(const ClassEmbedding& e, std::size_t rank);
inline ClassEmbedding sample_dims(const ClassEmbedding& e, std::size_t count, std::uint64_t seed);

// Centering -> l2 -> optional reduction. Centering statistics come from
// `train_classes` only and are applied to every column.
inline ClassEmbedding apply_recipe(const ClassEmbedding& e, const EmbeddingRecipe& recipe,
                                   std::span<const int> train_classes) {
  validate_recipe(e, recipe);
  ClassEmbedding out = e;
  if (recipe.center) out = center(out, train_classes);
  if (recipe.l2 && !out.l2_normalized) out = l2_normalize(out);
  if (recipe.svd_rank) out = svd_reduce(out, *recipe.svd_rank);
  if (recipe.sample_dims) out = sample_dims(out, recipe.sample_dims->first, recipe.sample_dims->second);
  return out;
}

inline ClassEmbedding attribute_embedding(const AttributeTable& tab, const EmbeddingRecipe& recipe,
                                          std::span<const int> train_classes) {
  return apply_recipe(encode_attributes(tab, recipe), recipe, train_classes);
}

// Overload that centers over every class.
inline ClassEmbedding attribute_embedding(const AttributeTable& tab, const EmbeddingRecipe& recipe) {
  std::vector<int> all(tab.num_classes());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = static_cast<int>(i);
  return attribute_embedding(tab, recipe, all);
}

// Indicator of ancestors-or-self per class, one dimension per tree node,
// then l2-normalized.
inline ClassEmbedding hierarchy_embedding_raw(const TaxonomyTree& tree, std::size_t num_classes) {
  ClassEmbedding e;
  e.source = EmbeddingSource::kHierarchy;
  e.encoding = Encoding::kZeroOne;
  e.phi = Matrix::Zero(static_cast<Eigen::Index>(tree.size()), static_cast<Eigen::Index>(num_classes));
  for (std::size_t y = 0; y < num_classes; ++y) {
    auto it = tree.class_to_node.find(static_cast<int>(y));
    if (it == tree.class_to_node.end()) fail("hierarchy_embedding: class ", y, " is not mapped to a tree node");
    for (int z : tree.path_to_root(it->second)) e.phi(z, static_cast<Eigen::Index>(y)) = 1.0;
  }
  return e;
}

inline ClassEmbedding hierarchy_embedding(const TaxonomyTree& tree, std::size_t num_classes) {
  return l2_normalize(hierarchy_embedding_raw(tree, num_classes));
}

inline ClassEmbedding ovr_embedding(std::size_t num_classes) {
  ClassEmbedding e;
  e.source = EmbeddingSource::kOvr;
  e.encoding = Encoding::kZeroOne;
  e.phi = Matrix::Identity(static_cast<Eigen::Index>(num_classes), static_cast<Eigen::Index>(num_classes));
  return e;
}

// Entries drawn column by column (class 0 first) from the seeded Rng.
inline ClassEmbedding gaussian_embedding(std::size_t num_classes, std::size_t dim, std::uint64_t seed) {
  if (num_classes == 0 || dim == 0) fail("gaussian_embedding: C and E must be >= 1");
  Rng rng(seed);
  ClassEmbedding e;
  e.source = EmbeddingSource::kGaussian;
  e.phi.resize(static_cast<Eigen::Index>(dim), static_cast<Eigen::Index>(num_classes));
  for (Eigen::Index y = 0; y < e.phi.cols(); ++y)
    for (Eigen::Index k = 0; k < e.phi.rows(); ++k) e.phi(k, y) = rng.normal();
  return e;
}

// Sylvester doubling H_1 = (1), H_2n = [[H, H], [H, -H]].
inline Matrix sylvester_hadamard(std::size_t order) {
  if (order == 0 || (order & (order - 1)) != 0) fail("sylvester_hadamard: order must be a power of two");
  Matrix h = Matrix::Ones(1, 1);
  while (static_cast<std::size_t>(h.rows()) < order) {
    const auto n = h.rows();
    Matrix next(2 * n, 2 * n);
    next.topLeftCorner(n, n) = h;
    next.topRightCorner(n, n) = h;
    next.bottomLeftCorner(n, n) = h;
    next.bottomRightCorner(n, n) = -h;
    h = std::move(next);
  }
  return h;
}

// First C columns of the smallest Sylvester matrix with order >= C.
inline ClassEmbedding hadamard_embedding(std::size_t num_classes) {
  if (num_classes == 0) fail("hadamard_embedding: C must be >= 1");
  std::size_t order = 1;
  while (order < num_classes) order <<= 1;
  ClassEmbedding e;
  e.source = EmbeddingSource::kHadamard;
  e.encoding = Encoding::kPlusMinus;
  e.phi = sylvester_hadamard(order).leftCols(static_cast<Eigen::Index>(num_classes));
  return e;
}

// Header line of C class names, then E rows of C comma-separated reals.
// `expected_names`, when non-empty, must equal the header exactly.
inline ClassEmbedding load_external_embedding(const std::string& path,
                                              const std::vector<std::string>& expected_names = {}) {
  auto in = io::open_in(path);
  std::string line;
  std::vector<std::string> names;
  while (names.empty() && std::getline(in, line))
    if (!io::trim(line).empty()) names = io::split_csv(io::trim(line));
  if (names.empty()) fail("'", path, "': missing class-name header");
  if (!expected_names.empty()) {
    std::set<std::string> have(names.begin(), names.end());
    for (const auto& n : expected_names)
      if (!have.count(n)) fail("'", path, "': class '", n, "' missing from embedding header");
    if (names.size() != expected_names.size())
      fail("'", path, "': header has ", names.size(), " classes, dataset has ", expected_names.size());
    for (std::size_t i = 0; i < names.size(); ++i)
      if (names[i] != expected_names[i])
        fail("'", path, "': class names not aligned at column ", i, " ('", names[i], "' vs '", expected_names[i],
             "')");
  }
  std::vector<std::vector<double>> rows;
  while (std::getline(in, line)) {
    const auto t = io::trim(line);
    if (t.empty()) continue;
    const auto cells = io::split_csv(t);
    if (cells.size() != names.size())
      fail("'", path, "': row ", rows.size() + 1, " has ", cells.size(), " values, expected ", names.size());
    std::vector<double> r(cells.size());
    for (std::size_t k = 0; k < cells.size(); ++k)
      if (!io::parse_real(cells[k], r[k]) || !std::isfinite(r[k]))
        fail("'", path, "': bad value at row ", rows.size() + 1, ", column ", k + 1);
    rows.push_back(std::move(r));
  }
  if (rows.empty()) fail("'", path, "': embedding has no rows");
  ClassEmbedding e;
  e.source = EmbeddingSource::kExternal;
  e.class_names = names;
  e.phi.resize(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(names.size()));
  for (std::size_t k = 0; k < rows.size(); ++k)
    for (std::size_t y = 0; y < names.size(); ++y)
      e.phi(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(y)) = rows[k][y];
  return e;
}

// Same text format as load_external_embedding. Columns without names are
// written as their class id.
inline void write_embedding(const ClassEmbedding& e, const std::string& path) {
  auto out = io::open_out(path);
  for (std::size_t y = 0; y < e.num_classes(); ++y) {
    if (y) out << ',';
    if (e.class_names.empty())
      out << y;
    else
      out << e.class_names[y];
  }
  out << '\n';
  for (Eigen::Index k = 0; k < e.phi.rows(); ++k) {
    for (Eigen::Index y = 0; y < e.phi.cols(); ++y) out << (y ? "," : "") << io::format_real(e.phi(k, y));
    out << '\n';
  }
  if (!out) fail("write failed for '", path, "'");
}

// Phi = U S V'  ->  S_r V_r' (r x C), so Phi_r' Phi_r = V_r S_r^2 V_r'.
inline ClassEmbedding svd_reduce(const ClassEmbedding& e, std::size_t rank) {
  if (rank < 1 || rank > std::min(e.dim(), e.num_classes()))
    fail("svd_reduce: rank ", rank, " out of range [1, ", std::min(e.dim(), e.num_classes()), "]");
  Eigen::BDCSVD<Matrix> svd(e.phi, Eigen::ComputeThinV);
  const auto r = static_cast<Eigen::Index>(rank);
  ClassEmbedding out = e;
  out.phi = svd.singularValues().head(r).asDiagonal() * svd.matrixV().leftCols(r).transpose();
  out.l2_normalized = false;
  out.encoding = Encoding::kContinuous;
  return out;
}

// Keeps `count` distinct rows chosen uniformly (partial Fisher-Yates), in
// draw order.
inline ClassEmbedding sample_dims(const ClassEmbedding& e, std::size_t count, std::uint64_t seed) {
  if (count < 1 || count > e.dim()) fail("sample_dims: count ", count, " out of range [1, ", e.dim(), "]");
  std::vector<Eigen::Index> idx(e.dim());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = static_cast<Eigen::Index>(i);
  Rng rng(seed);
  for (std::size_t i = 0; i < count; ++i) {
    const auto j = i + static_cast<std::size_t>(rng.uniform_index(idx.size() - i));
    std::swap(idx[i], idx[j]);
  }
  ClassEmbedding out = e;
  out.phi.resize(static_cast<Eigen::Index>(count), e.phi.cols());
  for (std::size_t i = 0; i < count; ++i) out.phi.row(static_cast<Eigen::Index>(i)) = e.phi.row(idx[i]);
  out.l2_normalized = false;
  return out;
}

// Row-wise concatenation; each block keeps its own scaling.
inline ClassEmbedding fuse_early(const ClassEmbedding& a, const ClassEmbedding& b) {
  if (a.num_classes() != b.num_classes())
    fail("fuse_early: class count mismatch (", a.num_classes(), " vs ", b.num_classes(), ")");
  ClassEmbedding out;
  out.source = EmbeddingSource::kFused;
  out.encoding = Encoding::kContinuous;
  out.class_names = a.class_names.empty() ? b.class_names : a.class_names;
  out.phi.resize(a.phi.rows() + b.phi.rows(), a.phi.cols());
  out.phi.topRows(a.phi.rows()) = a.phi;
  out.phi.bottomRows(b.phi.rows()) = b.phi;
  return out;
}

}  // namespace labelembed
