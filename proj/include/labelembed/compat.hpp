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

#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "labelembed/common.hpp"
#include "labelembed/embedding.hpp"

namespace labelembed {

// Bilinear compatibility F(x, y) = theta(x)' W phi(y), W is D x E.
struct CompatModel {
  Matrix W;

  CompatModel() = default;
  explicit CompatModel(Matrix w) : W(std::move(w)) {}
  static CompatModel zeros(std::size_t dim_in, std::size_t dim_out) {
    return CompatModel(Matrix::Zero(static_cast<Eigen::Index>(dim_in), static_cast<Eigen::Index>(dim_out)));
  }

  std::size_t dim_in() const { return static_cast<std::size_t>(W.rows()); }
  std::size_t dim_out() const { return static_cast<std::size_t>(W.cols()); }
};

// One score per column of the embedding in use.
struct ScoreVector {
  Vector scores;

  std::size_t size() const { return static_cast<std::size_t>(scores.size()); }
  double operator[](std::size_t y) const { return scores(static_cast<Eigen::Index>(y)); }
};

inline void check_dims(const CompatModel& m, const Vector& x, const ClassEmbedding& phi) {
  if (static_cast<std::size_t>(x.size()) != m.dim_in())
    fail("dimension mismatch: feature has ", x.size(), " dims, model expects D = ", m.dim_in());
  if (phi.dim() != m.dim_out())
    fail("dimension mismatch: embedding has E = ", phi.dim(), ", model expects E = ", m.dim_out());
}

// theta(x)' W, the per-dimension (attribute) scores.
inline Vector attribute_scores(const CompatModel& m, const Vector& x) {
  if (static_cast<std::size_t>(x.size()) != m.dim_in())
    fail("dimension mismatch: feature has ", x.size(), " dims, model expects D = ", m.dim_in());
  return m.W.transpose() * x;
}

inline ScoreVector score_all(const CompatModel& m, const Vector& x, const ClassEmbedding& phi) {
  check_dims(m, x, phi);
  const Vector projected = m.W.transpose() * x;
  return ScoreVector{phi.phi.transpose() * projected};
}

// Scores for all columns with a precomputed projection theta(x)' W.
inline ScoreVector score_projected(const Vector& projected, const ClassEmbedding& phi) {
  return ScoreVector{phi.phi.transpose() * projected};
}

// Argmax over `candidates` (all columns when empty). Ties go to the lowest
// class id.
inline int argmax_class(const ScoreVector& s, std::span<const int> candidates = {}) {
  int best = -1;
  double best_score = -std::numeric_limits<double>::infinity();
  auto consider = [&](int y) {
    const double v = s[static_cast<std::size_t>(y)];
    if (best < 0 || v > best_score || (v == best_score && y < best)) {
      best = y;
      best_score = v;
    }
  };
  if (candidates.empty()) {
    for (std::size_t y = 0; y < s.size(); ++y) consider(static_cast<int>(y));
  } else {
    for (int y : candidates) {
      if (y < 0 || static_cast<std::size_t>(y) >= s.size()) fail("candidate class ", y, " out of range");
      consider(y);
    }
  }
  if (best < 0) fail("argmax over an empty class set");
  return best;
}

inline int predict(const CompatModel& m, const Vector& x, const ClassEmbedding& phi,
                   std::span<const int> candidates = {}) {
  return argmax_class(score_all(m, x, phi), candidates);
}

// -|| theta(x)' W - phi(y) ||^2
inline double regression_score(const CompatModel& m, const Vector& x, const ClassEmbedding& phi, int y) {
  check_dims(m, x, phi);
  return -(m.W.transpose() * x - phi.phi.col(y)).squaredNorm();
}

inline constexpr std::uint64_t kModelMagic = 0x314C444F4D454C41ull;  // "ALEMODL1"

// u64 magic, u64 D, u64 E, then D*E f64 row-major. Little-endian.
inline void save_model(const CompatModel& m, const std::string& path) {
  auto out = io::open_out(path, true);
  io::put_u64(out, kModelMagic);
  io::put_u64(out, m.dim_in());
  io::put_u64(out, m.dim_out());
  for (Eigen::Index i = 0; i < m.W.rows(); ++i)
    for (Eigen::Index j = 0; j < m.W.cols(); ++j) io::put_f64(out, m.W(i, j));
  if (!out) fail("write failed for '", path, "'");
}

inline CompatModel load_model(const std::string& path) {
  auto in = io::open_in(path, true);
  if (io::get_u64(in, "magic") != kModelMagic) fail("'", path, "' is not a model file (bad magic)");
  const auto d = io::get_u64(in, "D");
  const auto e = io::get_u64(in, "E");
  if (d == 0 || e == 0 || d > (1ull << 36) / e) fail("'", path, "': implausible model shape ", d, " x ", e);
  CompatModel m = CompatModel::zeros(d, e);
  for (Eigen::Index i = 0; i < m.W.rows(); ++i)
    for (Eigen::Index j = 0; j < m.W.cols(); ++j) m.W(i, j) = io::get_f64(in, "weights");
  if (!m.W.allFinite()) fail("'", path, "': model has non-finite weights");
  return m;
}

}  // namespace labelembed
