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

// Independent reference implementations used only by the test suites. They
// favour the most literal formulation over speed and never call into the
// library's scoring or loss code.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <set>
#include <string>
#include <vector>

#include <unistd.h>

#include "labelembed/labelembed.hpp"

namespace oracle {

using labelembed::Matrix;
using labelembed::Vector;

// F(x, y) = sum_i sum_j x_i W_ij phi_jy as a literal triple loop.
inline double score(const Matrix& w, const Vector& x, const Matrix& phi, int y) {
  double s = 0.0;
  for (Eigen::Index i = 0; i < w.rows(); ++i)
    for (Eigen::Index j = 0; j < w.cols(); ++j) s += x(i) * w(i, j) * phi(j, y);
  return s;
}

// w' psi(x, y) with psi = x (tensor) phi(y), W flattened row-major.
inline double tensor_score(const Matrix& w, const Vector& x, const Matrix& phi, int y) {
  const Eigen::Index d = w.rows(), e = w.cols();
  std::vector<double> flat_w(static_cast<std::size_t>(d * e)), psi(static_cast<std::size_t>(d * e));
  for (Eigen::Index i = 0; i < d; ++i)
    for (Eigen::Index j = 0; j < e; ++j) {
      flat_w[static_cast<std::size_t>(i * e + j)] = w(i, j);
      psi[static_cast<std::size_t>(i * e + j)] = x(i) * phi(j, y);
    }
  double s = 0.0;
  for (std::size_t k = 0; k < psi.size(); ++k) s += flat_w[k] * psi[k];
  return s;
}

inline double hinge(const Matrix& w, const Vector& x, const Matrix& phi, int yt, int y) {
  return (y == yt ? 0.0 : 1.0) + score(w, x, phi, y) - score(w, x, phi, yt);
}

inline std::size_t rank_bound(const Matrix& w, const Vector& x, const Matrix& phi, int yt) {
  std::size_t r = 0;
  for (int y = 0; y < phi.cols(); ++y)
    if (hinge(w, x, phi, yt, y) > 0.0) ++r;
  return r;
}

// Number of classes scoring strictly above the true class.
inline std::size_t exact_rank(const Matrix& w, const Vector& x, const Matrix& phi, int yt) {
  std::size_t r = 0;
  const double t = score(w, x, phi, yt);
  for (int y = 0; y < phi.cols(); ++y)
    if (y != yt && score(w, x, phi, y) > t) ++r;
  return r;
}

inline double harmonic(std::size_t k) {
  double s = 0.0;
  for (std::size_t j = 1; j <= k; ++j) s += 1.0 / static_cast<double>(j);
  return s;
}

inline double warp(const Matrix& w, const std::vector<Vector>& xs, const std::vector<int>& ys, const Matrix& phi) {
  double total = 0.0;
  for (std::size_t n = 0; n < xs.size(); ++n) {
    const std::size_t r = rank_bound(w, xs[n], phi, ys[n]);
    if (r == 0) continue;
    double sum = 0.0;
    for (int y = 0; y < phi.cols(); ++y) sum += std::max(0.0, hinge(w, xs[n], phi, ys[n], y));
    total += harmonic(r) / static_cast<double>(r) * sum;
  }
  return total / static_cast<double>(xs.size());
}

inline double max_hinge(const Matrix& w, const Vector& x, const Matrix& phi, int yt) {
  double best = 0.0;
  for (int y = 0; y < phi.cols(); ++y) best = std::max(best, hinge(w, x, phi, yt, y));
  return best;
}

// Pairwise AUC: share of (positive, negative) pairs ordered correctly, ties 1/2.
inline double pairwise_auc(const std::vector<double>& s, const std::vector<std::uint8_t>& t) {
  double good = 0.0, pairs = 0.0;
  for (std::size_t i = 0; i < s.size(); ++i)
    for (std::size_t j = 0; j < s.size(); ++j)
      if (t[i] && !t[j]) {
        pairs += 1.0;
        if (s[i] > s[j]) good += 1.0;
        else if (s[i] == s[j]) good += 0.5;
      }
  return good / pairs;
}

// DAP posterior in linear space, normalized to sum 1.
inline std::vector<double> dap_linear(const std::vector<double>& p, const Matrix& rho) {
  std::vector<double> post(static_cast<std::size_t>(rho.rows()));
  double z = 0.0;
  for (Eigen::Index y = 0; y < rho.rows(); ++y) {
    double prod = 1.0;
    for (Eigen::Index e = 0; e < rho.cols(); ++e) {
      const double pe = std::clamp(p[static_cast<std::size_t>(e)], 1e-12, 1.0 - 1e-12);
      prod *= rho(y, e) == 1.0 ? pe : 1.0 - pe;
    }
    post[static_cast<std::size_t>(y)] = prod;
    z += prod;
  }
  for (auto& v : post) v /= z;
  return post;
}

// Ancestor-or-self set by walking parent links one node id at a time.
inline std::set<long long> ancestors(const std::vector<std::pair<long long, long long>>& edges, long long node) {
  std::set<long long> out{node};
  bool moved = true;
  while (moved) {
    moved = false;
    for (const auto& [child, parent] : edges)
      if (out.count(child) && parent >= 0 && !out.count(parent)) {
        out.insert(parent);
        moved = true;
      }
  }
  return out;
}

inline std::size_t argmax_lowest(const std::vector<double>& v) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < v.size(); ++i)
    if (v[i] > v[best]) best = i;
  return best;
}

}  // namespace oracle

namespace testing_support {

using labelembed::Matrix;
using labelembed::Vector;

// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static int counter = 0;
    path_ = std::filesystem::temp_directory_path() /
            ("labelembed_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  std::string file(const std::string& name) const { return (path_ / name).string(); }
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

inline void write_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  out << text;
}

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline Matrix random_matrix(labelembed::Rng& rng, Eigen::Index rows, Eigen::Index cols, double scale = 1.0) {
  Matrix m(rows, cols);
  for (Eigen::Index j = 0; j < cols; ++j)
    for (Eigen::Index i = 0; i < rows; ++i) m(i, j) = scale * rng.normal();
  return m;
}

inline Vector random_vector(labelembed::Rng& rng, Eigen::Index n, double scale = 1.0) {
  Vector v(n);
  for (Eigen::Index i = 0; i < n; ++i) v(i) = scale * rng.normal();
  return v;
}

inline labelembed::ClassEmbedding embedding_of(Matrix phi) {
  labelembed::ClassEmbedding e;
  e.phi = std::move(phi);
  return e;
}

// Feature set from dense rows (doubles rounded to float).
inline labelembed::FeatureSet feature_set(const std::vector<Vector>& xs, const std::vector<int>& ys,
                                          std::size_t num_classes) {
  labelembed::FeatureSet fs;
  fs.features.resize(static_cast<Eigen::Index>(xs.size()), xs.empty() ? 0 : xs[0].size());
  for (std::size_t n = 0; n < xs.size(); ++n)
    fs.features.row(static_cast<Eigen::Index>(n)) = xs[n].cast<float>().transpose();
  fs.labels = ys;
  fs.num_classes = num_classes;
  return fs;
}

// The 7-node tree: 1 -> {2, 3}, 2 -> {4, 5}, 3 -> {6, 7}; leaves 4..7 are
// classes 0..3 and node 6 is class 2.
inline const char* kSevenNodeTree =
    "1 -1 - root\n"
    "2 1 - left\n"
    "3 1 - right\n"
    "4 2 0\n"
    "5 2 1\n"
    "6 3 2\n"
    "7 3 3\n";

// Binary class signatures over E attributes; attribute e lives on feature
// axis e as +-1 plus Gaussian noise, the remaining axes are pure noise.
// Classes [0, train_classes) all differ and every attribute takes both
// values among them.
struct PlantedAttributes {
  labelembed::FeatureSet features;
  labelembed::AttributeTable table;
};

inline PlantedAttributes planted_attributes(std::size_t classes, std::size_t attributes, std::size_t extra_dims,
                                            std::size_t per_class, double noise, std::uint64_t seed,
                                            std::size_t train_classes = 0) {
  labelembed::Rng rng(seed);
  PlantedAttributes out;
  const auto c = static_cast<Eigen::Index>(classes);
  const auto e = static_cast<Eigen::Index>(attributes);
  if (train_classes == 0) train_classes = classes;
  std::set<std::vector<int>> seen;
  out.table.assoc.resize(c, e);
  for (Eigen::Index y = 0; y < c; ++y) {
    std::vector<int> sig;
    do {
      sig.assign(attributes, 0);
      for (auto& v : sig) v = static_cast<int>(rng.uniform_index(2));
    } while (seen.count(sig));
    seen.insert(sig);
    for (Eigen::Index k = 0; k < e; ++k) out.table.assoc(y, k) = sig[static_cast<std::size_t>(k)];
  }
  const auto tr = static_cast<Eigen::Index>(train_classes);
  for (Eigen::Index k = 0; k < e; ++k) {
    const double s = out.table.assoc.col(k).head(tr).sum();
    if (s == 0.0) out.table.assoc(0, k) = 1.0;
    if (s == static_cast<double>(tr)) out.table.assoc(0, k) = 0.0;
  }
  out.table.is_binary = true;
  auto& fs = out.features;
  fs.num_classes = classes;
  fs.features.resize(static_cast<Eigen::Index>(classes * per_class), e + static_cast<Eigen::Index>(extra_dims));
  Eigen::Index row = 0;
  for (Eigen::Index y = 0; y < c; ++y)
    for (std::size_t n = 0; n < per_class; ++n, ++row) {
      for (Eigen::Index d = 0; d < fs.features.cols(); ++d) {
        const double signal = d < e ? 2.0 * out.table.assoc(y, d) - 1.0 : 0.0;
        fs.features(row, d) = static_cast<float>(signal + noise * rng.normal());
      }
      fs.labels.push_back(static_cast<int>(y));
    }
  return out;
}

}  // namespace testing_support
