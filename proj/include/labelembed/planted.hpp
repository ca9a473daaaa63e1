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
#include <string>

#include "labelembed/common.hpp"
#include "labelembed/dataset.hpp"
#include "labelembed/embedding.hpp"

namespace labelembed {

struct PlantedSpec {
  std::size_t num_classes = 10;
  std::size_t feature_dim = 20;
  std::size_t embedding_dim = 8;
  std::size_t samples_per_class = 30;
  double noise = 0.1;
  bool nonnegative_attributes = true;  // uniform [0,1) attributes; else Gaussian
  std::uint64_t seed = 0;
};

// Features theta = W* phi(y) + noise with phi the l2-normalized columns of a
// random attribute table. Rows are grouped by class in ascending order.
struct PlantedData {
  FeatureSet features;
  AttributeTable attributes;  // C x E, before normalization
  ClassEmbedding phi;         // E x C, unit columns
  Matrix w_star;              // D x E
};

inline PlantedData make_planted(const PlantedSpec& spec) {
  Rng rng(spec.seed);
  PlantedData out;
  const auto c = static_cast<Eigen::Index>(spec.num_classes);
  const auto d = static_cast<Eigen::Index>(spec.feature_dim);
  const auto e = static_cast<Eigen::Index>(spec.embedding_dim);
  out.attributes.assoc.resize(c, e);
  for (Eigen::Index y = 0; y < c; ++y)
    for (Eigen::Index k = 0; k < e; ++k)
      out.attributes.assoc(y, k) = spec.nonnegative_attributes ? rng.uniform01() : rng.normal();
  out.attributes.is_binary = AttributeTable::detect_binary(out.attributes.assoc);
  ClassEmbedding raw;
  raw.phi = out.attributes.assoc.transpose();
  out.phi = l2_normalize(raw);
  out.w_star.resize(d, e);
  for (Eigen::Index j = 0; j < e; ++j)
    for (Eigen::Index i = 0; i < d; ++i) out.w_star(i, j) = rng.normal();

  auto& fs = out.features;
  fs.num_classes = spec.num_classes;
  fs.features.resize(c * static_cast<Eigen::Index>(spec.samples_per_class), d);
  fs.labels.clear();
  Eigen::Index row = 0;
  for (Eigen::Index y = 0; y < c; ++y) {
    const Vector mean = out.w_star * out.phi.phi.col(y);
    for (std::size_t s = 0; s < spec.samples_per_class; ++s, ++row) {
      for (Eigen::Index i = 0; i < d; ++i)
        fs.features(row, i) = static_cast<float>(mean(i) + spec.noise * rng.normal());
      fs.labels.push_back(static_cast<int>(y));
    }
  }
  fs.validate();
  return out;
}

}  // namespace labelembed
