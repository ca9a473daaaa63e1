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

#include <gtest/gtest.h>

#include <set>

#include "oracles.hpp"

namespace le = labelembed;
using le::Matrix;
using testing_support::embedding_of;
using testing_support::TempDir;
using testing_support::write_file;

namespace {

le::AttributeTable table(Matrix m) {
  le::AttributeTable t;
  t.is_binary = le::AttributeTable::detect_binary(m);
  t.assoc = std::move(m);
  return t;
}

Matrix mat(std::initializer_list<std::initializer_list<double>> rows) {
  Matrix m(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(rows.begin()->size()));
  Eigen::Index i = 0;
  for (const auto& r : rows) {
    Eigen::Index j = 0;
    for (double v : r) m(i, j++) = v;
    ++i;
  }
  return m;
}

}  // namespace

TEST(AttributeEmbedding, IdentityTablesStayIdentity) {
  le::EmbeddingRecipe zero_one;
  zero_one.encoding = le::Encoding::kZeroOne;
  const auto a = le::attribute_embedding(table(Matrix::Identity(2, 2)), zero_one);
  EXPECT_TRUE(a.phi.isApprox(Matrix::Identity(2, 2), 0.0));
  EXPECT_TRUE(a.l2_normalized);

  const auto b = le::attribute_embedding(table(mat({{2, 0}, {0, 2}})), le::EmbeddingRecipe{});
  EXPECT_TRUE(b.phi == Matrix::Identity(2, 2));
}

TEST(AttributeEmbedding, ColumnIsTransposedRow) {
  le::EmbeddingRecipe raw;
  raw.l2 = false;
  const auto e = le::attribute_embedding(table(mat({{0.1, 0.2, 0.3}, {0.4, 0.5, 0.6}})), raw);
  ASSERT_EQ(e.dim(), 3u);
  ASSERT_EQ(e.num_classes(), 2u);
  EXPECT_DOUBLE_EQ(e.phi(2, 1), 0.6);
  EXPECT_DOUBLE_EQ(e.phi(0, 1), 0.4);
}

TEST(Binarize, GlobalMeanStrictAndFixed) {
  const auto b = le::binarize(table(mat({{0.9, 0.1}, {0.2, 0.8}})), le::ThresholdPolicy::kGlobalMean);
  EXPECT_TRUE(b.assoc == Matrix::Identity(2, 2));
  EXPECT_TRUE(b.is_binary);
  const auto flat = le::binarize(table(Matrix::Constant(2, 3, 0.4)), le::ThresholdPolicy::kGlobalMean);
  EXPECT_TRUE(flat.assoc.isZero(0.0));
  const auto ident = table(mat({{1, 0}, {0, 1}}));
  EXPECT_TRUE(le::binarize(ident, le::ThresholdPolicy::kFixed, 0.0).assoc == ident.assoc);
}

TEST(ToPlusMinus, MapsAndRejects) {
  auto e = embedding_of(Matrix::Identity(2, 2));
  e.encoding = le::Encoding::kZeroOne;
  const auto pm = le::to_plus_minus(e);
  EXPECT_TRUE(pm.phi == mat({{1, -1}, {-1, 1}}));
  EXPECT_EQ(pm.encoding, le::Encoding::kPlusMinus);
  auto ones = embedding_of(Matrix::Ones(3, 1));
  ones.encoding = le::Encoding::kZeroOne;
  EXPECT_TRUE(le::to_plus_minus(ones).phi == Matrix::Ones(3, 1));
  EXPECT_THROW(le::to_plus_minus(embedding_of(Matrix::Identity(2, 2))), le::Error);
}

TEST(Center, HandComputedAndEdgeCases) {
  const std::vector<int> both{0, 1};
  const auto c = le::center(embedding_of(Matrix::Identity(2, 2)), both);
  EXPECT_TRUE(c.phi.isApprox(mat({{0.5, -0.5}, {-0.5, 0.5}})));
  EXPECT_TRUE(c.centered);
  const std::vector<int> one{1};
  const auto s = le::center(embedding_of(mat({{1, 3}, {2, 5}})), one);
  EXPECT_TRUE(s.phi.col(1).isZero(0.0));
  EXPECT_TRUE(s.phi.col(0) == (le::Vector(2) << -2, -3).finished());
  const auto again = le::center(c, both);
  EXPECT_LE((again.phi - c.phi).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_THROW(le::center(c, std::vector<int>{}), le::Error);
}

TEST(Center, UsesTrainingClassesOnly) {
  const auto e = embedding_of(mat({{0, 2, 10}}));
  const std::vector<int> train{0, 1};
  const auto c = le::center(e, train);
  EXPECT_TRUE(c.phi == mat({{-1, 1, 9}}));
}

TEST(L2Normalize, PythagoreanUnitAndZero) {
  const auto n = le::l2_normalize(embedding_of(mat({{3}, {4}})));
  EXPECT_DOUBLE_EQ(n.phi(0, 0), 0.6);
  EXPECT_DOUBLE_EQ(n.phi(1, 0), 0.8);
  EXPECT_TRUE(le::l2_normalize(embedding_of(Matrix::Identity(3, 3))).phi == Matrix::Identity(3, 3));
  auto named = embedding_of(mat({{1, 0}, {1, 0}}));
  named.class_names = {"zebra", "otter"};
  try {
    le::l2_normalize(named);
    FAIL() << "expected an error";
  } catch (const le::Error& err) {
    EXPECT_NE(std::string(err.what()).find("otter"), std::string::npos);
  }
}

TEST(L2Normalize, CenteringConstantDimensionWithOneDimFails) {
  le::EmbeddingRecipe recipe;
  recipe.center = true;
  EXPECT_THROW(le::attribute_embedding(table(mat({{0.5}, {0.5}})), recipe), le::Error);
}

TEST(Recipe, OrderAndIdempotence) {
  le::Rng rng(3);
  const Matrix raw = testing_support::random_matrix(rng, 6, 5).cwiseAbs();
  le::EmbeddingRecipe recipe;
  recipe.center = true;
  const std::vector<int> train{0, 1, 2};
  const auto once = le::attribute_embedding(table(raw), recipe, train);
  auto expect = embedding_of(Matrix(raw.transpose()));
  expect = le::l2_normalize(le::center(expect, train));
  EXPECT_LE((once.phi - expect.phi).cwiseAbs().maxCoeff(), 1e-15);

  le::EmbeddingRecipe l2_only;
  const auto twice = le::apply_recipe(le::apply_recipe(once, l2_only, train), l2_only, train);
  EXPECT_LE((twice.phi - once.phi).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_THROW(le::apply_recipe(once, recipe, train), le::Error);
}

TEST(Recipe, RangeChecks) {
  const auto e = embedding_of(Matrix::Identity(3, 4));
  le::EmbeddingRecipe r;
  r.svd_rank = 4;
  EXPECT_THROW(le::validate_recipe(e, r), le::Error);
  r.svd_rank.reset();
  r.sample_dims = std::make_pair(std::size_t{4}, std::uint64_t{0});
  EXPECT_THROW(le::validate_recipe(e, r), le::Error);
}

TEST(Embedding, ClosestToItselfAfterL2) {
  le::Rng rng(8);
  for (int trial = 0; trial < 20; ++trial) {
    const auto e = le::l2_normalize(embedding_of(testing_support::random_matrix(rng, 4, 7)));
    const Matrix gram = e.phi.transpose() * e.phi;
    for (Eigen::Index y = 0; y < gram.cols(); ++y) {
      Eigen::Index best = 0;
      gram.col(y).maxCoeff(&best);
      EXPECT_EQ(best, y);
    }
  }
}

TEST(Hierarchy, SevenNodeColumnAndNormalization) {
  TempDir dir("emb");
  write_file(dir.file("t.txt"), testing_support::kSevenNodeTree);
  const auto tree = le::load_taxonomy(dir.file("t.txt"));
  const auto raw = le::hierarchy_embedding_raw(tree, 4);
  const std::vector<double> expected{1, 0, 1, 0, 0, 1, 0};
  for (Eigen::Index z = 0; z < 7; ++z) EXPECT_EQ(raw.phi(z, 2), expected[static_cast<std::size_t>(z)]);
  const auto hle = le::hierarchy_embedding(tree, 4);
  EXPECT_NEAR(hle.phi(0, 2), 1.0 / std::sqrt(3.0), 1e-15);
  EXPECT_NEAR(hle.phi.col(2).norm(), 1.0, 1e-12);
  EXPECT_THROW(le::hierarchy_embedding(tree, 5), le::Error);
}

TEST(Hierarchy, RootOnlyAndChain) {
  TempDir dir("emb");
  write_file(dir.file("r.txt"), "0 -1 0\n");
  EXPECT_TRUE(le::hierarchy_embedding(le::load_taxonomy(dir.file("r.txt")), 1).phi == Matrix::Ones(1, 1));
  write_file(dir.file("c.txt"), "10 -1\n20 10\n30 20 0\n");
  const auto chain = le::hierarchy_embedding(le::load_taxonomy(dir.file("c.txt")), 1);
  for (Eigen::Index z = 0; z < 3; ++z) EXPECT_NEAR(chain.phi(z, 0), 1.0 / std::sqrt(3.0), 1e-15);
}

TEST(Hierarchy, InternalClassIncludesSelf) {
  TempDir dir("emb");
  write_file(dir.file("t.txt"), "1 -1\n2 1 0\n3 2 1\n");
  const auto raw = le::hierarchy_embedding_raw(le::load_taxonomy(dir.file("t.txt")), 2);
  EXPECT_TRUE(raw.phi == mat({{1, 1}, {1, 1}, {0, 1}}));
}

TEST(Hierarchy, SupportMatchesBruteForceWalk) {
  le::Rng rng(21);
  TempDir dir("emb");
  for (int trial = 0; trial < 25; ++trial) {
    const std::size_t m = 2 + rng.uniform_index(14);
    std::vector<std::pair<long long, long long>> edges;
    std::string text;
    std::vector<long long> ids;
    for (std::size_t i = 0; i < m; ++i) ids.push_back(static_cast<long long>(100 + 7 * i));
    for (std::size_t i = 0; i < m; ++i) {
      const long long parent = i == 0 ? -1 : ids[rng.uniform_index(i)];
      edges.emplace_back(ids[i], parent);
    }
    std::vector<std::size_t> order(m);
    std::iota(order.begin(), order.end(), 0);
    rng.shuffle(order);
    for (std::size_t k = 0; k < m; ++k) {
      const auto i = order[k];
      text += std::to_string(edges[i].first) + " " + std::to_string(edges[i].second) + " " + std::to_string(i) + "\n";
    }
    write_file(dir.file("t.txt"), text);
    const auto tree = le::load_taxonomy(dir.file("t.txt"));
    const auto raw = le::hierarchy_embedding_raw(tree, m);
    for (std::size_t y = 0; y < m; ++y) {
      const auto anc = oracle::ancestors(edges, ids[y]);
      for (std::size_t z = 0; z < m; ++z)
        EXPECT_EQ(raw.phi(static_cast<Eigen::Index>(z), static_cast<Eigen::Index>(y)),
                  anc.count(tree.node_ids[z]) ? 1.0 : 0.0);
    }
  }
}

TEST(Codes, OneVsRest) {
  const auto e = le::ovr_embedding(3);
  EXPECT_TRUE(e.phi == Matrix::Identity(3, 3));
  EXPECT_TRUE((e.phi.transpose() * e.phi).isDiagonal(0.0));
}

TEST(Codes, Gaussian) {
  const auto a = le::gaussian_embedding(50, 2500, 17);
  EXPECT_EQ(a.dim(), 2500u);
  EXPECT_EQ(a.num_classes(), 50u);
  EXPECT_TRUE(a.phi == le::gaussian_embedding(50, 2500, 17).phi);
  EXPECT_FALSE(a.phi == le::gaussian_embedding(50, 2500, 18).phi);
  const double n = static_cast<double>(a.phi.size());
  const double mean = a.phi.mean();
  const double var = (a.phi.array() - mean).square().sum() / (n - 1.0);
  EXPECT_LE(std::abs(mean), 3.0 / std::sqrt(n));
  EXPECT_LE(std::abs(var - 1.0), 3.0 * std::sqrt(2.0 / (n - 1.0)));
}

TEST(Codes, Hadamard) {
  EXPECT_TRUE(le::hadamard_embedding(2).phi == mat({{1, 1}, {1, -1}}));
  const Matrix h4 = mat({{1, 1, 1, 1}, {1, -1, 1, -1}, {1, 1, -1, -1}, {1, -1, -1, 1}});
  EXPECT_TRUE(le::hadamard_embedding(3).phi == h4.leftCols(3));
  for (std::size_t order : {1u, 2u, 8u, 64u}) {
    const Matrix h = le::sylvester_hadamard(order);
    EXPECT_TRUE(h.transpose() * h == static_cast<double>(order) * Matrix::Identity(h.rows(), h.cols()));
  }
  EXPECT_EQ(le::hadamard_embedding(5).dim(), 8u);
  EXPECT_THROW(le::sylvester_hadamard(6), le::Error);
}

TEST(External, LoadAlignAndNormalize) {
  TempDir dir("emb");
  write_file(dir.file("w.txt"), "cat,dog\n1,0\n2,0\n0,3\n0,4\n");
  const auto e = le::load_external_embedding(dir.file("w.txt"));
  EXPECT_EQ(e.dim(), 4u);
  EXPECT_EQ(e.num_classes(), 2u);
  EXPECT_EQ(e.source, le::EmbeddingSource::kExternal);
  const auto n = le::l2_normalize(e);
  EXPECT_NEAR(n.phi.col(0).norm(), 1.0, 1e-12);
  EXPECT_NEAR(n.phi.col(1).norm(), 1.0, 1e-12);
  try {
    le::load_external_embedding(dir.file("w.txt"), {"cat", "dog", "owl"});
    FAIL();
  } catch (const le::Error& err) {
    EXPECT_NE(std::string(err.what()).find("owl"), std::string::npos);
  }
  EXPECT_THROW(le::load_external_embedding(dir.file("w.txt"), {"dog", "cat"}), le::Error);
  EXPECT_NO_THROW(le::load_external_embedding(dir.file("w.txt"), {"cat", "dog"}));
}

TEST(External, WriteLoadRoundTrip) {
  TempDir dir("emb");
  le::Rng rng(2);
  const auto e = embedding_of(testing_support::random_matrix(rng, 5, 3));
  le::write_embedding(e, dir.file("e.txt"));
  EXPECT_TRUE(le::load_external_embedding(dir.file("e.txt")).phi == e.phi);
}

TEST(SvdReduce, GramPreservation) {
  le::Rng rng(4);
  const auto e = embedding_of(testing_support::random_matrix(rng, 85, 50));
  const auto full = le::svd_reduce(e, 50);
  EXPECT_LE((full.phi.transpose() * full.phi - e.phi.transpose() * e.phi).cwiseAbs().maxCoeff(), 1e-6);
  const auto r25 = le::svd_reduce(e, 25);
  EXPECT_EQ(r25.dim(), 25u);
  EXPECT_EQ(r25.num_classes(), 50u);
  const Matrix rank1 = testing_support::random_vector(rng, 6) * testing_support::random_vector(rng, 4).transpose();
  const auto one = le::svd_reduce(embedding_of(rank1), 1);
  EXPECT_LE((one.phi.transpose() * one.phi - rank1.transpose() * rank1).cwiseAbs().maxCoeff(), 1e-9);
  EXPECT_THROW(le::svd_reduce(e, 0), le::Error);
  EXPECT_THROW(le::svd_reduce(e, 51), le::Error);
}

TEST(SampleDims, PermutationDeterminismAndRange) {
  le::Rng rng(6);
  const auto e = embedding_of(testing_support::random_matrix(rng, 12, 4));
  const auto all = le::sample_dims(e, 12, 1);
  std::multiset<double> a(e.phi.col(0).begin(), e.phi.col(0).end());
  std::multiset<double> b(all.phi.col(0).begin(), all.phi.col(0).end());
  EXPECT_EQ(a, b);
  EXPECT_TRUE(le::sample_dims(e, 5, 3).phi == le::sample_dims(e, 5, 3).phi);
  std::set<std::set<double>> distinct;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto s = le::sample_dims(e, 5, seed);
    distinct.insert(std::set<double>(s.phi.col(0).begin(), s.phi.col(0).end()));
    EXPECT_EQ(distinct.rbegin()->size(), 5u);
  }
  EXPECT_GE(distinct.size(), 8u);
  EXPECT_THROW(le::sample_dims(e, 13, 0), le::Error);
}

TEST(FuseEarly, ShapesAndBlocks) {
  const auto a = le::ovr_embedding(2);
  const auto f = le::fuse_early(a, a);
  EXPECT_EQ(f.dim(), 4u);
  EXPECT_NEAR(f.phi.col(0).norm(), std::sqrt(2.0), 1e-15);
  EXPECT_TRUE(f.phi.topRows(2) == Matrix::Identity(2, 2));
  le::Rng rng(1);
  const auto g = le::fuse_early(embedding_of(testing_support::random_matrix(rng, 85, 50)),
                                embedding_of(testing_support::random_matrix(rng, 150, 50)));
  EXPECT_EQ(g.dim(), 235u);
  EXPECT_EQ(g.num_classes(), 50u);
  EXPECT_THROW(le::fuse_early(a, le::ovr_embedding(3)), le::Error);
}

TEST(ClassEmbedding, ValidateInvariants) {
  auto e = embedding_of(Matrix::Identity(2, 2));
  e.encoding = le::Encoding::kPlusMinus;
  EXPECT_THROW(e.validate(), le::Error);
  e.encoding = le::Encoding::kZeroOne;
  EXPECT_NO_THROW(e.validate());
  e.phi(0, 0) = 2.0;
  e.l2_normalized = true;
  EXPECT_THROW(e.validate(), le::Error);
  e.phi(0, 0) = std::nan("");
  EXPECT_THROW(e.validate(), le::Error);
}
