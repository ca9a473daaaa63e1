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

#include <cstring>
#include <set>

#include "oracles.hpp"

namespace le = labelembed;
using testing_support::read_file;
using testing_support::TempDir;
using testing_support::write_file;

namespace {

le::FeatureSet make_blocks(std::size_t classes, std::size_t per_class, std::size_t dim = 3) {
  le::FeatureSet fs;
  fs.num_classes = classes;
  fs.features.resize(static_cast<Eigen::Index>(classes * per_class), static_cast<Eigen::Index>(dim));
  for (std::size_t c = 0; c < classes; ++c)
    for (std::size_t s = 0; s < per_class; ++s) {
      const auto row = static_cast<Eigen::Index>(c * per_class + s);
      for (Eigen::Index d = 0; d < fs.features.cols(); ++d)
        fs.features(row, d) = static_cast<float>(c) + 0.01f * static_cast<float>(s) + 0.5f * static_cast<float>(d);
      fs.labels.push_back(static_cast<int>(c));
    }
  return fs;
}

template <typename F>
std::string error_of(F&& f) {
  try {
    f();
  } catch (const le::Error& e) {
    return e.what();
  }
  return "<no error>";
}

}  // namespace

TEST(LoadFeatures, MinimalCsv) {
  TempDir dir("ds");
  write_file(dir.file("f.csv"), "2,3,2\n0,1,2,3\n1,4,5,6\n");
  const auto fs = le::load_features(dir.file("f.csv"), le::FeatureFormat::kCsv);
  EXPECT_EQ(fs.size(), 2u);
  EXPECT_EQ(fs.dim(), 3u);
  EXPECT_EQ(fs.num_classes, 2u);
  EXPECT_EQ(fs.labels, (std::vector<int>{0, 1}));
  EXPECT_FLOAT_EQ(fs.features(1, 2), 6.0f);
}

TEST(LoadFeatures, LabelOutOfRange) {
  TempDir dir("ds");
  write_file(dir.file("f.csv"), "1,2,5\n7,0.5,0.5\n");
  EXPECT_NE(error_of([&] { le::load_features(dir.file("f.csv"), le::FeatureFormat::kCsv); }).find("label out of range"),
            std::string::npos);
}

TEST(LoadFeatures, NanNamesRowAndColumn) {
  TempDir dir("ds");
  write_file(dir.file("f.csv"), "2,3,2\n0,1,2,3\n1,4,NaN,6\n");
  const auto msg = error_of([&] { le::load_features(dir.file("f.csv"), le::FeatureFormat::kCsv); });
  EXPECT_NE(msg.find("row 1"), std::string::npos) << msg;
  EXPECT_NE(msg.find("column 1"), std::string::npos) << msg;
}

TEST(LoadFeatures, MalformedHeader) {
  TempDir dir("ds");
  write_file(dir.file("f.csv"), "2,three,2\n");
  EXPECT_NE(error_of([&] { le::load_features(dir.file("f.csv"), le::FeatureFormat::kCsv); }).find("malformed header"),
            std::string::npos);
  write_file(dir.file("f.bin"), "not a feature file at all");
  EXPECT_THROW(le::load_features(dir.file("f.bin"), le::FeatureFormat::kDenseBinary), le::Error);
}

TEST(LoadFeatures, BinaryRoundTripIsBitExact) {
  TempDir dir("ds");
  le::Rng rng(5);
  le::FeatureSet fs;
  fs.num_classes = 4;
  fs.features.resize(17, 9);
  for (Eigen::Index i = 0; i < fs.features.rows(); ++i) {
    for (Eigen::Index d = 0; d < fs.features.cols(); ++d) fs.features(i, d) = static_cast<float>(rng.normal() * 1e3);
    fs.labels.push_back(static_cast<int>(rng.uniform_index(4)));
  }
  fs.features(0, 0) = -0.0f;
  fs.features(1, 1) = std::numeric_limits<float>::denorm_min();
  le::write_features(fs, dir.file("a.bin"), le::FeatureFormat::kDenseBinary);
  const auto back = le::load_features(dir.file("a.bin"), le::FeatureFormat::kDenseBinary);
  ASSERT_EQ(back.labels, fs.labels);
  ASSERT_EQ(back.features.rows(), fs.features.rows());
  EXPECT_EQ(std::memcmp(back.features.data(), fs.features.data(), sizeof(float) * fs.features.size()), 0);
  le::write_features(back, dir.file("b.bin"), le::FeatureFormat::kDenseBinary);
  EXPECT_EQ(read_file(dir.file("a.bin")), read_file(dir.file("b.bin")));
}

TEST(LoadFeatures, CsvRoundTrip) {
  TempDir dir("ds");
  const auto fs = make_blocks(3, 4);
  le::write_features(fs, dir.file("a.csv"), le::FeatureFormat::kCsv);
  const auto back = le::load_features(dir.file("a.csv"), le::guess_feature_format(dir.file("a.csv")));
  EXPECT_EQ(back.labels, fs.labels);
  EXPECT_TRUE(back.features == fs.features);
}

TEST(LoadAttributes, ContinuousBinaryAndRagged) {
  TempDir dir("ds");
  write_file(dir.file("c.csv"), "0.9,0.1\n0.2,0.8\n");
  const auto cont = le::load_attributes(dir.file("c.csv"));
  EXPECT_FALSE(cont.is_binary);
  EXPECT_EQ(cont.num_classes(), 2u);
  EXPECT_DOUBLE_EQ(cont.assoc(1, 0), 0.2);

  write_file(dir.file("b.csv"), "# stripes,water\n1,0\n0,1\n");
  const auto bin = le::load_attributes(dir.file("b.csv"));
  EXPECT_TRUE(bin.is_binary);
  EXPECT_EQ(bin.attribute_names, (std::vector<std::string>{"stripes", "water"}));

  write_file(dir.file("pm.csv"), "1,-1\n-1,1\n");
  EXPECT_TRUE(le::load_attributes(dir.file("pm.csv")).is_binary);

  write_file(dir.file("r.csv"), "1,2,3\n4,5\n");
  EXPECT_NE(error_of([&] { le::load_attributes(dir.file("r.csv")); }).find("ragged row 2"), std::string::npos);

  write_file(dir.file("n.csv"), "1,inf\n4,5\n");
  EXPECT_THROW(le::load_attributes(dir.file("n.csv")), le::Error);
}

TEST(LoadTaxonomy, SevenNodeTree) {
  TempDir dir("ds");
  write_file(dir.file("t.txt"), testing_support::kSevenNodeTree);
  const auto tree = le::load_taxonomy(dir.file("t.txt"));
  EXPECT_EQ(tree.size(), 7u);
  ASSERT_EQ(tree.root(), 0);
  EXPECT_EQ(tree.num_children(tree.root()), 2u);
  EXPECT_EQ(tree.node_names[0], "root");
  EXPECT_EQ(tree.class_to_node.at(2), 5);
}

TEST(LoadTaxonomy, TrivialAndErrors) {
  TempDir dir("ds");
  write_file(dir.file("one.txt"), "0 -1 0\n");
  const auto one = le::load_taxonomy(dir.file("one.txt"));
  EXPECT_EQ(one.size(), 1u);
  EXPECT_EQ(one.root(), 0);

  write_file(dir.file("two.txt"), "0 -1\n1 -1\n");
  EXPECT_NE(error_of([&] { le::load_taxonomy(dir.file("two.txt")); }).find("multiple roots"), std::string::npos);
  write_file(dir.file("dangle.txt"), "0 -1\n1 9\n");
  EXPECT_NE(error_of([&] { le::load_taxonomy(dir.file("dangle.txt")); }).find("dangling parent"), std::string::npos);
  write_file(dir.file("cycle.txt"), "0 -1\n1 2\n2 1\n");
  EXPECT_NE(error_of([&] { le::load_taxonomy(dir.file("cycle.txt")); }).find("cycle"), std::string::npos);
  write_file(dir.file("self.txt"), "0 -1\n1 1\n");
  EXPECT_NE(error_of([&] { le::load_taxonomy(dir.file("self.txt")); }).find("cycle"), std::string::npos);
}

TEST(MakeSplit, ZeroShotDisjoint) {
  const auto fs = make_blocks(50, 4);
  le::SplitSpec spec;
  for (int c = 0; c < 40; ++c) spec.train_classes.push_back(c);
  for (int c = 40; c < 50; ++c) spec.eval_classes.push_back(c);
  ASSERT_TRUE(spec.zero_shot());
  const auto split = le::make_split(fs, spec);
  EXPECT_EQ(split.train.size(), 160u);
  EXPECT_EQ(split.eval.size(), 40u);
  const auto tr = split.train.classes();
  const auto ev = split.eval.classes();
  std::vector<int> both;
  std::set_intersection(tr.begin(), tr.end(), ev.begin(), ev.end(), std::back_inserter(both));
  EXPECT_TRUE(both.empty());
}

TEST(MakeSplit, FewShotCapTakesExactlyK) {
  const auto fs = make_blocks(3, 100);
  le::SplitSpec spec;
  spec.train_classes = {0, 1};
  spec.eval_classes = {2};
  spec.per_class_train_cap = 2;
  spec.seed = 9;
  EXPECT_FALSE(spec.zero_shot());
  const auto split = le::make_split(fs, spec);
  std::size_t from_eval_class = 0;
  for (std::size_t i = 0; i < split.train.size(); ++i) from_eval_class += split.train.label(i) == 2;
  EXPECT_EQ(from_eval_class, 2u);
  EXPECT_EQ(split.eval.size(), 50u);
}

TEST(MakeSplit, FractionAndDeterminism) {
  const auto fs = make_blocks(4, 20);
  le::SplitSpec spec;
  spec.train_classes = {0, 1, 2, 3};
  spec.eval_classes = {0, 1, 2, 3};
  spec.train_fraction = 0.5;
  spec.seed = 3;
  const auto a = le::make_split(fs, spec);
  const auto b = le::make_split(fs, spec);
  EXPECT_TRUE(std::equal(a.train.rows().begin(), a.train.rows().end(), b.train.rows().begin(), b.train.rows().end()));
  EXPECT_TRUE(std::equal(a.eval.rows().begin(), a.eval.rows().end(), b.eval.rows().begin(), b.eval.rows().end()));
  EXPECT_EQ(a.train.size(), 4u * 5u);
  spec.seed = 4;
  const auto c = le::make_split(fs, spec);
  EXPECT_FALSE(std::equal(a.train.rows().begin(), a.train.rows().end(), c.train.rows().begin(), c.train.rows().end()));
}

TEST(MakeSplit, NoSampleInBothAndCountsBounded) {
  le::Rng rng(11);
  for (int trial = 0; trial < 30; ++trial) {
    const auto fs = make_blocks(6, 1 + rng.uniform_index(9));
    le::SplitSpec spec;
    for (int c = 0; c < 6; ++c) {
      const auto r = rng.uniform_index(3);
      if (r != 1) spec.train_classes.push_back(c);
      if (r != 0) spec.eval_classes.push_back(c);
    }
    if (spec.train_classes.empty()) spec.train_classes.push_back(0);
    if (rng.uniform_index(2)) spec.per_class_train_cap = 1 + rng.uniform_index(4);
    if (rng.uniform_index(2)) spec.train_fraction = 0.1 + 0.9 * rng.uniform01();
    spec.seed = rng.next_u64();
    const auto split = le::make_split(fs, spec);
    EXPECT_LE(split.train.size() + split.eval.size(), fs.size());
    std::set<std::size_t> train_rows(split.train.rows().begin(), split.train.rows().end());
    for (auto r : split.eval.rows()) EXPECT_FALSE(train_rows.count(r));
  }
}

TEST(MakeSplit, Errors) {
  const auto fs = make_blocks(3, 2);
  le::SplitSpec spec;
  spec.eval_classes = {1};
  EXPECT_NE(error_of([&] { le::make_split(fs, spec); }).find("empty train split"), std::string::npos);
  spec.train_classes = {7};
  EXPECT_THROW(le::make_split(fs, spec), le::Error);
  spec.train_classes = {0};
  spec.per_class_train_cap = 0;
  EXPECT_THROW(le::make_split(fs, spec), le::Error);
}

TEST(StratifiedHoldout, FloorPerClass) {
  const auto fs = make_blocks(3, 11);
  const le::SampleView all(fs);
  const auto [keep, held] = le::stratified_holdout(all, 0.2, 1);
  EXPECT_EQ(held.size(), 6u);
  EXPECT_EQ(keep.size(), 27u);
  for (int c = 0; c < 3; ++c) {
    std::size_t n = 0;
    for (std::size_t i = 0; i < held.size(); ++i) n += held.label(i) == c;
    EXPECT_EQ(n, 2u);
  }
}

TEST(FeatureSet, ValidateRejectsBadShapes) {
  le::FeatureSet fs;
  EXPECT_THROW(fs.validate(), le::Error);
  fs = make_blocks(2, 2);
  fs.features(0, 0) = std::numeric_limits<float>::infinity();
  EXPECT_THROW(fs.validate(), le::Error);
}

TEST(Rng, SplitmixAndReproducibility) {
  le::Rng a(42), b(42);
  for (int i = 0; i < 100; ++i) ASSERT_EQ(a.next_u64(), b.next_u64());
  EXPECT_NE(le::derive_seed(1, 2), le::derive_seed(1, 3));
  EXPECT_EQ(le::splitmix64(0), 0xE220A8397B1DCDAFull);
  le::Rng r(7);
  for (int i = 0; i < 1000; ++i) {
    const double u = r.uniform01();
    ASSERT_GE(u, 0.0);
    ASSERT_LT(u, 1.0);
    ASSERT_LT(r.uniform_index(7), 7u);
  }
}
