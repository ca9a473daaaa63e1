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
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "labelembed/common.hpp"

namespace labelembed {

// N x D feature matrix with one class label per row.
struct FeatureSet {
  FeatureMatrix features;
  std::vector<int> labels;
  std::size_t num_classes = 0;
  std::vector<std::string> class_names;  // empty, or num_classes entries

  std::size_t size() const { return labels.size(); }
  std::size_t dim() const { return static_cast<std::size_t>(features.cols()); }

  void validate() const {
    if (labels.empty()) fail("feature set is empty (N = 0)");
    if (features.cols() == 0) fail("feature set has no dimensions (D = 0)");
    if (static_cast<std::size_t>(features.rows()) != labels.size())
      fail("feature rows (", features.rows(), ") != labels (", labels.size(), ")");
    if (!class_names.empty() && class_names.size() != num_classes)
      fail("expected ", num_classes, " class names, got ", class_names.size());
    for (std::size_t n = 0; n < labels.size(); ++n) {
      if (labels[n] < 0 || static_cast<std::size_t>(labels[n]) >= num_classes)
        fail("label out of range: row ", n, " has label ", labels[n], " but C = ", num_classes);
      for (Eigen::Index d = 0; d < features.cols(); ++d)
        if (!std::isfinite(features(static_cast<Eigen::Index>(n), d)))
          fail("non-finite value at row ", n, ", column ", d);
    }
  }
};

// A subset of rows of a FeatureSet. Holds a pointer to the base set, which
// must outlive the view.
class SampleView {
 public:
  explicit SampleView(const FeatureSet& base) : base_(&base), rows_(base.size()) {
    for (std::size_t i = 0; i < rows_.size(); ++i) rows_[i] = i;
  }
  SampleView(const FeatureSet& base, std::vector<std::size_t> rows)
      : base_(&base), rows_(std::move(rows)) {
    for (auto r : rows_)
      if (r >= base.size()) fail("sample view row ", r, " out of range (N = ", base.size(), ")");
  }

  std::size_t size() const { return rows_.size(); }
  bool empty() const { return rows_.empty(); }
  std::size_t dim() const { return base_->dim(); }
  std::size_t num_classes() const { return base_->num_classes; }
  const FeatureSet& base() const { return *base_; }
  std::span<const std::size_t> rows() const { return rows_; }

  auto row(std::size_t i) const { return base_->features.row(static_cast<Eigen::Index>(rows_[i])); }
  Vector row_d(std::size_t i) const { return row(i).transpose().cast<double>(); }
  int label(std::size_t i) const { return base_->labels[rows_[i]]; }

  // Sorted distinct labels present in the view.
  std::vector<int> classes() const {
    std::set<int> s;
    for (std::size_t i = 0; i < size(); ++i) s.insert(label(i));
    return {s.begin(), s.end()};
  }

  // Materialize as an independent FeatureSet.
  FeatureSet materialize() const {
    FeatureSet out;
    out.features.resize(static_cast<Eigen::Index>(size()), base_->features.cols());
    out.labels.resize(size());
    for (std::size_t i = 0; i < size(); ++i) {
      out.features.row(static_cast<Eigen::Index>(i)) = row(i);
      out.labels[i] = label(i);
    }
    out.num_classes = base_->num_classes;
    out.class_names = base_->class_names;
    return out;
  }

 private:
  const FeatureSet* base_;
  std::vector<std::size_t> rows_;
};

// C x E class/attribute association strengths.
struct AttributeTable {
  Matrix assoc;
  std::vector<std::string> attribute_names;
  bool is_binary = false;

  std::size_t num_classes() const { return static_cast<std::size_t>(assoc.rows()); }
  std::size_t num_attributes() const { return static_cast<std::size_t>(assoc.cols()); }

  // True when every entry is 0/1, or every entry is -1/+1.
  static bool detect_binary(const Matrix& m) {
    if (m.size() == 0) return false;
    const bool zero_one = (m.array() == 0.0 || m.array() == 1.0).all();
    const bool plus_minus = (m.array() == -1.0 || m.array() == 1.0).all();
    return zero_one || plus_minus;
  }
  bool is_zero_one() const { return (assoc.array() == 0.0 || assoc.array() == 1.0).all(); }

  void validate() const {
    if (!assoc.allFinite()) fail("attribute table has non-finite entries");
    if (is_binary && !detect_binary(assoc)) fail("attribute table flagged binary but is not");
    if (!attribute_names.empty() && attribute_names.size() != num_attributes())
      fail("expected ", num_attributes(), " attribute names, got ", attribute_names.size());
  }
};

// Rooted tree; classes map onto nodes (leaf or internal).
struct TaxonomyTree {
  std::vector<long long> node_ids;         // sorted ascending; position = embedding dim
  std::vector<std::string> node_names;     // parallel to node_ids, may be empty strings
  std::vector<int> parent;                 // position of parent, -1 for the root
  std::map<int, int> class_to_node;        // class id -> node position

  std::size_t size() const { return node_ids.size(); }

  int root() const {
    for (std::size_t i = 0; i < parent.size(); ++i)
      if (parent[i] < 0) return static_cast<int>(i);
    return -1;
  }

  std::size_t num_children(int node) const {
    return static_cast<std::size_t>(std::count(parent.begin(), parent.end(), node));
  }

  // Node positions from `node` up to the root, self first.
  std::vector<int> path_to_root(int node) const {
    std::vector<int> path;
    for (int cur = node; cur >= 0; cur = parent[static_cast<std::size_t>(cur)]) {
      path.push_back(cur);
      if (path.size() > parent.size()) fail("taxonomy: cycle detected");
    }
    return path;
  }
};

struct SplitSpec {
  std::vector<int> train_classes;
  std::vector<int> eval_classes;
  std::optional<std::size_t> per_class_train_cap;  // few-shot k
  std::optional<double> train_fraction;            // in (0, 1]
  std::uint64_t seed = 0;

  bool zero_shot() const {
    if (per_class_train_cap && *per_class_train_cap > 0) return false;
    std::set<int> a(train_classes.begin(), train_classes.end());
    for (int c : eval_classes)
      if (a.count(c)) return false;
    return true;
  }
};

struct Split {
  SampleView train;
  SampleView eval;
};

enum class FeatureFormat { kDenseBinary, kCsv };

inline constexpr std::uint64_t kFeatureMagic = 0x3154414546454C41ull;  // "ALEFEAT1"
inline constexpr std::uint64_t kFeatureVersion = 1;

// Dense binary layout, all little-endian:
//   u64 magic, u64 version, u64 N, u64 D, u64 C,
//   N*D f32 row-major features, N u32 labels.
inline void write_features_binary(const FeatureSet& fs, const std::string& path) {
  auto out = io::open_out(path, true);
  io::put_u64(out, kFeatureMagic);
  io::put_u64(out, kFeatureVersion);
  io::put_u64(out, fs.size());
  io::put_u64(out, fs.dim());
  io::put_u64(out, fs.num_classes);
  for (Eigen::Index n = 0; n < fs.features.rows(); ++n)
    for (Eigen::Index d = 0; d < fs.features.cols(); ++d) io::put_f32(out, fs.features(n, d));
  for (int y : fs.labels) io::put_u32(out, static_cast<std::uint32_t>(y));
  if (!out) fail("write failed for '", path, "'");
}

// CSV layout: first line `N,D,C`; then N lines `label,f_1,...,f_D`.
inline void write_features_csv(const FeatureSet& fs, const std::string& path) {
  auto out = io::open_out(path);
  out << fs.size() << ',' << fs.dim() << ',' << fs.num_classes << '\n';
  for (Eigen::Index n = 0; n < fs.features.rows(); ++n) {
    out << fs.labels[static_cast<std::size_t>(n)];
    for (Eigen::Index d = 0; d < fs.features.cols(); ++d) {
      char buf[32];
      std::snprintf(buf, sizeof(buf), "%.9g", static_cast<double>(fs.features(n, d)));
      out << ',' << buf;
    }
    out << '\n';
  }
  if (!out) fail("write failed for '", path, "'");
}

inline void write_features(const FeatureSet& fs, const std::string& path, FeatureFormat format) {
  if (format == FeatureFormat::kDenseBinary)
    write_features_binary(fs, path);
  else
    write_features_csv(fs, path);
}

namespace detail {

inline FeatureSet load_features_binary(const std::string& path) {
  auto in = io::open_in(path, true);
  if (io::get_u64(in, "magic") != kFeatureMagic) fail("malformed header in '", path, "': bad magic");
  const auto version = io::get_u64(in, "version");
  if (version != kFeatureVersion) fail("malformed header in '", path, "': unsupported version ", version);
  const auto n = io::get_u64(in, "N");
  const auto d = io::get_u64(in, "D");
  const auto c = io::get_u64(in, "C");
  if (n == 0 || d == 0 || c == 0) fail("malformed header in '", path, "': N, D, C must be >= 1");
  if (n > (1ull << 40) / d) fail("malformed header in '", path, "': N*D too large");
  FeatureSet fs;
  fs.num_classes = c;
  fs.features.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(d));
  for (std::uint64_t r = 0; r < n; ++r)
    for (std::uint64_t k = 0; k < d; ++k) {
      const float v = io::get_f32(in, "features");
      if (!std::isfinite(v)) fail("non-finite value at row ", r, ", column ", k, " in '", path, "'");
      fs.features(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(k)) = v;
    }
  fs.labels.resize(n);
  for (std::uint64_t r = 0; r < n; ++r) {
    const auto y = io::get_u32(in, "labels");
    if (y >= c) fail("label out of range: row ", r, " has label ", y, " but C = ", c);
    fs.labels[r] = static_cast<int>(y);
  }
  fs.validate();
  return fs;
}

inline FeatureSet load_features_csv(const std::string& path) {
  auto in = io::open_in(path);
  std::string line;
  if (!std::getline(in, line)) fail("malformed header in '", path, "': empty file");
  const auto header = io::split_csv(line);
  long long n = 0, d = 0, c = 0;
  if (header.size() != 3 || !io::parse_int(header[0], n) || !io::parse_int(header[1], d) ||
      !io::parse_int(header[2], c) || n < 1 || d < 1 || c < 1)
    fail("malformed header in '", path, "': expected `N,D,C` with positive integers");
  FeatureSet fs;
  fs.num_classes = static_cast<std::size_t>(c);
  fs.features.resize(n, d);
  fs.labels.resize(static_cast<std::size_t>(n));
  long long row = 0;
  while (std::getline(in, line)) {
    if (io::trim(line).empty()) continue;
    if (row >= n) fail("'", path, "': more rows than header N = ", n);
    const auto cells = io::split_csv(line);
    if (static_cast<long long>(cells.size()) != d + 1)
      fail("'", path, "': row ", row, " has ", cells.size(), " cells, expected ", d + 1);
    long long y = 0;
    if (!io::parse_int(cells[0], y)) fail("'", path, "': row ", row, " has a malformed label");
    if (y < 0 || y >= c) fail("label out of range: row ", row, " has label ", y, " but C = ", c);
    fs.labels[static_cast<std::size_t>(row)] = static_cast<int>(y);
    for (long long k = 0; k < d; ++k) {
      double v = 0;
      if (!io::parse_real(cells[static_cast<std::size_t>(k + 1)], v))
        fail("'", path, "': unparsable value at row ", row, ", column ", k);
      if (!std::isfinite(v) || !std::isfinite(static_cast<float>(v)))
        fail("non-finite value at row ", row, ", column ", k, " in '", path, "'");
      fs.features(row, k) = static_cast<float>(v);
    }
    ++row;
  }
  if (row != n) fail("'", path, "': header declares N = ", n, " rows, found ", row);
  fs.validate();
  return fs;
}

}  // namespace detail

inline FeatureSet load_features(const std::string& path, FeatureFormat format) {
  return format == FeatureFormat::kDenseBinary ? detail::load_features_binary(path)
                                               : detail::load_features_csv(path);
}

// Guess the format from the extension: `.csv` is CSV, anything else binary.
inline FeatureFormat guess_feature_format(const std::string& path) {
  return path.size() >= 4 && path.substr(path.size() - 4) == ".csv" ? FeatureFormat::kCsv
                                                                    : FeatureFormat::kDenseBinary;
}

// C rows of E comma-separated reals. An optional first line starting with
// `#` carries attribute names.
inline AttributeTable load_attributes(const std::string& path) {
  auto in = io::open_in(path);
  AttributeTable tab;
  std::vector<std::vector<double>> rows;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto t = io::trim(line);
    if (t.empty()) continue;
    if (t.front() == '#') {
      if (rows.empty() && tab.attribute_names.empty()) tab.attribute_names = io::split_csv(t.substr(1));
      continue;
    }
    const auto cells = io::split_csv(t);
    std::vector<double> values(cells.size());
    for (std::size_t k = 0; k < cells.size(); ++k) {
      if (!io::parse_real(cells[k], values[k]))
        fail("'", path, "': unparsable value in row ", rows.size() + 1, ", column ", k + 1);
      if (!std::isfinite(values[k]))
        fail("'", path, "': non-finite entry in row ", rows.size() + 1, ", column ", k + 1);
    }
    if (!rows.empty() && values.size() != rows.front().size())
      fail("ragged row ", rows.size() + 1, " in '", path, "': ", values.size(), " columns, expected ",
           rows.front().size());
    rows.push_back(std::move(values));
  }
  if (rows.empty()) fail("'", path, "': attribute table is empty");
  tab.assoc.resize(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(rows.front().size()));
  for (std::size_t r = 0; r < rows.size(); ++r)
    for (std::size_t k = 0; k < rows[r].size(); ++k)
      tab.assoc(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(k)) = rows[r][k];
  tab.is_binary = AttributeTable::detect_binary(tab.assoc);
  if (!tab.attribute_names.empty() && tab.attribute_names.size() != tab.num_attributes())
    fail("'", path, "': ", tab.attribute_names.size(), " attribute names for ", tab.num_attributes(),
         " columns");
  return tab;
}

inline void write_attributes(const AttributeTable& tab, const std::string& path) {
  auto out = io::open_out(path);
  if (!tab.attribute_names.empty()) {
    out << '#';
    for (std::size_t k = 0; k < tab.attribute_names.size(); ++k)
      out << (k ? "," : "") << tab.attribute_names[k];
    out << '\n';
  }
  for (Eigen::Index r = 0; r < tab.assoc.rows(); ++r) {
    for (Eigen::Index k = 0; k < tab.assoc.cols(); ++k)
      out << (k ? "," : "") << io::format_real(tab.assoc(r, k));
    out << '\n';
  }
}

// Parent-list text. One node per line:
//   node_id parent_id [class_id|-] [name]
// The root has parent -1. `#` starts a comment line.
inline TaxonomyTree load_taxonomy(const std::string& path) {
  auto in = io::open_in(path);
  struct Entry {
    long long id, parent;
    std::optional<long long> cls;
    std::string name;
  };
  std::vector<Entry> entries;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto t = io::trim(line);
    if (t.empty() || t.front() == '#') continue;
    std::istringstream ss(t);
    std::string a, b, c, name;
    ss >> a >> b >> c;
    std::getline(ss, name);
    Entry e{};
    if (!io::parse_int(a, e.id) || !io::parse_int(b, e.parent))
      fail("'", path, "' line ", line_no, ": expected `node_id parent_id`");
    if (!c.empty() && c != "-") {
      long long cls = 0;
      if (!io::parse_int(c, cls) || cls < 0) fail("'", path, "' line ", line_no, ": bad class id '", c, "'");
      e.cls = cls;
    }
    e.name = io::trim(name);
    entries.push_back(std::move(e));
  }
  if (entries.empty()) fail("'", path, "': taxonomy is empty");
  std::sort(entries.begin(), entries.end(), [](const Entry& x, const Entry& y) { return x.id < y.id; });

  TaxonomyTree tree;
  std::map<long long, int> position;
  for (const auto& e : entries) {
    if (position.count(e.id)) fail("taxonomy: duplicate node ", e.id);
    position[e.id] = static_cast<int>(tree.node_ids.size());
    tree.node_ids.push_back(e.id);
    tree.node_names.push_back(e.name);
  }
  int roots = 0;
  tree.parent.resize(entries.size());
  for (std::size_t i = 0; i < entries.size(); ++i) {
    const auto& e = entries[i];
    if (e.parent == -1) {
      tree.parent[i] = -1;
      ++roots;
    } else {
      auto it = position.find(e.parent);
      if (it == position.end()) fail("taxonomy: dangling parent ", e.parent, " of node ", e.id);
      if (it->second == static_cast<int>(i)) fail("taxonomy: cycle detected at node ", e.id);
      tree.parent[i] = it->second;
    }
    if (e.cls) {
      if (tree.class_to_node.count(static_cast<int>(*e.cls))) fail("taxonomy: class ", *e.cls, " mapped twice");
      tree.class_to_node[static_cast<int>(*e.cls)] = static_cast<int>(i);
    }
  }
  if (roots == 0) fail("taxonomy: no root (parent -1) found");
  if (roots > 1) fail("taxonomy: multiple roots (", roots, ")");
  // Every node must reach the root; a walk longer than M means a cycle.
  for (std::size_t i = 0; i < tree.size(); ++i) {
    std::size_t steps = 0;
    for (int cur = static_cast<int>(i); cur >= 0; cur = tree.parent[static_cast<std::size_t>(cur)])
      if (++steps > tree.size()) fail("taxonomy: cycle detected through node ", tree.node_ids[i]);
  }
  return tree;
}

// Deterministic partition. Per class, in ascending class id:
//   train-only class   every sample joins the training pool
//   eval-only class    without a cap: every sample is evaluated (zero-shot);
//                      with a cap k: shuffled, ceil(n/2) form the pool, the
//                      rest are evaluated, min(k, pool) pool samples train
//   class in both      shuffled, ceil(n/2) pool, rest evaluated
// train_fraction f then keeps ceil(f * pool) (at least 1) of every pool.
inline Split make_split(const FeatureSet& fs, const SplitSpec& spec) {
  if (spec.per_class_train_cap && *spec.per_class_train_cap < 1) fail("split: per-class cap must be >= 1");
  if (spec.train_fraction && !(*spec.train_fraction > 0.0 && *spec.train_fraction <= 1.0))
    fail("split: train_fraction must be in (0, 1]");
  std::set<int> train_set(spec.train_classes.begin(), spec.train_classes.end());
  std::set<int> eval_set(spec.eval_classes.begin(), spec.eval_classes.end());
  for (int c : train_set)
    if (c < 0 || static_cast<std::size_t>(c) >= fs.num_classes) fail("split: train class ", c, " out of range");
  for (int c : eval_set)
    if (c < 0 || static_cast<std::size_t>(c) >= fs.num_classes) fail("split: eval class ", c, " out of range");

  std::map<int, std::vector<std::size_t>> by_class;
  for (std::size_t n = 0; n < fs.size(); ++n) by_class[fs.labels[n]].push_back(n);

  Rng rng(derive_seed(spec.seed, 0x53504C4954ull));
  std::vector<std::size_t> train_rows, eval_rows;
  std::set<int> all(train_set);
  all.insert(eval_set.begin(), eval_set.end());
  for (int c : all) {
    auto rows = by_class[c];
    const bool in_train = train_set.count(c) > 0;
    const bool in_eval = eval_set.count(c) > 0;
    std::vector<std::size_t> pool;
    if (in_train && !in_eval) {
      pool = rows;
    } else if (!in_train && !spec.per_class_train_cap) {
      eval_rows.insert(eval_rows.end(), rows.begin(), rows.end());
      continue;
    } else {
      rng.shuffle(rows);
      const std::size_t half = (rows.size() + 1) / 2;
      pool.assign(rows.begin(), rows.begin() + static_cast<std::ptrdiff_t>(half));
      eval_rows.insert(eval_rows.end(), rows.begin() + static_cast<std::ptrdiff_t>(half), rows.end());
      if (!in_train) {
        rng.shuffle(pool);
        pool.resize(std::min(*spec.per_class_train_cap, pool.size()));
      }
    }
    if (spec.train_fraction && !pool.empty()) {
      rng.shuffle(pool);
      const auto keep = std::max<std::size_t>(
          1, static_cast<std::size_t>(std::ceil(*spec.train_fraction * static_cast<double>(pool.size()) - 1e-9)));
      pool.resize(std::min(keep, pool.size()));
    }
    train_rows.insert(train_rows.end(), pool.begin(), pool.end());
  }
  if (train_rows.empty()) fail("split: empty train split");
  std::sort(train_rows.begin(), train_rows.end());
  std::sort(eval_rows.begin(), eval_rows.end());
  return Split{SampleView(fs, std::move(train_rows)), SampleView(fs, std::move(eval_rows))};
}

// Class-stratified holdout: per class (ascending), shuffle and move
// floor(fraction * n) rows to the second view.
inline std::pair<SampleView, SampleView> stratified_holdout(const SampleView& data, double fraction,
                                                            std::uint64_t seed) {
  std::map<int, std::vector<std::size_t>> by_class;
  for (std::size_t i = 0; i < data.size(); ++i) by_class[data.label(i)].push_back(data.rows()[i]);
  Rng rng(derive_seed(seed, 0x484F4C44ull));
  std::vector<std::size_t> keep, held;
  for (auto& [c, rows] : by_class) {
    rng.shuffle(rows);
    const auto n_held = static_cast<std::size_t>(std::floor(fraction * static_cast<double>(rows.size())));
    held.insert(held.end(), rows.begin(), rows.begin() + static_cast<std::ptrdiff_t>(n_held));
    keep.insert(keep.end(), rows.begin() + static_cast<std::ptrdiff_t>(n_held), rows.end());
  }
  std::sort(keep.begin(), keep.end());
  std::sort(held.begin(), held.end());
  return {SampleView(data.base(), std::move(keep)), SampleView(data.base(), std::move(held))};
}

}  // namespace labelembed
