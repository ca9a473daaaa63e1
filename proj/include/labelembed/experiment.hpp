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
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "labelembed/common.hpp"
#include "labelembed/compat.hpp"
#include "labelembed/dap.hpp"
#include "labelembed/dataset.hpp"
#include "labelembed/embedding.hpp"
#include "labelembed/eval.hpp"
#include "labelembed/train.hpp"

namespace labelembed {

inline constexpr const char* kVersion = "0.3.0";

// Error tagged with the pipeline stage that raised it.
class StageError : public Error {
 public:
  StageError(std::string stage, const std::string& message)
      : Error("[" + stage + "] " + message), stage_(std::move(stage)) {}
  const std::string& stage() const { return stage_; }

 private:
  std::string stage_;
};

// Flat `section.key = value` text with `#` comments. Later assignments win.
class KeyValueConfig {
 public:
  static KeyValueConfig parse(const std::string& text, const std::string& origin = "<config>") {
    KeyValueConfig cfg;
    std::istringstream in(text);
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
      ++line_no;
      const auto hash = line.find('#');
      const auto t = io::trim(hash == std::string::npos ? line : line.substr(0, hash));
      if (t.empty()) continue;
      const auto eq = t.find('=');
      if (eq == std::string::npos) fail(origin, ":", line_no, ": expected `key = value`");
      const auto key = io::trim(t.substr(0, eq));
      if (key.empty()) fail(origin, ":", line_no, ": empty key");
      cfg.values_[key] = io::trim(t.substr(eq + 1));
    }
    return cfg;
  }

  static KeyValueConfig load(const std::string& path) {
    auto in = io::open_in(path);
    std::stringstream ss;
    ss << in.rdbuf();
    return parse(ss.str(), path);
  }

  void set(const std::string& key, const std::string& value) { values_[key] = value; }
  bool has(const std::string& key) const { return values_.count(key) > 0; }
  const std::map<std::string, std::string>& values() const { return values_; }

  std::string get(const std::string& key, const std::string& fallback = "") const {
    auto it = values_.find(key);
    return it == values_.end() ? fallback : it->second;
  }

  // Canonical dump: sorted `key = value` lines.
  std::string canonical() const {
    std::string out;
    for (const auto& [k, v] : values_) out += k + " = " + v + "\n";
    return out;
  }

 private:
  std::map<std::string, std::string> values_;
};

namespace config_parse {

inline bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "yes" || v == "1" || v == "on") return true;
  if (v == "false" || v == "no" || v == "0" || v == "off") return false;
  fail("config key '", key, "': expected a boolean, got '", v, "'");
}

inline double to_real(const std::string& key, const std::string& v) {
  double out = 0;
  if (!io::parse_real(v, out) || !std::isfinite(out)) fail("config key '", key, "': expected a number, got '", v, "'");
  return out;
}

inline long long to_int(const std::string& key, const std::string& v) {
  long long out = 0;
  if (!io::parse_int(v, out)) fail("config key '", key, "': expected an integer, got '", v, "'");
  return out;
}

inline std::vector<double> real_list(const std::string& key, const std::string& v) {
  std::vector<double> out;
  if (io::trim(v).empty()) return out;
  for (const auto& tok : io::split_csv(v)) out.push_back(to_real(key, tok));
  return out;
}

// Comma list of integers or inclusive ranges `a-b`.
inline std::vector<int> int_list(const std::string& key, const std::string& v) {
  std::vector<int> out;
  if (io::trim(v).empty()) return out;
  for (const auto& tok : io::split_csv(v)) {
    const auto dash = tok.find('-', 1);
    if (dash == std::string::npos) {
      out.push_back(static_cast<int>(to_int(key, tok)));
    } else {
      const auto lo = to_int(key, io::trim(tok.substr(0, dash)));
      const auto hi = to_int(key, io::trim(tok.substr(dash + 1)));
      if (hi < lo) fail("config key '", key, "': empty range '", tok, "'");
      for (auto i = lo; i <= hi; ++i) out.push_back(static_cast<int>(i));
    }
  }
  return out;
}

}  // namespace config_parse

enum class Objective { kRanking, kSsvm, kRidge, kDap };
enum class Protocol { kZeroShot, kFewShot, kFull };

struct ExperimentConfig {
  // data
  std::string features_path;
  std::string attributes_path;
  std::string taxonomy_path;
  std::string external_embedding_path;
  // embedding
  std::string source = "attribute";
  std::string late_with;  // second embedding source for late fusion, empty: none
  EmbeddingRecipe recipe;
  std::vector<std::size_t> dims;  // E grid for gaussian embeddings
  // split
  Protocol protocol = Protocol::kZeroShot;
  std::vector<int> train_classes;
  std::vector<int> eval_classes;
  std::vector<std::size_t> shots;
  std::vector<double> train_fractions;
  // train
  Objective objective = Objective::kRanking;
  bool learn_W = true;
  bool learn_Phi = false;
  bool warm_start = false;
  std::vector<double> etas{0.01};
  std::vector<double> mus{0.0};
  std::vector<double> lambdas{1.0};
  std::size_t epochs = 50;
  std::size_t patience = 5;
  double validation_fraction = 0.2;
  double init_scale = 1e-3;
  // run
  std::size_t repeats = 1;
  std::uint64_t seed = 0;
  std::string output_dir = "out";

  KeyValueConfig raw;

  static ExperimentConfig from(const KeyValueConfig& kv) {
    using namespace config_parse;
    static const std::set<std::string> known = {
        "data.features", "data.attributes", "data.taxonomy", "data.embedding",
        "embedding.source", "embedding.late_with", "embedding.encoding", "embedding.threshold",
        "embedding.center", "embedding.l2", "embedding.svd_rank", "embedding.sample_dims",
        "embedding.sample_seed", "embedding.dim",
        "split.mode", "split.train_classes", "split.eval_classes", "split.shots", "split.train_fractions",
        "train.objective", "train.learn", "train.warm_start", "train.eta", "train.mu", "train.lambda",
        "train.epochs", "train.patience", "train.validation_fraction", "train.init_scale",
        "run.repeats", "run.seed", "run.output"};
    for (const auto& [k, v] : kv.values())
      if (!known.count(k)) fail("unknown config key '", k, "'");

    ExperimentConfig c;
    c.raw = kv;
    c.features_path = kv.get("data.features");
    c.attributes_path = kv.get("data.attributes");
    c.taxonomy_path = kv.get("data.taxonomy");
    c.external_embedding_path = kv.get("data.embedding");
    if (c.features_path.empty()) fail("config: data.features is required");

    c.source = kv.get("embedding.source", "attribute");
    c.late_with = kv.get("embedding.late_with");
    const auto enc = kv.get("embedding.encoding", "continuous");
    if (enc == "continuous") c.recipe.encoding = Encoding::kContinuous;
    else if (enc == "zero-one") c.recipe.encoding = Encoding::kZeroOne;
    else if (enc == "plus-minus") c.recipe.encoding = Encoding::kPlusMinus;
    else fail("config key 'embedding.encoding': unknown encoding '", enc, "'");
    const auto thr = kv.get("embedding.threshold", "mean");
    if (thr == "mean") {
      c.recipe.threshold_policy = ThresholdPolicy::kGlobalMean;
    } else {
      c.recipe.threshold_policy = ThresholdPolicy::kFixed;
      c.recipe.threshold = to_real("embedding.threshold", thr);
    }
    c.recipe.center = to_bool("embedding.center", kv.get("embedding.center", "false"));
    c.recipe.l2 = to_bool("embedding.l2", kv.get("embedding.l2", "true"));
    if (const auto r = to_int("embedding.svd_rank", kv.get("embedding.svd_rank", "0")); r > 0)
      c.recipe.svd_rank = static_cast<std::size_t>(r);
    if (const auto s = to_int("embedding.sample_dims", kv.get("embedding.sample_dims", "0")); s > 0)
      c.recipe.sample_dims = std::make_pair(static_cast<std::size_t>(s),
                                            static_cast<std::uint64_t>(to_int("embedding.sample_seed",
                                                                              kv.get("embedding.sample_seed", "0"))));
    for (int d : int_list("embedding.dim", kv.get("embedding.dim"))) {
      if (d < 1) fail("config key 'embedding.dim': dimensions must be >= 1");
      c.dims.push_back(static_cast<std::size_t>(d));
    }

    const auto mode = kv.get("split.mode", "zero-shot");
    if (mode == "zero-shot") c.protocol = Protocol::kZeroShot;
    else if (mode == "few-shot") c.protocol = Protocol::kFewShot;
    else if (mode == "full") c.protocol = Protocol::kFull;
    else fail("config key 'split.mode': unknown mode '", mode, "'");
    c.train_classes = int_list("split.train_classes", kv.get("split.train_classes"));
    c.eval_classes = int_list("split.eval_classes", kv.get("split.eval_classes"));
    for (int k : int_list("split.shots", kv.get("split.shots"))) {
      if (k < 1) fail("config key 'split.shots': shots must be >= 1");
      c.shots.push_back(static_cast<std::size_t>(k));
    }
    c.train_fractions = real_list("split.train_fractions", kv.get("split.train_fractions"));
    for (double f : c.train_fractions)
      if (!(f > 0.0 && f <= 1.0)) fail("config key 'split.train_fractions': values must be in (0, 1]");

    const auto obj = kv.get("train.objective", "ranking");
    if (obj == "ranking") c.objective = Objective::kRanking;
    else if (obj == "ssvm") c.objective = Objective::kSsvm;
    else if (obj == "ridge") c.objective = Objective::kRidge;
    else if (obj == "dap") c.objective = Objective::kDap;
    else fail("config key 'train.objective': unknown objective '", obj, "'");
    const auto learn = kv.get("train.learn", "w");
    if (learn == "w") { c.learn_W = true; c.learn_Phi = false; }
    else if (learn == "phi") { c.learn_W = false; c.learn_Phi = true; }
    else if (learn == "wphi") { c.learn_W = true; c.learn_Phi = true; }
    else fail("config key 'train.learn': expected w, phi or wphi, got '", learn, "'");
    c.warm_start = to_bool("train.warm_start", kv.get("train.warm_start", "false"));
    if (kv.has("train.eta")) c.etas = real_list("train.eta", kv.get("train.eta"));
    if (kv.has("train.mu")) c.mus = real_list("train.mu", kv.get("train.mu"));
    if (kv.has("train.lambda")) c.lambdas = real_list("train.lambda", kv.get("train.lambda"));
    if (c.etas.empty() || c.mus.empty() || c.lambdas.empty()) fail("config: hyperparameter grids must be non-empty");
    c.epochs = static_cast<std::size_t>(to_int("train.epochs", kv.get("train.epochs", "50")));
    c.patience = static_cast<std::size_t>(to_int("train.patience", kv.get("train.patience", "5")));
    c.validation_fraction = to_real("train.validation_fraction", kv.get("train.validation_fraction", "0.2"));
    c.init_scale = to_real("train.init_scale", kv.get("train.init_scale", "0.001"));

    const auto repeats = to_int("run.repeats", kv.get("run.repeats", "1"));
    if (repeats < 1) fail("config key 'run.repeats': must be >= 1");
    c.repeats = static_cast<std::size_t>(repeats);
    c.seed = static_cast<std::uint64_t>(to_int("run.seed", kv.get("run.seed", "0")));
    c.output_dir = kv.get("run.output", "out");

    if (c.protocol == Protocol::kFewShot && c.shots.empty()) fail("config: few-shot mode needs split.shots");
    if (c.protocol == Protocol::kZeroShot && !c.shots.empty()) fail("config: split.shots is only valid in few-shot mode");
    if (c.protocol != Protocol::kFull && (c.train_classes.empty() || c.eval_classes.empty()))
      fail("config: zero-shot and few-shot modes need split.train_classes and split.eval_classes");
    if (c.objective == Objective::kDap && c.attributes_path.empty()) fail("config: the dap objective needs data.attributes");
    return c;
  }
};

// FNV-1a, 64-bit.
inline std::uint64_t fnv1a64(std::string_view s) {
  std::uint64_t h = 0xCBF29CE484222325ull;
  for (unsigned char ch : s) {
    h ^= ch;
    h *= 0x100000001B3ull;
  }
  return h;
}

inline std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

struct SweepPoint {
  std::string label;  // e.g. "shots=2"
  std::optional<std::size_t> shots;
  std::optional<double> fraction;
};

struct RunRecord {
  std::size_t repeat = 0;
  std::size_t point = 0;
  std::uint64_t seed = 0;
  std::string selected;                  // winning hyperparameters
  std::vector<std::string> grid_lines;   // every grid point with its validation accuracy
  EvalReport report;
  std::vector<std::pair<std::string, std::string>> extra;  // extra report keys
  std::string report_path;
};

struct ExperimentResult {
  std::vector<SweepPoint> points;
  std::vector<RunRecord> runs;
  std::string aggregate_path;
  std::string manifest_path;
  std::string sweep_path;
};

namespace detail {

struct LoadedData {
  FeatureSet features;
  std::optional<AttributeTable> attributes;
  std::optional<TaxonomyTree> taxonomy;
};

inline ClassEmbedding build_source(const std::string& source, const ExperimentConfig& cfg, const LoadedData& data,
                                   std::span<const int> train_classes, std::size_t dim, std::uint64_t seed) {
  const std::size_t num_classes = data.features.num_classes;
  auto need_attributes = [&]() -> const AttributeTable& {
    if (!data.attributes) fail("embedding source '", source, "' needs data.attributes");
    if (data.attributes->num_classes() != num_classes)
      fail("attribute table has ", data.attributes->num_classes(), " classes, features have ", num_classes);
    return *data.attributes;
  };
  auto need_taxonomy = [&]() -> const TaxonomyTree& {
    if (!data.taxonomy) fail("embedding source '", source, "' needs data.taxonomy");
    return *data.taxonomy;
  };
  EmbeddingRecipe plain = cfg.recipe;
  plain.svd_rank.reset();
  plain.sample_dims.reset();
  ClassEmbedding e;
  if (source == "attribute") {
    e = attribute_embedding(need_attributes(), cfg.recipe, train_classes);
  } else if (source == "hierarchy") {
    e = hierarchy_embedding(need_taxonomy(), num_classes);
  } else if (source == "fused") {
    e = fuse_early(attribute_embedding(need_attributes(), plain, train_classes),
                   hierarchy_embedding(need_taxonomy(), num_classes));
  } else if (source == "external") {
    if (cfg.external_embedding_path.empty()) fail("embedding source 'external' needs data.embedding");
    e = load_external_embedding(cfg.external_embedding_path, data.features.class_names);
    if (e.num_classes() != num_classes) fail("external embedding has ", e.num_classes(), " classes, features have ", num_classes);
    e = apply_recipe(e, cfg.recipe, train_classes);
  } else if (source == "ovr") {
    e = ovr_embedding(num_classes);
  } else if (source == "gaussian") {
    e = gaussian_embedding(num_classes, dim, seed);
  } else if (source == "hadamard") {
    e = hadamard_embedding(num_classes);
  } else {
    fail("unknown embedding source '", source, "'");
  }
  e.validate();
  return e;
}

struct Trained {
  std::optional<CompatModel> model;
  std::optional<ClassEmbedding> phi;
  std::optional<AttributeClassifierBank> bank;
  double validation = 0.0;
  std::string params;
};

inline Trained train_one(const ExperimentConfig& cfg, const SampleView& train,
                         const ClassEmbedding& phi, const ClassEmbedding* prior, std::span<const int> eval_classes,
                         double eta, double mu, double lambda, std::uint64_t seed,
                         const std::optional<AttributeTable>& binary_tab) {
  Trained out;
  std::ostringstream params;
  const auto space = train.classes();
  if (cfg.objective == Objective::kRanking || cfg.objective == Objective::kSsvm) {
    RankingConfig rc;
    rc.eta = eta;
    rc.mu = mu;
    rc.learn_W = cfg.learn_W;
    rc.learn_Phi = cfg.learn_Phi;
    rc.epochs = cfg.epochs;
    rc.patience = cfg.patience;
    rc.validation_fraction = cfg.validation_fraction;
    rc.init_scale = cfg.init_scale;
    rc.seed = seed;
    params << "eta=" << io::format_real(eta);
    TrainOptions opts;
    if (cfg.objective == Objective::kRanking && cfg.warm_start && cfg.learn_Phi) {
      // Zero-shot W on the background classes seeds the joint run.
      std::set<int> held(eval_classes.begin(), eval_classes.end());
      std::vector<std::size_t> background;
      for (std::size_t i = 0; i < train.size(); ++i)
        if (!held.count(train.label(i))) background.push_back(train.rows()[i]);
      if (background.empty()) fail("warm start: no background-class samples in the training split");
      RankingConfig zs = rc;
      zs.learn_W = true;
      zs.learn_Phi = false;
      zs.mu = 0.0;
      opts.W_init = train_ranking(SampleView(train.base(), background), phi, nullptr, zs).model.W;
    }
    if (cfg.objective == Objective::kRanking) {
      params << ",mu=" << io::format_real(mu);
      auto result = train_ranking(train, phi, mu > 0.0 ? prior : nullptr, rc, opts);
      out.validation = result.report.best_validation_accuracy;
      out.model = std::move(result.model);
      out.phi = std::move(result.phi);
    } else {
      auto result = train_ssvm(train, phi, rc, opts);
      out.validation = result.report.best_validation_accuracy;
      out.model = std::move(result.model);
      out.phi = phi;
    }
  } else {
    auto [fit, val] = stratified_holdout(train, cfg.validation_fraction, derive_seed(seed, 1));
    const SampleView& monitor = val.empty() ? fit : val;
    params << "lambda=" << io::format_real(lambda);
    if (cfg.objective == Objective::kRidge) {
      out.model = train_ridge(fit, phi, lambda);
      out.phi = phi;
      out.validation = accuracy(*out.model, phi, monitor, space);
    } else {
      out.bank = train_dap(fit, *binary_tab, lambda);
      out.validation = evaluate_dap(*out.bank, *binary_tab, monitor, space).top1;
    }
  }
  out.params = params.str();
  return out;
}

// Files and directories created by a run; removed again on failure.
class OutputTracker {
 public:
  void dir(const std::filesystem::path& p) {
    std::vector<std::filesystem::path> missing;
    for (auto cur = p; !cur.empty() && !std::filesystem::exists(cur); cur = cur.parent_path()) missing.push_back(cur);
    std::filesystem::create_directories(p);
    for (auto it = missing.rbegin(); it != missing.rend(); ++it) created_.push_back(*it);
  }
  void write(const std::filesystem::path& p, const std::string& content) {
    {
      auto out = io::open_out(p.string(), true);
      out << content;
      if (!out) fail("write failed for '", p.string(), "'");
    }
    created_.push_back(p);
  }
  void rollback() noexcept {
    for (auto it = created_.rbegin(); it != created_.rend(); ++it) {
      std::error_code ec;
      std::filesystem::remove(*it, ec);
    }
    created_.clear();
  }

 private:
  std::vector<std::filesystem::path> created_;
};

inline double mean_of(const std::vector<double>& v) {
  double s = 0;
  for (double x : v) s += x;
  return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

// Sample standard deviation; 0 for fewer than two values.
inline double stddev_of(const std::vector<double>& v) {
  if (v.size() < 2) return 0.0;
  const double m = mean_of(v);
  double s = 0;
  for (double x : v) s += (x - m) * (x - m);
  return std::sqrt(s / static_cast<double>(v.size() - 1));
}

template <typename F>
auto stage(const std::string& name, F&& f) -> decltype(f()) {
  try {
    return f();
  } catch (const StageError&) {
    throw;
  } catch (const std::exception& e) {
    throw StageError(name, e.what());
  }
}

}  // namespace detail

// Runs every repeat and sweep point of the configured protocol, writing
//   <out>/runs/r<repeat>_p<point>.txt   per-run report
//   <out>/aggregate.txt                 mean and std of top-1 across repeats
//   <out>/sweep.csv                     one row per sweep point
//   <out>/manifest.txt                  seeds, config hash, selections
// Outputs are byte-identical for identical configs. On failure every file
// written so far is removed and a StageError is thrown.
inline ExperimentResult run_experiment(const ExperimentConfig& cfg) {
  detail::OutputTracker tracker;
  try {
    detail::LoadedData data;
    detail::stage("load", [&] {
      data.features = load_features(cfg.features_path, guess_feature_format(cfg.features_path));
      if (!cfg.attributes_path.empty()) data.attributes = load_attributes(cfg.attributes_path);
      if (!cfg.taxonomy_path.empty()) data.taxonomy = load_taxonomy(cfg.taxonomy_path);
      return 0;
    });
    const std::size_t num_classes = data.features.num_classes;

    std::optional<AttributeTable> binary_tab;
    if (data.attributes) {
      binary_tab = data.attributes->is_binary && data.attributes->is_zero_one()
                       ? *data.attributes
                       : (data.attributes->is_binary
                              ? binarize(*data.attributes, ThresholdPolicy::kFixed, 0.0)
                              : binarize(*data.attributes, cfg.recipe.threshold_policy, cfg.recipe.threshold));
    }

    std::vector<int> train_classes = cfg.train_classes, eval_classes = cfg.eval_classes;
    if (cfg.protocol == Protocol::kFull) {
      std::vector<int> all(num_classes);
      for (std::size_t c = 0; c < num_classes; ++c) all[c] = static_cast<int>(c);
      if (train_classes.empty()) train_classes = all;
      if (eval_classes.empty()) eval_classes = all;
    }

    ExperimentResult result;
    if (cfg.protocol == Protocol::kFewShot) {
      for (auto k : cfg.shots) result.points.push_back({"shots=" + std::to_string(k), k, std::nullopt});
    } else if (!cfg.train_fractions.empty()) {
      for (double f : cfg.train_fractions) result.points.push_back({"fraction=" + io::format_real(f), std::nullopt, f});
    } else {
      result.points.push_back({"all", std::nullopt, std::nullopt});
    }

    const std::filesystem::path out_dir(cfg.output_dir);
    tracker.dir(out_dir / "runs");

    const std::vector<std::size_t> dims = cfg.dims.empty() ? std::vector<std::size_t>{0} : cfg.dims;
    for (std::size_t r = 0; r < cfg.repeats; ++r) {
      const std::uint64_t run_seed = cfg.seed + r;
      for (std::size_t p = 0; p < result.points.size(); ++p) {
        const auto& point = result.points[p];
        RunRecord rec;
        rec.repeat = r;
        rec.point = p;
        rec.seed = run_seed;
        SplitSpec spec;
        spec.train_classes = train_classes;
        spec.eval_classes = eval_classes;
        spec.per_class_train_cap = point.shots;
        spec.train_fraction = point.fraction;
        spec.seed = derive_seed(run_seed, 0x5150ull + p);
        const Split split = detail::stage("split", [&] { return make_split(data.features, spec); });
        if (split.eval.empty()) throw StageError("split", "empty evaluation split");

        detail::Trained best;
        std::optional<ClassEmbedding> best_phi_init;
        double best_val = -1.0;
        for (std::size_t dim : dims) {
          const std::uint64_t emb_seed = derive_seed(run_seed, 0xE3B0ull + dim);
          ClassEmbedding phi;
          if (cfg.objective != Objective::kDap)
            phi = detail::stage("build-embedding", [&] {
              return detail::build_source(cfg.source, cfg, data, train_classes, dim ? dim : 1, emb_seed);
            });
          const ClassEmbedding* prior = cfg.objective == Objective::kDap ? nullptr : &phi;
          const auto& lambdas = (cfg.objective == Objective::kRidge || cfg.objective == Objective::kDap)
                                    ? cfg.lambdas
                                    : std::vector<double>{0.0};
          const auto& etas = (cfg.objective == Objective::kRanking || cfg.objective == Objective::kSsvm)
                                 ? cfg.etas
                                 : std::vector<double>{0.0};
          const auto& mus = cfg.objective == Objective::kRanking && cfg.learn_Phi ? cfg.mus : std::vector<double>{0.0};
          for (double eta : etas)
            for (double mu : mus)
              for (double lambda : lambdas) {
                auto trained = detail::stage("train", [&] {
                  return detail::train_one(cfg, split.train, phi, prior, eval_classes, eta, mu, lambda,
                                           derive_seed(run_seed, 0x7A11ull), binary_tab);
                });
                if (!cfg.dims.empty()) trained.params = "dim=" + std::to_string(dim) + "," + trained.params;
                rec.grid_lines.push_back(trained.params + " validation=" + io::format_real(trained.validation));
                if (trained.validation > best_val) {
                  best_val = trained.validation;
                  best = std::move(trained);
                  best_phi_init = phi;
                }
              }
        }
        rec.selected = best.params;

        rec.report = detail::stage("evaluate", [&] {
          if (best.bank) return evaluate_dap(*best.bank, *binary_tab, split.eval, eval_classes);
          const bool attribute_dims = cfg.source == "attribute" && !cfg.recipe.svd_rank && !cfg.recipe.sample_dims;
          return evaluate(*best.model, *best.phi, split.eval, eval_classes,
                          attribute_dims && binary_tab ? &*binary_tab : nullptr);
        });

        if (!cfg.late_with.empty() && best.model) {
          detail::stage("fuse", [&] {
            ExperimentConfig second = cfg;
            second.source = cfg.late_with;
            const ClassEmbedding phi2 = detail::build_source(cfg.late_with, second, data, train_classes, 1,
                                                             derive_seed(run_seed, 0xF05Eull));
            auto t2 = detail::train_one(second, split.train, phi2, &phi2, eval_classes, cfg.etas.front(),
                                        cfg.mus.front(), cfg.lambdas.front(), derive_seed(run_seed, 0x7A12ull),
                                        binary_tab);
            const auto n = static_cast<Eigen::Index>(split.eval.size());
            Matrix s1(n, static_cast<Eigen::Index>(num_classes)), s2(n, static_cast<Eigen::Index>(num_classes));
            for (Eigen::Index i = 0; i < n; ++i) {
              const Vector x = split.eval.row_d(static_cast<std::size_t>(i));
              s1.row(i) = score_all(*best.model, x, *best.phi).scores.transpose();
              s2.row(i) = score_all(*t2.model, x, *t2.phi).scores.transpose();
            }
            // Standardize over the candidate columns only.
            Matrix c1(n, static_cast<Eigen::Index>(eval_classes.size())), c2 = c1;
            for (std::size_t j = 0; j < eval_classes.size(); ++j) {
              c1.col(static_cast<Eigen::Index>(j)) = s1.col(eval_classes[j]);
              c2.col(static_cast<Eigen::Index>(j)) = s2.col(eval_classes[j]);
            }
            const Matrix fused_c = late_fuse_batch(c1, c2, 0.5);
            Matrix fused = Matrix::Constant(n, static_cast<Eigen::Index>(num_classes), -1e300);
            for (std::size_t j = 0; j < eval_classes.size(); ++j)
              fused.col(eval_classes[j]) = fused_c.col(static_cast<Eigen::Index>(j));
            const auto second_report = evaluate_scores(s2, split.eval, eval_classes);
            const auto fused_report = evaluate_scores(fused, split.eval, eval_classes);
            rec.extra.emplace_back("top1_primary", io::format_real(rec.report.top1));
            rec.extra.emplace_back("top1_late_secondary", io::format_real(second_report.top1));
            rec.extra.emplace_back("top1_late_fused", io::format_real(fused_report.top1));
            return 0;
          });
        }

        std::ostringstream text;
        text << "point = " << point.label << '\n';
        text << "seed = " << run_seed << '\n';
        text << "selected = " << rec.selected << '\n';
        text << "n_train = " << split.train.size() << '\n';
        for (const auto& [k, v] : rec.extra) text << k << " = " << v << '\n';
        text << format_report(rec.report);
        const auto path = out_dir / "runs" / ("r" + std::to_string(r) + "_p" + std::to_string(p) + ".txt");
        detail::stage("report", [&] {
          tracker.write(path, text.str());
          return 0;
        });
        rec.report_path = path.string();
        result.runs.push_back(std::move(rec));
      }
    }

    // Aggregate across repeats.
    std::ostringstream agg, sweep, manifest;
    sweep << "point,shots,fraction,runs,top1_mean,top1_std\n";
    agg << "runs = " << result.runs.size() << '\n';
    for (std::size_t p = 0; p < result.points.size(); ++p) {
      std::vector<double> accs, aucs;
      for (const auto& run : result.runs)
        if (run.point == p) {
          accs.push_back(run.report.top1);
          if (run.report.mean_attribute_auc) aucs.push_back(*run.report.mean_attribute_auc);
        }
      const auto& pt = result.points[p];
      const std::string prefix = "point." + pt.label + ".";
      agg << prefix << "runs = " << accs.size() << '\n';
      agg << prefix << "top1_mean = " << io::format_real(detail::mean_of(accs)) << '\n';
      agg << prefix << "top1_std = " << io::format_real(detail::stddev_of(accs)) << '\n';
      if (!aucs.empty()) {
        agg << prefix << "mean_attribute_auc_mean = " << io::format_real(detail::mean_of(aucs)) << '\n';
        agg << prefix << "mean_attribute_auc_std = " << io::format_real(detail::stddev_of(aucs)) << '\n';
      }
      sweep << pt.label << ',' << (pt.shots ? std::to_string(*pt.shots) : "") << ','
            << (pt.fraction ? io::format_real(*pt.fraction) : "") << ',' << accs.size() << ','
            << io::format_real(detail::mean_of(accs)) << ',' << io::format_real(detail::stddev_of(accs)) << '\n';
    }

    const std::string canonical = cfg.raw.canonical();
    manifest << "version = " << kVersion << '\n';
    manifest << "config_hash = " << hex64(fnv1a64(canonical)) << '\n';
    manifest << "base_seed = " << cfg.seed << '\n';
    manifest << "repeats = " << cfg.repeats << '\n';
    for (const auto& run : result.runs) {
      const std::string id = "run.r" + std::to_string(run.repeat) + "_p" + std::to_string(run.point);
      manifest << id << ".seed = " << run.seed << '\n';
      manifest << id << ".point = " << result.points[run.point].label << '\n';
      manifest << id << ".selected = " << run.selected << '\n';
      for (std::size_t g = 0; g < run.grid_lines.size(); ++g) manifest << id << ".grid." << g << " = " << run.grid_lines[g] << '\n';
      manifest << id << ".report = runs/r" << run.repeat << "_p" << run.point << ".txt\n";
    }
    manifest << "\n[config]\n" << canonical;

    detail::stage("report", [&] {
      tracker.write(out_dir / "aggregate.txt", agg.str());
      tracker.write(out_dir / "sweep.csv", sweep.str());
      tracker.write(out_dir / "manifest.txt", manifest.str());
      return 0;
    });
    result.aggregate_path = (out_dir / "aggregate.txt").string();
    result.sweep_path = (out_dir / "sweep.csv").string();
    result.manifest_path = (out_dir / "manifest.txt").string();
    return result;
  } catch (const StageError&) {
    tracker.rollback();
    throw;
  } catch (const std::exception& e) {
    tracker.rollback();
    throw StageError("run", e.what());
  }
}

// Re-runs a single repeat: the manifest's `run.rK_pP.seed` as run.seed with
// run.repeats = 1 reproduces that run's report.
inline KeyValueConfig config_for_repeat(const KeyValueConfig& base, std::uint64_t seed, const std::string& output) {
  KeyValueConfig kv = base;
  kv.set("run.seed", std::to_string(seed));
  kv.set("run.repeats", "1");
  kv.set("run.output", output);
  return kv;
}

}  // namespace labelembed
