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

// labelembed: command-line front end. Every pipeline stage is a subcommand
// with explicit file inputs and outputs; `run` executes a whole protocol
// from a config file.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "labelembed/labelembed.hpp"

namespace le = labelembed;

namespace {

std::vector<int> parse_classes(const std::string& text) { return le::config_parse::int_list("classes", text); }

le::Encoding parse_encoding(const std::string& s) {
  if (s == "continuous") return le::Encoding::kContinuous;
  if (s == "zero-one") return le::Encoding::kZeroOne;
  if (s == "plus-minus") return le::Encoding::kPlusMinus;
  le::fail("unknown encoding '", s, "' (continuous, zero-one, plus-minus)");
}

void write_text(const std::string& path, const std::string& text) {
  auto out = le::io::open_out(path);
  out << text;
  if (!out) le::fail("write failed for '", path, "'");
}

le::FeatureSet load_any_features(const std::string& path) {
  return le::load_features(path, le::guess_feature_format(path));
}

// --key=value or --key value pairs left over by CLI11.
le::KeyValueConfig apply_overrides(le::KeyValueConfig kv, const std::vector<std::string>& extras) {
  for (std::size_t i = 0; i < extras.size(); ++i) {
    std::string arg = extras[i];
    if (arg.rfind("--", 0) != 0) le::fail("unexpected argument '", arg, "'");
    arg = arg.substr(2);
    const auto eq = arg.find('=');
    if (eq != std::string::npos) {
      kv.set(arg.substr(0, eq), arg.substr(eq + 1));
    } else {
      if (i + 1 >= extras.size()) le::fail("override --", arg, " needs a value");
      kv.set(arg, extras[++i]);
    }
  }
  return kv;
}

struct Toy {
  std::string out = "data/toy";
  std::uint64_t seed = 1;
};

// 10 classes, D = 20, E = 8 continuous attributes, classes 7-9 held out.
void write_toy(const Toy& t) {
  le::PlantedSpec spec;
  spec.num_classes = 10;
  spec.feature_dim = 20;
  spec.embedding_dim = 8;
  spec.samples_per_class = 30;
  spec.noise = 0.1;
  spec.nonnegative_attributes = false;
  spec.seed = t.seed;
  const auto planted = le::make_planted(spec);
  std::filesystem::create_directories(t.out);
  const std::filesystem::path dir(t.out);
  le::write_features_csv(planted.features, (dir / "features.csv").string());
  le::write_attributes(planted.attributes, (dir / "attributes.csv").string());
  write_text((dir / "taxonomy.txt").string(),
             "# node parent class name\n"
             "100 -1 - animal\n"
             "101 100 - group_a\n"
             "102 100 - group_b\n"
             "103 100 - group_c\n"
             "0 101 0\n1 101 1\n2 101 2\n3 102 3\n4 102 4\n5 102 5\n6 103 6\n7 101 7\n8 102 8\n9 103 9\n");
  write_text((dir / "zero_shot.cfg").string(),
             "# Zero-shot ALE on the bundled toy set: train on 0-6, evaluate on 7-9.\n"
             "data.features = data/toy/features.csv\n"
             "data.attributes = data/toy/attributes.csv\n"
             "data.taxonomy = data/toy/taxonomy.txt\n"
             "embedding.source = attribute\n"
             "embedding.encoding = continuous\n"
             "embedding.l2 = true\n"
             "split.mode = zero-shot\n"
             "split.train_classes = 0-6\n"
             "split.eval_classes = 7-9\n"
             "train.objective = ranking\n"
             "train.eta = 0.01,0.03\n"
             "train.epochs = 30\n"
             "train.patience = 5\n"
             "run.repeats = 1\n"
             "run.seed = 1\n"
             "run.output = out/toy_zero_shot\n");
  write_text((dir / "few_shot.cfg").string(),
             "# Few-shot ALE(W Phi) with the attribute prior, k in {2, 5, 10}.\n"
             "data.features = data/toy/features.csv\n"
             "data.attributes = data/toy/attributes.csv\n"
             "embedding.source = attribute\n"
             "split.mode = few-shot\n"
             "split.train_classes = 0-6\n"
             "split.eval_classes = 7-9\n"
             "split.shots = 2,5,10\n"
             "train.objective = ranking\n"
             "train.learn = wphi\n"
             "train.warm_start = true\n"
             "train.eta = 0.01\n"
             "train.mu = 1,10\n"
             "train.epochs = 20\n"
             "run.repeats = 3\n"
             "run.seed = 1\n"
             "run.output = out/toy_few_shot\n");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Label-embedding classification toolkit"};
  app.require_subcommand(1);
  app.set_version_flag("--version", le::kVersion);

  // toy
  Toy toy;
  auto* toy_cmd = app.add_subcommand("toy", "Write the bundled planted toy dataset and configs");
  toy_cmd->add_option("--out", toy.out, "Output directory");
  toy_cmd->add_option("--seed", toy.seed, "Generator seed");

  // build-embedding
  struct {
    std::string source = "attribute", attributes, taxonomy, external, out, encoding = "continuous",
                threshold = "mean", center_over;
    std::size_t classes = 0, dim = 0, svd_rank = 0, sample = 0;
    std::uint64_t seed = 0, sample_seed = 0;
    bool l2 = true;
  } be;
  auto* be_cmd = app.add_subcommand("build-embedding", "Build a class embedding matrix");
  be_cmd->add_option("--source", be.source, "attribute|hierarchy|external|ovr|gaussian|hadamard|fused");
  be_cmd->add_option("--attributes", be.attributes, "Attribute table CSV");
  be_cmd->add_option("--taxonomy", be.taxonomy, "Taxonomy parent-list file");
  be_cmd->add_option("--external", be.external, "External embedding file");
  be_cmd->add_option("--classes", be.classes, "Number of classes (ovr, gaussian, hadamard, hierarchy)");
  be_cmd->add_option("--dim", be.dim, "Embedding dimension (gaussian)");
  be_cmd->add_option("--seed", be.seed, "Seed (gaussian)");
  be_cmd->add_option("--encoding", be.encoding, "continuous|zero-one|plus-minus");
  be_cmd->add_option("--threshold", be.threshold, "Binarization threshold: mean or a number");
  be_cmd->add_option("--center-over", be.center_over, "Center over these class ids (e.g. 0-39)");
  be_cmd->add_option("--l2", be.l2, "l2-normalize columns");
  be_cmd->add_option("--svd-rank", be.svd_rank, "Reduce to this rank by SVD");
  be_cmd->add_option("--sample-dims", be.sample, "Keep this many random dimensions");
  be_cmd->add_option("--sample-seed", be.sample_seed, "Seed for --sample-dims");
  be_cmd->add_option("--out", be.out, "Output embedding file")->required();

  // train
  struct {
    std::string features, embedding, prior, objective = "ranking", learn = "w", classes, init_model, out_model,
                out_embedding, report;
    double eta = 0.01, mu = 0.0, lambda = 1.0, validation_fraction = 0.2, init_scale = 1e-3;
    std::size_t epochs = 50, patience = 5;
    std::uint64_t seed = 0;
  } tr;
  auto* tr_cmd = app.add_subcommand("train", "Train a compatibility model");
  tr_cmd->add_option("--features", tr.features, "Training features")->required();
  tr_cmd->add_option("--embedding", tr.embedding, "Class embedding file")->required();
  tr_cmd->add_option("--prior", tr.prior, "Prior embedding for mu > 0");
  tr_cmd->add_option("--objective", tr.objective, "ranking|ssvm|ridge");
  tr_cmd->add_option("--learn", tr.learn, "w|phi|wphi (ranking)");
  tr_cmd->add_option("--eta", tr.eta, "Constant step size");
  tr_cmd->add_option("--mu", tr.mu, "Prior weight");
  tr_cmd->add_option("--lambda", tr.lambda, "Ridge regularization");
  tr_cmd->add_option("--epochs", tr.epochs, "Maximum epochs");
  tr_cmd->add_option("--patience", tr.patience, "Early-stopping patience");
  tr_cmd->add_option("--validation-fraction", tr.validation_fraction, "Held-out share of training samples");
  tr_cmd->add_option("--init-scale", tr.init_scale, "Stddev of the random W init");
  tr_cmd->add_option("--seed", tr.seed, "Seed");
  tr_cmd->add_option("--classes", tr.classes, "Training classes (rows of other classes are dropped)");
  tr_cmd->add_option("--init-model", tr.init_model, "Initial W");
  tr_cmd->add_option("--out-model", tr.out_model, "Output model file")->required();
  tr_cmd->add_option("--out-embedding", tr.out_embedding, "Output embedding when Phi is learned");
  tr_cmd->add_option("--report", tr.report, "Training report file");

  // predict / evaluate
  struct {
    std::string model, embedding, features, classes, out, attributes;
  } pr;
  auto* pr_cmd = app.add_subcommand("predict", "Predict class ids, one per line");
  pr_cmd->add_option("--model", pr.model)->required();
  pr_cmd->add_option("--embedding", pr.embedding)->required();
  pr_cmd->add_option("--features", pr.features)->required();
  pr_cmd->add_option("--classes", pr.classes, "Candidate classes (default: all)");
  pr_cmd->add_option("--out", pr.out, "Label file (default: stdout)");
  auto* ev_cmd = app.add_subcommand("evaluate", "Evaluate a model and write a report");
  ev_cmd->add_option("--model", pr.model)->required();
  ev_cmd->add_option("--embedding", pr.embedding)->required();
  ev_cmd->add_option("--features", pr.features)->required();
  ev_cmd->add_option("--classes", pr.classes, "Candidate classes (default: classes in the eval set)");
  ev_cmd->add_option("--attributes", pr.attributes, "Attribute table for per-attribute AUC");
  ev_cmd->add_option("--out", pr.out, "Report file (default: stdout)");

  // dap
  struct {
    std::string features, attributes, bank, out, eval_features, classes, report, train_classes;
    double lambda = 1e-2;
  } dp;
  auto* dp_cmd = app.add_subcommand("dap", "Train and/or evaluate the attribute-prediction baseline");
  dp_cmd->add_option("--features", dp.features, "Training features");
  dp_cmd->add_option("--attributes", dp.attributes, "Attribute table (binarized at the global mean if continuous)")
      ->required();
  dp_cmd->add_option("--train-classes", dp.train_classes, "Restrict training rows to these classes");
  dp_cmd->add_option("--lambda", dp.lambda, "L2 regularization");
  dp_cmd->add_option("--out", dp.out, "Output bank file");
  dp_cmd->add_option("--bank", dp.bank, "Existing bank (skip training)");
  dp_cmd->add_option("--eval-features", dp.eval_features, "Evaluation features");
  dp_cmd->add_option("--classes", dp.classes, "Candidate classes for evaluation");
  dp_cmd->add_option("--report", dp.report, "Evaluation report (default: stdout)");

  // reduce
  struct {
    std::string embedding, out;
    std::size_t rank = 0, sample = 0;
    std::uint64_t seed = 0;
  } rd;
  auto* rd_cmd = app.add_subcommand("reduce", "SVD-reduce or subsample an embedding");
  rd_cmd->add_option("--embedding", rd.embedding)->required();
  rd_cmd->add_option("--rank", rd.rank, "SVD rank");
  rd_cmd->add_option("--sample", rd.sample, "Number of dimensions to keep at random");
  rd_cmd->add_option("--seed", rd.seed, "Seed for --sample");
  rd_cmd->add_option("--out", rd.out)->required();

  // split
  struct {
    std::string features, train_classes, eval_classes, out, train_out, eval_out;
    std::size_t shots = 0;
    double fraction = 0.0;
    std::uint64_t seed = 0;
  } sp;
  auto* sp_cmd = app.add_subcommand("split", "Partition a feature set");
  sp_cmd->add_option("--features", sp.features)->required();
  sp_cmd->add_option("--train-classes", sp.train_classes)->required();
  sp_cmd->add_option("--eval-classes", sp.eval_classes)->required();
  sp_cmd->add_option("--shots", sp.shots, "Few-shot samples per eval class");
  sp_cmd->add_option("--fraction", sp.fraction, "Training fraction per class");
  sp_cmd->add_option("--seed", sp.seed);
  sp_cmd->add_option("--out", sp.out, "Split manifest")->required();
  sp_cmd->add_option("--train-out", sp.train_out, "Write training rows as a feature file");
  sp_cmd->add_option("--eval-out", sp.eval_out, "Write evaluation rows as a feature file");

  // run
  std::string config_path;
  auto* run_cmd = app.add_subcommand("run", "Run a full protocol from a config file");
  run_cmd->add_option("--config", config_path, "Config file")->required();
  run_cmd->allow_extras();
  run_cmd->footer("Any config key can be overridden as --section.key=value.");

  CLI11_PARSE(app, argc, argv);

  const std::string which = app.get_subcommands().front()->get_name();
  try {
    if (which == "toy") {
      write_toy(toy);
    } else if (which == "build-embedding") {
      le::EmbeddingRecipe recipe;
      recipe.encoding = parse_encoding(be.encoding);
      if (be.threshold == "mean") {
        recipe.threshold_policy = le::ThresholdPolicy::kGlobalMean;
      } else {
        recipe.threshold_policy = le::ThresholdPolicy::kFixed;
        recipe.threshold = le::config_parse::to_real("--threshold", be.threshold);
      }
      recipe.center = !be.center_over.empty();
      recipe.l2 = be.l2;
      if (be.svd_rank) recipe.svd_rank = be.svd_rank;
      if (be.sample) recipe.sample_dims = std::make_pair(be.sample, be.sample_seed);
      le::KeyValueConfig kv;
      kv.set("data.features", "-");
      le::ExperimentConfig cfg;
      cfg.recipe = recipe;
      cfg.external_embedding_path = be.external;
      le::detail::LoadedData data;
      if (!be.attributes.empty()) data.attributes = le::load_attributes(be.attributes);
      if (!be.taxonomy.empty()) data.taxonomy = le::load_taxonomy(be.taxonomy);
      std::size_t classes = be.classes;
      if (!classes && data.attributes) classes = data.attributes->num_classes();
      if (!classes && be.source == "external") classes = le::load_external_embedding(be.external).num_classes();
      if (!classes) le::fail("--classes is required for source '", be.source, "'");
      data.features.num_classes = classes;
      std::vector<int> over = parse_classes(be.center_over);
      if (over.empty())
        for (std::size_t c = 0; c < classes; ++c) over.push_back(static_cast<int>(c));
      le::ClassEmbedding e = le::detail::build_source(be.source, cfg, data, over, be.dim ? be.dim : 1, be.seed);
      if (be.source == "hierarchy" || be.source == "ovr" || be.source == "gaussian" || be.source == "hadamard" ||
          be.source == "fused") {
        if (be.svd_rank) e = le::svd_reduce(e, be.svd_rank);
        if (be.sample) e = le::sample_dims(e, be.sample, be.sample_seed);
      }
      le::write_embedding(e, be.out);
    } else if (which == "train") {
      le::FeatureSet fs = load_any_features(tr.features);
      le::SampleView data(fs);
      if (!tr.classes.empty()) {
        const auto keep = parse_classes(tr.classes);
        std::vector<std::size_t> rows;
        for (std::size_t n = 0; n < fs.size(); ++n)
          if (std::find(keep.begin(), keep.end(), fs.labels[n]) != keep.end()) rows.push_back(n);
        data = le::SampleView(fs, rows);
      }
      const le::ClassEmbedding phi = le::load_external_embedding(tr.embedding);
      le::RankingConfig rc;
      rc.eta = tr.eta;
      rc.mu = tr.mu;
      rc.epochs = tr.epochs;
      rc.patience = tr.patience;
      rc.validation_fraction = tr.validation_fraction;
      rc.init_scale = tr.init_scale;
      rc.seed = tr.seed;
      rc.learn_W = tr.learn != "phi";
      rc.learn_Phi = tr.learn != "w";
      le::TrainOptions opts;
      if (!tr.init_model.empty()) opts.W_init = le::load_model(tr.init_model).W;
      std::ostringstream report;
      if (tr.objective == "ranking") {
        std::optional<le::ClassEmbedding> prior;
        if (!tr.prior.empty()) prior = le::load_external_embedding(tr.prior);
        if (rc.mu > 0.0 && !prior) prior = phi;
        const auto result = le::train_ranking(data, phi, prior ? &*prior : nullptr, rc, opts);
        le::save_model(result.model, tr.out_model);
        if (!tr.out_embedding.empty()) le::write_embedding(result.phi, tr.out_embedding);
        report << "epochs_run = " << result.report.epochs_run << "\nstopping_epoch = " << result.report.stopping_epoch
               << "\nbest_validation_accuracy = " << le::io::format_real(result.report.best_validation_accuracy)
               << "\nfinal_objective = " << le::io::format_real(result.report.final_objective) << '\n';
      } else if (tr.objective == "ssvm") {
        const auto result = le::train_ssvm(data, phi, rc, opts);
        le::save_model(result.model, tr.out_model);
        report << "epochs_run = " << result.report.epochs_run << "\nstopping_epoch = " << result.report.stopping_epoch
               << "\nbest_validation_accuracy = " << le::io::format_real(result.report.best_validation_accuracy)
               << "\nfinal_objective = " << le::io::format_real(result.report.final_objective) << '\n';
      } else if (tr.objective == "ridge") {
        le::save_model(le::train_ridge(data, phi, tr.lambda), tr.out_model);
        report << "lambda = " << le::io::format_real(tr.lambda) << '\n';
      } else {
        le::fail("unknown objective '", tr.objective, "' (ranking, ssvm, ridge)");
      }
      if (!tr.report.empty()) write_text(tr.report, report.str());
      else std::cerr << report.str();
    } else if (which == "predict" || which == "evaluate") {
      const auto model = le::load_model(pr.model);
      const auto phi = le::load_external_embedding(pr.embedding);
      le::FeatureSet fs = load_any_features(pr.features);
      const le::SampleView data(fs);
      const auto classes = parse_classes(pr.classes);
      std::ostringstream out;
      if (which == "predict") {
        for (std::size_t n = 0; n < data.size(); ++n) out << le::predict(model, data.row_d(n), phi, classes) << '\n';
      } else {
        std::optional<le::AttributeTable> tab;
        if (!pr.attributes.empty()) {
          tab = le::load_attributes(pr.attributes);
          if (!tab->is_zero_one()) *tab = le::binarize(*tab, le::ThresholdPolicy::kGlobalMean);
        }
        out << le::format_report(le::evaluate(model, phi, data, classes, tab ? &*tab : nullptr));
      }
      if (pr.out.empty()) std::cout << out.str();
      else write_text(pr.out, out.str());
    } else if (which == "dap") {
      auto tab = le::load_attributes(dp.attributes);
      if (!tab.is_zero_one())
        tab = tab.is_binary ? le::binarize(tab, le::ThresholdPolicy::kFixed, 0.0)
                            : le::binarize(tab, le::ThresholdPolicy::kGlobalMean);
      le::AttributeClassifierBank bank;
      if (!dp.bank.empty()) {
        bank = le::load_bank(dp.bank);
      } else {
        if (dp.features.empty()) le::fail("dap: --features is required when training");
        le::FeatureSet fs = load_any_features(dp.features);
        std::vector<std::size_t> rows;
        const auto keep = parse_classes(dp.train_classes);
        for (std::size_t n = 0; n < fs.size(); ++n)
          if (keep.empty() || std::find(keep.begin(), keep.end(), fs.labels[n]) != keep.end()) rows.push_back(n);
        bank = le::train_dap(le::SampleView(fs, rows), tab, dp.lambda);
        if (!dp.out.empty()) le::save_bank(bank, dp.out);
      }
      if (!dp.eval_features.empty()) {
        le::FeatureSet efs = load_any_features(dp.eval_features);
        const auto text = le::format_report(le::evaluate_dap(bank, tab, le::SampleView(efs), parse_classes(dp.classes)));
        if (dp.report.empty()) std::cout << text;
        else write_text(dp.report, text);
      }
    } else if (which == "reduce") {
      const auto e = le::load_external_embedding(rd.embedding);
      if ((rd.rank > 0) == (rd.sample > 0)) le::fail("reduce: give exactly one of --rank or --sample");
      le::write_embedding(rd.rank ? le::svd_reduce(e, rd.rank) : le::sample_dims(e, rd.sample, rd.seed), rd.out);
    } else if (which == "split") {
      le::FeatureSet fs = load_any_features(sp.features);
      le::SplitSpec spec;
      spec.train_classes = parse_classes(sp.train_classes);
      spec.eval_classes = parse_classes(sp.eval_classes);
      if (sp.shots) spec.per_class_train_cap = sp.shots;
      if (sp.fraction > 0.0) spec.train_fraction = sp.fraction;
      spec.seed = sp.seed;
      const auto split = le::make_split(fs, spec);
      std::ostringstream out;
      auto rows = [&](const le::SampleView& v) {
        std::string s;
        for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v.rows()[i]);
        return s;
      };
      out << "seed = " << sp.seed << "\ntrain_classes = " << sp.train_classes << "\neval_classes = " << sp.eval_classes
          << "\nzero_shot = " << (spec.zero_shot() ? "true" : "false") << "\nn_train = " << split.train.size()
          << "\nn_eval = " << split.eval.size() << "\ntrain_rows = " << rows(split.train)
          << "\neval_rows = " << rows(split.eval) << '\n';
      write_text(sp.out, out.str());
      if (!sp.train_out.empty())
        le::write_features(split.train.materialize(), sp.train_out, le::guess_feature_format(sp.train_out));
      if (!sp.eval_out.empty() && !split.eval.empty())
        le::write_features(split.eval.materialize(), sp.eval_out, le::guess_feature_format(sp.eval_out));
    } else if (which == "run") {
      const auto kv = apply_overrides(le::KeyValueConfig::load(config_path), run_cmd->remaining());
      const auto cfg = le::ExperimentConfig::from(kv);
      const auto result = le::run_experiment(cfg);
      std::cout << "wrote " << result.runs.size() << " run report(s), " << result.aggregate_path << ", "
                << result.manifest_path << '\n';
    }
  } catch (const le::StageError& e) {
    std::cerr << "labelembed " << which << ": error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "labelembed " << which << ": error: [" << which << "] " << e.what() << '\n';
    return 1;
  }
  return 0;
}
