#include <CLI11.hpp>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <nlohmann/json.hpp>

#include "enspipe/ensemble.hpp"
#include "enspipe/head.hpp"
#include "enspipe/head_io.hpp"
#include "enspipe/metrics.hpp"
#include "enspipe/pipeline.hpp"

namespace enspipe {

namespace {

namespace fs = std::filesystem;

std::string defaultOutDir() {
  const char* env = std::getenv("ENSPIPE_OUT");
  return env != nullptr ? env : ".";
}

Matrix manifestFeatures(const DatasetManifest& m) {
  Matrix x(static_cast<Eigen::Index>(m.records.size()), m.feature_dim);
  for (std::size_t i = 0; i < m.records.size(); ++i) {
    x.row(static_cast<Eigen::Index>(i)) =
        preprocessContract(m.records[i], m.feature_dim).transpose();
  }
  return x;
}

std::vector<int> manifestLabels(const DatasetManifest& m) {
  std::vector<int> y(m.records.size());
  for (std::size_t i = 0; i < m.records.size(); ++i) {
    y[i] = m.records[i].label;
  }
  return y;
}

// Stratified index split used by `ensemble tune --tune-split`.
std::pair<std::vector<int>, std::vector<int>> tuneSplitIndices(
    const std::vector<int>& labels, int num_classes, double fraction,
    std::uint64_t seed) {
  SeededRng rng(seed);
  std::vector<int> tune_idx;
  std::vector<int> holdout_idx;
  for (int c = 0; c < num_classes; ++c) {
    std::vector<int> idx;
    for (std::size_t i = 0; i < labels.size(); ++i) {
      if (labels[i] == c) idx.push_back(static_cast<int>(i));
    }
    rng.shuffle(idx);
    std::size_t n_tune = static_cast<std::size_t>(
        std::floor(fraction * static_cast<double>(idx.size())));
    for (std::size_t i = 0; i < idx.size(); ++i) {
      (i < n_tune ? tune_idx : holdout_idx).push_back(idx[i]);
    }
  }
  return {std::move(tune_idx), std::move(holdout_idx)};
}

PredictionSet subsetSamples(const PredictionSet& preds,
                            const std::vector<int>& idx) {
  PredictionSet out;
  out.model_names = preds.model_names;
  for (const Matrix& p : preds.probs) {
    Matrix q(static_cast<Eigen::Index>(idx.size()), p.cols());
    for (std::size_t i = 0; i < idx.size(); ++i) {
      q.row(static_cast<Eigen::Index>(i)) = p.row(idx[i]);
    }
    out.probs.push_back(std::move(q));
  }
  return out;
}

std::vector<int> subsetLabels(const std::vector<int>& labels,
                              const std::vector<int>& idx) {
  std::vector<int> out(idx.size());
  for (std::size_t i = 0; i < idx.size(); ++i) {
    out[i] = labels[static_cast<std::size_t>(idx[i])];
  }
  return out;
}

void checkLabelAgreement(const std::vector<std::string>& pred_ids,
                         const std::vector<std::string>& label_ids) {
  if (pred_ids != label_ids) {
    throw ValidationError(
        "labels file and prediction files disagree on sample ids or order");
  }
}

WeightVector loadWeights(const std::string& path,
                         const std::vector<std::string>& model_names) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open: " + path);
  nlohmann::json doc;
  try {
    in >> doc;
  } catch (const nlohmann::json::exception& e) {
    throw IoError("parse error in " + path + ": " + e.what());
  }
  WeightVector w;
  w.weights.resize(static_cast<Eigen::Index>(model_names.size()));
  for (std::size_t i = 0; i < model_names.size(); ++i) {
    if (!doc.contains(model_names[i])) {
      throw ValidationError(path + ": missing weight for model '" +
                            model_names[i] + "'");
    }
    w.weights[static_cast<Eigen::Index>(i)] =
        doc[model_names[i]].get<double>();
  }
  return w;
}

int runSynth(int models, int samples, int classes,
             std::vector<double> targets, std::uint64_t seed,
             const std::string& out_dir) {
  if (targets.empty()) {
    targets.assign(static_cast<std::size_t>(models), 0.9);
  }
  auto [preds, labels] = synthFixture(models, samples, classes, targets, seed);

  std::vector<std::string> ids(static_cast<std::size_t>(samples));
  for (int i = 0; i < samples; ++i) {
    ids[static_cast<std::size_t>(i)] = "s" + std::to_string(i);
  }
  std::vector<std::string> class_names(static_cast<std::size_t>(classes));
  for (int c = 0; c < classes; ++c) {
    class_names[static_cast<std::size_t>(c)] = "class_" + std::to_string(c);
  }

  fs::create_directories(out_dir);
  fs::path dir(out_dir);
  for (Eigen::Index m = 0; m < preds.numModels(); ++m) {
    std::string name = preds.model_names[static_cast<std::size_t>(m)];
    savePredictionFile((dir / ("preds_" + name + ".csv")).string(), name, ids,
                       class_names, preds.probs[static_cast<std::size_t>(m)]);
  }
  saveLabels((dir / "labels.csv").string(), ids, labels, class_names);
  return 0;
}

int runTrainHead(const std::string& manifest_path, double split_fraction,
                 HeadConfig config, const std::string& out_dir) {
  DatasetManifest manifest = loadManifest(manifest_path);
  SplitSpec split;
  split.train_fraction = split_fraction;
  split.seed = config.seed;
  auto [train, val] = splitDataset(manifest, split);

  config.input_dim = manifest.feature_dim;
  config.num_classes = static_cast<Eigen::Index>(manifest.class_names.size());

  auto [params, history] =
      trainHead(config, manifestFeatures(train), manifestLabels(train),
                manifestFeatures(val), manifestLabels(val));

  fs::create_directories(out_dir);
  fs::path dir(out_dir);
  saveHead((dir / "head.json").string(), params, config);

  std::ofstream hist((dir / "history.csv").string());
  if (!hist) throw IoError("write failed: history.csv");
  hist << "epoch,train_loss,train_accuracy,train_precision,train_recall,"
          "train_mse,val_loss,val_accuracy,val_precision,val_recall,val_mse\n";
  for (std::size_t e = 0; e < history.train.size(); ++e) {
    const EpochStats& t = history.train[e];
    const EpochStats& v = history.validation[e];
    hist << e + 1 << "," << t.loss << "," << t.accuracy << "," << t.precision
         << "," << t.recall << "," << t.mse << "," << v.loss << ","
         << v.accuracy << "," << v.precision << "," << v.recall << ","
         << v.mse << "\n";
  }
  std::cerr << "best epoch: " << history.best_epoch + 1
            << (history.stopped_early ? " (early stop)" : "") << "\n";
  return 0;
}

int runPredict(const std::string& head_path, const std::string& manifest_path,
               std::string model_name, const std::string& out_path) {
  auto [params, config] = loadHead(head_path);
  DatasetManifest manifest = loadManifest(manifest_path);
  if (manifest.feature_dim != config.input_dim) {
    throw ValidationError("manifest feature dim does not match head input dim");
  }
  Matrix probs = headForward(params, config, manifestFeatures(manifest),
                             Mode::kEval, nullptr);
  std::vector<std::string> ids;
  ids.reserve(manifest.records.size());
  for (const ManifestRecord& r : manifest.records) ids.push_back(r.id);
  if (model_name.empty()) model_name = "head";
  savePredictionFile(out_path, model_name, ids, manifest.class_names, probs);
  return 0;
}

int runEnsembleAvg(const std::vector<std::string>& pred_paths,
                   const std::string& labels_path, bool paper_rounding,
                   const std::string& out_dir) {
  auto [preds, ids] = loadPredictions(pred_paths);
  auto [label_ids, labels, class_names] = loadLabels(labels_path);
  checkLabelAgreement(ids, label_ids);
  std::vector<SweepRow> rows = pairwiseEnsembleSweep(preds, labels);
  EmitOptions opts;
  opts.paper_rounding = paper_rounding;
  emitSweepTable(rows, out_dir, opts);
  return 0;
}

int runEnsembleTune(const std::vector<std::string>& pred_paths,
                    const std::string& labels_path, double step,
                    bool unconstrained, double tune_split, std::uint64_t seed,
                    const std::string& out_dir) {
  auto [preds, ids] = loadPredictions(pred_paths);
  auto [label_ids, labels, class_names] = loadLabels(labels_path);
  checkLabelAgreement(ids, label_ids);

  GridSpec spec;
  spec.step = step;
  spec.unconstrained = unconstrained;

  PredictionSet tune_preds = preds;
  std::vector<int> tune_labels = labels;
  std::vector<int> holdout_idx;
  if (tune_split > 0.0) {
    auto [tune_idx, rest] = tuneSplitIndices(
        labels, static_cast<int>(class_names.size()), tune_split, seed);
    tune_preds = subsetSamples(preds, tune_idx);
    tune_labels = subsetLabels(labels, tune_idx);
    holdout_idx = std::move(rest);
  } else {
    std::cerr << "warning: tuning on the full evaluation set (no "
                 "--tune-split); tuned accuracy is optimistically biased\n";
  }

  GridSearchResult result = gridSearchWeights(tune_preds, tune_labels, spec);
  emitTunedWeights(preds.model_names, result.best, out_dir);
  emitGridTrace(result.trace, static_cast<int>(preds.numModels()), out_dir);

  nlohmann::ordered_json summary;
  summary["format_version"] = 1;
  summary["step"] = step;
  summary["unconstrained"] = unconstrained;
  summary["tuning_samples"] = tune_labels.size();
  summary["best_accuracy"] = result.best_accuracy;
  if (!holdout_idx.empty()) {
    EnsembleResult holdout =
        weightedCombine(subsetSamples(preds, holdout_idx), result.best,
                        subsetLabels(labels, holdout_idx));
    summary["holdout_samples"] = holdout_idx.size();
    summary["holdout_accuracy"] = holdout.accuracy;
  }
  std::ofstream out((fs::path(out_dir) / "tune_summary.json").string());
  if (!out) throw IoError("write failed: tune_summary.json");
  out << summary.dump(2) << "\n";
  return 0;
}

int runEval(const std::vector<std::string>& pred_paths,
            const std::string& labels_path, const std::string& weights_path,
            bool paper_rounding, bool normalize, const std::string& out_dir) {
  auto [preds, ids] = loadPredictions(pred_paths);
  auto [label_ids, labels, class_names] = loadLabels(labels_path);
  checkLabelAgreement(ids, label_ids);

  WeightVector w;
  if (!weights_path.empty()) {
    w = loadWeights(weights_path, preds.model_names);
  } else {
    w.weights = Vector::Constant(preds.numModels(),
                                 1.0 / static_cast<double>(preds.numModels()));
  }
  EnsembleResult combined = weightedCombine(preds, w, labels);
  const Matrix& scores =
      normalize ? combined.combined_normalized : combined.combined;
  EvalReport report =
      evaluate(labels, combined.labels, scores,
               static_cast<Eigen::Index>(class_names.size()), class_names);
  EmitOptions opts;
  opts.paper_rounding = paper_rounding;
  emitEvalReport(report, out_dir, opts);
  return 0;
}

}  // namespace

int cliDispatch(int argc, const char* const* argv) {
  CLI::App app{"ensemble tuning and evaluation pipeline"};
  app.require_subcommand(1);

  std::string out_dir = defaultOutDir();
  std::uint64_t seed = 0;

  // synth
  auto* synth = app.add_subcommand("synth", "generate a synthetic fixture");
  int s_models = 7;
  int s_samples = 2000;
  int s_classes = 5;
  std::vector<double> s_targets;
  synth->add_option("--models", s_models, "number of models");
  synth->add_option("--samples", s_samples, "number of samples");
  synth->add_option("--classes", s_classes, "number of classes");
  synth->add_option("--targets", s_targets,
                    "per-model accuracy targets in (1/C, 1]");
  synth->add_option("--seed", seed, "rng seed");
  synth->add_option("--out", out_dir, "output directory");

  // train-head
  auto* train = app.add_subcommand("train-head", "train a classifier head");
  std::string t_manifest;
  double t_split = 0.7;
  HeadConfig t_config;
  std::vector<Eigen::Index> t_hidden;
  train->add_option("--manifest", t_manifest, "feature manifest csv")
      ->required();
  train->add_option("--split", t_split, "train fraction");
  train->add_option("--seed", t_config.seed, "rng seed");
  train->add_option("--lambda", t_config.lambda, "L1 coefficient");
  train->add_option("--dropout", t_config.dropout_rate, "dropout rate");
  train->add_option("--lr", t_config.learning_rate, "learning rate");
  train->add_option("--batch", t_config.batch_size, "batch size");
  train->add_option("--epochs", t_config.max_epochs, "max epochs");
  train->add_option("--patience", t_config.patience, "early stop patience");
  train->add_option("--hidden", t_hidden, "three hidden layer widths");
  train->add_option("--out", out_dir, "output directory");

  // predict
  auto* predict = app.add_subcommand("predict", "run a trained head");
  std::string p_head;
  std::string p_manifest;
  std::string p_name;
  std::string p_out = "predictions.csv";
  predict->add_option("--head", p_head, "head.json path")->required();
  predict->add_option("--manifest", p_manifest, "feature manifest csv")
      ->required();
  predict->add_option("--model-name", p_name, "model name for the output");
  predict->add_option("--out", p_out, "output prediction csv");

  // ensemble avg | tune
  auto* ensemble = app.add_subcommand("ensemble", "combine model predictions");
  ensemble->require_subcommand(1);
  std::vector<std::string> e_preds;
  std::string e_labels;
  double e_step = 0.1;
  double e_tune_split = 0.0;
  bool e_unconstrained = false;
  bool e_rounding = false;

  auto* avg = ensemble->add_subcommand("avg", "pairwise average-ensemble sweep");
  avg->add_option("--preds", e_preds, "prediction csv files")->required();
  avg->add_option("--labels", e_labels, "labels csv")->required();
  avg->add_flag("--paper-rounding", e_rounding, "rounded table output");
  avg->add_option("--out", out_dir, "output directory");

  auto* tune = ensemble->add_subcommand("tune", "grid-search ensemble weights");
  tune->add_option("--preds", e_preds, "prediction csv files")->required();
  tune->add_option("--labels", e_labels, "labels csv")->required();
  tune->add_option("--step", e_step, "weight lattice step (1/step integral)");
  tune->add_option("--tune-split", e_tune_split,
                   "fraction of samples used for tuning (rest held out)");
  tune->add_flag("--unconstrained", e_unconstrained,
                 "search the full box instead of the simplex");
  tune->add_option("--seed", seed, "rng seed for the tune split");
  tune->add_option("--out", out_dir, "output directory");

  // eval
  auto* eval = app.add_subcommand("eval", "evaluate combined predictions");
  std::vector<std::string> v_preds;
  std::string v_labels;
  std::string v_weights;
  bool v_rounding = false;
  bool v_normalize = false;
  eval->add_option("--preds", v_preds, "prediction csv files")->required();
  eval->add_option("--labels", v_labels, "labels csv")->required();
  eval->add_option("--weights", v_weights,
                   "weights.json (default: uniform average)");
  eval->add_flag("--paper-rounding", v_rounding, "rounded table output");
  eval->add_flag("--normalize", v_normalize,
                 "use row-normalized combined probabilities as ROC scores");
  eval->add_option("--out", out_dir, "output directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (synth->parsed()) {
      return runSynth(s_models, s_samples, s_classes, s_targets, seed,
                      out_dir);
    }
    if (train->parsed()) {
      if (!t_hidden.empty()) {
        if (t_hidden.size() != 3) {
          throw ValidationError("--hidden needs exactly three widths");
        }
        t_config.hidden_dims = {t_hidden[0], t_hidden[1], t_hidden[2]};
      }
      return runTrainHead(t_manifest, t_split, t_config, out_dir);
    }
    if (predict->parsed()) {
      return runPredict(p_head, p_manifest, p_name, p_out);
    }
    if (avg->parsed()) {
      return runEnsembleAvg(e_preds, e_labels, e_rounding, out_dir);
    }
    if (tune->parsed()) {
      return runEnsembleTune(e_preds, e_labels, e_step, e_unconstrained,
                             e_tune_split, seed, out_dir);
    }
    if (eval->parsed()) {
      return runEval(v_preds, v_labels, v_weights, v_rounding, v_normalize,
                     out_dir);
    }
  } catch (const IoError& e) {
    std::cerr << "io error: " << e.what() << "\n";
    return 2;
  } catch (const ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}

int cliDispatch(const std::vector<std::string>& args) {
  std::vector<const char*> argv;
  argv.push_back("enspipe");
  for (const std::string& a : args) argv.push_back(a.c_str());
  return cliDispatch(static_cast<int>(argv.size()), argv.data());
}

}  // namespace enspipe
