#include "enspipe/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <nlohmann/json.hpp>
#include <sstream>

#include "enspipe/rng.hpp"

namespace enspipe {

namespace {

constexpr int kFormatVersion = 1;

using json = nlohmann::json;
using ojson = nlohmann::ordered_json;

std::ofstream openOut(const std::string& path) {
  std::ofstream out(path);
  if (!out) {
    throw IoError("cannot open for writing: " + path);
  }
  return out;
}

std::ifstream openIn(const std::string& path) {
  std::ifstream in(path);
  if (!in) {
    throw IoError("cannot open: " + path);
  }
  return in;
}

json readJson(const std::string& path) {
  std::ifstream in = openIn(path);
  json doc;
  try {
    in >> doc;
  } catch (const json::exception& e) {
    throw IoError("parse error in " + path + ": " + e.what());
  }
  return doc;
}

void writeJson(const std::string& path, const ojson& doc) {
  std::ofstream out = openOut(path);
  out << doc.dump(2) << "\n";
  if (!out) {
    throw IoError("write failed: " + path);
  }
}

std::vector<std::string> splitCsvLine(const std::string& line) {
  std::vector<std::string> fields;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      fields.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur += c;
    }
  }
  fields.push_back(cur);
  return fields;
}

void checkName(const std::string& name) {
  if (name.find(',') != std::string::npos || name.empty()) {
    throw ValidationError("name '" + name + "' must be non-empty and comma-free");
  }
}

std::string fullPrec(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::string shortNum(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%g", v);
  return buf;
}

double parseDouble(const std::string& s, const std::string& context) {
  try {
    std::size_t pos = 0;
    double v = std::stod(s, &pos);
    if (pos != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw IoError(context + ": bad number '" + s + "'");
  }
}

void checkFormatVersion(const json& meta, const std::string& path,
                        const std::string& kind) {
  if (!meta.contains("format_version") ||
      meta["format_version"].get<int>() != kFormatVersion) {
    throw IoError(path + ": missing or unsupported format_version");
  }
  if (meta.value("kind", "") != kind) {
    throw IoError(path + ": expected kind '" + kind + "'");
  }
}

}  // namespace

std::string sidecarPath(const std::string& csv_path) {
  std::string base = csv_path;
  if (base.size() > 4 && base.substr(base.size() - 4) == ".csv") {
    base = base.substr(0, base.size() - 4);
  }
  return base + ".meta.json";
}

std::pair<DatasetManifest, DatasetManifest> splitDataset(
    const DatasetManifest& manifest, const SplitSpec& spec) {
  if (spec.train_fraction <= 0.0 || spec.train_fraction >= 1.0) {
    throw ValidationError("split: fraction must be in (0, 1)");
  }
  SeededRng rng(spec.seed);
  DatasetManifest train;
  DatasetManifest test;
  train.class_names = test.class_names = manifest.class_names;
  train.feature_dim = test.feature_dim = manifest.feature_dim;

  auto splitIndices = [&](std::vector<std::size_t>& idx) {
    rng.shuffle(idx);
    std::size_t n_train = static_cast<std::size_t>(std::floor(
        spec.train_fraction * static_cast<double>(idx.size())));
    for (std::size_t i = 0; i < idx.size(); ++i) {
      (i < n_train ? train : test).records.push_back(manifest.records[idx[i]]);
    }
  };

  if (spec.stratified) {
    for (std::size_t c = 0; c < manifest.class_names.size(); ++c) {
      std::vector<std::size_t> idx;
      for (std::size_t i = 0; i < manifest.records.size(); ++i) {
        if (manifest.records[i].label == static_cast<int>(c)) idx.push_back(i);
      }
      if (idx.size() < 2) {
        throw ValidationError("split: class '" + manifest.class_names[c] +
                              "' has fewer than 2 samples (stratified)");
      }
      splitIndices(idx);
    }
  } else {
    std::vector<std::size_t> idx(manifest.records.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    splitIndices(idx);
  }
  return {std::move(train), std::move(test)};
}

Vector preprocessContract(const ManifestRecord& record,
                          Eigen::Index expected_dim) {
  if (record.features.size() != expected_dim) {
    std::ostringstream os;
    os << "record '" << record.id << "': expected " << expected_dim
       << " features, got " << record.features.size();
    throw ValidationError(os.str());
  }
  checkFinite(record.features, "record '" + record.id + "'");
  return record.features;
}

void saveManifest(const std::string& csv_path, const DatasetManifest& m) {
  for (const std::string& name : m.class_names) checkName(name);
  ojson meta;
  meta["format_version"] = kFormatVersion;
  meta["kind"] = "manifest";
  meta["class_names"] = m.class_names;
  meta["feature_dim"] = m.feature_dim;
  meta["num_records"] = m.records.size();
  writeJson(sidecarPath(csv_path), meta);

  std::ofstream out = openOut(csv_path);
  for (const ManifestRecord& r : m.records) {
    checkName(r.id);
    out << r.id << "," << m.class_names.at(static_cast<std::size_t>(r.label));
    for (Eigen::Index i = 0; i < r.features.size(); ++i) {
      out << "," << fullPrec(r.features[i]);
    }
    out << "\n";
  }
  if (!out) throw IoError("write failed: " + csv_path);
}

DatasetManifest loadManifest(const std::string& csv_path) {
  json meta = readJson(sidecarPath(csv_path));
  checkFormatVersion(meta, sidecarPath(csv_path), "manifest");
  DatasetManifest m;
  m.class_names = meta.at("class_names").get<std::vector<std::string>>();
  m.feature_dim = meta.at("feature_dim").get<Eigen::Index>();

  std::map<std::string, int> class_index;
  for (std::size_t i = 0; i < m.class_names.size(); ++i) {
    class_index[m.class_names[i]] = static_cast<int>(i);
  }

  std::ifstream in = openIn(csv_path);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::vector<std::string> fields = splitCsvLine(line);
    if (static_cast<Eigen::Index>(fields.size()) != 2 + m.feature_dim) {
      std::ostringstream os;
      os << csv_path << ":" << line_no << ": expected " << 2 + m.feature_dim
         << " fields, got " << fields.size();
      throw IoError(os.str());
    }
    ManifestRecord r;
    r.id = fields[0];
    auto it = class_index.find(fields[1]);
    if (it == class_index.end()) {
      throw IoError(csv_path + ": unknown class '" + fields[1] + "'");
    }
    r.label = it->second;
    r.features.resize(m.feature_dim);
    for (Eigen::Index i = 0; i < m.feature_dim; ++i) {
      r.features[i] = parseDouble(fields[static_cast<std::size_t>(2 + i)],
                                  csv_path + ":" + std::to_string(line_no));
    }
    preprocessContract(r, m.feature_dim);
    m.records.push_back(std::move(r));
  }
  return m;
}

void saveLabels(const std::string& csv_path,
                const std::vector<std::string>& ids,
                const std::vector<int>& labels,
                const std::vector<std::string>& class_names) {
  if (ids.size() != labels.size()) {
    throw ValidationError("labels: id and label counts differ");
  }
  ojson meta;
  meta["format_version"] = kFormatVersion;
  meta["kind"] = "labels";
  meta["class_names"] = class_names;
  meta["num_samples"] = ids.size();
  writeJson(sidecarPath(csv_path), meta);

  std::ofstream out = openOut(csv_path);
  for (std::size_t i = 0; i < ids.size(); ++i) {
    checkName(ids[i]);
    out << ids[i] << ","
        << class_names.at(static_cast<std::size_t>(labels[i])) << "\n";
  }
  if (!out) throw IoError("write failed: " + csv_path);
}

std::tuple<std::vector<std::string>, std::vector<int>,
           std::vector<std::string>>
loadLabels(const std::string& csv_path) {
  json meta = readJson(sidecarPath(csv_path));
  checkFormatVersion(meta, sidecarPath(csv_path), "labels");
  std::vector<std::string> class_names =
      meta.at("class_names").get<std::vector<std::string>>();
  std::map<std::string, int> class_index;
  for (std::size_t i = 0; i < class_names.size(); ++i) {
    class_index[class_names[i]] = static_cast<int>(i);
  }
  std::vector<std::string> ids;
  std::vector<int> labels;
  std::ifstream in = openIn(csv_path);
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> fields = splitCsvLine(line);
    if (fields.size() != 2) {
      throw IoError(csv_path + ": labels rows need exactly 2 fields");
    }
    auto it = class_index.find(fields[1]);
    if (it == class_index.end()) {
      throw IoError(csv_path + ": unknown class '" + fields[1] + "'");
    }
    ids.push_back(fields[0]);
    labels.push_back(it->second);
  }
  return {std::move(ids), std::move(labels), std::move(class_names)};
}

void savePredictionFile(const std::string& csv_path,
                        const std::string& model_name,
                        const std::vector<std::string>& ids,
                        const std::vector<std::string>& class_names,
                        const Matrix& rows, const std::string& values) {
  if (static_cast<Eigen::Index>(ids.size()) != rows.rows()) {
    throw ValidationError("predictions: id count != row count");
  }
  if (values != "probs" && values != "logits") {
    throw ValidationError("predictions: values must be 'probs' or 'logits'");
  }
  checkName(model_name);
  ojson meta;
  meta["format_version"] = kFormatVersion;
  meta["kind"] = "predictions";
  meta["model_name"] = model_name;
  meta["class_names"] = class_names;
  meta["num_samples"] = ids.size();
  meta["values"] = values;
  writeJson(sidecarPath(csv_path), meta);

  std::ofstream out = openOut(csv_path);
  for (std::size_t i = 0; i < ids.size(); ++i) {
    checkName(ids[i]);
    out << ids[i];
    for (Eigen::Index c = 0; c < rows.cols(); ++c) {
      out << "," << fullPrec(rows(static_cast<Eigen::Index>(i), c));
    }
    out << "\n";
  }
  if (!out) throw IoError("write failed: " + csv_path);
}

std::pair<PredictionSet, std::vector<std::string>> loadPredictions(
    const std::vector<std::string>& csv_paths) {
  if (csv_paths.empty()) {
    throw ValidationError("predictions: no files given");
  }
  PredictionSet set;
  std::vector<std::string> shared_ids;
  std::vector<std::string> shared_classes;

  for (const std::string& path : csv_paths) {
    json meta = readJson(sidecarPath(path));
    checkFormatVersion(meta, sidecarPath(path), "predictions");
    std::string model = meta.at("model_name").get<std::string>();
    std::vector<std::string> classes =
        meta.at("class_names").get<std::vector<std::string>>();
    bool logits = meta.at("values").get<std::string>() == "logits";
    Eigen::Index num_classes = static_cast<Eigen::Index>(classes.size());

    std::vector<std::string> ids;
    std::vector<Vector> rows;
    std::ifstream in = openIn(path);
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
      ++line_no;
      if (line.empty()) continue;
      std::vector<std::string> fields = splitCsvLine(line);
      if (static_cast<Eigen::Index>(fields.size()) != 1 + num_classes) {
        std::ostringstream os;
        os << path << ":" << line_no << ": expected " << 1 + num_classes
           << " fields, got " << fields.size();
        throw IoError(os.str());
      }
      ids.push_back(fields[0]);
      Vector row(num_classes);
      for (Eigen::Index c = 0; c < num_classes; ++c) {
        row[c] = parseDouble(fields[static_cast<std::size_t>(1 + c)],
                             path + ":" + std::to_string(line_no));
      }
      if (logits) {
        row = softmax(row);
      } else if (row.minCoeff() < 0.0 || std::abs(row.sum() - 1.0) > 1e-6) {
        std::ostringstream os;
        os << path << ":" << line_no << ": row does not sum to 1";
        throw ValidationError(os.str());
      }
      rows.push_back(std::move(row));
    }

    if (set.probs.empty()) {
      shared_ids = ids;
      shared_classes = classes;
    } else {
      if (classes != shared_classes) {
        throw ValidationError(path + ": class names differ from first file");
      }
      if (ids != shared_ids) {
        throw ValidationError(
            path + ": sample ids or order differ from first file");
      }
    }
    Matrix p(static_cast<Eigen::Index>(rows.size()), num_classes);
    for (std::size_t i = 0; i < rows.size(); ++i) {
      p.row(static_cast<Eigen::Index>(i)) = rows[i].transpose();
    }
    set.model_names.push_back(std::move(model));
    set.probs.push_back(std::move(p));
  }
  set.validate();
  return {std::move(set), std::move(shared_ids)};
}

std::pair<PredictionSet, std::vector<int>> synthFixture(
    int num_models, int num_samples, int num_classes,
    const std::vector<double>& accuracy_targets, std::uint64_t seed) {
  if (num_models < 1 || num_samples < 1 || num_classes < 2) {
    throw ValidationError("synth: need M >= 1, N >= 1, C >= 2");
  }
  if (accuracy_targets.size() != static_cast<std::size_t>(num_models)) {
    throw ValidationError("synth: need one accuracy target per model");
  }
  double chance = 1.0 / static_cast<double>(num_classes);
  for (double t : accuracy_targets) {
    if (t <= chance || t > 1.0) {
      std::ostringstream os;
      os << "synth: target " << t << " infeasible, must be in (" << chance
         << ", 1]";
      throw ValidationError(os.str());
    }
  }

  SeededRng rng(seed);
  std::vector<int> labels(static_cast<std::size_t>(num_samples));
  for (int& y : labels) {
    y = static_cast<int>(rng.uniformInt(static_cast<std::uint64_t>(num_classes)));
  }

  PredictionSet set;
  for (int m = 0; m < num_models; ++m) {
    set.model_names.push_back("model_" + std::to_string(m + 1));
    Matrix p(num_samples, num_classes);
    double target = accuracy_targets[static_cast<std::size_t>(m)];
    for (int n = 0; n < num_samples; ++n) {
      int truth = labels[static_cast<std::size_t>(n)];
      int winner = truth;
      if (rng.uniform() >= target) {
        // A wrong class, uniform over the others.
        int wrong = static_cast<int>(
            rng.uniformInt(static_cast<std::uint64_t>(num_classes - 1)));
        winner = wrong >= truth ? wrong + 1 : wrong;
      }
      double winner_mass = 0.51 + 0.44 * rng.uniform();
      Vector rest(num_classes - 1);
      for (Eigen::Index i = 0; i < rest.size(); ++i) {
        rest[i] = rng.uniform();
      }
      double rest_sum = rest.sum();
      double remainder = 1.0 - winner_mass;
      Eigen::Index k = 0;
      for (int c = 0; c < num_classes; ++c) {
        if (c == winner) {
          p(n, c) = winner_mass;
        } else {
          p(n, c) = rest_sum > 0.0 ? remainder * rest[k] / rest_sum
                                   : remainder / (num_classes - 1);
          ++k;
        }
      }
    }
    set.probs.push_back(std::move(p));
  }
  set.validate();
  return {std::move(set), std::move(labels)};
}

namespace {

std::string roundMetric(double v, const EmitOptions& opts) {
  if (!opts.paper_rounding) return fullPrec(v);
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.0f", v);
  return buf;
}

std::string roundAccuracy(double v, const EmitOptions& opts) {
  if (!opts.paper_rounding) return fullPrec(v);
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.2f", v);
  return buf;
}

ojson rocToJson(const RocCurve& roc) {
  ojson j;
  j["auc"] = roc.auc;
  j["fpr"] = roc.fpr;
  j["tpr"] = roc.tpr;
  return j;
}

RocCurve rocFromJson(const json& j) {
  RocCurve roc;
  roc.auc = j.at("auc").get<double>();
  roc.fpr = j.at("fpr").get<std::vector<double>>();
  roc.tpr = j.at("tpr").get<std::vector<double>>();
  return roc;
}

void writeRocCsv(const std::string& path, const RocCurve& roc) {
  std::ofstream out = openOut(path);
  out << "fpr,tpr\n";
  for (std::size_t i = 0; i < roc.fpr.size(); ++i) {
    out << fullPrec(roc.fpr[i]) << "," << fullPrec(roc.tpr[i]) << "\n";
  }
  if (!out) throw IoError("write failed: " + path);
}

}  // namespace

void emitEvalReport(const EvalReport& report, const std::string& out_dir,
                    const EmitOptions& opts) {
  std::filesystem::create_directories(out_dir);
  std::filesystem::path dir(out_dir);

  ojson doc;
  doc["format_version"] = kFormatVersion;
  doc["class_names"] = report.confusion.class_names;
  ojson cm = ojson::array();
  for (Eigen::Index r = 0; r < report.confusion.counts.rows(); ++r) {
    ojson row = ojson::array();
    for (Eigen::Index c = 0; c < report.confusion.counts.cols(); ++c) {
      row.push_back(report.confusion.counts(r, c));
    }
    cm.push_back(std::move(row));
  }
  doc["confusion"] = std::move(cm);
  doc["accuracy"] = report.accuracy;
  ojson per_class = ojson::array();
  for (std::size_t k = 0; k < report.per_class.precision.size(); ++k) {
    ojson c;
    c["name"] = report.confusion.class_names[k];
    c["precision"] = report.per_class.precision[k];
    c["recall"] = report.per_class.recall[k];
    c["f1"] = report.per_class.f1[k];
    c["support"] = report.per_class.support[k];
    c["zero_division"] = static_cast<bool>(report.per_class.zero_division[k]);
    per_class.push_back(std::move(c));
  }
  doc["per_class"] = std::move(per_class);
  doc["macro"] = {{"precision", report.macro_precision},
                  {"recall", report.macro_recall},
                  {"f1", report.macro_f1}};
  if (report.has_roc) {
    ojson roc;
    ojson pc = ojson::array();
    for (const RocCurve& r : report.per_class_roc) {
      if (r.fpr.empty()) {
        pc.push_back(nullptr);
      } else {
        pc.push_back(rocToJson(r));
      }
    }
    roc["per_class"] = std::move(pc);
    roc["micro"] = rocToJson(report.micro_roc);
    doc["roc"] = std::move(roc);
  }
  writeJson((dir / "report.json").string(), doc);

  std::ofstream tab = openOut((dir / "tables.csv").string());
  tab << "class,precision,recall,f1,support\n";
  for (std::size_t k = 0; k < report.per_class.precision.size(); ++k) {
    tab << report.confusion.class_names[k] << ","
        << roundMetric(report.per_class.precision[k], opts) << ","
        << roundMetric(report.per_class.recall[k], opts) << ","
        << roundMetric(report.per_class.f1[k], opts) << ","
        << report.per_class.support[k] << "\n";
  }
  tab << "macro_avg," << roundMetric(report.macro_precision, opts) << ","
      << roundMetric(report.macro_recall, opts) << ","
      << roundMetric(report.macro_f1, opts) << ","
      << report.confusion.total() << "\n";
  tab << "accuracy," << roundAccuracy(report.accuracy, opts) << ",,,\n";
  if (!tab) throw IoError("write failed: tables.csv");

  if (report.has_roc) {
    for (std::size_t k = 0; k < report.per_class_roc.size(); ++k) {
      if (!report.per_class_roc[k].fpr.empty()) {
        writeRocCsv(
            (dir / ("roc_" + report.confusion.class_names[k] + ".csv"))
                .string(),
            report.per_class_roc[k]);
      }
    }
    writeRocCsv((dir / "roc_micro.csv").string(), report.micro_roc);
  }
}

EvalReport loadEvalReport(const std::string& path) {
  json doc = readJson(path);
  if (doc.at("format_version").get<int>() != kFormatVersion) {
    throw IoError(path + ": unsupported format_version");
  }
  EvalReport report;
  report.confusion.class_names =
      doc.at("class_names").get<std::vector<std::string>>();
  const json& cm = doc.at("confusion");
  Eigen::Index c = static_cast<Eigen::Index>(cm.size());
  report.confusion.counts.resize(c, c);
  for (Eigen::Index r = 0; r < c; ++r) {
    for (Eigen::Index k = 0; k < c; ++k) {
      report.confusion.counts(r, k) =
          cm[static_cast<std::size_t>(r)][static_cast<std::size_t>(k)]
              .get<long>();
    }
  }
  report.accuracy = doc.at("accuracy").get<double>();
  for (const json& pc : doc.at("per_class")) {
    report.per_class.precision.push_back(pc.at("precision").get<double>());
    report.per_class.recall.push_back(pc.at("recall").get<double>());
    report.per_class.f1.push_back(pc.at("f1").get<double>());
    report.per_class.support.push_back(pc.at("support").get<long>());
    report.per_class.zero_division.push_back(
        pc.at("zero_division").get<bool>());
  }
  report.macro_precision = doc.at("macro").at("precision").get<double>();
  report.macro_recall = doc.at("macro").at("recall").get<double>();
  report.macro_f1 = doc.at("macro").at("f1").get<double>();
  if (doc.contains("roc")) {
    report.has_roc = true;
    for (const json& r : doc.at("roc").at("per_class")) {
      report.per_class_roc.push_back(r.is_null() ? RocCurve{}
                                                 : rocFromJson(r));
    }
    report.micro_roc = rocFromJson(doc.at("roc").at("micro"));
  }
  return report;
}

void emitSweepTable(const std::vector<SweepRow>& rows,
                    const std::string& out_dir, const EmitOptions& opts) {
  std::filesystem::create_directories(out_dir);
  std::ofstream out =
      openOut((std::filesystem::path(out_dir) / "tables.csv").string());
  out << "model,precision,recall,f1,accuracy\n";
  for (const SweepRow& row : rows) {
    out << row.name << "," << roundMetric(row.report.macro_precision, opts)
        << "," << roundMetric(row.report.macro_recall, opts) << ","
        << roundMetric(row.report.macro_f1, opts) << ","
        << roundAccuracy(row.report.accuracy, opts) << "\n";
  }
  if (!out) throw IoError("write failed: tables.csv");
}

void emitTunedWeights(const std::vector<std::string>& model_names,
                      const WeightVector& w, const std::string& out_dir) {
  if (static_cast<Eigen::Index>(model_names.size()) != w.weights.size()) {
    throw ValidationError("weights: name and weight counts differ");
  }
  std::filesystem::create_directories(out_dir);
  ojson doc;
  for (std::size_t i = 0; i < model_names.size(); ++i) {
    doc[model_names[i]] = w.weights[static_cast<Eigen::Index>(i)];
  }
  writeJson((std::filesystem::path(out_dir) / "weights.json").string(), doc);
}

void emitGridTrace(const std::vector<std::pair<WeightVector, double>>& trace,
                   int num_models, const std::string& out_dir) {
  std::filesystem::create_directories(out_dir);
  std::ofstream out =
      openOut((std::filesystem::path(out_dir) / "grid_trace.csv").string());
  for (int i = 1; i <= num_models; ++i) {
    out << "wt" << i << ",";
  }
  out << "acc\n";
  char acc_buf[32];
  for (const auto& [w, acc] : trace) {
    for (Eigen::Index i = 0; i < w.weights.size(); ++i) {
      out << shortNum(w.weights[i]) << ",";
    }
    std::snprintf(acc_buf, sizeof(acc_buf), "%.6f", acc);
    out << acc_buf << "\n";
  }
  if (!out) throw IoError("write failed: grid_trace.csv");
}

}  // namespace enspipe
