#include "enspipe/metrics.hpp"

#include <algorithm>
#include <numeric>
#include <sstream>

namespace enspipe {

namespace {

std::vector<std::string> defaultNames(Eigen::Index c) {
  std::vector<std::string> names;
  names.reserve(static_cast<std::size_t>(c));
  for (Eigen::Index i = 0; i < c; ++i) {
    names.push_back("class_" + std::to_string(i));
  }
  return names;
}

// ROC over (score, is_positive) pairs: descending score sweep with tied
// scores collapsed into one step, trapezoidal area.
RocCurve rocFromPairs(std::vector<std::pair<double, bool>>& pairs) {
  long pos = 0;
  long neg = 0;
  for (const auto& [score, is_pos] : pairs) {
    (is_pos ? pos : neg)++;
  }
  if (pos == 0 || neg == 0) {
    throw ValidationError(
        "roc: need at least one positive and one negative sample");
  }
  std::sort(pairs.begin(), pairs.end(),
            [](const auto& a, const auto& b) { return a.first > b.first; });

  RocCurve curve;
  curve.fpr.push_back(0.0);
  curve.tpr.push_back(0.0);
  long tp = 0;
  long fp = 0;
  std::size_t i = 0;
  while (i < pairs.size()) {
    double s = pairs[i].first;
    while (i < pairs.size() && pairs[i].first == s) {
      (pairs[i].second ? tp : fp)++;
      ++i;
    }
    curve.fpr.push_back(static_cast<double>(fp) / static_cast<double>(neg));
    curve.tpr.push_back(static_cast<double>(tp) / static_cast<double>(pos));
  }
  curve.fpr.back() = 1.0;
  curve.tpr.back() = 1.0;

  double auc = 0.0;
  for (std::size_t k = 1; k < curve.fpr.size(); ++k) {
    auc += (curve.fpr[k] - curve.fpr[k - 1]) *
           (curve.tpr[k] + curve.tpr[k - 1]) * 0.5;
  }
  curve.auc = auc;
  return curve;
}

}  // namespace

ConfusionMatrix confusion(const std::vector<int>& truth,
                          const std::vector<int>& predicted,
                          Eigen::Index num_classes,
                          std::vector<std::string> class_names) {
  if (truth.size() != predicted.size()) {
    throw ValidationError("confusion: label vectors differ in length");
  }
  ConfusionMatrix cm;
  cm.class_names = class_names.empty() ? defaultNames(num_classes)
                                       : std::move(class_names);
  cm.counts.setZero(num_classes, num_classes);
  for (std::size_t i = 0; i < truth.size(); ++i) {
    int t = truth[i];
    int p = predicted[i];
    if (t < 0 || t >= num_classes || p < 0 || p >= num_classes) {
      std::ostringstream os;
      os << "confusion: label out of range at sample " << i << " (true=" << t
         << ", pred=" << p << ", classes=" << num_classes << ")";
      throw ValidationError(os.str());
    }
    cm.counts(t, p)++;
  }
  return cm;
}

ClassMetrics perClassMetrics(const ConfusionMatrix& cm) {
  Eigen::Index c = cm.numClasses();
  ClassMetrics m;
  m.precision.resize(c);
  m.recall.resize(c);
  m.f1.resize(c);
  m.support.resize(c);
  m.zero_division.assign(static_cast<std::size_t>(c), false);
  for (Eigen::Index k = 0; k < c; ++k) {
    long tp = cm.counts(k, k);
    long fp = cm.counts.col(k).sum() - tp;
    long fn = cm.counts.row(k).sum() - tp;
    m.support[k] = tp + fn;
    bool flagged = false;
    double prec = 0.0;
    double rec = 0.0;
    if (tp + fp > 0) {
      prec = 100.0 * static_cast<double>(tp) / static_cast<double>(tp + fp);
    } else {
      flagged = true;
    }
    if (tp + fn > 0) {
      rec = 100.0 * static_cast<double>(tp) / static_cast<double>(tp + fn);
    } else {
      flagged = true;
    }
    double f1 = 0.0;
    if (prec + rec > 0.0) {
      f1 = 2.0 * prec * rec / (prec + rec);
    } else {
      flagged = true;
    }
    m.precision[k] = prec;
    m.recall[k] = rec;
    m.f1[k] = f1;
    m.zero_division[k] = flagged;
  }
  return m;
}

double accuracy(const ConfusionMatrix& cm) {
  long total = cm.total();
  if (total == 0) {
    throw ValidationError("accuracy: empty confusion matrix");
  }
  return 100.0 * static_cast<double>(cm.counts.trace()) /
         static_cast<double>(total);
}

MacroAverages macroAverage(const ClassMetrics& metrics) {
  double n = static_cast<double>(metrics.precision.size());
  MacroAverages avg{};
  avg.precision =
      std::accumulate(metrics.precision.begin(), metrics.precision.end(), 0.0) / n;
  avg.recall =
      std::accumulate(metrics.recall.begin(), metrics.recall.end(), 0.0) / n;
  avg.f1 = std::accumulate(metrics.f1.begin(), metrics.f1.end(), 0.0) / n;
  return avg;
}

RocCurve rocOneVsRest(const Matrix& scores, const std::vector<int>& truth,
                      Eigen::Index c) {
  if (static_cast<Eigen::Index>(truth.size()) != scores.rows()) {
    throw ValidationError("roc: score rows and label count differ");
  }
  std::vector<std::pair<double, bool>> pairs;
  pairs.reserve(truth.size());
  for (std::size_t i = 0; i < truth.size(); ++i) {
    pairs.emplace_back(scores(static_cast<Eigen::Index>(i), c),
                       truth[i] == c);
  }
  return rocFromPairs(pairs);
}

RocCurve rocMicroAverage(const Matrix& scores, const std::vector<int>& truth) {
  if (static_cast<Eigen::Index>(truth.size()) != scores.rows()) {
    throw ValidationError("roc: score rows and label count differ");
  }
  if (scores.cols() < 2) {
    throw ValidationError("roc micro-average: need at least 2 classes");
  }
  std::vector<std::pair<double, bool>> pairs;
  pairs.reserve(truth.size() * static_cast<std::size_t>(scores.cols()));
  for (Eigen::Index n = 0; n < scores.rows(); ++n) {
    for (Eigen::Index k = 0; k < scores.cols(); ++k) {
      pairs.emplace_back(scores(n, k), truth[static_cast<std::size_t>(n)] == k);
    }
  }
  return rocFromPairs(pairs);
}

EvalReport evaluate(const std::vector<int>& truth,
                    const std::vector<int>& predicted, const Matrix& scores,
                    Eigen::Index num_classes,
                    std::vector<std::string> class_names) {
  EvalReport report;
  report.confusion =
      confusion(truth, predicted, num_classes, std::move(class_names));
  report.per_class = perClassMetrics(report.confusion);
  MacroAverages avg = macroAverage(report.per_class);
  report.macro_precision = avg.precision;
  report.macro_recall = avg.recall;
  report.macro_f1 = avg.f1;
  report.accuracy = accuracy(report.confusion);
  if (scores.size() > 0) {
    report.per_class_roc.reserve(static_cast<std::size_t>(num_classes));
    for (Eigen::Index c = 0; c < num_classes; ++c) {
      bool has_pos = false;
      bool has_neg = false;
      for (int t : truth) {
        (t == c ? has_pos : has_neg) = true;
      }
      if (has_pos && has_neg) {
        report.per_class_roc.push_back(rocOneVsRest(scores, truth, c));
      } else {
        report.per_class_roc.push_back(RocCurve{});
      }
    }
    report.micro_roc = rocMicroAverage(scores, truth);
    report.has_roc = true;
  }
  return report;
}

}  // namespace enspipe
