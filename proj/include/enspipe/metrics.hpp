#ifndef ENSPIPE_METRICS_HPP_
#define ENSPIPE_METRICS_HPP_

#include <string>
#include <vector>

#include "enspipe/numerics.hpp"

namespace enspipe {

// Rows are true classes, columns predicted classes.
struct ConfusionMatrix {
  std::vector<std::string> class_names;
  Eigen::Matrix<long, Eigen::Dynamic, Eigen::Dynamic> counts;

  Eigen::Index numClasses() const { return counts.rows(); }
  long total() const { return counts.sum(); }
};

// Per-class one-vs-rest metrics, percentages in [0, 100].
struct ClassMetrics {
  std::vector<double> precision;
  std::vector<double> recall;
  std::vector<double> f1;
  std::vector<long> support;
  // Set when the corresponding precision/recall denominator was zero and
  // the value was reported as 0.
  std::vector<bool> zero_division;
};

struct RocCurve {
  std::vector<double> fpr;
  std::vector<double> tpr;
  double auc = 0.0;
};

struct EvalReport {
  ConfusionMatrix confusion;
  ClassMetrics per_class;
  double macro_precision = 0.0;
  double macro_recall = 0.0;
  double macro_f1 = 0.0;
  double accuracy = 0.0;
  std::vector<RocCurve> per_class_roc;  // may be empty when degenerate
  RocCurve micro_roc;
  bool has_roc = false;
};

ConfusionMatrix confusion(const std::vector<int>& truth,
                          const std::vector<int>& predicted,
                          Eigen::Index num_classes,
                          std::vector<std::string> class_names = {});

ClassMetrics perClassMetrics(const ConfusionMatrix& cm);

// 100 * trace / total.
double accuracy(const ConfusionMatrix& cm);

struct MacroAverages {
  double precision;
  double recall;
  double f1;
};

MacroAverages macroAverage(const ClassMetrics& metrics);

// One-vs-rest ROC for class c: thresholds swept over distinct scores
// descending, tied scores grouped into one step, trapezoidal AUC.
RocCurve rocOneVsRest(const Matrix& scores, const std::vector<int>& truth,
                      Eigen::Index c);

// Single ROC over all N*C (score, is-positive) pairs pooled one-vs-rest.
RocCurve rocMicroAverage(const Matrix& scores, const std::vector<int>& truth);

// Full report: confusion, per-class and macro metrics, accuracy, ROC.
// scores may be empty (0x0) to skip the ROC section.
EvalReport evaluate(const std::vector<int>& truth,
                    const std::vector<int>& predicted, const Matrix& scores,
                    Eigen::Index num_classes,
                    std::vector<std::string> class_names = {});

}  // namespace enspipe

#endif  // ENSPIPE_METRICS_HPP_
