#include "enspipe/ensemble.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <sstream>

namespace enspipe {

namespace {

std::vector<int> combinedLabels(const Matrix& combined) {
  std::vector<int> labels(static_cast<std::size_t>(combined.rows()));
  for (Eigen::Index n = 0; n < combined.rows(); ++n) {
    labels[static_cast<std::size_t>(n)] = static_cast<int>(argmaxRow(combined, n));
  }
  return labels;
}

double labelAccuracy(const std::vector<int>& labels,
                     const std::vector<int>& truth) {
  if (truth.empty()) return 0.0;
  if (truth.size() != labels.size()) {
    throw ValidationError("ensemble: label count does not match sample count");
  }
  std::size_t correct = 0;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    if (labels[i] == truth[i]) ++correct;
  }
  return 100.0 * static_cast<double>(correct) /
         static_cast<double>(truth.size());
}

int latticeSteps(double step) {
  if (step <= 0.0) {
    throw ValidationError("grid: step must be positive");
  }
  double inv = 1.0 / step;
  int k = static_cast<int>(std::llround(inv));
  if (k < 1 || std::abs(inv - static_cast<double>(k)) > 1e-9) {
    std::ostringstream os;
    os << "grid: 1/step must be an integer, got step=" << step;
    throw ValidationError(os.str());
  }
  return k;
}

}  // namespace

void PredictionSet::validate() const {
  if (probs.size() != model_names.size()) {
    throw ValidationError("prediction set: names and tensors differ in count");
  }
  std::set<std::string> seen(model_names.begin(), model_names.end());
  if (seen.size() != model_names.size()) {
    throw ValidationError("prediction set: duplicate model names");
  }
  for (std::size_t m = 0; m < probs.size(); ++m) {
    const Matrix& p = probs[m];
    if (p.rows() != numSamples() || p.cols() != numClasses()) {
      throw ValidationError("prediction set: model '" + model_names[m] +
                            "' has mismatched shape");
    }
    for (Eigen::Index n = 0; n < p.rows(); ++n) {
      if (p.row(n).minCoeff() < 0.0 ||
          std::abs(p.row(n).sum() - 1.0) > 1e-6) {
        std::ostringstream os;
        os << "prediction set: model '" << model_names[m] << "' row " << n
           << " is not a probability distribution";
        throw ValidationError(os.str());
      }
    }
  }
}

EnsembleResult weightedCombine(const PredictionSet& preds,
                               const WeightVector& w,
                               const std::vector<int>& truth) {
  Eigen::Index m = preds.numModels();
  if (w.weights.size() != m) {
    std::ostringstream os;
    os << "weighted combine: " << w.weights.size() << " weights for " << m
       << " models";
    throw ValidationError(os.str());
  }
  if (w.weights.minCoeff() < 0.0) {
    throw ValidationError("weighted combine: weights must be nonnegative");
  }
  if (w.weights.maxCoeff() <= 0.0) {
    throw ValidationError("weighted combine: all-zero weight vector");
  }

  EnsembleResult result;
  result.combined = Matrix::Zero(preds.numSamples(), preds.numClasses());
  for (Eigen::Index k = 0; k < m; ++k) {
    if (w.weights[k] != 0.0) {
      result.combined += w.weights[k] * preds.probs[static_cast<std::size_t>(k)];
    }
  }
  result.combined_normalized = result.combined;
  for (Eigen::Index n = 0; n < result.combined.rows(); ++n) {
    double s = result.combined.row(n).sum();
    if (s > 0.0) result.combined_normalized.row(n) /= s;
  }
  result.labels = combinedLabels(result.combined);
  result.accuracy = labelAccuracy(result.labels, truth);
  return result;
}

EnsembleResult averageEnsemble(const PredictionSet& preds,
                               const std::vector<int>& subset,
                               const std::vector<int>& truth) {
  if (subset.empty()) {
    throw ValidationError("average ensemble: empty subset");
  }
  std::set<int> distinct(subset.begin(), subset.end());
  if (distinct.size() != subset.size()) {
    throw ValidationError("average ensemble: duplicate model index in subset");
  }
  WeightVector w;
  w.weights = Vector::Zero(preds.numModels());
  for (int idx : subset) {
    if (idx < 0 || idx >= preds.numModels()) {
      throw ValidationError("average ensemble: model index " +
                            std::to_string(idx) + " out of range");
    }
    w.weights[idx] = 1.0 / static_cast<double>(subset.size());
  }
  return weightedCombine(preds, w, truth);
}

std::vector<std::vector<int>> enumerateSubsets(int m, int k) {
  if (k <= 0 || k > m) {
    std::ostringstream os;
    os << "subsets: k=" << k << " out of range for m=" << m;
    throw ValidationError(os.str());
  }
  std::vector<std::vector<int>> out;
  std::vector<int> cur(static_cast<std::size_t>(k));
  for (int i = 0; i < k; ++i) cur[static_cast<std::size_t>(i)] = i;
  while (true) {
    out.push_back(cur);
    int i = k - 1;
    while (i >= 0 && cur[static_cast<std::size_t>(i)] == m - k + i) --i;
    if (i < 0) break;
    cur[static_cast<std::size_t>(i)]++;
    for (int j = i + 1; j < k; ++j) {
      cur[static_cast<std::size_t>(j)] = cur[static_cast<std::size_t>(j - 1)] + 1;
    }
  }
  return out;
}

std::vector<WeightVector> enumerateWeightLattice(int m, const GridSpec& spec) {
  if (m < 1) {
    throw ValidationError("lattice: need at least one model");
  }
  int steps = latticeSteps(spec.step);
  std::vector<WeightVector> out;
  std::vector<int> counts(static_cast<std::size_t>(m), 0);

  auto emit = [&]() {
    WeightVector w;
    w.weights.resize(m);
    for (int i = 0; i < m; ++i) {
      w.weights[i] = static_cast<double>(counts[static_cast<std::size_t>(i)]) /
                     static_cast<double>(steps);
    }
    out.push_back(std::move(w));
  };

  if (spec.unconstrained) {
    // Full box {0, step, ..., 1}^m in lexicographic order.
    while (true) {
      emit();
      int i = m - 1;
      while (i >= 0 && counts[static_cast<std::size_t>(i)] == steps) {
        counts[static_cast<std::size_t>(i)] = 0;
        --i;
      }
      if (i < 0) break;
      counts[static_cast<std::size_t>(i)]++;
    }
    return out;
  }

  // Simplex: compositions of `steps` into m parts, lexicographic.
  auto recurse = [&](auto&& self, int pos, int remaining) -> void {
    if (pos == m - 1) {
      counts[static_cast<std::size_t>(pos)] = remaining;
      emit();
      return;
    }
    for (int c = 0; c <= remaining; ++c) {
      counts[static_cast<std::size_t>(pos)] = c;
      self(self, pos + 1, remaining - c);
    }
  };
  recurse(recurse, 0, steps);
  return out;
}

GridSearchResult gridSearchWeights(const PredictionSet& preds,
                                   const std::vector<int>& truth,
                                   const GridSpec& spec, bool keep_trace) {
  if (truth.size() != static_cast<std::size_t>(preds.numSamples())) {
    throw ValidationError("grid search: label count != sample count");
  }
  std::vector<WeightVector> lattice =
      enumerateWeightLattice(static_cast<int>(preds.numModels()), spec);

  GridSearchResult result;
  result.best_accuracy = -1.0;
  for (const WeightVector& w : lattice) {
    if (w.weights.maxCoeff() <= 0.0) continue;
    EnsembleResult combined = weightedCombine(preds, w, truth);
    if (keep_trace) {
      result.trace.emplace_back(w, combined.accuracy);
    }
    if (combined.accuracy > result.best_accuracy) {
      result.best_accuracy = combined.accuracy;
      result.best = w;
    }
  }
  if (result.best_accuracy < 0.0) {
    throw ValidationError("grid search: lattice produced no usable vector");
  }
  return result;
}

std::vector<SweepRow> pairwiseEnsembleSweep(const PredictionSet& preds,
                                            const std::vector<int>& truth) {
  int m = static_cast<int>(preds.numModels());
  if (m < 2) {
    throw ValidationError("ensemble sweep: need at least 2 models");
  }
  std::vector<std::vector<int>> subsets = enumerateSubsets(m, 2);
  std::vector<int> full(static_cast<std::size_t>(m));
  for (int i = 0; i < m; ++i) full[static_cast<std::size_t>(i)] = i;
  subsets.push_back(full);

  std::vector<SweepRow> rows;
  rows.reserve(subsets.size());
  for (const std::vector<int>& subset : subsets) {
    SweepRow row;
    row.subset = subset;
    for (std::size_t i = 0; i < subset.size(); ++i) {
      if (i > 0) row.name += "+";
      row.name += preds.model_names[static_cast<std::size_t>(subset[i])];
    }
    EnsembleResult combined = averageEnsemble(preds, subset, truth);
    row.report = evaluate(truth, combined.labels, Matrix(),
                          preds.numClasses());
    rows.push_back(std::move(row));
  }
  return rows;
}

}  // namespace enspipe
