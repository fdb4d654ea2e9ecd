#ifndef ENSPIPE_ENSEMBLE_HPP_
#define ENSPIPE_ENSEMBLE_HPP_

#include <string>
#include <vector>

#include "enspipe/metrics.hpp"
#include "enspipe/numerics.hpp"

namespace enspipe {

// Per-model class-probability predictions over a shared sample set:
// probs[m] is an N x C matrix for model m.
struct PredictionSet {
  std::vector<std::string> model_names;
  std::vector<Matrix> probs;

  Eigen::Index numModels() const {
    return static_cast<Eigen::Index>(probs.size());
  }
  Eigen::Index numSamples() const {
    return probs.empty() ? 0 : probs.front().rows();
  }
  Eigen::Index numClasses() const {
    return probs.empty() ? 0 : probs.front().cols();
  }

  // Checks name uniqueness, shape agreement and that every row is a
  // probability distribution (sum within 1e-6 of 1, nonnegative entries).
  void validate() const;
};

struct WeightVector {
  Vector weights;
};

// Discrete simplex lattice with the given step; 1/step must be integral.
struct GridSpec {
  double step = 0.1;
  bool unconstrained = false;  // enumerate the full box instead of the simplex
};

struct EnsembleResult {
  std::vector<int> labels;
  Matrix combined;             // raw weighted sums, N x C
  Matrix combined_normalized;  // rows rescaled to sum to 1
  double accuracy = 0.0;       // percent, against supplied labels
};

// combined[n][c] = sum_m w_m * probs[m][n][c]; weights used as given, no
// normalization. Labels by argmax with lowest-index tie-break.
EnsembleResult weightedCombine(const PredictionSet& preds,
                               const WeightVector& w,
                               const std::vector<int>& truth = {});

// Equal-weight combine over a subset of models.
EnsembleResult averageEnsemble(const PredictionSet& preds,
                               const std::vector<int>& subset,
                               const std::vector<int>& truth = {});

// All C(M, k) k-subsets of {0..M-1} in lexicographic order.
std::vector<std::vector<int>> enumerateSubsets(int m, int k);

// All weight vectors on the step lattice, lexicographic. Simplex mode
// keeps vectors summing to 1; unconstrained mode enumerates the full box.
std::vector<WeightVector> enumerateWeightLattice(int m, const GridSpec& spec);

struct GridSearchResult {
  WeightVector best;
  double best_accuracy = 0.0;
  std::vector<std::pair<WeightVector, double>> trace;
};

// Exhaustive accuracy maximization over the lattice; ties broken by the
// first vector in enumeration order. All-zero vectors (possible in
// unconstrained mode) are skipped.
GridSearchResult gridSearchWeights(const PredictionSet& preds,
                                   const std::vector<int>& truth,
                                   const GridSpec& spec,
                                   bool keep_trace = true);

struct SweepRow {
  std::string name;
  std::vector<int> subset;
  EvalReport report;
};

// Average ensemble over every 2-subset plus the full model set.
std::vector<SweepRow> pairwiseEnsembleSweep(const PredictionSet& preds,
                                            const std::vector<int>& truth);

}  // namespace enspipe

#endif  // ENSPIPE_ENSEMBLE_HPP_
