#include <cmath>
#include <doctest.h>

#include "enspipe/ensemble.hpp"
#include "enspipe/rng.hpp"

using namespace enspipe;

namespace {

PredictionSet randomPredictions(int m, int n, int c, SeededRng& rng) {
  PredictionSet set;
  for (int i = 0; i < m; ++i) {
    set.model_names.push_back("m" + std::to_string(i));
    Matrix p(n, c);
    for (int r = 0; r < n; ++r) {
      double sum = 0.0;
      for (int k = 0; k < c; ++k) {
        p(r, k) = rng.uniform(0.01, 1.0);
        sum += p(r, k);
      }
      p.row(r) /= sum;
    }
    set.probs.push_back(std::move(p));
  }
  return set;
}

long binomial(int n, int k) {
  long r = 1;
  for (int i = 0; i < k; ++i) r = r * (n - i) / (i + 1);
  return r;
}

// Independent brute-force search; shares no code with gridSearchWeights.
std::pair<std::vector<double>, double> bruteForceSearch(
    const PredictionSet& preds, const std::vector<int>& truth, double step) {
  int m = static_cast<int>(preds.numModels());
  int steps = static_cast<int>(std::llround(1.0 / step));
  std::vector<int> counts(static_cast<std::size_t>(m), 0);
  std::vector<double> best;
  double best_acc = -1.0;

  auto evalCounts = [&]() {
    std::size_t correct = 0;
    for (Eigen::Index n = 0; n < preds.numSamples(); ++n) {
      int arg = 0;
      double best_v = -1.0;
      for (Eigen::Index c = 0; c < preds.numClasses(); ++c) {
        double v = 0.0;
        for (int k = 0; k < m; ++k) {
          v += (static_cast<double>(counts[static_cast<std::size_t>(k)]) /
                steps) *
               preds.probs[static_cast<std::size_t>(k)](n, c);
        }
        if (v > best_v) {
          best_v = v;
          arg = static_cast<int>(c);
        }
      }
      if (arg == truth[static_cast<std::size_t>(n)]) ++correct;
    }
    return 100.0 * static_cast<double>(correct) /
           static_cast<double>(preds.numSamples());
  };

  auto recurse = [&](auto&& self, int pos, int remaining) -> void {
    if (pos == m - 1) {
      counts[static_cast<std::size_t>(pos)] = remaining;
      if (remaining == 0 &&
          *std::max_element(counts.begin(), counts.end()) == 0) {
        return;
      }
      double acc = evalCounts();
      if (acc > best_acc) {
        best_acc = acc;
        best.clear();
        for (int k = 0; k < m; ++k) {
          best.push_back(
              static_cast<double>(counts[static_cast<std::size_t>(k)]) / steps);
        }
      }
      return;
    }
    for (int v = 0; v <= remaining; ++v) {
      counts[static_cast<std::size_t>(pos)] = v;
      self(self, pos + 1, remaining - v);
    }
  };
  recurse(recurse, 0, steps);
  return {best, best_acc};
}

}  // namespace

TEST_CASE("weighted combine hand example") {
  PredictionSet set;
  set.model_names = {"a", "b"};
  Matrix pa(1, 2), pb(1, 2);
  pa << 0.6, 0.4;
  pb << 0.2, 0.8;
  set.probs = {pa, pb};
  WeightVector w;
  w.weights = Vector::Constant(2, 0.5);
  EnsembleResult r = weightedCombine(set, w, {1});
  CHECK(r.combined(0, 0) == doctest::Approx(0.4).epsilon(1e-12));
  CHECK(r.combined(0, 1) == doctest::Approx(0.6).epsilon(1e-12));
  CHECK(r.labels[0] == 1);
  CHECK(r.accuracy == 100.0);
}

TEST_CASE("one-hot weights select a single model") {
  SeededRng rng(1);
  PredictionSet set = randomPredictions(4, 30, 3, rng);
  WeightVector w;
  w.weights = Vector::Zero(4);
  w.weights[2] = 1.0;
  EnsembleResult r = weightedCombine(set, w);
  for (Eigen::Index n = 0; n < 30; ++n) {
    CHECK(r.labels[static_cast<std::size_t>(n)] ==
          static_cast<int>(argmaxRow(set.probs[2], n)));
  }
}

TEST_CASE("weighted combine input validation") {
  SeededRng rng(2);
  PredictionSet set = randomPredictions(3, 5, 2, rng);
  WeightVector bad;
  bad.weights = Vector::Ones(2);
  CHECK_THROWS_AS(weightedCombine(set, bad), ValidationError);
  bad.weights = Vector::Zero(3);
  CHECK_THROWS_AS(weightedCombine(set, bad), ValidationError);
}

TEST_CASE("positive scaling of weights leaves labels unchanged") {
  SeededRng rng(3);
  PredictionSet set = randomPredictions(3, 40, 4, rng);
  WeightVector w;
  w.weights = Vector(3);
  for (int trial = 0; trial < 20; ++trial) {
    for (int i = 0; i < 3; ++i) w.weights[i] = rng.uniform(0.0, 1.0) + 0.01;
    std::vector<int> base = weightedCombine(set, w).labels;
    double c = rng.uniform(0.1, 10.0);
    WeightVector scaled;
    scaled.weights = c * w.weights;
    CHECK(weightedCombine(set, scaled).labels == base);
  }
}

TEST_CASE("permuting models with their weights preserves combined probs") {
  SeededRng rng(4);
  PredictionSet set = randomPredictions(4, 15, 3, rng);
  WeightVector w;
  w.weights = Vector(4);
  w.weights << 0.1, 0.4, 0.2, 0.3;
  Matrix base = weightedCombine(set, w).combined;

  PredictionSet permuted;
  std::vector<int> perm = {2, 0, 3, 1};
  WeightVector pw;
  pw.weights = Vector(4);
  for (int i = 0; i < 4; ++i) {
    permuted.model_names.push_back(set.model_names[static_cast<std::size_t>(perm[i])]);
    permuted.probs.push_back(set.probs[static_cast<std::size_t>(perm[i])]);
    pw.weights[i] = w.weights[perm[i]];
  }
  Matrix after = weightedCombine(permuted, pw).combined;
  CHECK((base - after).cwiseAbs().maxCoeff() <= 1e-12);
}

TEST_CASE("average ensemble equals uniform weighted combine") {
  SeededRng rng(5);
  PredictionSet set = randomPredictions(5, 25, 3, rng);
  std::vector<int> all = {0, 1, 2, 3, 4};
  EnsembleResult avg = averageEnsemble(set, all);
  WeightVector uniform;
  uniform.weights = Vector::Constant(5, 0.2);
  CHECK(avg.labels == weightedCombine(set, uniform).labels);

  EnsembleResult single = averageEnsemble(set, {3});
  for (Eigen::Index n = 0; n < 25; ++n) {
    CHECK(single.labels[static_cast<std::size_t>(n)] ==
          static_cast<int>(argmaxRow(set.probs[3], n)));
  }

  CHECK_THROWS_AS(averageEnsemble(set, {}), ValidationError);
  CHECK_THROWS_AS(averageEnsemble(set, {1, 1}), ValidationError);
  CHECK_THROWS_AS(averageEnsemble(set, {9}), ValidationError);
}

TEST_CASE("subset enumeration counts and order") {
  CHECK(enumerateSubsets(7, 2).size() == 21);
  std::size_t total = 0;
  for (int k = 2; k <= 7; ++k) total += enumerateSubsets(7, k).size();
  CHECK(total == 120);
  auto full = enumerateSubsets(3, 3);
  REQUIRE(full.size() == 1);
  CHECK(full[0] == std::vector<int>({0, 1, 2}));
  auto pairs = enumerateSubsets(3, 2);
  CHECK(pairs == std::vector<std::vector<int>>({{0, 1}, {0, 2}, {1, 2}}));
  CHECK_THROWS_AS(enumerateSubsets(3, 0), ValidationError);
  CHECK_THROWS_AS(enumerateSubsets(3, 4), ValidationError);
}

TEST_CASE("weight lattice enumeration") {
  GridSpec spec;
  spec.step = 0.1;
  auto lattice = enumerateWeightLattice(7, spec);
  CHECK(lattice.size() == 8008);  // stars and bars C(16,6)
  CHECK(static_cast<long>(lattice.size()) == binomial(16, 6));
  for (const WeightVector& w : lattice) {
    CHECK(std::abs(w.weights.sum() - 1.0) <= 1e-9);
  }

  spec.step = 0.5;
  auto small = enumerateWeightLattice(2, spec);
  REQUIRE(small.size() == 3);
  CHECK(small[0].weights[0] == 0.0);
  CHECK(small[0].weights[1] == 1.0);
  CHECK(small[1].weights[0] == 0.5);
  CHECK(small[2].weights[0] == 1.0);

  auto forced = enumerateWeightLattice(1, spec);
  REQUIRE(forced.size() == 1);
  CHECK(forced[0].weights[0] == 1.0);

  GridSpec bad;
  bad.step = 0.3;
  CHECK_THROWS_AS(enumerateWeightLattice(2, bad), ValidationError);
}

TEST_CASE("unconstrained lattice enumerates the full box") {
  GridSpec spec;
  spec.step = 0.5;
  spec.unconstrained = true;
  auto box = enumerateWeightLattice(2, spec);
  CHECK(box.size() == 9);  // {0, .5, 1}^2
}

TEST_CASE("grid search single model has no freedom") {
  SeededRng rng(6);
  PredictionSet set = randomPredictions(1, 20, 3, rng);
  std::vector<int> truth(20);
  for (int i = 0; i < 20; ++i) {
    truth[static_cast<std::size_t>(i)] =
        static_cast<int>(rng.uniformInt(3));
  }
  GridSpec spec;
  GridSearchResult r = gridSearchWeights(set, truth, spec);
  CHECK(r.best.weights[0] == 1.0);
  WeightVector one;
  one.weights = Vector::Ones(1);
  CHECK(r.best_accuracy == weightedCombine(set, one, truth).accuracy);
}

TEST_CASE("grid search prefers a perfect model over a broken one") {
  PredictionSet set;
  set.model_names = {"good", "bad"};
  int n = 10;
  Matrix good(n, 2), bad(n, 2);
  std::vector<int> truth(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    int y = i % 2;
    truth[static_cast<std::size_t>(i)] = y;
    good(i, y) = 0.9;
    good(i, 1 - y) = 0.1;
    bad(i, y) = 0.02;
    bad(i, 1 - y) = 0.98;
  }
  set.probs = {good, bad};
  GridSpec spec;
  spec.step = 0.5;
  GridSearchResult r = gridSearchWeights(set, truth, spec);
  CHECK(r.best.weights[0] == 1.0);
  CHECK(r.best.weights[1] == 0.0);
  CHECK(r.best_accuracy == 100.0);
}

TEST_CASE("grid search matches the brute-force oracle bit for bit") {
  SeededRng rng(7);
  for (int trial = 0; trial < 100; ++trial) {
    int m = 1 + static_cast<int>(rng.uniformInt(3));
    int c = 2 + static_cast<int>(rng.uniformInt(2));
    int n = 5 + static_cast<int>(rng.uniformInt(16));
    PredictionSet set = randomPredictions(m, n, c, rng);
    std::vector<int> truth(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
      truth[static_cast<std::size_t>(i)] =
          static_cast<int>(rng.uniformInt(static_cast<std::uint64_t>(c)));
    }
    GridSpec spec;
    spec.step = 0.25;
    GridSearchResult got = gridSearchWeights(set, truth, spec);
    auto [oracle_w, oracle_acc] = bruteForceSearch(set, truth, spec.step);
    CHECK(got.best_accuracy == oracle_acc);
    REQUIRE(got.best.weights.size() == static_cast<Eigen::Index>(oracle_w.size()));
    for (Eigen::Index i = 0; i < got.best.weights.size(); ++i) {
      CHECK(got.best.weights[i] == oracle_w[static_cast<std::size_t>(i)]);
    }
  }
}

TEST_CASE("grid search dominates every single model and the trace maximum") {
  SeededRng rng(8);
  PredictionSet set = randomPredictions(4, 60, 3, rng);
  std::vector<int> truth(60);
  for (int i = 0; i < 60; ++i) {
    truth[static_cast<std::size_t>(i)] = static_cast<int>(rng.uniformInt(3));
  }
  GridSpec spec;
  spec.step = 0.25;
  GridSearchResult r = gridSearchWeights(set, truth, spec);
  double trace_max = -1.0;
  for (const auto& [w, acc] : r.trace) trace_max = std::max(trace_max, acc);
  CHECK(r.best_accuracy == trace_max);
  for (int k = 0; k < 4; ++k) {
    CHECK(r.best_accuracy >= averageEnsemble(set, {k}, truth).accuracy);
  }
}

TEST_CASE("pairwise sweep row counts") {
  SeededRng rng(9);
  PredictionSet set = randomPredictions(7, 20, 3, rng);
  std::vector<int> truth(20);
  for (int i = 0; i < 20; ++i) {
    truth[static_cast<std::size_t>(i)] = static_cast<int>(rng.uniformInt(3));
  }
  auto rows = pairwiseEnsembleSweep(set, truth);
  CHECK(rows.size() == 22);
  for (const SweepRow& row : rows) {
    CHECK(row.report.accuracy >= 0.0);
    CHECK(row.report.accuracy <= 100.0);
  }

  PredictionSet two;
  two.model_names = {set.model_names[0], set.model_names[1]};
  two.probs = {set.probs[0], set.probs[1]};
  auto rows2 = pairwiseEnsembleSweep(two, truth);
  REQUIRE(rows2.size() == 2);
  CHECK(rows2[0].report.accuracy == rows2[1].report.accuracy);

  PredictionSet one;
  one.model_names = {"solo"};
  one.probs = {set.probs[0]};
  CHECK_THROWS_AS(pairwiseEnsembleSweep(one, truth), ValidationError);
}

TEST_CASE("prediction set validation catches malformed rows") {
  PredictionSet set;
  set.model_names = {"a"};
  Matrix p(1, 2);
  p << 0.7, 0.6;
  set.probs = {p};
  CHECK_THROWS_AS(set.validate(), ValidationError);

  set.model_names = {"a", "a"};
  Matrix q(1, 2);
  q << 0.5, 0.5;
  set.probs = {q, q};
  CHECK_THROWS_AS(set.validate(), ValidationError);
}
