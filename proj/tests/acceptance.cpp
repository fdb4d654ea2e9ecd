// Acceptance suite: one pass/fail line per criterion, nonzero exit if any
// criterion fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <nlohmann/json.hpp>
#include <string>
#include <vector>

#include "enspipe/ensemble.hpp"
#include "enspipe/head.hpp"
#include "enspipe/metrics.hpp"
#include "enspipe/pipeline.hpp"
#include "enspipe/rng.hpp"

using namespace enspipe;
namespace fs = std::filesystem;

namespace {

int failures = 0;

void criterion(const std::string& name, const std::function<bool()>& check) {
  bool ok = false;
  std::string detail;
  auto start = std::chrono::steady_clock::now();
  try {
    ok = check();
  } catch (const std::exception& e) {
    detail = std::string(" (") + e.what() + ")";
  }
  auto ms = std::chrono::duration_cast<std::chrono::milliseconds>(
                std::chrono::steady_clock::now() - start)
                .count();
  std::printf("[%s] %s%s (%lld ms)\n", ok ? "PASS" : "FAIL", name.c_str(),
              detail.c_str(), static_cast<long long>(ms));
  if (!ok) ++failures;
}

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

// Brute-force grid search, independently coded.
std::pair<std::vector<double>, double> bruteForce(const PredictionSet& preds,
                                                  const std::vector<int>& truth,
                                                  double step) {
  int m = static_cast<int>(preds.numModels());
  int steps = static_cast<int>(std::llround(1.0 / step));
  std::vector<int> counts(static_cast<std::size_t>(m), 0);
  std::vector<double> best;
  double best_acc = -1.0;
  std::function<void(int, int)> recurse = [&](int pos, int remaining) {
    if (pos == m - 1) {
      counts[static_cast<std::size_t>(pos)] = remaining;
      bool all_zero = true;
      for (int v : counts) {
        if (v != 0) all_zero = false;
      }
      if (all_zero) return;
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
      double acc = 100.0 * static_cast<double>(correct) /
                   static_cast<double>(preds.numSamples());
      if (acc > best_acc) {
        best_acc = acc;
        best.clear();
        for (int v : counts) {
          best.push_back(static_cast<double>(v) / steps);
        }
      }
      return;
    }
    for (int v = 0; v <= remaining; ++v) {
      counts[static_cast<std::size_t>(pos)] = v;
      recurse(pos + 1, remaining - v);
    }
  };
  recurse(0, steps);
  return {best, best_acc};
}

double pairCountingAuc(const std::vector<double>& scores,
                       const std::vector<bool>& positive) {
  double wins = 0.0;
  long pairs = 0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (!positive[i]) continue;
    for (std::size_t j = 0; j < scores.size(); ++j) {
      if (positive[j]) continue;
      ++pairs;
      if (scores[i] > scores[j]) {
        wins += 1.0;
      } else if (scores[i] == scores[j]) {
        wins += 0.5;
      }
    }
  }
  return pairs > 0 ? wins / static_cast<double>(pairs) : 0.5;
}

std::string readFile(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

bool gradientSeed(std::uint64_t seed) {
  HeadConfig config;
  config.input_dim = 4;
  config.hidden_dims = {6, 5, 4};
  config.num_classes = 3;
  config.dropout_rate = 0.0;
  config.r_max = 1.0;  // r, d excluded from backprop; pin at the BN reduction
  config.d_max = 0.0;
  config.seed = seed;

  SeededRng rng(seed);
  HeadParams params = initHead(config, rng);
  Matrix x(8, 4);
  std::vector<int> labels(8);
  for (int i = 0; i < 8; ++i) {
    labels[static_cast<std::size_t>(i)] = static_cast<int>(rng.uniformInt(3));
    for (int j = 0; j < 4; ++j) x(i, j) = rng.uniform(-1.5, 1.5);
  }
  HeadGradients grads = headBackward(params, config, x, labels, nullptr);

  auto loss = [&]() {
    Matrix probs = headForward(params, config, x, Mode::kTrain, nullptr);
    return ceLoss(probs, labels) + l1Penalty(params);
  };
  const double h = 1e-5;
  auto check = [&](double* p, double analytic) {
    double orig = *p;
    *p = orig + h;
    double up = loss();
    *p = orig - h;
    double down = loss();
    *p = orig;
    double fd = (up - down) / (2.0 * h);
    double tol = 1e-4 * std::max(std::abs(fd), std::abs(analytic)) + 1e-6;
    return std::abs(analytic - fd) <= tol;
  };
  bool ok = true;
  for (std::size_t l = 0; l < 4; ++l) {
    for (Eigen::Index i = 0; i < params.dense[l].W.size(); ++i) {
      ok = ok && check(params.dense[l].W.data() + i, grads.dW[l](i));
    }
    for (Eigen::Index i = 0; i < params.dense[l].b.size(); ++i) {
      ok = ok && check(params.dense[l].b.data() + i, grads.db[l][i]);
    }
  }
  for (std::size_t l = 0; l < 3; ++l) {
    for (Eigen::Index i = 0; i < params.renorm[l].gamma.size(); ++i) {
      ok = ok && check(params.renorm[l].gamma.data() + i, grads.dgamma[l][i]);
      ok = ok && check(params.renorm[l].beta.data() + i, grads.dbeta[l][i]);
    }
  }
  return ok;
}

}  // namespace

int main() {
  criterion("combinatorics: C(7,2)=21 and sum_{k=2..7} C(7,k)=120", [] {
    if (enumerateSubsets(7, 2).size() != 21) return false;
    std::size_t total = 0;
    for (int k = 2; k <= 7; ++k) total += enumerateSubsets(7, k).size();
    return total == 120;
  });

  criterion("weight lattice: 8008 vectors at step 0.1, each summing to 1", [] {
    GridSpec spec;
    spec.step = 0.1;
    auto lattice = enumerateWeightLattice(7, spec);
    if (lattice.size() != 8008) return false;
    for (const WeightVector& w : lattice) {
      if (std::abs(w.weights.sum() - 1.0) > 1e-9) return false;
    }
    return true;
  });

  criterion("grid search equals brute force on 100 random instances", [] {
    SeededRng rng(1234);
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
      GridSearchResult got = gridSearchWeights(set, truth, spec, false);
      auto [oracle_w, oracle_acc] = bruteForce(set, truth, spec.step);
      if (got.best_accuracy != oracle_acc) return false;
      for (int i = 0; i < m; ++i) {
        if (got.best.weights[i] != oracle_w[static_cast<std::size_t>(i)]) {
          return false;
        }
      }
    }
    return true;
  });

  criterion("tuning-set dominance on M=7 N=2000 fixtures at step 0.1", [] {
    for (std::uint64_t seed : {7u, 19u, 42u}) {
      auto [preds, labels] = synthFixture(
          7, 2000, 5, {0.93, 0.94, 0.95, 0.95, 0.96, 0.97, 0.98}, seed);
      GridSpec spec;
      spec.step = 0.1;
      GridSearchResult r = gridSearchWeights(preds, labels, spec, false);
      double best_single = 0.0;
      for (int m = 0; m < 7; ++m) {
        best_single = std::max(
            best_single, averageEnsemble(preds, {m}, labels).accuracy);
      }
      std::vector<int> all = {0, 1, 2, 3, 4, 5, 6};
      double uniform = averageEnsemble(preds, all, labels).accuracy;
      if (r.best_accuracy < best_single) return false;
      if (r.best_accuracy < uniform) return false;
    }
    return true;
  });

  criterion("gradients match central finite differences over 20 seeds", [] {
    for (std::uint64_t seed = 1; seed <= 20; ++seed) {
      if (!gradientSeed(seed)) return false;
    }
    return true;
  });

  criterion("batch renorm reductions (plain BN, train/eval, [1,3] column)", [] {
    // (a) r_max=1, d_max=0 equals plain BN bit for bit
    SeededRng rng(5);
    BatchRenormLayer layer = BatchRenormLayer::init(3, 1e-3, 1.0, 0.0, 0.99);
    for (int i = 0; i < 3; ++i) {
      layer.gamma[i] = rng.uniform(0.5, 2.0);
      layer.beta[i] = rng.uniform(-1, 1);
      layer.running_mean[i] = rng.uniform(-1, 1);
      layer.running_var[i] = rng.uniform(0.5, 2.0);
    }
    Matrix x(6, 3);
    for (Eigen::Index i = 0; i < x.size(); ++i) {
      x(i / 3, i % 3) = rng.uniform(-3, 3);
    }
    Matrix y = batchRenormForward(layer, x, Mode::kTrain).first;
    RowVector mu = x.colwise().mean();
    Matrix centered = x.rowwise() - mu;
    RowVector var = centered.array().square().colwise().mean();
    for (Eigen::Index c = 0; c < 3; ++c) {
      double inv_std = 1.0 / std::sqrt(var[c] + layer.epsilon);
      for (Eigen::Index r = 0; r < x.rows(); ++r) {
        double ref =
            (centered(r, c) * inv_std) * layer.gamma[c] + layer.beta[c];
        if (y(r, c) != ref) return false;
      }
    }

    // (b) running stats equal to batch stats: train == eval within 1e-9
    BatchRenormLayer match = BatchRenormLayer::init(3);
    match.running_mean = mu.transpose();
    match.running_var = var.transpose();
    Matrix train = batchRenormForward(match, x, Mode::kTrain).first;
    Matrix eval = batchRenormForward(match, x, Mode::kEval).first;
    if ((train - eval).cwiseAbs().maxCoeff() > 1e-9) return false;

    // (c) [1,3] column, eps 1e-3, running stats = batch stats
    BatchRenormLayer col = BatchRenormLayer::init(1, 1e-3);
    col.running_mean[0] = 2.0;
    col.running_var[0] = 1.0;
    Matrix xc(2, 1);
    xc << 1, 3;
    Matrix yc = batchRenormForward(col, xc, Mode::kTrain).first;
    double expected = 1.0 / std::sqrt(1.001);
    return std::abs(yc(0, 0) + expected) <= 1e-6 &&
           std::abs(yc(1, 0) - expected) <= 1e-6;
  });

  criterion("early stopping: [1.0, 0.5, 0.6 x7] stops at epoch 9, best=2", [] {
    std::vector<double> losses = {1.0, 0.5, 0.6, 0.6, 0.6,
                                  0.6, 0.6, 0.6, 0.6};
    EarlyStopState state;
    state.patience = 7;
    HeadParams marker;
    int stopped_at = -1;
    for (std::size_t e = 0; e < losses.size(); ++e) {
      marker.dense.resize(e + 1);
      if (earlyStopUpdate(state, losses[e], marker) == StopDecision::kStop) {
        stopped_at = static_cast<int>(e) + 1;
        break;
      }
    }
    return stopped_at == 9 && state.best_value == 0.5 &&
           state.best_params.dense.size() == 2;
  });

  criterion("metrics match direct-formula and pair-counting oracles", [] {
    SeededRng rng(99);
    for (int trial = 0; trial < 200; ++trial) {
      int n = 4 + static_cast<int>(rng.uniformInt(197));
      int c = 2 + static_cast<int>(rng.uniformInt(5));
      std::vector<int> truth(static_cast<std::size_t>(n));
      std::vector<int> pred(static_cast<std::size_t>(n));
      Matrix scores(n, c);
      truth[0] = 0;
      truth[1] = 1 % c;
      for (int i = 0; i < n; ++i) {
        if (i >= 2) {
          truth[static_cast<std::size_t>(i)] =
              static_cast<int>(rng.uniformInt(static_cast<std::uint64_t>(c)));
        }
        pred[static_cast<std::size_t>(i)] =
            static_cast<int>(rng.uniformInt(static_cast<std::uint64_t>(c)));
        double sum = 0.0;
        for (int k = 0; k < c; ++k) {
          scores(i, k) = std::round(rng.uniform(0.0, 1.0) * 8.0) / 8.0 + 1e-3;
          sum += scores(i, k);
        }
        scores.row(i) /= sum;
      }
      ConfusionMatrix cm = confusion(truth, pred, c);
      ClassMetrics metrics = perClassMetrics(cm);

      // direct-formula oracle from raw labels
      std::size_t correct = 0;
      for (int i = 0; i < n; ++i) {
        if (truth[static_cast<std::size_t>(i)] ==
            pred[static_cast<std::size_t>(i)]) {
          ++correct;
        }
      }
      double acc_oracle =
          100.0 * static_cast<double>(correct) / static_cast<double>(n);
      if (std::abs(accuracy(cm) - acc_oracle) > 1e-9) return false;

      for (int k = 0; k < c; ++k) {
        long tp = 0, fp = 0, fn = 0;
        for (int i = 0; i < n; ++i) {
          bool is_t = truth[static_cast<std::size_t>(i)] == k;
          bool is_p = pred[static_cast<std::size_t>(i)] == k;
          if (is_t && is_p) ++tp;
          if (!is_t && is_p) ++fp;
          if (is_t && !is_p) ++fn;
        }
        double prec = tp + fp > 0 ? 100.0 * tp / (tp + fp) : 0.0;
        double rec = tp + fn > 0 ? 100.0 * tp / (tp + fn) : 0.0;
        double f1 = prec + rec > 0 ? 2 * prec * rec / (prec + rec) : 0.0;
        std::size_t ks = static_cast<std::size_t>(k);
        if (std::abs(metrics.precision[ks] - prec) > 1e-9) return false;
        if (std::abs(metrics.recall[ks] - rec) > 1e-9) return false;
        if (std::abs(metrics.f1[ks] - f1) > 1e-9) return false;
      }

      RocCurve micro = rocMicroAverage(scores, truth);
      std::vector<double> flat;
      std::vector<bool> pos;
      for (int i = 0; i < n; ++i) {
        for (int k = 0; k < c; ++k) {
          flat.push_back(scores(i, k));
          pos.push_back(truth[static_cast<std::size_t>(i)] == k);
        }
      }
      if (std::abs(micro.auc - pairCountingAuc(flat, pos)) > 1e-9) {
        return false;
      }
    }
    return true;
  });

  criterion("training sanity: separable toy >= 95%, L1 shrinks weights", [] {
    HeadConfig config;
    config.input_dim = 2;
    config.hidden_dims = {16, 8, 8};
    config.num_classes = 2;
    config.dropout_rate = 0.0;
    config.learning_rate = 0.05;
    config.batch_size = 8;
    config.max_epochs = 200;
    config.patience = 200;
    config.seed = 12;

    SeededRng rng(12);
    Matrix x(40, 2);
    std::vector<int> y(40);
    for (int i = 0; i < 40; ++i) {
      int cls = i % 2;
      x(i, 0) = (cls == 0 ? -1.0 : 1.0) + rng.uniform(-0.3, 0.3);
      x(i, 1) = rng.uniform(-1, 1);
      y[static_cast<std::size_t>(i)] = cls;
    }
    auto [params, history] = trainHead(config, x, y, x, y);
    if (history.train.back().accuracy < 95.0) return false;

    auto sumAbs = [](const HeadParams& p) {
      double s = 0.0;
      for (int l = 0; l < 3; ++l) {
        s += p.dense[static_cast<std::size_t>(l)].W.cwiseAbs().sum();
      }
      return s;
    };
    config.max_epochs = 60;
    config.patience = 1000;
    config.lambda = 0.0;
    double plain = sumAbs(trainHead(config, x, y, x, y).first);
    config.lambda = 0.01;
    double shrunk = sumAbs(trainHead(config, x, y, x, y).first);
    return shrunk < plain;
  });

  criterion("end-to-end determinism: byte-identical artifacts", [] {
    fs::path root = fs::temp_directory_path() / "enspipe_acceptance_e2e";
    fs::remove_all(root);
    auto run = [&](const std::string& sub) {
      std::string out = (root / sub).string();
      if (cliDispatch({"synth", "--models", "3", "--samples", "400",
                       "--classes", "4", "--targets", "0.8", "0.85", "0.9",
                       "--seed", "77", "--out", out}) != 0) {
        return false;
      }
      std::vector<std::string> tune = {"ensemble", "tune", "--preds"};
      std::vector<std::string> preds;
      for (int m = 1; m <= 3; ++m) {
        preds.push_back(out + "/preds_model_" + std::to_string(m) + ".csv");
      }
      tune.insert(tune.end(), preds.begin(), preds.end());
      tune.insert(tune.end(), {"--labels", out + "/labels.csv", "--step",
                               "0.25", "--out", out});
      if (cliDispatch(tune) != 0) return false;
      std::vector<std::string> eval = {"eval", "--preds"};
      eval.insert(eval.end(), preds.begin(), preds.end());
      eval.insert(eval.end(), {"--labels", out + "/labels.csv", "--weights",
                               out + "/weights.json", "--out", out});
      return cliDispatch(eval) == 0;
    };
    if (!run("a") || !run("b")) return false;
    for (const std::string& f :
         {"report.json", "weights.json", "grid_trace.csv"}) {
      if (readFile((root / "a" / f).string()) !=
          readFile((root / "b" / f).string())) {
        return false;
      }
      if (readFile((root / "a" / f).string()).empty()) return false;
    }
    fs::remove_all(root);
    return true;
  });

  criterion("schema fidelity: tuned-weights mapping and trace header", [] {
    fs::path root = fs::temp_directory_path() / "enspipe_acceptance_schema";
    fs::remove_all(root);
    std::vector<std::string> names = {
        "EfficientNetB0", "InceptionResNetV2", "DenseNet169", "InceptionV3",
        "Xception",       "DenseNet201",       "ResNet152V2"};
    WeightVector w;
    w.weights = Vector(7);
    w.weights << 0.0, 0.1, 0.4, 0.0, 0.1, 0.0, 0.4;
    emitTunedWeights(names, w, root.string());
    nlohmann::ordered_json expected = {
        {"EfficientNetB0", 0.0}, {"InceptionResNetV2", 0.1},
        {"DenseNet169", 0.4},    {"InceptionV3", 0.0},
        {"Xception", 0.1},       {"DenseNet201", 0.0},
        {"ResNet152V2", 0.4}};
    nlohmann::ordered_json got = nlohmann::ordered_json::parse(
        readFile((root / "weights.json").string()));
    if (got.dump() != expected.dump()) return false;

    emitGridTrace({}, 7, root.string());
    std::string header = readFile((root / "grid_trace.csv").string());
    bool ok = header == "wt1,wt2,wt3,wt4,wt5,wt6,wt7,acc\n";
    fs::remove_all(root);
    return ok;
  });

  if (failures == 0) {
    std::printf("all acceptance criteria passed\n");
  } else {
    std::printf("%d acceptance criteria FAILED\n", failures);
  }
  return failures == 0 ? 0 : 1;
}
