#ifndef ENSPIPE_PIPELINE_HPP_
#define ENSPIPE_PIPELINE_HPP_

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "enspipe/ensemble.hpp"
#include "enspipe/metrics.hpp"
#include "enspipe/numerics.hpp"

namespace enspipe {

struct ManifestRecord {
  std::string id;
  int label = 0;  // index into class_names
  Vector features;
};

struct DatasetManifest {
  std::vector<std::string> class_names;
  Eigen::Index feature_dim = 0;
  std::vector<ManifestRecord> records;
};

struct SplitSpec {
  double train_fraction = 0.7;
  std::uint64_t seed = 0;
  bool stratified = true;
};

// Stratified by default: per class, floor(fraction * count) samples go to
// train, order shuffled by seed. Train and test are disjoint and
// exhaustive.
std::pair<DatasetManifest, DatasetManifest> splitDataset(
    const DatasetManifest& manifest, const SplitSpec& spec);

// Validates declared dimension and finiteness; any resizing is the
// upstream feature extractor's obligation.
Vector preprocessContract(const ManifestRecord& record,
                          Eigen::Index expected_dim);

// CSV body + JSON sidecar header ("<base>.meta.json").
std::string sidecarPath(const std::string& csv_path);

void saveManifest(const std::string& csv_path, const DatasetManifest& m);
DatasetManifest loadManifest(const std::string& csv_path);

void saveLabels(const std::string& csv_path,
                const std::vector<std::string>& ids,
                const std::vector<int>& labels,
                const std::vector<std::string>& class_names);
// Returns (ids, labels, class_names).
std::tuple<std::vector<std::string>, std::vector<int>,
           std::vector<std::string>>
loadLabels(const std::string& csv_path);

// One model's prediction rows. values is "probs" or "logits"; logits are
// softmaxed on load.
void savePredictionFile(const std::string& csv_path,
                        const std::string& model_name,
                        const std::vector<std::string>& ids,
                        const std::vector<std::string>& class_names,
                        const Matrix& rows,
                        const std::string& values = "probs");

// Assembles multiple prediction files; all must agree on sample ids,
// order, and class names. Returns the set plus the shared sample ids.
std::pair<PredictionSet, std::vector<std::string>> loadPredictions(
    const std::vector<std::string>& csv_paths);

// Synthetic stand-in for the backbone models: per model, argmax matches
// the true label with approximately the target probability; model errors
// are independent given the seed.
std::pair<PredictionSet, std::vector<int>> synthFixture(
    int num_models, int num_samples, int num_classes,
    const std::vector<double>& accuracy_targets, std::uint64_t seed);

struct EmitOptions {
  bool paper_rounding = false;  // integer metrics, 2-decimal accuracy
};

void emitEvalReport(const EvalReport& report, const std::string& out_dir,
                    const EmitOptions& opts = {});
void emitSweepTable(const std::vector<SweepRow>& rows,
                    const std::string& out_dir, const EmitOptions& opts = {});
void emitTunedWeights(const std::vector<std::string>& model_names,
                      const WeightVector& w, const std::string& out_dir);
void emitGridTrace(const std::vector<std::pair<WeightVector, double>>& trace,
                   int num_models, const std::string& out_dir);

EvalReport loadEvalReport(const std::string& path);

// CLI entry point. Exit codes: 0 success, 1 validation/usage error, 2 IO
// error.
int cliDispatch(int argc, const char* const* argv);
int cliDispatch(const std::vector<std::string>& args);

}  // namespace enspipe

#endif  // ENSPIPE_PIPELINE_HPP_
