#ifndef ENSPIPE_HEAD_HPP_
#define ENSPIPE_HEAD_HPP_

#include <array>
#include <cstdint>
#include <limits>
#include <utility>
#include <vector>

#include "enspipe/numerics.hpp"
#include "enspipe/rng.hpp"

namespace enspipe {

enum class Mode { kTrain, kEval };
enum class Activation { kNone, kRelu, kSoftmax };

// Fully connected layer y = act(x W^T + b), with an optional L1 penalty
// coefficient on W.
struct DenseLayer {
  Matrix W;  // out_dim x in_dim
  Vector b;  // out_dim
  double lambda = 1e-4;
};

// Batch renormalization over feature columns. With r_max=1 and d_max=0 the
// layer reduces to plain batch normalization.
struct BatchRenormLayer {
  Vector gamma;
  Vector beta;
  Vector running_mean;
  Vector running_var;
  double epsilon = 1e-3;
  double r_max = 3.0;
  double d_max = 5.0;
  double momentum = 0.99;

  static BatchRenormLayer init(Eigen::Index dim, double epsilon = 1e-3,
                               double r_max = 3.0, double d_max = 5.0,
                               double momentum = 0.99);
};

struct DropoutSpec {
  double rate = 0.3;
  Mode mode = Mode::kEval;
};

struct HeadConfig {
  Eigen::Index input_dim = 0;
  std::array<Eigen::Index, 3> hidden_dims = {512, 256, 128};
  Eigen::Index num_classes = 0;
  double lambda = 1e-4;
  double dropout_rate = 0.3;
  double epsilon = 1e-3;
  double r_max = 3.0;
  double d_max = 5.0;
  double momentum = 0.99;
  double learning_rate = 0.01;
  Eigen::Index batch_size = 32;
  int max_epochs = 100;
  int patience = 7;
  std::uint64_t seed = 0;

  void validate() const;
};

// All learnable state: 4 dense layers (3 hidden + output) and 3 renorm
// layers, chained input_dim -> hidden_dims -> num_classes.
struct HeadParams {
  std::vector<DenseLayer> dense;
  std::vector<BatchRenormLayer> renorm;
};

HeadParams initHead(const HeadConfig& config, SeededRng& rng);

struct HeadGradients {
  std::vector<Matrix> dW;
  std::vector<Vector> db;
  std::vector<Vector> dgamma;
  std::vector<Vector> dbeta;
};

Matrix denseForward(const DenseLayer& layer, const Matrix& x, Activation act);

// L1 penalty over the three regularized hidden layers only; the output
// layer and all biases are excluded.
double l1Penalty(const HeadParams& params);

// Train mode computes batch statistics, applies the clipped r/d correction
// and returns the layer with updated running statistics; eval mode
// normalizes with the running statistics and leaves the layer unchanged.
std::pair<Matrix, BatchRenormLayer> batchRenormForward(
    const BatchRenormLayer& layer, const Matrix& x, Mode mode);

// Inverted dropout: train mode zeroes entries with probability rate and
// scales survivors by 1/(1-rate); eval mode is the identity.
Matrix dropoutForward(const DropoutSpec& spec, const Matrix& x, SeededRng& rng);

// 3 x (dense+relu -> renorm -> dropout) then dense+softmax. rng may be
// null when dropout is inactive (eval mode or rate 0).
Matrix headForward(const HeadParams& params, const HeadConfig& config,
                   const Matrix& x, Mode mode, SeededRng* rng);

// Mean over the batch of -ln p[true class], log floored at 1e-12.
double ceLoss(const Matrix& probs, const std::vector<int>& labels);

// Analytic gradients of ceLoss + l1Penalty from a train-mode forward pass.
// r and d are held constant through the renorm backward; the L1
// subgradient at w=0 is 0. loss_out, when given, receives the batch loss.
HeadGradients headBackward(const HeadParams& params, const HeadConfig& config,
                           const Matrix& x, const std::vector<int>& labels,
                           SeededRng* dropout_rng, double* loss_out = nullptr);

enum class StopDecision { kContinue, kStop };

struct EarlyStopState {
  std::string monitored = "val_loss";
  int patience = 7;
  double best_value = std::numeric_limits<double>::infinity();
  HeadParams best_params;
  int epochs_since_improvement = 0;
};

// Strict improvement resets the counter and snapshots params; the counter
// reaching patience stops. NaN loss is a divergence signal.
StopDecision earlyStopUpdate(EarlyStopState& state, double val_loss,
                             const HeadParams& params);

struct EpochStats {
  double loss = 0.0;
  double accuracy = 0.0;
  double precision = 0.0;
  double recall = 0.0;
  double mse = 0.0;
};

struct TrainHistory {
  std::vector<EpochStats> train;
  std::vector<EpochStats> validation;
  int best_epoch = -1;  // 0-based epoch whose snapshot was returned
  bool stopped_early = false;
};

// Minibatch gradient descent with per-epoch validation and early stopping;
// returns the snapshot with the best validation loss.
std::pair<HeadParams, TrainHistory> trainHead(const HeadConfig& config,
                                              const Matrix& x_train,
                                              const std::vector<int>& y_train,
                                              const Matrix& x_val,
                                              const std::vector<int>& y_val);

}  // namespace enspipe

#endif  // ENSPIPE_HEAD_HPP_
