#include "enspipe/head.hpp"

#include <cmath>
#include <sstream>

#include "enspipe/metrics.hpp"

namespace enspipe {

namespace {

constexpr double kLogFloor = 1e-12;

Matrix onesLike(const Matrix& x) { return Matrix::Ones(x.rows(), x.cols()); }

void checkChain(const HeadParams& params, const HeadConfig& config) {
  if (params.dense.size() != 4 || params.renorm.size() != 3) {
    throw ValidationError("head: expected 4 dense and 3 renorm layers");
  }
  Eigen::Index dim = config.input_dim;
  for (std::size_t i = 0; i < params.dense.size(); ++i) {
    if (params.dense[i].W.cols() != dim) {
      std::ostringstream os;
      os << "head: layer " << i << " expects input dim "
         << params.dense[i].W.cols() << " but chain provides " << dim;
      throw ValidationError(os.str());
    }
    dim = params.dense[i].W.rows();
  }
  if (dim != config.num_classes) {
    throw ValidationError("head: output layer width != num_classes");
  }
}

struct RenormCache {
  Matrix xhat;     // batch x dim
  Vector inv_std;  // 1/sqrt(var + eps), per feature
  Vector r;
  Vector d;
};

struct ForwardCache {
  std::vector<Matrix> block_in;    // input to each dense layer (4)
  std::vector<Matrix> pre_act;     // z of the 3 hidden layers
  std::vector<RenormCache> renorm; // 3
  std::vector<Matrix> mask;        // dropout masks (scaled), 3
  Matrix probs;
  std::vector<BatchRenormLayer> updated_renorm;
};

// Train-mode renorm forward that also fills the backward cache.
std::pair<Matrix, BatchRenormLayer> renormTrain(const BatchRenormLayer& layer,
                                                const Matrix& x,
                                                RenormCache* cache) {
  if (x.rows() < 2) {
    throw ValidationError("batch renorm: train mode requires batch >= 2");
  }
  RowVector mu = x.colwise().mean();
  Matrix centered = x.rowwise() - mu;
  RowVector var = centered.array().square().colwise().mean();

  Vector inv_std =
      (var.transpose().array() + layer.epsilon).sqrt().inverse();
  Matrix xhat = centered.array().rowwise() * inv_std.transpose().array();

  Vector sigma_batch = (var.transpose().array() + layer.epsilon).sqrt();
  Vector sigma_run =
      (layer.running_var.array() + layer.epsilon).sqrt();
  Vector r = (sigma_batch.array() / sigma_run.array())
                 .min(layer.r_max)
                 .max(1.0 / layer.r_max);
  Vector d = ((mu.transpose() - layer.running_mean).array() /
              sigma_run.array())
                 .min(layer.d_max)
                 .max(-layer.d_max);

  Matrix y = ((xhat.array().rowwise() * r.transpose().array()).rowwise() +
              d.transpose().array());
  y = (y.array().rowwise() * layer.gamma.transpose().array()).rowwise() +
      layer.beta.transpose().array();

  BatchRenormLayer updated = layer;
  double a = layer.momentum;
  updated.running_mean = a * layer.running_mean + (1.0 - a) * mu.transpose();
  updated.running_var = a * layer.running_var + (1.0 - a) * var.transpose();

  if (cache != nullptr) {
    cache->xhat = std::move(xhat);
    cache->inv_std = std::move(inv_std);
    cache->r = std::move(r);
    cache->d = std::move(d);
  }
  return {std::move(y), std::move(updated)};
}

Matrix dropoutMask(double rate, Eigen::Index rows, Eigen::Index cols,
                   SeededRng& rng) {
  double scale = 1.0 / (1.0 - rate);
  Matrix mask(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i) {
    for (Eigen::Index j = 0; j < cols; ++j) {
      mask(i, j) = rng.uniform() < rate ? 0.0 : scale;
    }
  }
  return mask;
}

ForwardCache forwardTrain(const HeadParams& params, const HeadConfig& config,
                          const Matrix& x, SeededRng* rng) {
  checkChain(params, config);
  ForwardCache cache;
  cache.renorm.resize(3);
  Matrix cur = x;
  for (int i = 0; i < 3; ++i) {
    cache.block_in.push_back(cur);
    Matrix z = (cur * params.dense[i].W.transpose()).rowwise() +
               params.dense[i].b.transpose();
    cache.pre_act.push_back(z);
    Matrix a = relu(z);
    auto [h, updated] = renormTrain(params.renorm[i], a, &cache.renorm[i]);
    cache.updated_renorm.push_back(std::move(updated));
    if (config.dropout_rate > 0.0) {
      if (rng == nullptr) {
        throw ValidationError("head: dropout requires an rng in train mode");
      }
      Matrix mask = dropoutMask(config.dropout_rate, h.rows(), h.cols(), *rng);
      cur = h.cwiseProduct(mask);
      cache.mask.push_back(std::move(mask));
    } else {
      cache.mask.push_back(onesLike(h));
      cur = std::move(h);
    }
  }
  cache.block_in.push_back(cur);
  Matrix logits = (cur * params.dense[3].W.transpose()).rowwise() +
                  params.dense[3].b.transpose();
  cache.probs = softmaxRows(logits);
  return cache;
}

}  // namespace

BatchRenormLayer BatchRenormLayer::init(Eigen::Index dim, double epsilon,
                                        double r_max, double d_max,
                                        double momentum) {
  BatchRenormLayer layer;
  layer.gamma = Vector::Ones(dim);
  layer.beta = Vector::Zero(dim);
  layer.running_mean = Vector::Zero(dim);
  layer.running_var = Vector::Ones(dim);
  layer.epsilon = epsilon;
  layer.r_max = r_max;
  layer.d_max = d_max;
  layer.momentum = momentum;
  return layer;
}

void HeadConfig::validate() const {
  if (num_classes < 2) throw ValidationError("config: num_classes must be >= 2");
  if (input_dim < 1) throw ValidationError("config: input_dim must be >= 1");
  for (Eigen::Index h : hidden_dims) {
    if (h < 1) throw ValidationError("config: hidden dims must be >= 1");
  }
  if (lambda < 0) throw ValidationError("config: lambda must be >= 0");
  if (dropout_rate < 0 || dropout_rate >= 1) {
    throw ValidationError("config: dropout rate must be in [0, 1)");
  }
  if (epsilon <= 0) throw ValidationError("config: epsilon must be > 0");
  if (r_max < 1) throw ValidationError("config: r_max must be >= 1");
  if (d_max < 0) throw ValidationError("config: d_max must be >= 0");
  if (momentum <= 0 || momentum > 1) {
    throw ValidationError("config: momentum must be in (0, 1]");
  }
  if (batch_size < 2) throw ValidationError("config: batch_size must be >= 2");
  if (patience < 0) throw ValidationError("config: patience must be >= 0");
}

HeadParams initHead(const HeadConfig& config, SeededRng& rng) {
  config.validate();
  HeadParams params;
  Eigen::Index in = config.input_dim;
  std::vector<Eigen::Index> outs(config.hidden_dims.begin(),
                                 config.hidden_dims.end());
  outs.push_back(config.num_classes);
  for (std::size_t i = 0; i < outs.size(); ++i) {
    Eigen::Index out = outs[i];
    DenseLayer layer;
    double limit = std::sqrt(6.0 / static_cast<double>(in + out));
    layer.W.resize(out, in);
    for (Eigen::Index r = 0; r < out; ++r) {
      for (Eigen::Index c = 0; c < in; ++c) {
        layer.W(r, c) = rng.uniform(-limit, limit);
      }
    }
    layer.b = Vector::Zero(out);
    layer.lambda = (i < 3) ? config.lambda : 0.0;
    params.dense.push_back(std::move(layer));
    if (i < 3) {
      params.renorm.push_back(BatchRenormLayer::init(
          out, config.epsilon, config.r_max, config.d_max, config.momentum));
    }
    in = out;
  }
  return params;
}

Matrix denseForward(const DenseLayer& layer, const Matrix& x, Activation act) {
  if (x.cols() != layer.W.cols()) {
    std::ostringstream os;
    os << "dense: input has " << x.cols() << " features but layer expects "
       << layer.W.cols();
    throw ValidationError(os.str());
  }
  Matrix z = (x * layer.W.transpose()).rowwise() + layer.b.transpose();
  switch (act) {
    case Activation::kNone:
      return z;
    case Activation::kRelu:
      return relu(z);
    case Activation::kSoftmax:
      return softmaxRows(z);
  }
  throw ValidationError("dense: unknown activation");
}

double l1Penalty(const HeadParams& params) {
  double penalty = 0.0;
  std::size_t regularized = params.dense.size() > 3 ? 3 : params.dense.size();
  for (std::size_t i = 0; i < regularized; ++i) {
    penalty += params.dense[i].lambda * params.dense[i].W.cwiseAbs().sum();
  }
  return penalty;
}

std::pair<Matrix, BatchRenormLayer> batchRenormForward(
    const BatchRenormLayer& layer, const Matrix& x, Mode mode) {
  if (mode == Mode::kTrain) {
    return renormTrain(layer, x, nullptr);
  }
  Vector inv_std = (layer.running_var.array() + layer.epsilon).sqrt().inverse();
  Matrix xhat = (x.rowwise() - layer.running_mean.transpose()).array().rowwise() *
                inv_std.transpose().array();
  Matrix y = (xhat.array().rowwise() * layer.gamma.transpose().array())
                 .rowwise() +
             layer.beta.transpose().array();
  return {std::move(y), layer};
}

Matrix dropoutForward(const DropoutSpec& spec, const Matrix& x,
                      SeededRng& rng) {
  if (spec.rate < 0.0 || spec.rate >= 1.0) {
    throw ValidationError("dropout: rate must be in [0, 1)");
  }
  if (spec.mode == Mode::kEval || spec.rate == 0.0) {
    return x;
  }
  return x.cwiseProduct(dropoutMask(spec.rate, x.rows(), x.cols(), rng));
}

Matrix headForward(const HeadParams& params, const HeadConfig& config,
                   const Matrix& x, Mode mode, SeededRng* rng) {
  if (mode == Mode::kTrain) {
    return forwardTrain(params, config, x, rng).probs;
  }
  checkChain(params, config);
  Matrix cur = x;
  for (int i = 0; i < 3; ++i) {
    Matrix a = denseForward(params.dense[i], cur, Activation::kRelu);
    cur = batchRenormForward(params.renorm[i], a, Mode::kEval).first;
  }
  return denseForward(params.dense[3], cur, Activation::kSoftmax);
}

double ceLoss(const Matrix& probs, const std::vector<int>& labels) {
  if (static_cast<Eigen::Index>(labels.size()) != probs.rows()) {
    throw ValidationError("ce_loss: batch size and label count differ");
  }
  double total = 0.0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    int y = labels[i];
    if (y < 0 || y >= probs.cols()) {
      std::ostringstream os;
      os << "ce_loss: label " << y << " out of range [0, " << probs.cols()
         << ") at sample " << i;
      throw ValidationError(os.str());
    }
    double p = probs(static_cast<Eigen::Index>(i), y);
    total += -std::log(std::max(p, kLogFloor));
  }
  return total / static_cast<double>(labels.size());
}

namespace {

HeadGradients backwardFromCache(const HeadParams& params,
                                const ForwardCache& cache,
                                const std::vector<int>& labels) {
  Eigen::Index batch = cache.probs.rows();

  HeadGradients grads;
  grads.dW.resize(4);
  grads.db.resize(4);
  grads.dgamma.resize(3);
  grads.dbeta.resize(3);

  // Softmax + mean cross-entropy.
  Matrix dlogits = cache.probs;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    dlogits(static_cast<Eigen::Index>(i), labels[i]) -= 1.0;
  }
  dlogits /= static_cast<double>(batch);

  grads.dW[3] = dlogits.transpose() * cache.block_in[3];
  grads.db[3] = dlogits.colwise().sum().transpose();
  Matrix dcur = dlogits * params.dense[3].W;

  for (int i = 2; i >= 0; --i) {
    // Dropout.
    Matrix dh = dcur.cwiseProduct(cache.mask[static_cast<std::size_t>(i)]);

    // Renorm; r and d held constant, batch statistics back-propagated.
    const RenormCache& rc = cache.renorm[static_cast<std::size_t>(i)];
    const BatchRenormLayer& layer = params.renorm[static_cast<std::size_t>(i)];
    Matrix rx = (rc.xhat.array().rowwise() * rc.r.transpose().array())
                    .rowwise() +
                rc.d.transpose().array();
    grads.dgamma[static_cast<std::size_t>(i)] =
        dh.cwiseProduct(rx).colwise().sum().transpose();
    grads.dbeta[static_cast<std::size_t>(i)] =
        dh.colwise().sum().transpose();

    Matrix dxhat = dh.array().rowwise() *
                   (layer.gamma.cwiseProduct(rc.r)).transpose().array();
    RowVector mean_dxhat = dxhat.colwise().mean();
    RowVector mean_dxhat_xhat = dxhat.cwiseProduct(rc.xhat).colwise().mean();
    Matrix da =
        ((dxhat.rowwise() - mean_dxhat).array() -
         (rc.xhat.array().rowwise() * mean_dxhat_xhat.array()))
            .rowwise() *
        rc.inv_std.transpose().array();

    // ReLU.
    Matrix dz = da.cwiseProduct(
        (cache.pre_act[static_cast<std::size_t>(i)].array() > 0.0)
            .cast<double>()
            .matrix());

    const DenseLayer& dense = params.dense[static_cast<std::size_t>(i)];
    Matrix dW = dz.transpose() * cache.block_in[static_cast<std::size_t>(i)];
    if (dense.lambda > 0.0) {
      // L1 subgradient; 0 at exactly 0.
      dW += dense.lambda *
            dense.W.unaryExpr([](double w) {
              return w > 0.0 ? 1.0 : (w < 0.0 ? -1.0 : 0.0);
            });
    }
    grads.dW[static_cast<std::size_t>(i)] = std::move(dW);
    grads.db[static_cast<std::size_t>(i)] = dz.colwise().sum().transpose();
    dcur = dz * dense.W;
  }
  return grads;
}

}  // namespace

HeadGradients headBackward(const HeadParams& params, const HeadConfig& config,
                           const Matrix& x, const std::vector<int>& labels,
                           SeededRng* dropout_rng, double* loss_out) {
  ForwardCache cache = forwardTrain(params, config, x, dropout_rng);
  if (loss_out != nullptr) {
    *loss_out = ceLoss(cache.probs, labels) + l1Penalty(params);
  }
  return backwardFromCache(params, cache, labels);
}

StopDecision earlyStopUpdate(EarlyStopState& state, double val_loss,
                             const HeadParams& params) {
  if (std::isnan(val_loss)) {
    throw ValidationError("early stop: NaN validation loss (divergence)");
  }
  if (val_loss < state.best_value) {
    state.best_value = val_loss;
    state.best_params = params;
    state.epochs_since_improvement = 0;
    return StopDecision::kContinue;
  }
  state.epochs_since_improvement++;
  return state.epochs_since_improvement >= state.patience
             ? StopDecision::kStop
             : StopDecision::kContinue;
}

namespace {

EpochStats datasetStats(const HeadParams& params, const HeadConfig& config,
                        const Matrix& x, const std::vector<int>& labels) {
  Matrix probs = headForward(params, config, x, Mode::kEval, nullptr);
  EpochStats stats;
  stats.loss = ceLoss(probs, labels) + l1Penalty(params);
  std::vector<int> predicted(labels.size());
  double mse = 0.0;
  for (Eigen::Index n = 0; n < probs.rows(); ++n) {
    predicted[static_cast<std::size_t>(n)] =
        static_cast<int>(argmaxRow(probs, n));
    for (Eigen::Index c = 0; c < probs.cols(); ++c) {
      double target =
          labels[static_cast<std::size_t>(n)] == c ? 1.0 : 0.0;
      double diff = probs(n, c) - target;
      mse += diff * diff;
    }
  }
  stats.mse = mse / static_cast<double>(probs.size());
  ConfusionMatrix cm = confusion(labels, predicted, config.num_classes);
  stats.accuracy = accuracy(cm);
  MacroAverages avg = macroAverage(perClassMetrics(cm));
  stats.precision = avg.precision;
  stats.recall = avg.recall;
  return stats;
}

}  // namespace

std::pair<HeadParams, TrainHistory> trainHead(const HeadConfig& config,
                                              const Matrix& x_train,
                                              const std::vector<int>& y_train,
                                              const Matrix& x_val,
                                              const std::vector<int>& y_val) {
  config.validate();
  if (x_train.rows() == 0 || x_val.rows() == 0) {
    throw ValidationError("train: train and validation sets must be non-empty");
  }
  if (static_cast<Eigen::Index>(y_train.size()) != x_train.rows() ||
      static_cast<Eigen::Index>(y_val.size()) != x_val.rows()) {
    throw ValidationError("train: feature rows and label counts differ");
  }

  SeededRng rng(config.seed);
  HeadParams params = initHead(config, rng);
  EarlyStopState stop;
  stop.patience = config.patience;
  TrainHistory history;

  std::vector<Eigen::Index> order(static_cast<std::size_t>(x_train.rows()));
  for (std::size_t i = 0; i < order.size(); ++i) {
    order[i] = static_cast<Eigen::Index>(i);
  }

  for (int epoch = 0; epoch < config.max_epochs; ++epoch) {
    rng.shuffle(order);
    for (std::size_t start = 0; start < order.size();
         start += static_cast<std::size_t>(config.batch_size)) {
      std::size_t end = std::min(
          start + static_cast<std::size_t>(config.batch_size), order.size());
      std::size_t bsize = end - start;
      if (bsize < 2) continue;  // renorm needs batch statistics

      Matrix bx(static_cast<Eigen::Index>(bsize), x_train.cols());
      std::vector<int> by(bsize);
      for (std::size_t k = 0; k < bsize; ++k) {
        bx.row(static_cast<Eigen::Index>(k)) = x_train.row(order[start + k]);
        by[k] = y_train[static_cast<std::size_t>(order[start + k])];
      }

      ForwardCache cache = forwardTrain(params, config, bx, &rng);
      HeadGradients grads = backwardFromCache(params, cache, by);

      for (std::size_t l = 0; l < 4; ++l) {
        params.dense[l].W -= config.learning_rate * grads.dW[l];
        params.dense[l].b -= config.learning_rate * grads.db[l];
      }
      for (std::size_t l = 0; l < 3; ++l) {
        params.renorm[l].gamma -= config.learning_rate * grads.dgamma[l];
        params.renorm[l].beta -= config.learning_rate * grads.dbeta[l];
        params.renorm[l].running_mean = cache.updated_renorm[l].running_mean;
        params.renorm[l].running_var = cache.updated_renorm[l].running_var;
      }
    }

    history.train.push_back(datasetStats(params, config, x_train, y_train));
    history.validation.push_back(datasetStats(params, config, x_val, y_val));
    double val_loss = history.validation.back().loss;

    StopDecision decision = earlyStopUpdate(stop, val_loss, params);
    if (stop.epochs_since_improvement == 0) {
      history.best_epoch = epoch;
    }
    if (decision == StopDecision::kStop) {
      history.stopped_early = true;
      break;
    }
  }

  return {stop.best_params, history};
}

}  // namespace enspipe
