#pragma once
/**
 * @file training.hpp
 * @brief Gradient-based fitting of a CircuitModel.
 *
 * Training minimizes the mean squared error with AMSGrad (or plain SGD) on
 * mini-batches, batch norms after every leaf and block sum, early stopping on
 * validation MSE, and several independent restarts of which the one with the
 * lowest validation MSE is kept. Targets are standardized per output during
 * training; the affine map back to target units is folded into the head.
 */

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "deeppce/circuit.hpp"
#include "deeppce/dataset.hpp"
#include "deeppce/error.hpp"
#include "deeppce/rng.hpp"

namespace deeppce {

enum class OptimizerKind { AmsGrad, Sgd };

struct TrainConfig {
  double learning_rate = 8.5e-3;
  int batch_size = 16;
  int max_epochs = 200;
  int early_stop_patience = 20;
  double init_base_std = 1.0;
  /// Input weight std for multi-index alpha is init_base_std * init_decay^|alpha|.
  double init_decay = 0.5;
  /// Batch-norm scale and shift at initialization. A shift near 1 starts
  /// every node near a constant, so deep products begin close to additive.
  double init_norm_scale = 1.0;
  double init_norm_shift = 0.0;
  int n_restarts = 1;
  std::uint64_t seed = 0;
  OptimizerKind optimizer = OptimizerKind::AmsGrad;
  bool standardize_targets = true;

  void validate() const {
    require(learning_rate > 0.0, ErrorCode::InvalidArgument, "train: learning_rate must be > 0");
    require(batch_size >= 1, ErrorCode::InvalidArgument, "train: batch_size must be >= 1");
    require(max_epochs >= 1, ErrorCode::InvalidArgument, "train: max_epochs must be >= 1");
    require(early_stop_patience >= 1, ErrorCode::InvalidArgument, "train: early_stop_patience must be >= 1");
    require(init_base_std > 0.0, ErrorCode::InvalidArgument, "train: init_base_std must be > 0");
    require(init_decay > 0.0 && init_decay <= 1.0, ErrorCode::InvalidArgument,
            "train: init_decay must lie in (0, 1]");
    require(init_norm_scale > 0.0, ErrorCode::InvalidArgument, "train: init_norm_scale must be > 0");
    require(std::isfinite(init_norm_shift), ErrorCode::InvalidArgument, "train: init_norm_shift must be finite");
    require(n_restarts >= 1, ErrorCode::InvalidArgument, "train: n_restarts must be >= 1");
  }
};

inline std::string to_string(OptimizerKind kind) { return kind == OptimizerKind::AmsGrad ? "amsgrad" : "sgd"; }

inline OptimizerKind optimizer_from_string(const std::string& name) {
  if (name == "amsgrad" || name == "adam") return OptimizerKind::AmsGrad;
  if (name == "sgd") return OptimizerKind::Sgd;
  throw Error(ErrorCode::InvalidArgument, "unknown optimizer '" + name + "'");
}

inline nlohmann::json to_json(const TrainConfig& cfg) {
  return {{"learning_rate", cfg.learning_rate},
          {"batch_size", cfg.batch_size},
          {"max_epochs", cfg.max_epochs},
          {"early_stop_patience", cfg.early_stop_patience},
          {"init_base_std", cfg.init_base_std},
          {"init_decay", cfg.init_decay},
          {"init_norm_scale", cfg.init_norm_scale},
          {"init_norm_shift", cfg.init_norm_shift},
          {"n_restarts", cfg.n_restarts},
          {"seed", cfg.seed},
          {"optimizer", to_string(cfg.optimizer)},
          {"standardize_targets", cfg.standardize_targets}};
}

// ---------------------------------------------------------------------------
// Initialization and losses

inline void reset_batchnorm(BatchNorm& norm, double scale = 1.0, double shift = 0.0) {
  const bool active = norm.active;
  norm = BatchNorm::identity(static_cast<int>(norm.gamma.size()), active);
  if (active) {
    norm.gamma.setConstant(scale);
    norm.beta.setConstant(shift);
  }
}

inline void init_weights(CircuitModel& model, const TrainConfig& cfg, std::uint64_t seed) {
  CounterRng rng(seed, 0x1A17);
  const double base = cfg.init_base_std;
  for (LeafPce& leaf : model.leaves) {
    for (Eigen::Index j = 0; j < leaf.sum.weights.cols(); ++j) {
      const int degree = total_degree(leaf.basis[static_cast<std::size_t>(j)]);
      const double stddev = base * std::pow(cfg.init_decay, degree);
      for (Eigen::Index n = 0; n < leaf.sum.weights.rows(); ++n) leaf.sum.weights(n, j) = stddev * rng.normal();
    }
    reset_batchnorm(leaf.sum.norm, cfg.init_norm_scale, cfg.init_norm_shift);
  }
  auto init_sum = [&](SumLayer& sum) {
    const double stddev = base / std::sqrt(static_cast<double>(sum.weights.cols()));
    for (Eigen::Index i = 0; i < sum.weights.size(); ++i) sum.weights.data()[i] = stddev * rng.normal();
    sum.bias.setZero();
    reset_batchnorm(sum.norm, cfg.init_norm_scale, cfg.init_norm_shift);
  };
  for (auto& layer : model.blocks)
    for (SumLayer& sum : layer)
      if (sum.weights.size() != 0) init_sum(sum);
  init_sum(model.head);
}

inline void init_weights(CircuitModel& model, const TrainConfig& cfg) { init_weights(model, cfg, cfg.seed); }

inline double loss_mse(const Eigen::MatrixXd& pred, const Eigen::MatrixXd& target) {
  require(pred.rows() == target.rows() && pred.cols() == target.cols(), ErrorCode::DimensionMismatch,
          "loss_mse: shape mismatch");
  if (pred.size() == 0) return 0.0;
  return (pred - target).squaredNorm() / static_cast<double>(pred.size());
}

/// mean((y - yhat)^2) / mean(y^2); +inf when the targets are all zero.
inline double relative_mse(const Eigen::MatrixXd& pred, const Eigen::MatrixXd& target) {
  require(pred.rows() == target.rows() && pred.cols() == target.cols(), ErrorCode::DimensionMismatch,
          "relative_mse: shape mismatch");
  const double denominator = target.squaredNorm();
  const double numerator = (pred - target).squaredNorm();
  if (denominator == 0.0) return numerator == 0.0 ? 0.0 : std::numeric_limits<double>::infinity();
  return numerator / denominator;
}

// ---------------------------------------------------------------------------
// Reverse pass

struct GradientResult {
  double loss = 0.0;
  CircuitModel gradient;  // same structure as the model; trainable entries hold dL/dtheta
};

namespace detail {

/// Back-propagates through one sum layer. Fills `grad` and returns dL/dinput.
inline Eigen::MatrixXd sum_backward(const SumLayer& sum, const SumActivation& act, const Eigen::MatrixXd& dout,
                                    NormMode mode, SumLayer& grad) {
  Eigen::MatrixXd ds = dout;
  if (sum.norm.active) {
    if (mode == NormMode::Training) {
      const double batch = static_cast<double>(dout.rows());
      grad.norm.beta = dout.colwise().sum().transpose();
      grad.norm.gamma = dout.cwiseProduct(act.normalized).colwise().sum().transpose();
      const Eigen::MatrixXd dxhat = dout.array().rowwise() * sum.norm.gamma.transpose().array();
      const Eigen::RowVectorXd sum_dxhat = dxhat.colwise().sum();
      const Eigen::RowVectorXd sum_dxhat_xhat = dxhat.cwiseProduct(act.normalized).colwise().sum();
      Eigen::MatrixXd inner = (batch * dxhat).rowwise() - sum_dxhat;
      inner -= (act.normalized.array().rowwise() * sum_dxhat_xhat.array()).matrix();
      ds = (inner.array().rowwise() * (act.inv_std.transpose().array() / batch)).matrix();
    } else {
      Eigen::MatrixXd pre = act.input * sum.weights.transpose();
      if (sum.bias.size() != 0) pre.rowwise() += sum.bias.transpose();
      const Eigen::ArrayXd inv_std = (sum.norm.running_var.array() + kBatchNormEpsilon).rsqrt();
      const Eigen::MatrixXd xhat =
          ((pre.rowwise() - sum.norm.running_mean.transpose()).array().rowwise() * inv_std.transpose()).matrix();
      grad.norm.beta = dout.colwise().sum().transpose();
      grad.norm.gamma = dout.cwiseProduct(xhat).colwise().sum().transpose();
      ds = (dout.array().rowwise() * sum.norm.scale().transpose().array()).matrix();
    }
  }
  grad.weights = ds.transpose() * act.input;
  if (sum.bias.size() != 0) grad.bias = ds.colwise().sum().transpose();
  return ds * sum.weights;
}

}  // namespace detail

/// Exact gradient of the mean squared error (averaged over all batch entries
/// and outputs) with respect to every trainable tensor.
inline GradientResult backward(const CircuitModel& model, const Eigen::MatrixXd& inputs,
                               const Eigen::MatrixXd& targets, NormMode mode = NormMode::Training,
                               ForwardCache* cache_out = nullptr) {
  require(targets.rows() == inputs.rows() && targets.cols() == model.output_dim(), ErrorCode::DimensionMismatch,
          "backward: target shape mismatch");
  ForwardCache local_cache;
  ForwardCache& cache = cache_out != nullptr ? *cache_out : local_cache;
  const Eigen::MatrixXd pred = forward(model, inputs, mode, &cache);

  GradientResult result;
  result.loss = loss_mse(pred, targets);
  result.gradient = zeros_like(model);
  CircuitModel& grad = result.gradient;

  const Eigen::MatrixXd dy = 2.0 * (pred - targets) / static_cast<double>(pred.size());
  const Eigen::MatrixXd droot = detail::sum_backward(model.head, cache.head, dy, NormMode::Inference, grad.head);

  std::vector<Eigen::MatrixXd> dvalues{droot};
  for (std::size_t l = model.blocks.size(); l-- > 0;) {
    const auto& plan = model.graph.merge_plan[l];
    const auto& values = cache.levels[l];
    std::vector<Eigen::MatrixXd> dprev(values.size());
    for (std::size_t i = 0; i < values.size(); ++i) dprev[i] = Eigen::MatrixXd::Zero(values[i].rows(), values[i].cols());
    for (std::size_t j = 0; j < plan.size(); ++j) {
      const MergeStep& step = plan[j];
      const auto left = static_cast<std::size_t>(step.left);
      if (step.pass_through()) {
        dprev[left] += dvalues[j];
        continue;
      }
      const auto right = static_cast<std::size_t>(step.right);
      const Eigen::MatrixXd dproduct =
          detail::sum_backward(model.blocks[l][j], cache.blocks[l][j], dvalues[j], mode, grad.blocks[l][j]);
      dprev[left] += dproduct.cwiseProduct(values[right]);
      dprev[right] += dproduct.cwiseProduct(values[left]);
    }
    dvalues = std::move(dprev);
  }
  for (std::size_t c = 0; c < model.leaves.size(); ++c) {
    detail::sum_backward(model.leaves[c].sum, cache.leaves[c], dvalues[c], mode, grad.leaves[c].sum);
  }
  auto views = parameter_views(grad);
  for (const auto& view : views) {
    for (double g : view.values) {
      if (!std::isfinite(g)) throw Error(ErrorCode::NonFinite, "non-finite gradient in " + view.name);
    }
  }
  return result;
}

// ---------------------------------------------------------------------------
// Batch-norm statistics and folding

/// Blends the batch statistics of a training-mode forward into the running ones.
inline void update_running_statistics(CircuitModel& model, const ForwardCache& cache,
                                      double momentum = kBatchNormMomentum) {
  auto update = [momentum](BatchNorm& norm, const SumActivation& act, Eigen::Index batch) {
    if (!norm.active || act.batch_mean.size() == 0) return;
    const double correction = batch > 1 ? static_cast<double>(batch) / static_cast<double>(batch - 1) : 1.0;
    norm.running_mean = (1.0 - momentum) * norm.running_mean + momentum * act.batch_mean;
    norm.running_var = (1.0 - momentum) * norm.running_var + momentum * correction * act.batch_var;
    ++norm.tracked_batches;
  };
  for (std::size_t c = 0; c < model.leaves.size(); ++c) {
    update(model.leaves[c].sum.norm, cache.leaves[c], cache.leaves[c].input.rows());
  }
  for (std::size_t l = 0; l < model.blocks.size(); ++l)
    for (std::size_t j = 0; j < model.blocks[l].size(); ++j)
      update(model.blocks[l][j].norm, cache.blocks[l][j], cache.blocks[l][j].input.rows());
}

/// Sets running statistics to the exact batch statistics of `inputs` (one
/// full-batch training-mode pass). Makes randomly initialized models foldable.
inline void calibrate_batchnorm(CircuitModel& model, const Eigen::MatrixXd& inputs) {
  ForwardCache cache;
  forward(model, inputs, NormMode::Training, &cache);
  auto assign = [](BatchNorm& norm, const SumActivation& act) {
    if (!norm.active) return;
    norm.running_mean = act.batch_mean;
    norm.running_var = act.batch_var;
    norm.tracked_batches = 1;
  };
  for (std::size_t c = 0; c < model.leaves.size(); ++c) assign(model.leaves[c].sum.norm, cache.leaves[c]);
  for (std::size_t l = 0; l < model.blocks.size(); ++l)
    for (std::size_t j = 0; j < model.blocks[l].size(); ++j) assign(model.blocks[l][j].norm, cache.blocks[l][j]);
}

/// Absorbs every inference-mode batch norm z = scale * s + shift into the
/// preceding sum: block weights and bias are scaled and the shift is added
/// to the bias; at leaves the shift goes into the constant-term weight.
inline void fold_batchnorm(CircuitModel& model) {
  auto fold = [](SumLayer& sum, bool leaf, const std::string& where) {
    BatchNorm& norm = sum.norm;
    if (!norm.active) return;
    require(norm.tracked_batches > 0, ErrorCode::MissingStatistics,
            "fold_batchnorm: no running statistics in " + where);
    const Eigen::VectorXd scale = norm.scale();
    const Eigen::VectorXd shift = norm.shift();
    sum.weights = scale.asDiagonal() * sum.weights;
    if (leaf) {
      sum.weights.col(0) += shift;
    } else {
      sum.bias = scale.cwiseProduct(sum.bias) + shift;
    }
    norm = BatchNorm::identity(static_cast<int>(scale.size()), false);
  };
  for (std::size_t c = 0; c < model.leaves.size(); ++c) fold(model.leaves[c].sum, true, "leaf " + std::to_string(c));
  for (std::size_t l = 0; l < model.blocks.size(); ++l)
    for (std::size_t j = 0; j < model.blocks[l].size(); ++j)
      if (!model.graph.merge_plan[l][j].pass_through())
        fold(model.blocks[l][j], false, "block " + std::to_string(l) + "." + std::to_string(j));
}

inline CircuitModel folded_copy(CircuitModel model) {
  fold_batchnorm(model);
  return model;
}

// ---------------------------------------------------------------------------
// Optimizers

class Optimizer {
 public:
  Optimizer(const CircuitModel& model, OptimizerKind kind, double learning_rate)
      : kind_(kind), learning_rate_(learning_rate) {
    auto copy = model;
    for (const auto& view : parameter_views(copy)) {
      const auto n = static_cast<Eigen::Index>(view.values.size());
      first_.push_back(Eigen::VectorXd::Zero(n));
      second_.push_back(Eigen::VectorXd::Zero(n));
      second_max_.push_back(Eigen::VectorXd::Zero(n));
    }
  }

  void step(CircuitModel& model, CircuitModel& gradient) {
    auto params = parameter_views(model);
    auto grads = parameter_views(gradient);
    ++steps_;
    const double bias1 = 1.0 - std::pow(kBeta1, static_cast<double>(steps_));
    const double bias2 = 1.0 - std::pow(kBeta2, static_cast<double>(steps_));
    for (std::size_t k = 0; k < params.size(); ++k) {
      Eigen::Map<Eigen::VectorXd> theta(params[k].values.data(), static_cast<Eigen::Index>(params[k].values.size()));
      Eigen::Map<const Eigen::VectorXd> g(grads[k].values.data(), static_cast<Eigen::Index>(grads[k].values.size()));
      if (kind_ == OptimizerKind::Sgd) {
        theta -= learning_rate_ * g;
        continue;
      }
      first_[k] = kBeta1 * first_[k] + (1.0 - kBeta1) * g;
      second_[k] = kBeta2 * second_[k] + (1.0 - kBeta2) * g.cwiseProduct(g);
      second_max_[k] = second_max_[k].cwiseMax(second_[k]);
      const Eigen::ArrayXd denom = (second_max_[k].array() / bias2).sqrt() + kEpsilon;
      theta.array() -= (learning_rate_ / bias1) * first_[k].array() / denom;
    }
  }

 private:
  static constexpr double kBeta1 = 0.9;
  static constexpr double kBeta2 = 0.999;
  static constexpr double kEpsilon = 1e-8;

  OptimizerKind kind_;
  double learning_rate_;
  std::uint64_t steps_ = 0;
  std::vector<Eigen::VectorXd> first_;
  std::vector<Eigen::VectorXd> second_;
  std::vector<Eigen::VectorXd> second_max_;
};

// ---------------------------------------------------------------------------
// Training loop

struct RestartResult {
  int index = 0;
  bool failed = false;
  std::string failure;
  double best_val_mse = std::numeric_limits<double>::infinity();
  double best_val_relative_mse = std::numeric_limits<double>::infinity();
  int best_epoch = -1;
  int epochs_run = 0;
  std::vector<double> train_loss;  // standardized units, per epoch
  std::vector<double> val_mse;     // target units, per epoch
};

struct TrainReport {
  CircuitModel best_model;
  int best_restart = -1;
  std::vector<RestartResult> restarts;
  TrainConfig config;
};

/// Scales the head so a model trained on standardized targets predicts in target units.
inline void unstandardize_head(CircuitModel& model, const Eigen::VectorXd& mean, const Eigen::VectorXd& scale) {
  model.head.weights = scale.asDiagonal() * model.head.weights;
  model.head.bias = scale.cwiseProduct(model.head.bias) + mean;
}

namespace detail {

inline RestartResult train_one(CircuitModel& model, const TrainConfig& cfg, int restart, const Dataset& train,
                               const Dataset& val, const Eigen::VectorXd& target_mean,
                               const Eigen::VectorXd& target_scale) {
  RestartResult result;
  result.index = restart;
  const std::uint64_t seed = derive_seed(cfg.seed, static_cast<std::uint64_t>(restart));
  init_weights(model, cfg, seed);

  const Eigen::MatrixXd scaled_targets =
      ((train.targets.rowwise() - target_mean.transpose()).array().rowwise() / target_scale.transpose().array())
          .matrix();
  const Eigen::Index n = train.size();
  const auto batch = static_cast<Eigen::Index>(cfg.batch_size);
  const bool has_norm = model.config.batch_norm;
  Optimizer optimizer(model, cfg.optimizer, cfg.learning_rate);
  CircuitModel best = model;
  int since_best = 0;
  CounterRng shuffle_rng(seed, 0x5B0FF1E);

  Eigen::MatrixXd xb, yb;
  ForwardCache cache;
  try {
    for (int epoch = 0; epoch < cfg.max_epochs; ++epoch) {
      const std::vector<std::size_t> order = random_permutation(static_cast<std::size_t>(n), shuffle_rng);
      double epoch_loss = 0.0;
      Eigen::Index seen = 0;
      for (Eigen::Index start = 0; start < n; start += batch) {
        const Eigen::Index rows = std::min(batch, n - start);
        if (has_norm && rows < 2 && n >= 2) continue;
        xb.resize(rows, train.inputs.cols());
        yb.resize(rows, scaled_targets.cols());
        for (Eigen::Index i = 0; i < rows; ++i) {
          const auto src = static_cast<Eigen::Index>(order[static_cast<std::size_t>(start + i)]);
          xb.row(i) = train.inputs.row(src);
          yb.row(i) = scaled_targets.row(src);
        }
        GradientResult step = backward(model, xb, yb, NormMode::Training, &cache);
        if (!std::isfinite(step.loss)) throw Error(ErrorCode::NonFinite, "training loss diverged");
        update_running_statistics(model, cache);
        optimizer.step(model, step.gradient);
        epoch_loss += step.loss * static_cast<double>(rows);
        seen += rows;
      }
      result.train_loss.push_back(seen > 0 ? epoch_loss / static_cast<double>(seen) : 0.0);

      CircuitModel scored = model;
      unstandardize_head(scored, target_mean, target_scale);
      const Eigen::MatrixXd pred = forward_chunked(scored, val.inputs);
      const double val_mse = loss_mse(pred, val.targets);
      require(std::isfinite(val_mse), ErrorCode::NonFinite, "validation loss diverged");
      result.val_mse.push_back(val_mse);
      result.epochs_run = epoch + 1;
      if (val_mse < result.best_val_mse) {
        result.best_val_mse = val_mse;
        result.best_val_relative_mse = relative_mse(pred, val.targets);
        result.best_epoch = epoch;
        best = std::move(scored);
        since_best = 0;
      } else if (++since_best >= cfg.early_stop_patience) {
        break;
      }
    }
  } catch (const Error& e) {
    result.failed = true;
    result.failure = e.what();
  }
  if (result.best_epoch < 0) result.failed = true;
  model = std::move(best);
  return result;
}

}  // namespace detail

/// Runs `cfg.n_restarts` independent initializations of `prototype` and keeps
/// the one with the lowest validation MSE. Failed (diverged) restarts are
/// recorded and skipped; if all fail, throws TrainingFailed.
inline TrainReport train(const CircuitModel& prototype, const TrainConfig& cfg, const Dataset& train_set,
                         const Dataset& val_set) {
  cfg.validate();
  train_set.validate();
  val_set.validate();
  require(train_set.size() > 0 && val_set.size() > 0, ErrorCode::InvalidArgument, "train: empty dataset");
  require(train_set.input_dim() == prototype.input_dim() && train_set.output_dim() == prototype.output_dim() &&
              val_set.input_dim() == prototype.input_dim() && val_set.output_dim() == prototype.output_dim(),
          ErrorCode::DimensionMismatch, "train: dataset shape does not match the model");

  Eigen::VectorXd target_mean = Eigen::VectorXd::Zero(prototype.output_dim());
  Eigen::VectorXd target_scale = Eigen::VectorXd::Ones(prototype.output_dim());
  if (cfg.standardize_targets) {
    target_mean = train_set.targets.colwise().mean().transpose();
    for (Eigen::Index o = 0; o < target_scale.size(); ++o) {
      const double sd = std::sqrt((train_set.targets.col(o).array() - target_mean[o]).square().mean());
      target_scale[o] = sd > 1e-12 * std::max(1.0, std::abs(target_mean[o])) ? sd : 1.0;
    }
  }

  TrainReport report;
  report.config = cfg;
  double best = std::numeric_limits<double>::infinity();
  for (int r = 0; r < cfg.n_restarts; ++r) {
    CircuitModel model = prototype;
    RestartResult result = detail::train_one(model, cfg, r, train_set, val_set, target_mean, target_scale);
    if (!result.failed && result.best_val_mse < best) {
      best = result.best_val_mse;
      report.best_restart = r;
      report.best_model = std::move(model);
    }
    report.restarts.push_back(std::move(result));
  }
  if (report.best_restart < 0) {
    const std::string& reason = report.restarts.front().failure;
    throw Error(ErrorCode::TrainingFailed, "all " + std::to_string(cfg.n_restarts) + " restarts failed" +
                                               (reason.empty() ? "" : " (restart 0: " + reason + ")"));
  }
  return report;
}

inline nlohmann::json to_json(const RestartResult& r) {
  auto finite_or_null = [](double v) -> nlohmann::json {
    return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr);
  };
  return {{"restart", r.index},
          {"failed", r.failed},
          {"failure", r.failure},
          {"best_val_mse", finite_or_null(r.best_val_mse)},
          {"best_val_relative_mse", finite_or_null(r.best_val_relative_mse)},
          {"best_epoch", r.best_epoch},
          {"epochs_run", r.epochs_run},
          {"train_loss", r.train_loss},
          {"val_mse", r.val_mse}};
}

inline nlohmann::json to_json(const TrainReport& report) {
  nlohmann::json restarts = nlohmann::json::array();
  for (const auto& r : report.restarts) restarts.push_back(to_json(r));
  return {{"best_restart", report.best_restart}, {"config", to_json(report.config)}, {"restarts", restarts}};
}

}  // namespace deeppce
