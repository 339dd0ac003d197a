#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "sharpqos/balancing.hpp"
#include "sharpqos/model.hpp"
#include "sharpqos/qosdata.hpp"

namespace sharpqos {

struct TrainConfig {
  int epochs = 10000;
  double lr = 1e-3;
  double weight_decay = 1e-4;
  double ema_beta = 0.99;
  double lambda_l0 = 1e-5;
  int patience = 400;
  Balancing balancing = Balancing::Ema;
  std::uint64_t seed = 0;
  int log_every = 0;  // progress lines to stderr; 0 = silent
};

struct EpochRecord {
  int epoch = 0;
  std::vector<double> train_mae;
  double val_loss = 0.0;
  std::vector<double> weights;
  double expected_l0_snr = 0.0;
  double expected_l0_cross = 0.0;
};

struct TrainResult {
  Eigen::VectorXd best_params;
  int best_epoch = -1;
  double best_val = std::numeric_limits<double>::infinity();
  int epochs_run = 0;
  std::vector<EpochRecord> history;
  bool aborted_non_finite = false;
  std::string stop_reason;
};

/// Mean absolute error of the prediction over the masked entries of one task.
double task_loss(const Eigen::MatrixXd& pred, const QoSDataset& ds, const Mask& mask, int task);

/// Weighted task losses plus the routing sparsity penalty.
inline double total_loss(const std::vector<double>& losses, const std::vector<double>& weights,
                         double l0_snr, double l0_cross, double lambda) {
  double t = 0.0;
  for (std::size_t p = 0; p < losses.size(); ++p) t += weights[p] * losses[p];
  return t + lambda * (l0_snr + l0_cross);
}

/// Full-batch joint training: one AdamW step per epoch on the weighted task
/// losses plus the L0 routing penalty. Early stopping monitors the weighted
/// validation loss (train loss for tasks with an empty validation mask) and
/// halts after `patience` epochs without improvement. On return `params`
/// holds the best checkpoint.
TrainResult train(const QoSDataset& ds, const DataSplit& split, const ModelInputs& inputs,
                  ModelParams& params, const TrainConfig& cfg);

void write_history_csv(const std::vector<EpochRecord>& history,
                       const std::vector<std::string>& task_names, const std::string& path);

}  // namespace sharpqos
