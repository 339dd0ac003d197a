#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "sharpqos/qosdata.hpp"

namespace sharpqos {

struct Metrics {
  double mae = 0.0;
  double rmse = 0.0;
};

/// MAE and RMSE of the prediction over the masked test entries of one task.
Metrics compute_metrics(const Eigen::MatrixXd& pred, const QoSDataset& ds, const Mask& test_mask,
                        int task);
Metrics compute_metrics(const std::vector<double>& errors);

/// Relative improvement of score p1 over score p2, in percent.
double improvement(double p1, double p2);

double z_for_level(int level);  // 90 -> 1.6449, 95 -> 1.9600, 99 -> 2.5758

struct ConfidenceInterval {
  int level = 0;
  double lo = 0.0;
  double hi = 0.0;
  bool h0_accepted = false;  // overall MAE inside the interval
};

struct CiReport {
  double group_mean = 0.0;
  double group_std = 0.0;  // sample std of the group MAEs
  double overall_mae = 0.0;
  int groups_used = 0;
  std::vector<ConfidenceInterval> intervals;
};

/// Group-wise confidence intervals over prediction errors: the (optionally
/// seeded-shuffled) error list is cut into `groups` equal chunks (remainder
/// dropped), per-group MAEs give mean m and sample std s, and each interval is
/// m +- z * s / sqrt(G).
CiReport confidence_intervals(const std::vector<double>& errors, int groups,
                              const std::vector<int>& levels,
                              std::optional<std::uint64_t> shuffle_seed = std::nullopt);

std::pair<double, double> ci_from_stats(double mean, double stddev, int groups, double z);

/// Baseline predictor: per-service mean of the train entries, global train
/// mean for services without any.
Eigen::MatrixXd per_service_mean_prediction(const QoSDataset& ds, const Mask& train_mask,
                                            int task);

struct TaskReport {
  std::string name;
  Metrics model;
  Metrics baseline;
  double improvement_mae_pct = 0.0;
  double improvement_rmse_pct = 0.0;
  CiReport ci;
};

struct EvalReport {
  std::vector<TaskReport> tasks;
  // run metadata
  std::string config_hash;
  std::uint64_t master_seed = 0;
  long parameter_count = 0;
  double forward_madds = 0.0;
  int epochs_run = 0;
  int best_epoch = 0;
  std::string stop_reason;
  bool strict = true;
  std::string cold_start;
  double outlier_fraction = 0.0;
  // timing lives apart from the deterministic payload
  double wall_ms_total = 0.0;
  double wall_ms_train = 0.0;

  /// Deterministic part of the report (no timing), for reproducibility checks.
  std::string results_json() const;
  std::string full_json() const;
  std::string summary_markdown() const;
};

void write_text_file(const std::string& path, const std::string& content);

}  // namespace sharpqos
