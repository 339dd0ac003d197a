#include "sharpqos/metrics.hpp"

#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

#include "sharpqos/rng.hpp"

using json = nlohmann::json;

namespace sharpqos {

Metrics compute_metrics(const std::vector<double>& errors) {
  if (errors.empty()) throw std::invalid_argument("compute_metrics: empty error list");
  double abs_sum = 0.0, sq_sum = 0.0;
  for (double e : errors) {
    abs_sum += std::abs(e);
    sq_sum += e * e;
  }
  double n = static_cast<double>(errors.size());
  return {abs_sum / n, std::sqrt(sq_sum / n)};
}

Metrics compute_metrics(const Eigen::MatrixXd& pred, const QoSDataset& ds, const Mask& test_mask,
                        int task) {
  std::vector<double> errors;
  for (int i = 0; i < ds.n; ++i)
    for (int j = 0; j < ds.m; ++j)
      if (test_mask[static_cast<std::size_t>(i) * ds.m + j])
        errors.push_back(ds.values[task](i, j) - pred(i, j));
  if (errors.empty()) throw std::invalid_argument("compute_metrics: empty test mask");
  return compute_metrics(errors);
}

double improvement(double p1, double p2) {
  if (p2 == 0.0) throw std::invalid_argument("improvement: reference score is zero");
  return (p2 - p1) / p2 * 100.0;
}

double z_for_level(int level) {
  switch (level) {
    case 90: return 1.6449;
    case 95: return 1.9600;
    case 99: return 2.5758;
    default: throw std::invalid_argument("z_for_level: supported levels are 90, 95, 99");
  }
}

std::pair<double, double> ci_from_stats(double mean, double stddev, int groups, double z) {
  double half = z * stddev / std::sqrt(static_cast<double>(groups));
  return {mean - half, mean + half};
}

CiReport confidence_intervals(const std::vector<double>& errors, int groups,
                              const std::vector<int>& levels,
                              std::optional<std::uint64_t> shuffle_seed) {
  if (groups < 1) throw std::invalid_argument("confidence_intervals: groups must be >= 1");
  if (errors.size() < static_cast<std::size_t>(groups))
    throw std::invalid_argument("confidence_intervals: fewer errors than groups");

  std::vector<double> e = errors;
  if (shuffle_seed) {
    Rng rng(mix_seed(*shuffle_seed, 4000));
    rng.shuffle(e);
  }
  const std::size_t group_size = e.size() / static_cast<std::size_t>(groups);

  std::vector<double> group_mae(static_cast<std::size_t>(groups), 0.0);
  for (int g = 0; g < groups; ++g) {
    double s = 0.0;
    for (std::size_t k = 0; k < group_size; ++k)
      s += std::abs(e[static_cast<std::size_t>(g) * group_size + k]);
    group_mae[g] = s / static_cast<double>(group_size);
  }

  CiReport rep;
  rep.groups_used = groups;
  double mean = 0.0;
  for (double v : group_mae) mean += v;
  mean /= groups;
  double var = 0.0;
  if (groups > 1) {
    for (double v : group_mae) var += (v - mean) * (v - mean);
    var /= (groups - 1);
  }
  rep.group_mean = mean;
  rep.group_std = std::sqrt(var);
  double overall = 0.0;
  for (double v : errors) overall += std::abs(v);
  rep.overall_mae = overall / static_cast<double>(errors.size());

  for (int level : levels) {
    auto [lo, hi] = ci_from_stats(rep.group_mean, rep.group_std, groups, z_for_level(level));
    // group means and the overall mean accumulate in different orders; a few
    // ulps of slack keep the degenerate all-equal case inside its own interval
    double ulp = 1e-12 * std::max(1.0, std::abs(rep.group_mean));
    rep.intervals.push_back(
        {level, lo, hi, rep.overall_mae >= lo - ulp && rep.overall_mae <= hi + ulp});
  }
  return rep;
}

Eigen::MatrixXd per_service_mean_prediction(const QoSDataset& ds, const Mask& train_mask,
                                            int task) {
  Eigen::VectorXd sums = Eigen::VectorXd::Zero(ds.m);
  Eigen::VectorXd counts = Eigen::VectorXd::Zero(ds.m);
  double global_sum = 0.0;
  double global_count = 0.0;
  for (int i = 0; i < ds.n; ++i) {
    for (int j = 0; j < ds.m; ++j) {
      if (train_mask[static_cast<std::size_t>(i) * ds.m + j]) {
        double v = ds.values[task](i, j);
        sums(j) += v;
        counts(j) += 1.0;
        global_sum += v;
        global_count += 1.0;
      }
    }
  }
  double global_mean = global_count > 0.0 ? global_sum / global_count : 0.0;
  Eigen::MatrixXd pred(ds.n, ds.m);
  for (int j = 0; j < ds.m; ++j) {
    double v = counts(j) > 0.0 ? sums(j) / counts(j) : global_mean;
    pred.col(j).setConstant(v);
  }
  return pred;
}

namespace {

json report_results_json(const EvalReport& r) {
  json out;
  out["tasks"] = json::array();
  for (const TaskReport& t : r.tasks) {
    json jt;
    jt["name"] = t.name;
    jt["mae"] = t.model.mae;
    jt["rmse"] = t.model.rmse;
    jt["baseline_mae"] = t.baseline.mae;
    jt["baseline_rmse"] = t.baseline.rmse;
    jt["improvement_mae_pct"] = t.improvement_mae_pct;
    jt["improvement_rmse_pct"] = t.improvement_rmse_pct;
    json ci;
    ci["group_mean"] = t.ci.group_mean;
    ci["group_std"] = t.ci.group_std;
    ci["overall_mae"] = t.ci.overall_mae;
    ci["groups"] = t.ci.groups_used;
    ci["intervals"] = json::array();
    for (const ConfidenceInterval& iv : t.ci.intervals)
      ci["intervals"].push_back({{"level", iv.level},
                                 {"lo", iv.lo},
                                 {"hi", iv.hi},
                                 {"h0_accepted", iv.h0_accepted}});
    jt["confidence"] = ci;
    out["tasks"].push_back(jt);
  }
  json run;
  run["config_hash"] = r.config_hash;
  run["master_seed"] = r.master_seed;
  run["parameter_count"] = r.parameter_count;
  run["forward_madds"] = r.forward_madds;
  run["epochs_run"] = r.epochs_run;
  run["best_epoch"] = r.best_epoch;
  run["stop_reason"] = r.stop_reason;
  run["strict"] = r.strict;
  run["cold_start"] = r.cold_start;
  run["outlier_fraction"] = r.outlier_fraction;
  out["run"] = run;
  return out;
}

}  // namespace

std::string EvalReport::results_json() const { return report_results_json(*this).dump(2); }

std::string EvalReport::full_json() const {
  json out = report_results_json(*this);
  out["timing"] = {{"wall_ms_total", wall_ms_total}, {"wall_ms_train", wall_ms_train}};
  return out.dump(2);
}

std::string EvalReport::summary_markdown() const {
  std::ostringstream os;
  os.precision(4);
  os << std::fixed;
  os << "# Evaluation summary\n\n";
  os << "| task | MAE | RMSE | baseline MAE | baseline RMSE | I(MAE) % | I(RMSE) % |\n";
  os << "|------|-----|------|--------------|---------------|----------|-----------|\n";
  for (const TaskReport& t : tasks)
    os << "| " << t.name << " | " << t.model.mae << " | " << t.model.rmse << " | "
       << t.baseline.mae << " | " << t.baseline.rmse << " | " << t.improvement_mae_pct << " | "
       << t.improvement_rmse_pct << " |\n";
  os << "\n## Confidence intervals\n\n";
  for (const TaskReport& t : tasks) {
    os << "- **" << t.name << "** (group mean " << t.ci.group_mean << ", group std "
       << t.ci.group_std << ", G=" << t.ci.groups_used << "):";
    for (const ConfidenceInterval& iv : t.ci.intervals)
      os << " " << iv.level << "%: (" << iv.lo << ", " << iv.hi << ")"
         << (iv.h0_accepted ? " ok" : " REJECTED");
    os << "\n";
  }
  os << "\n## Run\n\n";
  os << "- parameters: " << parameter_count << "\n";
  os << "- forward multiply-adds: " << forward_madds << "\n";
  os << "- epochs: " << epochs_run << " (best " << best_epoch << ", " << stop_reason << ")\n";
  os << "- train wall time: " << wall_ms_train / 1000.0 << " s (total " << wall_ms_total / 1000.0
     << " s)\n";
  if (!cold_start.empty()) os << "- cold start: " << cold_start << "\n";
  if (outlier_fraction > 0.0) os << "- outliers removed: " << outlier_fraction << "%\n";
  return os.str();
}

void write_text_file(const std::string& path, const std::string& content) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open " + path);
  out << content;
}

}  // namespace sharpqos
