#pragma once

#include <string>

#include "sharpqos/config.hpp"
#include "sharpqos/graphs.hpp"
#include "sharpqos/metrics.hpp"
#include "sharpqos/trainloop.hpp"

namespace sharpqos {

/// Parses "CU|CS|CB:<pct>" into a spec seeded from the split seed.
ColdStartSpec parse_cold_start(const std::string& text, std::uint64_t seed);

QoSDataset load_dataset_from_config(const ExperimentConfig& cfg);

/// Deterministic pipeline state up to the model: dataset, masks (after the
/// optional cold-start and outlier-filter variants), graphs, features.
struct PreparedExperiment {
  QoSDataset ds;
  DataSplit split;
  std::vector<Mask> test_mask;
  GraphSet graphs;
  FeatureBank features;
  ModelInputs inputs;
};

PreparedExperiment prepare_experiment(const ExperimentConfig& cfg,
                                      const QoSDataset* preloaded = nullptr);

/// Metrics, baseline comparison and confidence intervals for one parameter
/// set on the prepared masks.
EvalReport evaluate_params(const ExperimentConfig& cfg, const PreparedExperiment& prep,
                           const ModelParams& params, ForwardOutputs* outputs = nullptr);

/// Checkpoint + history + gate dumps into cfg.eval.output_dir.
void write_train_artifacts(const ExperimentConfig& cfg, const PreparedExperiment& prep,
                           const ModelParams& params, const TrainResult& result);

struct ExperimentResult {
  EvalReport report;
  TrainResult train_result;
  DataSplit split;
  ModelParams params;
  ForwardOutputs eval_outputs;  // inference pass at the best checkpoint
};

/// Full pipeline: load -> split (-> cold start, outlier filter) -> graphs ->
/// features -> train -> evaluate. Stage failures rethrow with a stage tag.
/// When write_artifacts is set, report.json, summary.md, history.csv,
/// model.ckpt and the gate dumps land in cfg.eval.output_dir (an INCOMPLETE
/// marker flags partial output).
ExperimentResult run_experiment(const ExperimentConfig& cfg, const QoSDataset* preloaded = nullptr,
                                bool write_artifacts = true);

/// Re-evaluates a stored checkpoint against the (recomputed) masks.
EvalReport evaluate_checkpoint(const ExperimentConfig& cfg, const std::string& checkpoint_path,
                               bool write_artifacts);

}  // namespace sharpqos
