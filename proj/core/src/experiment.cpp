#include "sharpqos/experiment.hpp"

#include <chrono>
#include <filesystem>
#include <fstream>
#include <stdexcept>

#include <json.hpp>

#include "sharpqos/featinit.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace sharpqos {

namespace {

using Clock = std::chrono::steady_clock;

double ms_since(Clock::time_point t0) {
  return std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
}

template <typename F>
auto stage(const char* name, F&& f) {
  try {
    return f();
  } catch (const std::exception& e) {
    throw std::runtime_error(std::string("[stage ") + name + "] " + e.what());
  }
}

std::string checkpoint_meta(const ExperimentConfig& cfg, const QoSDataset& ds,
                            const ModelParams& params) {
  json meta;
  meta["config_hash"] = cfg.hash();
  meta["config"] = cfg.canonical();
  meta["seeds"] = {{"split", cfg.split.seed},
                   {"features", cfg.features.seed},
                   {"train", cfg.train.seed},
                   {"master", cfg.master_seed}};
  meta["tasks"] = ds.task_names;
  meta["manifest"] = json::parse(params.manifest_json());
  return meta.dump();
}

}  // namespace

ColdStartSpec parse_cold_start(const std::string& text, std::uint64_t seed) {
  std::size_t colon = text.find(':');
  if (colon == std::string::npos)
    throw std::invalid_argument("cold-start spec must be KIND:<pct>, got " + text);
  ColdStartSpec spec;
  spec.kind = parse_cold_start_kind(text.substr(0, colon));
  spec.csp = std::stod(text.substr(colon + 1));
  spec.seed = seed;
  return spec;
}

QoSDataset load_dataset_from_config(const ExperimentConfig& cfg) {
  if (!cfg.dataset.archive.empty() && fs::exists(fs::path(cfg.dataset.archive) / "meta.json"))
    return load_archive(cfg.dataset.archive);
  if (cfg.dataset.matrix_paths.empty())
    throw std::invalid_argument("config: either dataset.archive or dataset.matrices required");
  return load_dataset(cfg.dataset.matrix_paths, cfg.dataset.context_path, cfg.dataset.task_names);
}

PreparedExperiment prepare_experiment(const ExperimentConfig& cfg, const QoSDataset* preloaded) {
  PreparedExperiment prep;
  if (preloaded)
    prep.ds = *preloaded;
  else
    prep.ds = stage("load", [&] { return load_dataset_from_config(cfg); });

  prep.split = stage("split", [&] { return split(prep.ds, cfg.split); });
  if (!cfg.eval.cold_start.empty()) {
    ColdStartSpec cs = parse_cold_start(cfg.eval.cold_start, cfg.split.seed);
    // held-out monitor entries of cold entities are training signal too, so
    // both masks are cleared
    prep.split.train = stage("coldstart", [&] { return make_cold_start(prep.ds, prep.split.train, cs); });
    prep.split.val = make_cold_start(prep.ds, prep.split.val, cs);
  }
  prep.test_mask = prep.split.test;
  if (cfg.eval.outlier_fraction > 0.0)
    prep.test_mask = stage("outliers", [&] {
      return filter_outliers(prep.ds, prep.split.test, cfg.eval.outlier_fraction, cfg.split.seed);
    });

  prep.graphs = stage("graphs", [&] { return build_graph_set(prep.ds, prep.split.train); });
  prep.features = stage("features", [&] {
    FeatureBank b;
    if (!load_feature_bank(b, prep.ds, cfg.features, cfg.eval.output_dir + "/features"))
      b = build_feature_bank(prep.ds, prep.split.train, cfg.features);
    return b;
  });
  prep.inputs = make_model_inputs(prep.ds, prep.graphs, prep.features);
  return prep;
}

EvalReport evaluate_params(const ExperimentConfig& cfg, const PreparedExperiment& prep,
                           const ModelParams& params, ForwardOutputs* outputs) {
  ForwardOutputs out = forward(prep.inputs, params, RunMode::Infer, nullptr);

  EvalReport rep;
  for (int p = 0; p < prep.ds.P; ++p) {
    TaskReport tr;
    tr.name = prep.ds.task_names[p];
    tr.model = compute_metrics(out.q_hat[p], prep.ds, prep.test_mask[p], p);
    Eigen::MatrixXd base = per_service_mean_prediction(prep.ds, prep.split.train[p], p);
    tr.baseline = compute_metrics(base, prep.ds, prep.test_mask[p], p);
    tr.improvement_mae_pct = improvement(tr.model.mae, tr.baseline.mae);
    tr.improvement_rmse_pct = improvement(tr.model.rmse, tr.baseline.rmse);

    std::vector<double> errors;
    for (const Triplet& e : mask_triplets(prep.ds, prep.test_mask[p], p))
      errors.push_back(e.value - out.q_hat[p](e.row, e.col));
    if (static_cast<int>(errors.size()) >= cfg.eval.groups)
      tr.ci = confidence_intervals(errors, cfg.eval.groups, cfg.eval.levels, cfg.split.seed);
    rep.tasks.push_back(std::move(tr));
  }
  rep.config_hash = cfg.hash();
  rep.master_seed = cfg.master_seed;
  rep.parameter_count = static_cast<long>(params.store.size());
  rep.forward_madds = estimate_forward_madds(prep.inputs, cfg.model);
  rep.strict = cfg.eval.strict;
  rep.cold_start = cfg.eval.cold_start;
  rep.outlier_fraction = cfg.eval.outlier_fraction;
  if (outputs) *outputs = std::move(out);
  return rep;
}

void write_train_artifacts(const ExperimentConfig& cfg, const PreparedExperiment& prep,
                           const ModelParams& params, const TrainResult& result) {
  const std::string out_dir = cfg.eval.output_dir;
  fs::create_directories(out_dir);
  write_history_csv(result.history, prep.ds.task_names, out_dir + "/history.csv");
  save_checkpoint(params, checkpoint_meta(cfg, prep.ds, params), out_dir + "/model.ckpt");
  dump_gates(params, prep.ds.task_names, out_dir);
}

ExperimentResult run_experiment(const ExperimentConfig& cfg, const QoSDataset* preloaded,
                                bool write_artifacts) {
  auto t_start = Clock::now();
  const std::string out_dir = cfg.eval.output_dir;
  if (write_artifacts) {
    fs::create_directories(out_dir);
    std::ofstream(fs::path(out_dir) / "INCOMPLETE") << "run in progress\n";
  }

  ExperimentResult result;
  PreparedExperiment prep = prepare_experiment(cfg, preloaded);

  result.params =
      ModelParams::create(cfg.model, prep.ds.P, cfg.train.balancing == Balancing::Huw);
  result.params.init(cfg.train.seed);

  auto t_train = Clock::now();
  result.train_result =
      stage("train", [&] { return train(prep.ds, prep.split, prep.inputs, result.params, cfg.train); });
  double train_ms = ms_since(t_train);

  result.report = stage("eval", [&] {
    return evaluate_params(cfg, prep, result.params, &result.eval_outputs);
  });
  result.report.epochs_run = result.train_result.epochs_run;
  result.report.best_epoch = result.train_result.best_epoch;
  result.report.stop_reason = result.train_result.stop_reason;
  result.report.wall_ms_train = train_ms;
  result.report.wall_ms_total = ms_since(t_start);
  result.split = prep.split;

  if (write_artifacts) {
    stage("artifacts", [&] {
      write_text_file(out_dir + "/report.json", result.report.full_json());
      write_text_file(out_dir + "/summary.md", result.report.summary_markdown());
      write_train_artifacts(cfg, prep, result.params, result.train_result);
      fs::remove(fs::path(out_dir) / "INCOMPLETE");
      return 0;
    });
  }
  return result;
}

EvalReport evaluate_checkpoint(const ExperimentConfig& cfg, const std::string& checkpoint_path,
                               bool write_artifacts) {
  auto t_start = Clock::now();
  PreparedExperiment prep = prepare_experiment(cfg);
  ModelParams params =
      ModelParams::create(cfg.model, prep.ds.P, cfg.train.balancing == Balancing::Huw);
  std::string meta = stage("checkpoint", [&] { return load_checkpoint(params, checkpoint_path); });

  EvalReport rep = stage("eval", [&] { return evaluate_params(cfg, prep, params, nullptr); });
  rep.stop_reason = "evaluated from checkpoint";
  rep.wall_ms_total = ms_since(t_start);

  json meta_json = json::parse(meta, nullptr, false);
  if (!meta_json.is_discarded() && meta_json.contains("config_hash") &&
      meta_json["config_hash"].get<std::string>() != cfg.hash())
    rep.stop_reason += " (config differs from the training run)";

  if (write_artifacts) {
    fs::create_directories(cfg.eval.output_dir);
    write_text_file(cfg.eval.output_dir + "/report.json", rep.full_json());
    write_text_file(cfg.eval.output_dir + "/summary.md", rep.summary_markdown());
  }
  return rep;
}

}  // namespace sharpqos
