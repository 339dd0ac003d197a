// sharpqos: joint QoS prediction pipeline driver.

#include <CLI11.hpp>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>

#include "sharpqos/experiment.hpp"
#include "sharpqos/featinit.hpp"
#include "sharpqos/graphs.hpp"
#include "sharpqos/synth.hpp"

namespace fs = std::filesystem;
using namespace sharpqos;

namespace {

struct CliOptions {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<double> td;
  std::optional<std::string> balancing;
  std::optional<std::string> cold_start;
  std::optional<double> outlier_frac;
  std::optional<std::string> output_dir;
  bool strict = false;
  int log_every = 0;
};

void add_common(CLI::App* cmd, CliOptions& opt, bool config_required = true) {
  auto* c = cmd->add_option("--config", opt.config_path, "experiment config file (TOML)");
  if (config_required) c->required();
  cmd->add_option("--seed", opt.seed, "master seed; derives all stage seeds");
  cmd->add_option("--td", opt.td, "training density percentage");
  cmd->add_option("--balancing", opt.balancing, "loss balancing: equal|dwa|huw|ema");
  cmd->add_option("--cold-start", opt.cold_start, "cold-start variant, e.g. CB:10");
  cmd->add_option("--outlier-frac", opt.outlier_frac, "test outliers removed, percent");
  cmd->add_option("--output-dir", opt.output_dir, "artifact directory (overrides config)");
  cmd->add_flag("--strict-determinism", opt.strict,
                "force the strictly deterministic sequential paths");
  cmd->add_option("--log-every", opt.log_every, "progress line every N epochs");
}

ExperimentConfig load_config(const CliOptions& opt) {
  ExperimentConfig cfg = ExperimentConfig::from_file(opt.config_path);
  if (opt.seed) cfg.apply_master_seed(*opt.seed);
  if (opt.td) cfg.split.train_density = *opt.td;
  if (opt.balancing) cfg.train.balancing = parse_balancing(*opt.balancing);
  if (opt.cold_start) cfg.eval.cold_start = *opt.cold_start;
  if (opt.outlier_frac) cfg.eval.outlier_fraction = *opt.outlier_frac;
  if (opt.output_dir) cfg.eval.output_dir = *opt.output_dir;
  if (opt.strict) cfg.eval.strict = true;
  if (opt.log_every > 0) cfg.train.log_every = opt.log_every;
  return cfg;
}

void print_task_lines(const EvalReport& rep) {
  for (const TaskReport& t : rep.tasks)
    std::cout << t.name << ": MAE " << t.model.mae << " RMSE " << t.model.rmse
              << " (baseline MAE " << t.baseline.mae << ", improvement "
              << t.improvement_mae_pct << "%)\n";
}

int cmd_preprocess(const CliOptions& opt, bool dump_graphs) {
  ExperimentConfig cfg = load_config(opt);
  QoSDataset ds = load_dataset_from_config(cfg);
  std::string dir = cfg.eval.output_dir + "/archive";
  save_archive(ds, dir, "preprocessed via sharpqos; config " + cfg.hash());
  std::cout << "archive written to " << dir << " (" << ds.n << " users, " << ds.m
            << " services, " << ds.P << " tasks)\n";
  for (const std::string& w : ds.warnings) std::cout << "warning: " << w << '\n';
  if (dump_graphs) {
    DataSplit sp = split(ds, cfg.split);
    GraphSet gs = build_graph_set(ds, sp.train);
    dump_graph_set(gs, ds, cfg.eval.output_dir + "/graphs");
    std::cout << "edge lists written to " << cfg.eval.output_dir << "/graphs\n";
  }
  return 0;
}

int cmd_features(const CliOptions& opt) {
  ExperimentConfig cfg = load_config(opt);
  QoSDataset ds = load_dataset_from_config(cfg);
  DataSplit sp = split(ds, cfg.split);
  if (!cfg.eval.cold_start.empty()) {
    ColdStartSpec cs = parse_cold_start(cfg.eval.cold_start, cfg.split.seed);
    sp.train = make_cold_start(ds, sp.train, cs);
  }
  FeatureBank bank = build_feature_bank(ds, sp.train, cfg.features);
  std::string dir = cfg.eval.output_dir + "/features";
  save_feature_bank(bank, ds, cfg.features, dir);
  std::cout << "feature cache written to " << dir << '\n';
  return 0;
}

int cmd_train(const CliOptions& opt) {
  ExperimentConfig cfg = load_config(opt);
  PreparedExperiment prep = prepare_experiment(cfg);
  ModelParams params =
      ModelParams::create(cfg.model, prep.ds.P, cfg.train.balancing == Balancing::Huw);
  params.init(cfg.train.seed);
  TrainResult res = train(prep.ds, prep.split, prep.inputs, params, cfg.train);
  write_train_artifacts(cfg, prep, params, res);
  std::cout << "trained " << res.epochs_run << " epochs (" << res.stop_reason << "), best epoch "
            << res.best_epoch << ", checkpoint at " << cfg.eval.output_dir << "/model.ckpt\n";
  return 0;
}

int cmd_eval(const CliOptions& opt, const std::string& checkpoint) {
  ExperimentConfig cfg = load_config(opt);
  std::string ckpt = checkpoint.empty() ? cfg.eval.output_dir + "/model.ckpt" : checkpoint;
  EvalReport rep = evaluate_checkpoint(cfg, ckpt, true);
  print_task_lines(rep);
  std::cout << "report written to " << cfg.eval.output_dir << "/report.json\n";
  return 0;
}

int cmd_run(const CliOptions& opt) {
  ExperimentConfig cfg = load_config(opt);
  ExperimentResult res = run_experiment(cfg);
  print_task_lines(res.report);
  std::cout << "artifacts in " << cfg.eval.output_dir << '\n';
  return 0;
}

int cmd_report(const CliOptions& opt) {
  ExperimentConfig cfg = load_config(opt);
  std::ifstream in(cfg.eval.output_dir + "/report.json");
  if (!in) {
    std::cerr << "no report.json in " << cfg.eval.output_dir << "; run `sharpqos run` first\n";
    return 1;
  }
  std::ifstream md(cfg.eval.output_dir + "/summary.md");
  if (md)
    std::cout << md.rdbuf();
  else
    std::cout << in.rdbuf();
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"SHARP-QoS joint quality-of-service prediction pipeline"};
  app.require_subcommand(1);

  CliOptions opt;
  std::string checkpoint;

  bool dump_graphs = false;
  CLI::App* preprocess =
      app.add_subcommand("preprocess", "normalize raw matrices into a dataset archive");
  add_common(preprocess, opt);
  preprocess->add_flag("--dump-graphs", dump_graphs, "also write edges_<name>.csv per graph");

  CLI::App* features = app.add_subcommand("features", "build and cache the initial features");
  add_common(features, opt);

  CLI::App* train_cmd = app.add_subcommand("train", "train and write checkpoint artifacts");
  add_common(train_cmd, opt);

  CLI::App* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint on the test split");
  add_common(eval_cmd, opt);
  eval_cmd->add_option("--checkpoint", checkpoint, "checkpoint path (default <out>/model.ckpt)");

  CLI::App* coldstart =
      app.add_subcommand("coldstart", "full run under a cold-start scenario (requires --cold-start)");
  add_common(coldstart, opt);

  CLI::App* outliers =
      app.add_subcommand("outliers", "evaluate with isolation-forest outlier removal");
  add_common(outliers, opt);
  outliers->add_option("--checkpoint", checkpoint, "checkpoint path (default <out>/model.ckpt)");

  CLI::App* run_cmd = app.add_subcommand("run", "full pipeline: preprocess, train, evaluate");
  add_common(run_cmd, opt);

  CLI::App* report = app.add_subcommand("report", "print the summary for an output directory");
  add_common(report, opt);

  CLI11_PARSE(app, argc, argv);

  try {
    if (preprocess->parsed()) return cmd_preprocess(opt, dump_graphs);
    if (features->parsed()) return cmd_features(opt);
    if (train_cmd->parsed()) return cmd_train(opt);
    if (eval_cmd->parsed()) return cmd_eval(opt, checkpoint);
    if (coldstart->parsed()) {
      if (!opt.cold_start) {
        std::cerr << "coldstart requires --cold-start KIND:<pct>\n";
        return 1;
      }
      return cmd_run(opt);
    }
    if (outliers->parsed()) {
      if (!opt.outlier_frac) {
        std::cerr << "outliers requires --outlier-frac <pct>\n";
        return 1;
      }
      return cmd_eval(opt, checkpoint);
    }
    if (run_cmd->parsed()) return cmd_run(opt);
    if (report->parsed()) return cmd_report(opt);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
