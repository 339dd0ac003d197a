#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <string>
#include <vector>

#include "sharpqos/autodiff.hpp"
#include "sharpqos/featinit.hpp"
#include "sharpqos/graphs.hpp"
#include "sharpqos/qosdata.hpp"
#include "sharpqos/rng.hpp"

namespace sharpqos {

struct ModelConfig {
  int d = 128;       // hidden width, also the feature width
  int layers = 2;    // HyConv layers per stack
  int k1 = 4;        // routing blocks over context features
  int k2 = 4;        // routing blocks over cross-task features
  int d_snr = 64;    // routing block inner width
  double tau = 2.0 / 3.0;
  double gamma = 1.1;
  double beta_stretch = -0.1;
  double delta = 0.5;  // inference gate threshold
  int head1 = 128;
  int head2 = 64;
  double curvature_eps = 1e-5;
  std::string sigma1 = "relu";
  std::string sigma2 = "sigmoid";

  void validate() const;
};

/// Flat, name-addressable parameter storage. Registration order fixes both
/// the flattened layout and the initialization draw order, so checkpoints and
/// gradient indexing are stable.
class ParamStore {
 public:
  struct Info {
    std::string name;
    int rows, cols;
    Eigen::Index offset;
    bool decay;
  };

  int add(const std::string& name, int rows, int cols, bool decay);
  void finalize();
  bool finalized() const { return finalized_; }

  Eigen::Map<Eigen::MatrixXd> view(int idx);
  Eigen::Map<const Eigen::MatrixXd> view(int idx) const;

  Eigen::VectorXd& flat() { return data_; }
  const Eigen::VectorXd& flat() const { return data_; }
  Eigen::VectorXd decay_mask() const;
  const std::vector<Info>& infos() const { return infos_; }
  Eigen::Index size() const { return data_.size(); }
  int find(const std::string& name) const;

 private:
  std::vector<Info> infos_;
  Eigen::VectorXd data_;
  Eigen::Index total_ = 0;
  bool finalized_ = false;
};

/// Handles into the store for one HyConv stack.
struct StackLayout {
  std::vector<int> w1, b1, w2, b2;  // per layer
  int curvature_raw = -1;
};

struct RouteLayout {
  std::vector<int> ln_scale, ln_shift, dense_w, dense_b;      // per block
  std::vector<std::vector<int>> task_w;                       // [task][block]
  std::vector<std::vector<int>> task_logalpha;                // [task][block]
};

/// Every trainable tensor of the model, flattened and indexable.
struct ModelParams {
  ModelConfig cfg;
  int P = 0;
  ParamStore store;

  StackLayout ctx_region, ctx_as;
  int ctx_region_proj = -1, ctx_as_proj = -1;
  std::vector<StackLayout> task_qos, task_user, task_service;
  std::vector<int> task_proj;
  RouteLayout snr, cross;
  std::vector<int> fusion_gate;                       // per task
  std::vector<int> head_w1, head_b1, head_w2, head_b2;  // per task
  std::vector<int> huw_logvar;  // per task, only when uncertainty weighting is on

  static ModelParams create(const ModelConfig& cfg, int tasks, bool with_huw = false);
  void init(std::uint64_t seed);
  std::string manifest_json() const;
};

enum class RunMode { Train, Infer };

/// Fixed uniform draws for the hard-concrete gates; one row per task.
struct GateNoise {
  Eigen::MatrixXd snr_u;    // P x K1
  Eigen::MatrixXd cross_u;  // P x K2
  static GateNoise draw(int P, const ModelConfig& cfg, Rng& rng);
};

/// Constant model inputs: normalized adjacencies in CSR form plus the feature
/// matrices, all fixed during training.
struct ModelInputs {
  int n = 0, m = 0, P = 0;
  CsrMatrix region, as_graph;
  std::vector<CsrMatrix> qos, hyper_user, hyper_service;
  std::vector<Eigen::MatrixXd> feat_qos;
  Eigen::MatrixXd feat_region, feat_as;
};

ModelInputs make_model_inputs(const QoSDataset& ds, const GraphSet& gs, const FeatureBank& bank);

/// Tape handles for everything the loss and the diagnostics need.
struct ForwardBuild {
  ad::Var y_region, y_as, y_ctx_sum;      // N x d
  std::vector<ad::Var> y_task;            // P, N x d
  std::vector<ad::Var> y_shared_ctx;      // Y^p_s
  std::vector<ad::Var> y_shared_cross;    // Y^p_cs
  std::vector<ad::Var> y_shared_comb;     // Y^p_scs
  std::vector<ad::Var> fused;             // Z^p
  std::vector<ad::Var> q_hat;             // P, n x m
  ad::Var l0_snr, l0_cross;               // 1 x 1
  Eigen::MatrixXd gates_snr, gates_cross; // gate values used (P x K)
  std::vector<ad::Var> param_vars;        // aligned with store infos
  bool all_gates_zero_infer = false;
};

/// Dense snapshots of the forward pass for diagnostics and evaluation.
struct ForwardOutputs {
  Eigen::MatrixXd y_region, y_as, y_ctx_sum;
  std::vector<Eigen::MatrixXd> y_task, y_shared_ctx, y_shared_cross, y_shared_comb, fused;
  std::vector<Eigen::MatrixXd> q_hat;
  Eigen::MatrixXd gates_snr, gates_cross;
  double expected_l0_snr = 0.0;
  double expected_l0_cross = 0.0;
};

// ---- layer builders (exposed for targeted tests and oracles) ----------------

/// One HyConv stack: lift, per layer the aggregation + Mobius linear + bias +
/// wrapped ReLU pair, returning the tangent (log0) snapshot of every manifold
/// state, layer 0 included.
std::vector<ad::Var> build_hyconv_stack(ad::Tape& t, ad::Var features, const CsrMatrix& adj,
                                        const std::vector<ad::Var>& pv, const StackLayout& sl,
                                        int layers, double curvature_eps);

/// Context branch: ReLU over the column-concatenated stack outputs, then the
/// projection back to width d.
ad::Var build_hygcn(ad::Tape& t, ad::Var features, const CsrMatrix& adj,
                    const std::vector<ad::Var>& pv, const StackLayout& sl, int proj, int layers,
                    double curvature_eps);

/// QoS branch over the bipartite graph and the two hypergraph operators.
ad::Var build_hhgcn(ad::Tape& t, ad::Var features, int n, int m, const CsrMatrix& adj,
                    const CsrMatrix& adj_u, const CsrMatrix& adj_s,
                    const std::vector<ad::Var>& pv, const StackLayout& sl_qos,
                    const StackLayout& sl_user, const StackLayout& sl_service, int proj,
                    int layers, double curvature_eps);

struct RouteBuild {
  ad::Var out;
  Eigen::RowVectorXd gates;
  bool all_zero_infer = false;
};

/// Gate variables for one (network, task): stochastic hard-concrete draws in
/// train mode, thresholded constants at inference.
std::vector<ad::Var> build_route_gates(ad::Tape& t, const std::vector<ad::Var>& pv,
                                       const std::vector<int>& logalpha, const ModelConfig& cfg,
                                       RunMode mode, const Eigen::RowVectorXd* noise,
                                       Eigen::RowVectorXd& gate_values);

/// Routing core: per block LayerNorm + Dense, task-specific linear map, then
/// the gate-weighted normalized aggregation.
RouteBuild build_route(ad::Tape& t, ad::Var y_in, const std::vector<ad::Var>& pv,
                       const RouteLayout& rl, int task, const ModelConfig& cfg, int K,
                       const std::vector<ad::Var>& gates, const Eigen::RowVectorXd& gate_values);

/// Expected active-gate count: sum_k sigmoid(log_alpha_k - tau*log(-beta/gamma)).
ad::Var build_expected_l0(ad::Tape& t, const std::vector<ad::Var>& pv,
                          const std::vector<int>& logalpha, const ModelConfig& cfg);

/// Convex gate blend of the structural and shared features.
ad::Var build_gated_fusion(ad::Tape& t, ad::Var y_struct, ad::Var y_shared, ad::Var gate_weight);

/// Task head: two dense layers, row split, then the user x service product.
ad::Var build_prediction(ad::Tape& t, ad::Var fused, ad::Var w1, ad::Var b1, ad::Var w2,
                         ad::Var b2, int n, int m);

ForwardBuild build_forward(ad::Tape& tape, const ModelInputs& in, const ModelParams& params,
                           RunMode mode, const GateNoise* noise);

ForwardOutputs materialize(const ad::Tape& tape, const ForwardBuild& fb);

/// Convenience: run the forward pass and return dense outputs.
ForwardOutputs forward(const ModelInputs& in, const ModelParams& params, RunMode mode,
                       const GateNoise* noise = nullptr);

/// Gradient of `loss_root` w.r.t. the flat parameter vector.
Eigen::VectorXd collect_param_grads(ad::Tape& tape, const ForwardBuild& fb,
                                    const ParamStore& store);

/// Estimated multiply-adds of one forward pass (dense and sparse products).
double estimate_forward_madds(const ModelInputs& in, const ModelConfig& cfg);

// Checkpoint: 8-byte magic, u64 JSON length, JSON header (config, seeds,
// parameter ordering manifest), then the flat f64 blob.
void save_checkpoint(const ModelParams& params, const std::string& meta_json,
                     const std::string& path);
/// Loads the blob into `params` (layout must match); returns the JSON header.
std::string load_checkpoint(ModelParams& params, const std::string& path);

/// Per-task `gates_<task>.csv` diagnostic dump (network, block, log_alpha,
/// inference_gate).
void dump_gates(const ModelParams& params, const std::vector<std::string>& task_names,
                const std::string& dir);

}  // namespace sharpqos
