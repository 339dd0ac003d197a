#include "sharpqos/model.hpp"

#include <cmath>
#include <filesystem>
#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

#include "sharpqos/hyperball.hpp"

using json = nlohmann::json;

namespace sharpqos {

void ModelConfig::validate() const {
  if (d < 1 || d_snr < 1 || head1 < 1 || head2 < 1 || layers < 0 || k1 < 1 || k2 < 1)
    throw std::invalid_argument("ModelConfig: widths and block counts must be >= 1");
  if (!(gamma > 1.0)) throw std::invalid_argument("ModelConfig: gamma must be > 1");
  if (!(beta_stretch < 0.0)) throw std::invalid_argument("ModelConfig: beta_stretch must be < 0");
  if (!(tau > 0.0)) throw std::invalid_argument("ModelConfig: tau must be > 0");
  if (!(delta > 0.0 && delta < 1.0)) throw std::invalid_argument("ModelConfig: delta in (0,1)");
  if (sigma1 != "relu") throw std::invalid_argument("ModelConfig: unsupported sigma1");
  if (sigma2 != "sigmoid") throw std::invalid_argument("ModelConfig: unsupported sigma2");
}

// ---- ParamStore -------------------------------------------------------------

int ParamStore::add(const std::string& name, int rows, int cols, bool decay) {
  if (finalized_) throw std::logic_error("ParamStore: add after finalize");
  infos_.push_back({name, rows, cols, total_, decay});
  total_ += static_cast<Eigen::Index>(rows) * cols;
  return static_cast<int>(infos_.size()) - 1;
}

void ParamStore::finalize() {
  data_ = Eigen::VectorXd::Zero(total_);
  finalized_ = true;
}

Eigen::Map<Eigen::MatrixXd> ParamStore::view(int idx) {
  const Info& f = infos_[idx];
  return {data_.data() + f.offset, f.rows, f.cols};
}

Eigen::Map<const Eigen::MatrixXd> ParamStore::view(int idx) const {
  const Info& f = infos_[idx];
  return {data_.data() + f.offset, f.rows, f.cols};
}

Eigen::VectorXd ParamStore::decay_mask() const {
  Eigen::VectorXd mask = Eigen::VectorXd::Zero(total_);
  for (const Info& f : infos_)
    if (f.decay)
      mask.segment(f.offset, static_cast<Eigen::Index>(f.rows) * f.cols).setOnes();
  return mask;
}

int ParamStore::find(const std::string& name) const {
  for (std::size_t i = 0; i < infos_.size(); ++i)
    if (infos_[i].name == name) return static_cast<int>(i);
  return -1;
}

// ---- ModelParams ------------------------------------------------------------

namespace {

StackLayout add_stack(ParamStore& s, const std::string& prefix, int d, int layers) {
  StackLayout sl;
  for (int l = 0; l < layers; ++l) {
    std::string lp = prefix + ".l" + std::to_string(l);
    sl.w1.push_back(s.add(lp + ".w1", d, d, true));
    sl.b1.push_back(s.add(lp + ".b1", 1, d, false));
    sl.w2.push_back(s.add(lp + ".w2", d, d, true));
    sl.b2.push_back(s.add(lp + ".b2", 1, d, false));
  }
  sl.curvature_raw = s.add(prefix + ".curv", 1, 1, false);
  return sl;
}

RouteLayout add_route(ParamStore& s, const std::string& prefix, int d, int d_snr, int K, int P) {
  RouteLayout r;
  for (int k = 0; k < K; ++k) {
    std::string bp = prefix + ".block" + std::to_string(k);
    r.ln_scale.push_back(s.add(bp + ".ln_scale", 1, d, false));
    r.ln_shift.push_back(s.add(bp + ".ln_shift", 1, d, false));
    r.dense_w.push_back(s.add(bp + ".dense_w", d, d_snr, true));
    r.dense_b.push_back(s.add(bp + ".dense_b", 1, d_snr, false));
  }
  r.task_w.resize(P);
  r.task_logalpha.resize(P);
  for (int p = 0; p < P; ++p) {
    for (int k = 0; k < K; ++k) {
      std::string tp = prefix + ".task" + std::to_string(p) + ".k" + std::to_string(k);
      r.task_w[p].push_back(s.add(tp + ".w", d_snr, d, true));
      r.task_logalpha[p].push_back(s.add(tp + ".logalpha", 1, 1, false));
    }
  }
  return r;
}

}  // namespace

ModelParams ModelParams::create(const ModelConfig& cfg, int tasks, bool with_huw) {
  cfg.validate();
  if (tasks < 1) throw std::invalid_argument("ModelParams: need at least one task");
  ModelParams mp;
  mp.cfg = cfg;
  mp.P = tasks;
  ParamStore& s = mp.store;
  const int d = cfg.d;
  const int concat1 = d * (cfg.layers + 1);
  const int concat2 = 2 * d * (cfg.layers + 1);

  mp.ctx_region = add_stack(s, "ctx.region", d, cfg.layers);
  mp.ctx_as = add_stack(s, "ctx.as", d, cfg.layers);
  mp.ctx_region_proj = s.add("ctx.region.proj", concat1, d, true);
  mp.ctx_as_proj = s.add("ctx.as.proj", concat1, d, true);

  for (int p = 0; p < tasks; ++p) {
    std::string tp = "task" + std::to_string(p);
    mp.task_qos.push_back(add_stack(s, tp + ".qos", d, cfg.layers));
    mp.task_user.push_back(add_stack(s, tp + ".user", d, cfg.layers));
    mp.task_service.push_back(add_stack(s, tp + ".service", d, cfg.layers));
    mp.task_proj.push_back(s.add(tp + ".proj", concat2, d, true));
  }

  mp.snr = add_route(s, "snr", d, cfg.d_snr, cfg.k1, tasks);
  mp.cross = add_route(s, "cross", d, cfg.d_snr, cfg.k2, tasks);

  for (int p = 0; p < tasks; ++p)
    mp.fusion_gate.push_back(s.add("fusion.task" + std::to_string(p) + ".w", 2 * d, d, true));
  for (int p = 0; p < tasks; ++p) {
    std::string hp = "head.task" + std::to_string(p);
    mp.head_w1.push_back(s.add(hp + ".w1", d, cfg.head1, true));
    mp.head_b1.push_back(s.add(hp + ".b1", 1, cfg.head1, false));
    mp.head_w2.push_back(s.add(hp + ".w2", cfg.head1, cfg.head2, true));
    mp.head_b2.push_back(s.add(hp + ".b2", 1, cfg.head2, false));
  }
  if (with_huw)
    for (int p = 0; p < tasks; ++p)
      mp.huw_logvar.push_back(s.add("huw.task" + std::to_string(p) + ".logvar", 1, 1, false));

  s.finalize();
  return mp;
}

void ModelParams::init(std::uint64_t seed) {
  Rng rng(mix_seed(seed, 42));
  const double curv_raw_init = std::log(std::exp(1.0) - 1.0);  // softplus(raw) = 1
  for (std::size_t i = 0; i < store.infos().size(); ++i) {
    const ParamStore::Info& f = store.infos()[i];
    auto v = store.view(static_cast<int>(i));
    if (f.name.ends_with(".curv")) {
      v(0, 0) = curv_raw_init;
    } else if (f.name.ends_with(".logalpha")) {
      v(0, 0) = rng.normal(0.0, 0.01);
    } else if (f.name.ends_with(".ln_scale")) {
      v.setOnes();
    } else if (f.name.ends_with(".ln_shift") || f.name.ends_with(".b1") ||
               f.name.ends_with(".b2") || f.name.ends_with(".dense_b") ||
               f.name.ends_with(".logvar")) {
      v.setZero();
    } else {
      double a = std::sqrt(6.0 / (f.rows + f.cols));
      for (int r = 0; r < f.rows; ++r)
        for (int c = 0; c < f.cols; ++c) v(r, c) = rng.uniform(-a, a);
    }
  }
}

std::string ModelParams::manifest_json() const {
  json manifest = json::array();
  for (const auto& f : store.infos())
    manifest.push_back({{"name", f.name},
                        {"rows", f.rows},
                        {"cols", f.cols},
                        {"offset", f.offset},
                        {"decay", f.decay}});
  return manifest.dump();
}

GateNoise GateNoise::draw(int P, const ModelConfig& cfg, Rng& rng) {
  GateNoise gn;
  gn.snr_u.resize(P, cfg.k1);
  gn.cross_u.resize(P, cfg.k2);
  for (int p = 0; p < P; ++p)
    for (int k = 0; k < cfg.k1; ++k) gn.snr_u(p, k) = rng.uniform_open();
  for (int p = 0; p < P; ++p)
    for (int k = 0; k < cfg.k2; ++k) gn.cross_u(p, k) = rng.uniform_open();
  return gn;
}

ModelInputs make_model_inputs(const QoSDataset& ds, const GraphSet& gs, const FeatureBank& bank) {
  ModelInputs in;
  in.n = ds.n;
  in.m = ds.m;
  in.P = ds.P;
  in.region = CsrMatrix::from_adj(gs.region);
  in.as_graph = CsrMatrix::from_adj(gs.as_graph);
  for (int p = 0; p < ds.P; ++p) {
    in.qos.push_back(CsrMatrix::from_adj(gs.qos[p]));
    in.hyper_user.push_back(CsrMatrix::from_adj(gs.hyper_user[p]));
    in.hyper_service.push_back(CsrMatrix::from_adj(gs.hyper_service[p]));
    in.feat_qos.push_back(bank.qos_feats[p]);
  }
  in.feat_region = bank.region_feats;
  in.feat_as = bank.as_feats;
  return in;
}

// ---- forward ----------------------------------------------------------------

std::vector<ad::Var> build_hyconv_stack(ad::Tape& t, ad::Var features, const CsrMatrix& adj,
                                        const std::vector<ad::Var>& pv, const StackLayout& sl,
                                        int layers, double curvature_eps) {
  ad::Var c = ad::add_const(t, ad::softplus_ew(t, pv[sl.curvature_raw]), curvature_eps);
  std::vector<ad::Var> tangents;
  ad::Var x = ad::exp0(t, features, c);
  tangents.push_back(ad::log0(t, x, c));
  for (int l = 0; l < layers; ++l) {
    ad::Var agg = ad::matmul(t, ad::spmm(t, adj, adj, tangents.back()), pv[sl.w1[l]]);
    ad::Var h = ad::mobius_add(t, ad::exp0(t, agg, c), ad::exp0(t, pv[sl.b1[l]], c), c);
    h = ad::exp0(t, ad::relu(t, ad::log0(t, h, c)), c);
    ad::Var lin = ad::matmul(t, ad::log0(t, h, c), pv[sl.w2[l]]);
    ad::Var h2 = ad::mobius_add(t, ad::exp0(t, lin, c), ad::exp0(t, pv[sl.b2[l]], c), c);
    h2 = ad::exp0(t, ad::relu(t, ad::log0(t, h2, c)), c);
    tangents.push_back(ad::log0(t, h2, c));
    x = h2;
  }
  return tangents;
}

ad::Var build_hygcn(ad::Tape& t, ad::Var features, const CsrMatrix& adj,
                    const std::vector<ad::Var>& pv, const StackLayout& sl, int proj, int layers,
                    double curvature_eps) {
  std::vector<ad::Var> tangents = build_hyconv_stack(t, features, adj, pv, sl, layers, curvature_eps);
  return ad::matmul(t, ad::relu(t, ad::concat_cols(t, tangents)), pv[proj]);
}

ad::Var build_hhgcn(ad::Tape& t, ad::Var features, int n, int m, const CsrMatrix& adj,
                    const CsrMatrix& adj_u, const CsrMatrix& adj_s,
                    const std::vector<ad::Var>& pv, const StackLayout& sl_qos,
                    const StackLayout& sl_user, const StackLayout& sl_service, int proj,
                    int layers, double curvature_eps) {
  ad::Var feat_u = ad::slice_rows(t, features, 0, n);
  ad::Var feat_s = ad::slice_rows(t, features, n, m);
  std::vector<ad::Var> sq = build_hyconv_stack(t, features, adj, pv, sl_qos, layers, curvature_eps);
  std::vector<ad::Var> su = build_hyconv_stack(t, feat_u, adj_u, pv, sl_user, layers, curvature_eps);
  std::vector<ad::Var> ss =
      build_hyconv_stack(t, feat_s, adj_s, pv, sl_service, layers, curvature_eps);
  std::vector<ad::Var> blocks;
  for (int l = 0; l <= layers; ++l) {
    ad::Var hyper = ad::concat_rows(t, {su[l], ss[l]});
    blocks.push_back(ad::concat_cols(t, {sq[l], hyper}));
  }
  return ad::matmul(t, ad::relu(t, ad::concat_cols(t, blocks)), pv[proj]);
}

std::vector<ad::Var> build_route_gates(ad::Tape& t, const std::vector<ad::Var>& pv,
                                       const std::vector<int>& logalpha, const ModelConfig& cfg,
                                       RunMode mode, const Eigen::RowVectorXd* noise,
                                       Eigen::RowVectorXd& gate_values) {
  const int K = static_cast<int>(logalpha.size());
  std::vector<ad::Var> gates(K);
  gate_values.resize(K);
  for (int k = 0; k < K; ++k) {
    if (mode == RunMode::Train) {
      gates[k] = ad::hard_concrete_gate(t, pv[logalpha[k]], (*noise)(k), cfg.tau, cfg.gamma,
                                        cfg.beta_stretch);
    } else {
      double a = t.value(pv[logalpha[k]])(0, 0);
      double g = 1.0 / (1.0 + std::exp(-a)) > cfg.delta ? 1.0 : 0.0;
      gates[k] = t.constant(Eigen::MatrixXd::Constant(1, 1, g));
    }
    gate_values(k) = t.scalar(gates[k]);
  }
  return gates;
}

ad::Var build_expected_l0(ad::Tape& t, const std::vector<ad::Var>& pv,
                          const std::vector<int>& logalpha, const ModelConfig& cfg) {
  const double shift = -cfg.tau * std::log(-cfg.beta_stretch / cfg.gamma);
  ad::Var acc{-1};
  for (int id : logalpha) {
    ad::Var s = ad::sigmoid(t, ad::add_const(t, pv[id], shift));
    acc = acc.valid() ? ad::add(t, acc, s) : s;
  }
  return acc;
}

namespace {
constexpr double kRouteNormEps = 1e-8;
}

RouteBuild build_route(ad::Tape& t, ad::Var y_in, const std::vector<ad::Var>& pv,
                       const RouteLayout& rl, int task, const ModelConfig& cfg, int K,
                       const std::vector<ad::Var>& gates, const Eigen::RowVectorXd& gate_values) {
  RouteBuild rb;
  rb.gates = gate_values;
  ad::Var ln_core = ad::layer_norm_core(t, y_in);
  ad::Var sum{-1};
  ad::Var denom = t.constant(Eigen::MatrixXd::Constant(1, 1, kRouteNormEps));
  bool any_active = false;
  for (int k = 0; k < K; ++k) {
    bool active = gate_values(k) != 0.0;
    if (!active && t.requires_grad(gates[k]) == false) continue;  // inference: skip dead block
    ad::Var ln = ad::add_rowvec(t, ad::mul_rowvec(t, ln_core, pv[rl.ln_scale[k]]),
                                pv[rl.ln_shift[k]]);
    ad::Var phi = ad::relu(
        t, ad::add_rowvec(t, ad::matmul(t, ln, pv[rl.dense_w[k]]), pv[rl.dense_b[k]]));
    ad::Var routed = ad::matmul(t, phi, pv[rl.task_w[task][k]]);
    ad::Var term = ad::mul_scalar(t, routed, gates[k]);
    sum = sum.valid() ? ad::add(t, sum, term) : term;
    denom = ad::add(t, denom, gates[k]);
    any_active = any_active || active;
  }
  const Eigen::Index rows = t.value(y_in).rows();
  if (!sum.valid()) {
    rb.out = t.constant(Eigen::MatrixXd::Zero(rows, cfg.d));
    rb.all_zero_infer = true;
  } else {
    // with every sampled gate at exactly zero the normalized sum is zero too
    rb.out = ad::mul_scalar(t, sum, ad::recip(t, denom));
    rb.all_zero_infer = !any_active;
  }
  return rb;
}

ad::Var build_gated_fusion(ad::Tape& t, ad::Var y_struct, ad::Var y_shared, ad::Var gate_weight) {
  ad::Var both = ad::concat_cols(t, {y_struct, y_shared});
  ad::Var gate = ad::sigmoid(t, ad::matmul(t, both, gate_weight));
  ad::Var inv_gate = ad::add_const(t, ad::neg(t, gate), 1.0);
  return ad::add(t, ad::hadamard(t, gate, y_struct), ad::hadamard(t, inv_gate, y_shared));
}

ad::Var build_prediction(ad::Tape& t, ad::Var fused, ad::Var w1, ad::Var b1, ad::Var w2,
                         ad::Var b2, int n, int m) {
  ad::Var h1 = ad::relu(t, ad::add_rowvec(t, ad::matmul(t, fused, w1), b1));
  ad::Var h2 = ad::add_rowvec(t, ad::matmul(t, h1, w2), b2);
  ad::Var zu = ad::slice_rows(t, h2, 0, n);
  ad::Var zs = ad::slice_rows(t, h2, n, m);
  return ad::matmul_nt(t, zu, zs);
}

ForwardBuild build_forward(ad::Tape& tape, const ModelInputs& in, const ModelParams& params,
                           RunMode mode, const GateNoise* noise) {
  if (mode == RunMode::Train && noise == nullptr)
    throw std::invalid_argument("build_forward: train mode needs gate noise");
  const ModelConfig& cfg = params.cfg;
  const int P = params.P;
  const int n = in.n, m = in.m;

  ForwardBuild fb;
  fb.param_vars.reserve(params.store.infos().size());
  for (std::size_t i = 0; i < params.store.infos().size(); ++i)
    fb.param_vars.push_back(tape.leaf(params.store.view(static_cast<int>(i))));
  const std::vector<ad::Var>& pv = fb.param_vars;

  // context branches and their sum
  ad::Var feat_r = tape.constant(in.feat_region);
  ad::Var feat_a = tape.constant(in.feat_as);
  fb.y_region = build_hygcn(tape, feat_r, in.region, pv, params.ctx_region,
                            params.ctx_region_proj, cfg.layers, cfg.curvature_eps);
  fb.y_as = build_hygcn(tape, feat_a, in.as_graph, pv, params.ctx_as, params.ctx_as_proj,
                        cfg.layers, cfg.curvature_eps);
  fb.y_ctx_sum = ad::add(tape, fb.y_region, fb.y_as);

  // per-task structural branches
  for (int p = 0; p < P; ++p) {
    ad::Var feat = tape.constant(in.feat_qos[p]);
    fb.y_task.push_back(build_hhgcn(tape, feat, n, m, in.qos[p], in.hyper_user[p],
                                    in.hyper_service[p], pv, params.task_qos[p],
                                    params.task_user[p], params.task_service[p],
                                    params.task_proj[p], cfg.layers, cfg.curvature_eps));
  }

  // routing over context features (per-task gates), fixed sampling order:
  // all SNR tasks first, then all Cross-SNR tasks
  fb.gates_snr.resize(P, cfg.k1);
  fb.gates_cross.resize(P, cfg.k2);
  std::vector<std::vector<ad::Var>> snr_gates(P), cross_gates(P);
  for (int p = 0; p < P; ++p) {
    Eigen::RowVectorXd gv;
    Eigen::RowVectorXd u;
    if (mode == RunMode::Train) u = noise->snr_u.row(p);
    snr_gates[p] = build_route_gates(tape, pv, params.snr.task_logalpha[p], cfg, mode,
                                     mode == RunMode::Train ? &u : nullptr, gv);
    fb.gates_snr.row(p) = gv;
  }
  for (int p = 0; p < P; ++p) {
    Eigen::RowVectorXd gv;
    Eigen::RowVectorXd u;
    if (mode == RunMode::Train) u = noise->cross_u.row(p);
    cross_gates[p] = build_route_gates(tape, pv, params.cross.task_logalpha[p], cfg, mode,
                                       mode == RunMode::Train ? &u : nullptr, gv);
    fb.gates_cross.row(p) = gv;
  }

  for (int p = 0; p < P; ++p) {
    RouteBuild rb = build_route(tape, fb.y_ctx_sum, pv, params.snr, p, cfg, cfg.k1,
                                snr_gates[p], fb.gates_snr.row(p));
    fb.y_shared_ctx.push_back(rb.out);
    fb.all_gates_zero_infer = fb.all_gates_zero_infer || rb.all_zero_infer;
  }

  // cross-task routing: same blocks applied to every other task's features,
  // summed with the target task's gates
  for (int p = 0; p < P; ++p) {
    ad::Var acc{-1};
    for (int j = 0; j < P; ++j) {
      if (j == p) continue;
      RouteBuild rb = build_route(tape, fb.y_task[j], pv, params.cross, p, cfg, cfg.k2,
                                  cross_gates[p], fb.gates_cross.row(p));
      acc = acc.valid() ? ad::add(tape, acc, rb.out) : rb.out;
      fb.all_gates_zero_infer = fb.all_gates_zero_infer || rb.all_zero_infer;
    }
    if (!acc.valid())
      acc = tape.constant(Eigen::MatrixXd::Zero(n + m, cfg.d));  // single-task fallback
    fb.y_shared_cross.push_back(acc);
    fb.y_shared_comb.push_back(ad::add(tape, fb.y_shared_ctx[p], acc));
  }

  // gated fusion and the prediction heads
  for (int p = 0; p < P; ++p) {
    ad::Var fused =
        build_gated_fusion(tape, fb.y_task[p], fb.y_shared_comb[p], pv[params.fusion_gate[p]]);
    fb.fused.push_back(fused);
    fb.q_hat.push_back(build_prediction(tape, fused, pv[params.head_w1[p]],
                                        pv[params.head_b1[p]], pv[params.head_w2[p]],
                                        pv[params.head_b2[p]], n, m));
  }

  // expected-L0 totals over all tasks of each routing network
  ad::Var l0s{-1}, l0c{-1};
  for (int p = 0; p < P; ++p) {
    ad::Var s = build_expected_l0(tape, pv, params.snr.task_logalpha[p], cfg);
    ad::Var c = build_expected_l0(tape, pv, params.cross.task_logalpha[p], cfg);
    l0s = l0s.valid() ? ad::add(tape, l0s, s) : s;
    l0c = l0c.valid() ? ad::add(tape, l0c, c) : c;
  }
  fb.l0_snr = l0s;
  fb.l0_cross = l0c;
  return fb;
}

ForwardOutputs materialize(const ad::Tape& tape, const ForwardBuild& fb) {
  ForwardOutputs out;
  out.y_region = tape.value(fb.y_region);
  out.y_as = tape.value(fb.y_as);
  out.y_ctx_sum = tape.value(fb.y_ctx_sum);
  for (ad::Var v : fb.y_task) out.y_task.push_back(tape.value(v));
  for (ad::Var v : fb.y_shared_ctx) out.y_shared_ctx.push_back(tape.value(v));
  for (ad::Var v : fb.y_shared_cross) out.y_shared_cross.push_back(tape.value(v));
  for (ad::Var v : fb.y_shared_comb) out.y_shared_comb.push_back(tape.value(v));
  for (ad::Var v : fb.fused) out.fused.push_back(tape.value(v));
  for (ad::Var v : fb.q_hat) out.q_hat.push_back(tape.value(v));
  out.gates_snr = fb.gates_snr;
  out.gates_cross = fb.gates_cross;
  out.expected_l0_snr = tape.scalar(fb.l0_snr);
  out.expected_l0_cross = tape.scalar(fb.l0_cross);
  return out;
}

ForwardOutputs forward(const ModelInputs& in, const ModelParams& params, RunMode mode,
                       const GateNoise* noise) {
  ad::Tape tape;
  ForwardBuild fb = build_forward(tape, in, params, mode, noise);
  return materialize(tape, fb);
}

Eigen::VectorXd collect_param_grads(ad::Tape& tape, const ForwardBuild& fb,
                                    const ParamStore& store) {
  Eigen::VectorXd grad = Eigen::VectorXd::Zero(store.size());
  for (std::size_t i = 0; i < store.infos().size(); ++i) {
    const ParamStore::Info& f = store.infos()[i];
    Eigen::MatrixXd g = tape.grad_of(fb.param_vars[i]);
    grad.segment(f.offset, static_cast<Eigen::Index>(f.rows) * f.cols) =
        Eigen::Map<const Eigen::VectorXd>(g.data(), g.size());
  }
  return grad;
}

double estimate_forward_madds(const ModelInputs& in, const ModelConfig& cfg) {
  const double d = cfg.d;
  const double N = in.n + in.m;
  const double L = cfg.layers;
  double total = 0.0;
  auto stack_cost = [&](double nnz, double rows) {
    // per layer: sparse aggregation + two dense d x d products
    return L * (nnz * d + 2.0 * rows * d * d);
  };
  total += stack_cost(static_cast<double>(in.region.nnz()), N);
  total += stack_cost(static_cast<double>(in.as_graph.nnz()), N);
  total += 2.0 * N * (d * (L + 1)) * d;  // context projections
  for (int p = 0; p < in.P; ++p) {
    total += stack_cost(static_cast<double>(in.qos[p].nnz()), N);
    total += stack_cost(static_cast<double>(in.hyper_user[p].nnz()), in.n);
    total += stack_cost(static_cast<double>(in.hyper_service[p].nnz()), in.m);
    total += N * (2.0 * d * (L + 1)) * d;  // task projection
  }
  // routing: per task per block LN+dense+task map; SNR on context, cross on P-1 sources
  total += in.P * cfg.k1 * (N * d * cfg.d_snr + N * cfg.d_snr * d);
  total += in.P * (in.P - 1) * cfg.k2 * (N * d * cfg.d_snr + N * cfg.d_snr * d);
  // fusion gates and heads
  total += in.P * (N * 2.0 * d * d);
  total += in.P * (N * d * cfg.head1 + N * cfg.head1 * cfg.head2);
  total += in.P * (static_cast<double>(in.n) * in.m * cfg.head2);
  return total;
}

// ---- checkpoint ---------------------------------------------------------------

namespace {
constexpr char kMagic[8] = {'S', 'Q', 'C', 'P', '0', '0', '0', '1'};
}

void save_checkpoint(const ModelParams& params, const std::string& meta_json,
                     const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open checkpoint for writing: " + path);
  out.write(kMagic, 8);
  std::uint64_t len = meta_json.size();
  out.write(reinterpret_cast<const char*>(&len), 8);
  out.write(meta_json.data(), static_cast<std::streamsize>(len));
  std::uint64_t count = static_cast<std::uint64_t>(params.store.size());
  out.write(reinterpret_cast<const char*>(&count), 8);
  out.write(reinterpret_cast<const char*>(params.store.flat().data()),
            static_cast<std::streamsize>(count * 8));
}

std::string load_checkpoint(ModelParams& params, const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint: " + path);
  char magic[8];
  in.read(magic, 8);
  if (std::memcmp(magic, kMagic, 8) != 0) throw std::runtime_error("bad checkpoint magic");
  std::uint64_t len = 0;
  in.read(reinterpret_cast<char*>(&len), 8);
  std::string meta(len, '\0');
  in.read(meta.data(), static_cast<std::streamsize>(len));
  std::uint64_t count = 0;
  in.read(reinterpret_cast<char*>(&count), 8);
  if (count != static_cast<std::uint64_t>(params.store.size()))
    throw std::runtime_error("checkpoint parameter count mismatch");
  in.read(reinterpret_cast<char*>(params.store.flat().data()),
          static_cast<std::streamsize>(count * 8));
  if (!in) throw std::runtime_error("truncated checkpoint: " + path);
  return meta;
}

void dump_gates(const ModelParams& params, const std::vector<std::string>& task_names,
                const std::string& dir) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  for (int p = 0; p < params.P; ++p) {
    std::ofstream out(fs::path(dir) / ("gates_" + task_names[p] + ".csv"));
    out << "network,block,log_alpha,inference_gate\n";
    out.precision(17);
    auto emit = [&](const char* net, const RouteLayout& rl, int K) {
      for (int k = 0; k < K; ++k) {
        double a = params.store.view(rl.task_logalpha[p][k])(0, 0);
        int g = 1.0 / (1.0 + std::exp(-a)) > params.cfg.delta ? 1 : 0;
        out << net << ',' << k << ',' << a << ',' << g << '\n';
      }
    };
    emit("snr", params.snr, params.cfg.k1);
    emit("cross", params.cross, params.cfg.k2);
  }
}

}  // namespace sharpqos
