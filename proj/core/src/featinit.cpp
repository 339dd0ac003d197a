#include "sharpqos/featinit.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <set>
#include <stdexcept>

#include <json.hpp>

#include "sharpqos/autodiff.hpp"
#include "sharpqos/optim.hpp"
#include "sharpqos/rng.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace sharpqos {

namespace {

double masked_rmse(const std::vector<Triplet>& entries, const Eigen::MatrixXd& u,
                   const Eigen::MatrixXd& v) {
  double se = 0.0;
  for (const Triplet& e : entries) {
    double r = e.value - u.row(e.row).dot(v.row(e.col));
    se += r * r;
  }
  return std::sqrt(se / static_cast<double>(entries.size()));
}

}  // namespace

NmfResult nmf(const Eigen::MatrixXd& q, const Mask& mask, int rank, int iters,
              std::uint64_t seed) {
  const int n = static_cast<int>(q.rows());
  const int m = static_cast<int>(q.cols());
  if (rank < 1) throw std::invalid_argument("nmf: rank must be >= 1");

  std::vector<Triplet> entries;
  double sum = 0.0;
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < m; ++j) {
      if (mask[static_cast<std::size_t>(i) * m + j]) {
        entries.push_back({i, j, q(i, j)});
        sum += q(i, j);
      }
    }
  }
  if (entries.empty()) throw std::invalid_argument("nmf: all-zero mask, nothing to factor");
  const double mean = sum / static_cast<double>(entries.size());
  const double scale = std::sqrt(std::max(mean, 1e-12) / rank);

  Rng rng(mix_seed(seed, 10));
  NmfResult r;
  r.user.resize(n, rank);
  r.service.resize(m, rank);
  for (int i = 0; i < n; ++i)
    for (int k = 0; k < rank; ++k) r.user(i, k) = rng.uniform() * scale;
  for (int j = 0; j < m; ++j)
    for (int k = 0; k < rank; ++k) r.service(j, k) = rng.uniform() * scale;

  constexpr double kGuard = 1e-12;
  Eigen::MatrixXd num_u(n, rank), den_u(n, rank), num_v(m, rank), den_v(m, rank);
  r.loss_history.push_back(masked_rmse(entries, r.user, r.service));
  for (int it = 0; it < iters; ++it) {
    // U <- U .* ((M.*Q) V) ./ ((M.*(U V^T)) V)
    num_u.setZero();
    den_u.setZero();
    for (const Triplet& e : entries) {
      double pred = r.user.row(e.row).dot(r.service.row(e.col));
      num_u.row(e.row) += e.value * r.service.row(e.col);
      den_u.row(e.row) += pred * r.service.row(e.col);
    }
    r.user.array() *= num_u.array() / (den_u.array() + kGuard);

    num_v.setZero();
    den_v.setZero();
    for (const Triplet& e : entries) {
      double pred = r.user.row(e.row).dot(r.service.row(e.col));
      num_v.row(e.col) += e.value * r.user.row(e.row);
      den_v.row(e.col) += pred * r.user.row(e.row);
    }
    r.service.array() *= num_v.array() / (den_v.array() + kGuard);

    r.loss_history.push_back(masked_rmse(entries, r.user, r.service));
  }
  return r;
}

Eigen::MatrixXd onehot_context(const QoSDataset& ds, ContextAttr attr, EntityKind kind) {
  const std::vector<int>& ids =
      kind == EntityKind::User ? (attr == ContextAttr::Region ? ds.user_region : ds.user_as)
                               : (attr == ContextAttr::Region ? ds.service_region : ds.service_as);
  std::set<int> distinct(ids.begin(), ids.end());
  std::vector<int> order(distinct.begin(), distinct.end());
  Eigen::MatrixXd out = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(ids.size()),
                                              static_cast<Eigen::Index>(order.size()));
  for (std::size_t i = 0; i < ids.size(); ++i) {
    auto it = std::lower_bound(order.begin(), order.end(), ids[i]);
    out(static_cast<Eigen::Index>(i), it - order.begin()) = 1.0;
  }
  return out;
}

AutoencoderResult autoencode(const Eigen::MatrixXd& x, int width, int epochs,
                             std::uint64_t seed) {
  const int cols = static_cast<int>(x.cols());
  if (width >= cols)
    std::cerr << "[warn] autoencoder width " << width << " >= input width " << cols
              << "; compression is trivial\n";

  Rng rng(mix_seed(seed, 20));
  auto glorot = [&](int rows_, int cols_) {
    double a = std::sqrt(6.0 / (rows_ + cols_));
    Eigen::MatrixXd w(rows_, cols_);
    for (int i = 0; i < rows_; ++i)
      for (int j = 0; j < cols_; ++j) w(i, j) = rng.uniform(-a, a);
    return w;
  };

  // flat layout: W_enc | b_enc | W_dec | b_dec
  const int sz_we = cols * width, sz_be = width, sz_wd = width * cols, sz_bd = cols;
  Eigen::VectorXd flat(sz_we + sz_be + sz_wd + sz_bd);
  Eigen::Index off = 0;
  auto put = [&](const Eigen::MatrixXd& m) {
    flat.segment(off, m.size()) = Eigen::Map<const Eigen::VectorXd>(m.data(), m.size());
    off += m.size();
  };
  // non-negative encoder init: one-hot inputs keep every ReLU unit alive
  put(glorot(cols, width).cwiseAbs());
  put(Eigen::MatrixXd::Zero(1, width));
  put(glorot(width, cols));
  put(Eigen::MatrixXd::Zero(1, cols));

  AdamW opt(flat.size(), AdamW::Options{1e-3, 0.9, 0.999, 1e-8, 0.0});

  auto run = [&](bool want_grad, Eigen::VectorXd* grad_out, Eigen::MatrixXd* codes_out) {
    ad::Tape tape;
    Eigen::Index o = 0;
    auto take = [&](int r_, int c_) {
      Eigen::MatrixXd m = Eigen::Map<const Eigen::MatrixXd>(flat.data() + o, r_, c_);
      o += static_cast<Eigen::Index>(r_) * c_;
      return tape.leaf(std::move(m));
    };
    ad::Var we = take(cols, width), be = take(1, width), wd = take(width, cols),
            bd = take(1, cols);
    ad::Var xin = tape.constant(x);
    ad::Var hidden = ad::relu(tape, ad::add_rowvec(tape, ad::matmul(tape, xin, we), be));
    ad::Var recon = ad::sigmoid(tape, ad::add_rowvec(tape, ad::matmul(tape, hidden, wd), bd));
    ad::Var diff = ad::sub(tape, recon, xin);
    ad::Var loss = ad::scale(tape, ad::sum_all(tape, ad::hadamard(tape, diff, diff)),
                             1.0 / static_cast<double>(x.size()));
    double lv = tape.scalar(loss);
    if (want_grad) {
      tape.backward(loss);
      Eigen::VectorXd g(flat.size());
      Eigen::Index go = 0;
      for (ad::Var v : {we, be, wd, bd}) {
        Eigen::MatrixXd gm = tape.grad_of(v);
        g.segment(go, gm.size()) = Eigen::Map<const Eigen::VectorXd>(gm.data(), gm.size());
        go += gm.size();
      }
      *grad_out = g;
    }
    if (codes_out) *codes_out = tape.value(hidden);
    return lv;
  };

  AutoencoderResult res;
  Eigen::VectorXd grad(flat.size());
  for (int e = 0; e < epochs; ++e) {
    double loss = run(true, &grad, nullptr);
    res.loss_history.push_back(loss);
    opt.step(flat, grad);
  }
  double final_loss = run(false, nullptr, &res.codes);
  res.loss_history.push_back(final_loss);
  return res;
}

Eigen::MatrixXd assemble_rows(const Eigen::MatrixXd& user_block,
                              const Eigen::MatrixXd& service_block) {
  if (user_block.cols() != service_block.cols())
    throw std::invalid_argument("assemble_rows: width mismatch between user and service blocks");
  Eigen::MatrixXd out(user_block.rows() + service_block.rows(), user_block.cols());
  out.topRows(user_block.rows()) = user_block;
  out.bottomRows(service_block.rows()) = service_block;
  return out;
}

FeatureBank build_feature_bank(const QoSDataset& ds, const std::vector<Mask>& train_masks,
                               const FeatureConfig& cfg) {
  FeatureBank bank;
  bank.d1 = cfg.d1;
  bank.d2 = cfg.d2;
  for (int p = 0; p < ds.P; ++p) {
    NmfResult r = nmf(ds.values[p], train_masks[p], cfg.d1, cfg.nmf_iters,
                      mix_seed(cfg.seed, 100 + static_cast<std::uint64_t>(p)));
    bank.qos_feats.push_back(assemble_rows(r.user, r.service));
  }
  auto codes = [&](ContextAttr attr, EntityKind kind, std::uint64_t stream) {
    Eigen::MatrixXd oh = onehot_context(ds, attr, kind);
    return autoencode(oh, cfg.d2, cfg.ae_epochs, mix_seed(cfg.seed, stream)).codes;
  };
  bank.region_feats = assemble_rows(codes(ContextAttr::Region, EntityKind::User, 200),
                                    codes(ContextAttr::Region, EntityKind::Service, 201));
  bank.as_feats = assemble_rows(codes(ContextAttr::As, EntityKind::User, 202),
                                codes(ContextAttr::As, EntityKind::Service, 203));
  return bank;
}

namespace {

void write_matrix_bin(const std::string& path, const Eigen::MatrixXd& m) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path);
  std::uint32_t rows = static_cast<std::uint32_t>(m.rows());
  std::uint32_t cols = static_cast<std::uint32_t>(m.cols());
  out.write(reinterpret_cast<const char*>(&rows), 4);
  out.write(reinterpret_cast<const char*>(&cols), 4);
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j) {
      double v = m(i, j);
      out.write(reinterpret_cast<const char*>(&v), 8);
    }
}

bool read_matrix_bin(const std::string& path, Eigen::MatrixXd& m) {
  std::ifstream in(path, std::ios::binary);
  if (!in) return false;
  std::uint32_t rows = 0, cols = 0;
  in.read(reinterpret_cast<char*>(&rows), 4);
  in.read(reinterpret_cast<char*>(&cols), 4);
  m.resize(rows, cols);
  for (std::uint32_t i = 0; i < rows; ++i)
    for (std::uint32_t j = 0; j < cols; ++j) {
      double v;
      in.read(reinterpret_cast<char*>(&v), 8);
      m(i, j) = v;
    }
  return static_cast<bool>(in);
}

}  // namespace

void save_feature_bank(const FeatureBank& bank, const QoSDataset& ds, const FeatureConfig& cfg,
                       const std::string& dir) {
  fs::create_directories(dir);
  for (int p = 0; p < ds.P; ++p)
    write_matrix_bin((fs::path(dir) / ("features_" + ds.task_names[p] + ".bin")).string(),
                     bank.qos_feats[p]);
  write_matrix_bin((fs::path(dir) / "features_region.bin").string(), bank.region_feats);
  write_matrix_bin((fs::path(dir) / "features_as.bin").string(), bank.as_feats);
  json meta;
  meta["d1"] = cfg.d1;
  meta["d2"] = cfg.d2;
  meta["nmf_iters"] = cfg.nmf_iters;
  meta["ae_epochs"] = cfg.ae_epochs;
  meta["seed"] = cfg.seed;
  std::ofstream mf(fs::path(dir) / "features_meta.json");
  mf << meta.dump(2) << '\n';
}

bool load_feature_bank(FeatureBank& bank, const QoSDataset& ds, const FeatureConfig& cfg,
                       const std::string& dir) {
  std::ifstream mf(fs::path(dir) / "features_meta.json");
  if (!mf) return false;
  json meta = json::parse(mf, nullptr, false);
  if (meta.is_discarded()) return false;
  if (meta.value("d1", -1) != cfg.d1 || meta.value("d2", -1) != cfg.d2 ||
      meta.value("nmf_iters", -1) != cfg.nmf_iters ||
      meta.value("ae_epochs", -1) != cfg.ae_epochs ||
      meta.value("seed", std::uint64_t(0)) != cfg.seed)
    return false;
  bank.d1 = cfg.d1;
  bank.d2 = cfg.d2;
  bank.qos_feats.assign(ds.P, Eigen::MatrixXd());
  for (int p = 0; p < ds.P; ++p)
    if (!read_matrix_bin((fs::path(dir) / ("features_" + ds.task_names[p] + ".bin")).string(),
                         bank.qos_feats[p]))
      return false;
  if (!read_matrix_bin((fs::path(dir) / "features_region.bin").string(), bank.region_feats))
    return false;
  if (!read_matrix_bin((fs::path(dir) / "features_as.bin").string(), bank.as_feats)) return false;
  return true;
}

}  // namespace sharpqos
