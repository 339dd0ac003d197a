#include "sharpqos/synth.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>

#include "sharpqos/rng.hpp"

namespace fs = std::filesystem;

namespace sharpqos {

namespace {

void assign_context(QoSDataset& ds, Rng& rng, int user_regions, int service_regions,
                    int user_as, int service_as) {
  // shared vocabulary: region tokens r0..; AS tokens a0..
  int regions = std::max(user_regions, service_regions);
  int ases = std::max(user_as, service_as);
  ds.region_vocab.clear();
  ds.as_vocab.clear();
  for (int k = 0; k < regions; ++k) ds.region_vocab.push_back("r" + std::to_string(k));
  for (int k = 0; k < ases; ++k) ds.as_vocab.push_back("a" + std::to_string(k));
  ds.user_region.resize(ds.n);
  ds.user_as.resize(ds.n);
  ds.service_region.resize(ds.m);
  ds.service_as.resize(ds.m);
  for (int i = 0; i < ds.n; ++i) {
    ds.user_region[i] = static_cast<int>(rng.uniform_int(user_regions));
    ds.user_as[i] = static_cast<int>(rng.uniform_int(user_as));
  }
  for (int j = 0; j < ds.m; ++j) {
    ds.service_region[j] = static_cast<int>(rng.uniform_int(service_regions));
    ds.service_as[j] = static_cast<int>(rng.uniform_int(service_as));
  }
}

}  // namespace

QoSDataset make_rank2_dataset(int n, int m, int tasks, std::uint64_t seed, double noise_level,
                              double density) {
  Rng rng(mix_seed(seed, 7000));
  QoSDataset ds;
  ds.n = n;
  ds.m = m;
  ds.P = tasks;
  for (int p = 0; p < tasks; ++p) ds.task_names.push_back("T" + std::to_string(p));

  Eigen::MatrixXd u(n, 2), v(m, 2);
  for (int i = 0; i < n; ++i)
    for (int k = 0; k < 2; ++k) u(i, k) = rng.uniform(0.5, 1.5);
  for (int j = 0; j < m; ++j)
    for (int k = 0; k < 2; ++k) v(j, k) = rng.uniform(0.5, 1.5);

  for (int p = 0; p < tasks; ++p) {
    double scale = std::pow(10.0, p);  // tasks live on different numerical ranges
    Eigen::MatrixXd q(n, m);
    Mask mask(static_cast<std::size_t>(n) * m, 0);
    for (int i = 0; i < n; ++i) {
      for (int j = 0; j < m; ++j) {
        double val = scale * u.row(i).dot(v.row(j));
        if (noise_level > 0.0) val *= std::exp(noise_level * rng.normal());
        val = std::max(val, 1e-3);
        bool obs = density >= 1.0 || rng.uniform() < density;
        q(i, j) = obs ? val : 0.0;
        mask[static_cast<std::size_t>(i) * m + j] = obs ? 1 : 0;
      }
    }
    ds.values.push_back(std::move(q));
    ds.observed.push_back(std::move(mask));
  }
  assign_context(ds, rng, 3, 4, 4, 6);
  ds.validate();
  return ds;
}

QoSDataset make_service_bench_dataset(int n, int m, std::uint64_t seed) {
  Rng rng(mix_seed(seed, 7100));
  QoSDataset ds;
  ds.n = n;
  ds.m = m;
  ds.P = 2;
  ds.task_names = {"RT", "TP"};
  assign_context(ds, rng, 8, 20, 25, 120);

  // multiplicative user/service factors with region (RT) and AS (TP) effects
  std::vector<double> user_speed(n), service_base(m), user_bw(n), service_bw(m);
  for (int i = 0; i < n; ++i) {
    user_speed[i] = std::exp(rng.uniform(std::log(0.5), std::log(2.0)));
    user_bw[i] = std::exp(rng.uniform(std::log(0.3), std::log(3.0)));
  }
  for (int j = 0; j < m; ++j) {
    service_base[j] = std::exp(rng.uniform(std::log(0.05), std::log(3.0)));
    service_bw[j] = std::exp(rng.uniform(std::log(5.0), std::log(200.0)));
  }

  Eigen::MatrixXd rt(n, m), tp(n, m);
  Mask mask_rt(static_cast<std::size_t>(n) * m, 0), mask_tp(mask_rt);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < m; ++j) {
      bool obs = rng.uniform() < 0.93;
      double region_eff = ds.user_region[i] == ds.service_region[j] ? 0.6 : 1.2;
      double as_eff = ds.user_as[i] == ds.service_as[j] ? 1.5 : 0.8;
      double rt_v = service_base[j] * user_speed[i] * region_eff * std::exp(0.25 * rng.normal());
      double tp_v = service_bw[j] * user_bw[i] * as_eff * std::exp(0.3 * rng.normal());
      rt_v = std::clamp(rt_v, 1e-3, 19.99);
      tp_v = std::clamp(tp_v, 4e-3, 1000.0);
      std::size_t k = static_cast<std::size_t>(i) * m + j;
      rt(i, j) = obs ? rt_v : 0.0;
      tp(i, j) = obs ? tp_v : 0.0;
      mask_rt[k] = mask_tp[k] = obs ? 1 : 0;
    }
  }
  ds.values = {std::move(rt), std::move(tp)};
  ds.observed = {std::move(mask_rt), std::move(mask_tp)};
  ds.validate();
  return ds;
}

void write_raw_files(const QoSDataset& ds, const std::string& dir) {
  fs::create_directories(dir);
  for (int p = 0; p < ds.P; ++p) {
    std::ofstream out(fs::path(dir) / (ds.task_names[p] + ".txt"));
    out.precision(17);
    for (int i = 0; i < ds.n; ++i) {
      for (int j = 0; j < ds.m; ++j) {
        if (j) out << ' ';
        if (ds.observed[p][static_cast<std::size_t>(i) * ds.m + j])
          out << ds.values[p](i, j);
        else
          out << -1;
      }
      out << '\n';
    }
  }
  std::ofstream ctx(fs::path(dir) / "context.tsv");
  ctx << "kind\tindex\tregion\tas\n";
  for (int i = 0; i < ds.n; ++i)
    ctx << "user\t" << i << '\t' << ds.region_vocab[ds.user_region[i]] << '\t'
        << ds.as_vocab[ds.user_as[i]] << '\n';
  for (int j = 0; j < ds.m; ++j)
    ctx << "service\t" << j << '\t' << ds.region_vocab[ds.service_region[j]] << '\t'
        << ds.as_vocab[ds.service_as[j]] << '\n';
}

}  // namespace sharpqos
