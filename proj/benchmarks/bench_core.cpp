#include <benchmark/benchmark.h>

#include "sharpqos/featinit.hpp"
#include "sharpqos/graphs.hpp"
#include "sharpqos/hyperball.hpp"
#include "sharpqos/model.hpp"
#include "sharpqos/rng.hpp"
#include "sharpqos/synth.hpp"

using namespace sharpqos;

namespace {

Eigen::MatrixXd random_points(int rows, int cols, std::uint64_t seed, double scale) {
  Rng rng(seed);
  Eigen::MatrixXd m(rows, cols);
  for (int i = 0; i < rows; ++i)
    for (int j = 0; j < cols; ++j) m(i, j) = rng.uniform(-scale, scale);
  return m;
}

}  // namespace

static void BM_Exp0(benchmark::State& state) {
  Eigen::MatrixXd v = random_points(static_cast<int>(state.range(0)), 64, 1, 1.0);
  for (auto _ : state) benchmark::DoNotOptimize(ball::exp0(v, 1.0));
}
BENCHMARK(BM_Exp0)->Arg(256)->Arg(2048);

static void BM_MobiusAdd(benchmark::State& state) {
  Eigen::MatrixXd x = random_points(static_cast<int>(state.range(0)), 64, 2, 0.1);
  Eigen::MatrixXd y = random_points(1, 64, 3, 0.1);
  for (auto _ : state) benchmark::DoNotOptimize(ball::mobius_add(x, y, 1.0));
}
BENCHMARK(BM_MobiusAdd)->Arg(256)->Arg(2048);

static void BM_Spmm(benchmark::State& state) {
  const int n = static_cast<int>(state.range(0));
  Rng rng(5);
  std::vector<Triplet> ts;
  for (int i = 0; i < n; ++i)
    for (int k = 0; k < 16; ++k)
      ts.push_back({i, static_cast<int>(rng.uniform_int(n)), 1.0});
  std::sort(ts.begin(), ts.end(), [](const Triplet& a, const Triplet& b) {
    return a.row != b.row ? a.row < b.row : a.col < b.col;
  });
  ts.erase(std::unique(ts.begin(), ts.end(),
                       [](const Triplet& a, const Triplet& b) {
                         return a.row == b.row && a.col == b.col;
                       }),
           ts.end());
  CsrMatrix csr = CsrMatrix::from_triplets(n, n, ts);
  Eigen::MatrixXd x = random_points(n, 64, 6, 1.0);
  for (auto _ : state) benchmark::DoNotOptimize(csr.multiply(x));
}
BENCHMARK(BM_Spmm)->Arg(1024)->Arg(4096);

static void BM_NmfIteration(benchmark::State& state) {
  QoSDataset ds = make_rank2_dataset(64, 64, 1, 7, 0.1, 0.8);
  for (auto _ : state)
    benchmark::DoNotOptimize(nmf(ds.values[0], ds.observed[0], 16, 10, 9));
}
BENCHMARK(BM_NmfIteration);

static void BM_ForwardDesk(benchmark::State& state) {
  QoSDataset ds = make_service_bench_dataset(50, 200, 11);
  DataSplit sp = split(ds, {10.0, 13, 0.05});
  GraphSet gs = build_graph_set(ds, sp.train);
  FeatureConfig fc{32, 32, 30, 20, 15};
  FeatureBank bank = build_feature_bank(ds, sp.train, fc);
  ModelInputs inputs = make_model_inputs(ds, gs, bank);
  ModelConfig cfg;
  cfg.d = 32;
  cfg.layers = 1;
  cfg.k1 = cfg.k2 = 2;
  cfg.d_snr = 16;
  cfg.head1 = 32;
  cfg.head2 = 16;
  ModelParams params = ModelParams::create(cfg, 2);
  params.init(17);
  for (auto _ : state)
    benchmark::DoNotOptimize(forward(inputs, params, RunMode::Infer, nullptr));
}
BENCHMARK(BM_ForwardDesk)->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
