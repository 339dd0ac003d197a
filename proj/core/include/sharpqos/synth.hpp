#pragma once

#include <cstdint>
#include <string>

#include "sharpqos/qosdata.hpp"

namespace sharpqos {

/// Exactly low-rank two-factor dataset with per-task scales spanning a large
/// numerical range, fully observed unless density < 1. Used by the bundled
/// fixtures and the convergence tests.
QoSDataset make_rank2_dataset(int n, int m, int tasks, std::uint64_t seed,
                              double noise_level = 0.0, double density = 1.0);

/// Two-task dataset shaped like a public response-time / throughput benchmark
/// subsample: multiplicative user and service factors, region and AS effects,
/// log-normal noise, heavy-tailed marginals (RT roughly 0.9 +- 2 in (0.001,
/// 20), TP roughly 47 +- 110 in (0.004, 1000)), ~93% observed density.
QoSDataset make_service_bench_dataset(int n, int m, std::uint64_t seed);

/// Writes raw whitespace-separated matrices (task order) plus context.tsv in
/// the on-disk format load_dataset() reads; unobserved entries become -1.
void write_raw_files(const QoSDataset& ds, const std::string& dir);

}  // namespace sharpqos
