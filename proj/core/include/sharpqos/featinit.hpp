#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <string>
#include <vector>

#include "sharpqos/qosdata.hpp"

namespace sharpqos {

/// Initial node features per source: P non-negative factor stacks from the
/// QoS matrices plus region/AS autoencoder codes, all N x width with users in
/// rows 0..n-1 and services below.
struct FeatureBank {
  std::vector<Eigen::MatrixXd> qos_feats;  // P matrices, N x d1
  Eigen::MatrixXd region_feats;            // N x d2
  Eigen::MatrixXd as_feats;                // N x d2
  int d1 = 0;
  int d2 = 0;
};

struct NmfResult {
  Eigen::MatrixXd user;     // n x rank
  Eigen::MatrixXd service;  // m x rank
  std::vector<double> loss_history;  // masked RMSE per iteration
};

/// Masked multiplicative-update NMF restricted to the masked entries of Q.
/// Factors stay non-negative; the masked Frobenius error is non-increasing.
NmfResult nmf(const Eigen::MatrixXd& q, const Mask& mask, int rank, int iters,
              std::uint64_t seed);

enum class EntityKind { User, Service };

/// One-hot rows over the distinct attribute values of that entity kind
/// (column order = ascending attribute id).
Eigen::MatrixXd onehot_context(const QoSDataset& ds, ContextAttr attr, EntityKind kind);

struct AutoencoderResult {
  Eigen::MatrixXd codes;  // rows x width, ReLU hidden representation
  std::vector<double> loss_history;
};

/// Single-hidden-layer autoencoder: ReLU encoder, sigmoid decoder, MSE loss,
/// full-batch AdamW (lr 1e-3). Returns the hidden representation.
AutoencoderResult autoencode(const Eigen::MatrixXd& x, int width, int epochs,
                             std::uint64_t seed);

struct FeatureConfig {
  int d1 = 128;
  int d2 = 128;
  int nmf_iters = 200;
  int ae_epochs = 300;
  std::uint64_t seed = 0;
};

/// Runs the P NMFs and 4 autoencoders and assembles the bank. NMF fits train
/// entries only.
FeatureBank build_feature_bank(const QoSDataset& ds, const std::vector<Mask>& train_masks,
                               const FeatureConfig& cfg);

/// Stacks user rows above service rows; widths must match.
Eigen::MatrixXd assemble_rows(const Eigen::MatrixXd& user_block,
                              const Eigen::MatrixXd& service_block);

// Feature cache: features_<source>.bin, row-major doubles with an 8-byte
// header (uint32 rows, uint32 cols), plus features_meta.json.
void save_feature_bank(const FeatureBank& bank, const QoSDataset& ds, const FeatureConfig& cfg,
                       const std::string& dir);
bool load_feature_bank(FeatureBank& bank, const QoSDataset& ds, const FeatureConfig& cfg,
                       const std::string& dir);

}  // namespace sharpqos
