#pragma once

#include <string>
#include <vector>

namespace sharpqos {

enum class Balancing { Equal, Dwa, Huw, Ema };

Balancing parse_balancing(const std::string& s);
std::string to_string(Balancing b);

/// Numerical floor in the inverse-smoothed-loss weights. Small enough that
/// weights for smoothed losses (1, 3) are (0.75, 0.25) to well under 1e-9.
inline constexpr double kEmaWeightEps = 1e-12;

/// Exponentially smoothed per-task losses and their inverse-normalized
/// weights. Smoothed losses start at 1.
struct EmaState {
  double beta = 0.99;
  std::vector<double> smoothed;

  explicit EmaState(int tasks = 0, double beta_ = 0.99)
      : beta(beta_), smoothed(static_cast<std::size_t>(tasks), 1.0) {}

  void update(const std::vector<double>& losses);
  std::vector<double> weights() const;
};

std::vector<double> ema_weights_from_smoothed(const std::vector<double>& smoothed,
                                              double eps = kEmaWeightEps);

/// Loss-weighting policies used as ablation baselines next to the EMA scheme.
/// equal and ema emit simplex weights; dwa follows its original convention and
/// sums to P. Uncertainty weighting has no fixed weights (its loss form is
/// built directly from the learnable log-variances), so on_epoch must not be
/// called for it.
class WeightPolicy {
 public:
  static constexpr double kDwaTemperature = 2.0;

  WeightPolicy(Balancing mode, int tasks, double ema_beta);

  std::vector<double> on_epoch(const std::vector<double>& current_losses);

  Balancing mode() const { return mode_; }
  const EmaState& ema() const { return ema_; }

 private:
  Balancing mode_;
  int tasks_;
  EmaState ema_;
  std::vector<double> prev1_, prev2_;
  int epoch_ = 0;
};

/// Effective per-task weight of the uncertainty form d(total)/d(L_p) =
/// exp(-logvar)/2, reported in the history for comparability.
std::vector<double> huw_effective_weights(const std::vector<double>& logvars);

}  // namespace sharpqos
