#include "sharpqos/balancing.hpp"

#include <cmath>
#include <stdexcept>

namespace sharpqos {

Balancing parse_balancing(const std::string& s) {
  if (s == "equal") return Balancing::Equal;
  if (s == "dwa") return Balancing::Dwa;
  if (s == "huw") return Balancing::Huw;
  if (s == "ema") return Balancing::Ema;
  throw std::invalid_argument("unknown balancing mode: " + s);
}

std::string to_string(Balancing b) {
  switch (b) {
    case Balancing::Equal: return "equal";
    case Balancing::Dwa: return "dwa";
    case Balancing::Huw: return "huw";
    default: return "ema";
  }
}

void EmaState::update(const std::vector<double>& losses) {
  if (losses.size() != smoothed.size()) throw std::invalid_argument("EmaState: task count mismatch");
  for (std::size_t p = 0; p < smoothed.size(); ++p)
    smoothed[p] = beta * smoothed[p] + (1.0 - beta) * losses[p];
}

std::vector<double> ema_weights_from_smoothed(const std::vector<double>& smoothed, double eps) {
  std::vector<double> inv(smoothed.size());
  double sum = 0.0;
  for (std::size_t p = 0; p < smoothed.size(); ++p) {
    inv[p] = 1.0 / (smoothed[p] + eps);
    sum += inv[p];
  }
  for (double& w : inv) w /= sum;
  return inv;
}

std::vector<double> EmaState::weights() const { return ema_weights_from_smoothed(smoothed); }

WeightPolicy::WeightPolicy(Balancing mode, int tasks, double ema_beta)
    : mode_(mode), tasks_(tasks), ema_(tasks, ema_beta) {}

std::vector<double> WeightPolicy::on_epoch(const std::vector<double>& losses) {
  if (static_cast<int>(losses.size()) != tasks_)
    throw std::invalid_argument("WeightPolicy: task count mismatch");
  ++epoch_;
  switch (mode_) {
    case Balancing::Equal:
      return std::vector<double>(losses.size(), 1.0 / tasks_);
    case Balancing::Ema:
      ema_.update(losses);
      return ema_.weights();
    case Balancing::Dwa: {
      std::vector<double> w(losses.size(), 1.0);
      if (epoch_ > 2) {
        std::vector<double> e(losses.size());
        double sum = 0.0;
        for (std::size_t p = 0; p < losses.size(); ++p) {
          double r = prev1_[p] / std::max(prev2_[p], 1e-12);
          e[p] = std::exp(r / kDwaTemperature);
          sum += e[p];
        }
        for (std::size_t p = 0; p < losses.size(); ++p) w[p] = tasks_ * e[p] / sum;
      }
      prev2_ = prev1_;
      prev1_ = losses;
      return w;
    }
    case Balancing::Huw:
      throw std::logic_error("WeightPolicy: uncertainty weighting has no epoch weights");
  }
  return {};
}

std::vector<double> huw_effective_weights(const std::vector<double>& logvars) {
  std::vector<double> w(logvars.size());
  for (std::size_t p = 0; p < logvars.size(); ++p) w[p] = 0.5 * std::exp(-logvars[p]);
  return w;
}

}  // namespace sharpqos
