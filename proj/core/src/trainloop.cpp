#include "sharpqos/trainloop.hpp"

#include <cmath>
#include <fstream>
#include <iostream>
#include <stdexcept>

#include "sharpqos/optim.hpp"

namespace sharpqos {

double task_loss(const Eigen::MatrixXd& pred, const QoSDataset& ds, const Mask& mask, int task) {
  double sum = 0.0;
  std::size_t count = 0;
  for (int i = 0; i < ds.n; ++i) {
    for (int j = 0; j < ds.m; ++j) {
      if (mask[static_cast<std::size_t>(i) * ds.m + j]) {
        sum += std::abs(ds.values[task](i, j) - pred(i, j));
        ++count;
      }
    }
  }
  if (count == 0) throw std::invalid_argument("task_loss: empty mask");
  return sum / static_cast<double>(count);
}

TrainResult train(const QoSDataset& ds, const DataSplit& split, const ModelInputs& inputs,
                  ModelParams& params, const TrainConfig& cfg) {
  const int P = params.P;
  if (cfg.balancing == Balancing::Huw && params.huw_logvar.empty())
    throw std::invalid_argument("train: huw balancing requires params created with_huw");

  std::vector<std::vector<Triplet>> train_entries(P), val_entries(P);
  for (int p = 0; p < P; ++p) {
    train_entries[p] = mask_triplets(ds, split.train[p], p);
    val_entries[p] = mask_triplets(ds, split.val[p], p);
    if (train_entries[p].empty())
      throw std::runtime_error("train: task " + ds.task_names[p] + " has no training entries");
  }

  AdamW opt(params.store.size(),
            AdamW::Options{cfg.lr, 0.9, 0.999, 1e-8, cfg.weight_decay});
  opt.set_decay_mask(params.store.decay_mask());
  Rng gate_rng(mix_seed(cfg.seed, 500));
  WeightPolicy policy(cfg.balancing == Balancing::Huw ? Balancing::Equal : cfg.balancing, P,
                      cfg.ema_beta);

  TrainResult res;
  int patience_ctr = 0;

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    GateNoise noise = GateNoise::draw(P, params.cfg, gate_rng);
    ad::Tape tape;
    ForwardBuild fb = build_forward(tape, inputs, params, RunMode::Train, &noise);

    std::vector<ad::Var> loss_vars(P);
    std::vector<double> losses(P);
    for (int p = 0; p < P; ++p) {
      loss_vars[p] = ad::masked_mae(tape, fb.q_hat[p], train_entries[p]);
      losses[p] = tape.scalar(loss_vars[p]);
    }

    std::vector<double> weights;
    ad::Var total{-1};
    if (cfg.balancing == Balancing::Huw) {
      std::vector<double> lv(P);
      for (int p = 0; p < P; ++p) {
        ad::Var v = fb.param_vars[params.huw_logvar[p]];
        lv[p] = tape.scalar(v);
        // exp(-v) * L / 2 + v / 2
        ad::Var term = ad::add(
            tape,
            ad::scale(tape, ad::mul_scalar(tape, loss_vars[p], ad::exp_ew(tape, ad::neg(tape, v))),
                      0.5),
            ad::scale(tape, v, 0.5));
        total = total.valid() ? ad::add(tape, total, term) : term;
      }
      weights = huw_effective_weights(lv);
    } else {
      weights = policy.on_epoch(losses);
      for (int p = 0; p < P; ++p) {
        ad::Var term = ad::scale(tape, loss_vars[p], weights[p]);
        total = total.valid() ? ad::add(tape, total, term) : term;
      }
    }
    total = ad::add(tape, total,
                    ad::scale(tape, ad::add(tape, fb.l0_snr, fb.l0_cross), cfg.lambda_l0));

    double total_value = tape.scalar(total);
    if (!std::isfinite(total_value)) {
      res.aborted_non_finite = true;
      res.stop_reason = "non-finite loss at epoch " + std::to_string(epoch);
      std::cerr << "[warn] " << res.stop_reason << "; returning last finite checkpoint\n";
      break;
    }

    // monitored quantity: weighted validation MAE, falling back to the train
    // loss for tasks without validation entries
    double monitored = 0.0;
    for (int p = 0; p < P; ++p) {
      double vp = val_entries[p].empty()
                      ? losses[p]
                      : [&] {
                          const Eigen::MatrixXd& qh = tape.value(fb.q_hat[p]);
                          double s = 0.0;
                          for (const Triplet& e : val_entries[p])
                            s += std::abs(e.value - qh(e.row, e.col));
                          return s / static_cast<double>(val_entries[p].size());
                        }();
      monitored += weights[p] * vp;
    }

    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_mae = losses;
    rec.val_loss = monitored;
    rec.weights = weights;
    rec.expected_l0_snr = tape.scalar(fb.l0_snr);
    rec.expected_l0_cross = tape.scalar(fb.l0_cross);
    res.history.push_back(rec);
    res.epochs_run = epoch;

    tape.backward(total);
    Eigen::VectorXd grad = collect_param_grads(tape, fb, params.store);
    opt.step(params.store.flat(), grad);

    if (monitored < res.best_val) {
      res.best_val = monitored;
      res.best_epoch = epoch;
      res.best_params = params.store.flat();
      patience_ctr = 0;
    } else {
      ++patience_ctr;
      if (patience_ctr >= cfg.patience) {
        res.stop_reason = "patience " + std::to_string(cfg.patience) + " reached at epoch " +
                          std::to_string(epoch);
        break;
      }
    }

    if (cfg.log_every > 0 && epoch % cfg.log_every == 0) {
      std::cerr << "[train] epoch " << epoch << " losses";
      for (double l : losses) std::cerr << ' ' << l;
      std::cerr << " monitored " << monitored << '\n';
    }
  }

  if (res.stop_reason.empty() && !res.aborted_non_finite) res.stop_reason = "max epochs";
  if (res.best_epoch < 0) {
    res.best_params = params.store.flat();
  } else {
    params.store.flat() = res.best_params;
  }
  return res;
}

void write_history_csv(const std::vector<EpochRecord>& history,
                       const std::vector<std::string>& task_names, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open " + path);
  out << "epoch";
  for (const auto& t : task_names) out << ",train_mae_" << t;
  out << ",val_loss";
  for (const auto& t : task_names) out << ",w_" << t;
  out << ",expected_l0_snr,expected_l0_cross\n";
  out.precision(17);
  for (const EpochRecord& r : history) {
    out << r.epoch;
    for (double v : r.train_mae) out << ',' << v;
    out << ',' << r.val_loss;
    for (double v : r.weights) out << ',' << v;
    out << ',' << r.expected_l0_snr << ',' << r.expected_l0_cross << '\n';
  }
}

}  // namespace sharpqos
