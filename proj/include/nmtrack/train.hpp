#pragma once
// Mini-batch training of the bidirectional network under the physics loss:
// Adam steps, global-norm gradient clipping, plateau learning-rate decay,
// early stopping on validation loss, best-on-validation weights.
#include <chrono>

#include "nmtrack/loss.hpp"
#include "nmtrack/lstm.hpp"

namespace nmtrack {

struct TrainConfig {
  int batch = 32;
  int max_epochs = 120;
  int patience = 15;      // epochs without val improvement before stopping
  double lr = 2e-3;
  double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
  double clip = 5.0;      // global gradient-norm ceiling
  double k = 0.1;         // term-3 weight
  double lr_decay = 0.5;  // plateau decay factor
  int lr_patience = 5;    // epochs without improvement before decaying
  double min_lr = 2e-4;
  double max_seconds = 0;  // wall-clock budget, checked at epoch ends; 0 = off
  std::uint64_t seed = 1;
  int log_every = 1;
};

struct EpochLog {
  int epoch = 0;
  double train_loss = 0, val_loss = 0;
  double term1 = 0, term2 = 0, term3 = 0;  // training-set means
  double lr = 0, seconds = 0;
};

struct TrainResult {
  Network<float> best;
  std::vector<EpochLog> log;
  int best_epoch = -1;
  double best_val = std::numeric_limits<double>::infinity();
  bool aborted = false;  // numeric breakdown; best holds last good weights
};

namespace detail {

// Assembles feature-major batch tensors from dataset windows.
struct BatchBuffers {
  MatX<float> x;
  Mat truth, obs;
  std::vector<double> rec_mu, rec_sd;

  void fill(const Dataset& d, const std::vector<int>& ids) {
    const int B = static_cast<int>(ids.size());
    const int T = window_len;
    x.resize(1, T * B);
    truth.resize(n_targets, T * B);
    obs.resize(1, T * B);
    rec_mu.resize(B);
    rec_sd.resize(B);
    for (int b = 0; b < B; ++b) {
      const DataWindow& w = d.windows[ids[b]];
      rec_mu[b] = w.rec_mu;
      rec_sd[b] = w.rec_sd;
      for (int t = 0; t < T; ++t) {
        const int col = t * B + b;
        x(0, col) = float(w.obs[t]);
        obs(0, col) = w.obs[t];
        for (int j = 0; j < n_targets; ++j) truth(j, col) = w.targets(t, j);
      }
    }
  }
};

template <class T>
void zero_like(Network<T>& g, const Network<T>& net) {
  g.setup(net.n_in, net.l1.hidden, net.l2.hidden, net.n_out);
}

inline double grad_norm(Network<float>& g) {
  double s = 0;
  for_each_block(g, [&](const char*, auto& m) {
    s += m.template cast<double>().squaredNorm();
  });
  return std::sqrt(s);
}

inline void scale_grads(Network<float>& g, float f) {
  for_each_block(g, [&](const char*, auto& m) { m *= f; });
}

struct AdamState {
  Network<float> m, v;
  std::int64_t step = 0;
};

inline void adam_step(Network<float>& net, Network<float>& grad,
                      AdamState& st, const TrainConfig& cfg, double lr) {
  ++st.step;
  const float b1 = float(cfg.beta1), b2 = float(cfg.beta2);
  const float c1 = 1.0f - std::pow(b1, float(st.step));
  const float c2 = 1.0f - std::pow(b2, float(st.step));
  const float a = float(lr) * std::sqrt(c2) / c1;
  const float eps = float(cfg.eps);
  // walk the three networks' blocks in lockstep
  std::vector<Eigen::Map<Eigen::ArrayXf>> ps, gs, ms, vs;
  auto collect = [](Network<float>& n, std::vector<Eigen::Map<Eigen::ArrayXf>>& out) {
    for_each_block(n, [&](const char*, auto& m) {
      out.emplace_back(m.data(), m.size());
    });
  };
  collect(net, ps);
  collect(grad, gs);
  collect(st.m, ms);
  collect(st.v, vs);
  for (size_t i = 0; i < ps.size(); ++i) {
    ms[i] = b1 * ms[i] + (1.0f - b1) * gs[i];
    vs[i] = b2 * vs[i] + (1.0f - b2) * gs[i].square();
    ps[i] -= a * ms[i] / (vs[i].sqrt() + eps);
  }
}

}  // namespace detail

// Mean loss over a dataset without gradients (used for validation).
inline LossTerms evaluate_loss(const Network<float>& net, const Dataset& d,
                               const LossConfig& lcfg, int batch = 64) {
  detail::BatchBuffers buf;
  FwdCache<float> cache;
  LossTerms acc;
  std::int64_t nb = 0;
  std::vector<int> ids;
  for (int start = 0; start < d.size(); start += batch) {
    ids.clear();
    for (int i = start; i < std::min(d.size(), start + batch); ++i)
      ids.push_back(i);
    buf.fill(d, ids);
    MatX<float> y = forward(net, buf.x, window_len, int(ids.size()), cache);
    Mat yd = y.cast<double>();
    LossTerms t = physics_loss_grad(yd, buf.truth, buf.obs, buf.rec_mu,
                                    buf.rec_sd, d.stats, lcfg, nullptr);
    // weight by batch size so the result is an exact per-window mean,
    // independent of how the windows are grouped into batches
    const double w = double(ids.size());
    acc.term1 += t.term1 * w;
    acc.term2 += t.term2 * w;
    acc.term3 += t.term3 * w;
    nb += ids.size();
  }
  if (nb > 0) {
    acc.term1 /= double(nb);
    acc.term2 /= double(nb);
    acc.term3 /= double(nb);
  }
  return acc;
}

inline TrainResult train(Network<float> net, const Dataset& train_set,
                         const Dataset& val_set, const TrainConfig& cfg,
                         std::ostream* progress = nullptr) {
  using clock = std::chrono::steady_clock;
  LossConfig lcfg;
  lcfg.k = cfg.k;
  TrainResult res;
  res.best = net;

  detail::AdamState st;
  detail::zero_like(st.m, net);
  detail::zero_like(st.v, net);
  Network<float> grad;
  detail::zero_like(grad, net);

  detail::BatchBuffers buf;
  FwdCache<float> cache;
  std::vector<int> order(train_set.size());
  std::iota(order.begin(), order.end(), 0);

  double lr = cfg.lr;
  int since_best = 0, since_decay = 0;
  const auto t0 = clock::now();
  double last_epoch_seconds = 0;

  for (int epoch = 0; epoch < cfg.max_epochs; ++epoch) {
    if (cfg.max_seconds > 0) {
      // Stop before starting an epoch that would overshoot the budget.
      const double elapsed =
          std::chrono::duration<double>(clock::now() - t0).count();
      if (elapsed + last_epoch_seconds >= cfg.max_seconds) break;
    }
    const auto tic = clock::now();
    rng shuffle_rng(derive_seed(cfg.seed, 0xE90C4 + epoch));
    for (int i = int(order.size()) - 1; i > 0; --i) {
      int j = int(shuffle_rng.uniform() * (i + 1));
      if (j > i) j = i;
      std::swap(order[i], order[j]);
    }

    LossTerms acc;
    std::int64_t nb = 0;
    bool numeric_failure = false;
    std::vector<int> ids;
    for (size_t start = 0; start < order.size(); start += cfg.batch) {
      ids.assign(order.begin() + start,
                 order.begin() +
                     std::min(order.size(), start + size_t(cfg.batch)));
      buf.fill(train_set, ids);
      const int B = int(ids.size());
      MatX<float> y = forward(net, buf.x, window_len, B, cache);
      Mat yd = y.cast<double>();
      Mat dpred;
      LossTerms t;
      try {
        t = physics_loss_grad(yd, buf.truth, buf.obs, buf.rec_mu, buf.rec_sd,
                              train_set.stats, lcfg, &dpred);
      } catch (const loss_numeric_error&) {
        numeric_failure = true;
        break;
      }
      acc.term1 += t.term1;
      acc.term2 += t.term2;
      acc.term3 += t.term3;
      ++nb;
      MatX<float> dy = dpred.cast<float>();
      detail::for_each_block(grad, [](const char*, auto& m) { m.setZero(); });
      backward(net, buf.x, dy, window_len, B, cache, grad);
      const double gn = detail::grad_norm(grad);
      if (!std::isfinite(gn)) {
        numeric_failure = true;
        break;
      }
      if (gn > cfg.clip) detail::scale_grads(grad, float(cfg.clip / gn));
      detail::adam_step(net, grad, st, cfg, lr);
    }
    if (numeric_failure) {
      res.aborted = true;
      break;
    }
    acc.term1 /= double(std::max<std::int64_t>(nb, 1));
    acc.term2 /= double(std::max<std::int64_t>(nb, 1));
    acc.term3 /= double(std::max<std::int64_t>(nb, 1));

    LossTerms val = evaluate_loss(net, val_set, lcfg, cfg.batch);
    const double vl = val.total();

    EpochLog row;
    row.epoch = epoch;
    row.train_loss = acc.total();
    row.val_loss = vl;
    row.term1 = acc.term1;
    row.term2 = acc.term2;
    row.term3 = acc.term3;
    row.lr = lr;
    row.seconds =
        std::chrono::duration<double>(clock::now() - tic).count();
    last_epoch_seconds = row.seconds;
    res.log.push_back(row);
    if (progress && epoch % cfg.log_every == 0)
      *progress << "epoch " << epoch << " train " << row.train_loss << " val "
                << vl << " lr " << lr << " (" << row.seconds << " s)\n";

    if (vl < res.best_val) {
      res.best_val = vl;
      res.best_epoch = epoch;
      res.best = net;
      since_best = 0;
      since_decay = 0;
    } else {
      ++since_best;
      ++since_decay;
      if (since_best >= cfg.patience) break;
      if (since_decay >= cfg.lr_patience && lr > cfg.min_lr) {
        lr = std::max(lr * cfg.lr_decay, cfg.min_lr);
        since_decay = 0;
      }
    }
  }
  return res;
}

inline void write_training_log(const std::string& path,
                               const std::vector<EpochLog>& log) {
  Mat data(log.size(), 8);
  for (size_t i = 0; i < log.size(); ++i) {
    const auto& r = log[i];
    data.row(i) << double(r.epoch), r.train_loss, r.val_loss, r.term1,
        r.term2, r.term3, r.lr, r.seconds;
  }
  write_csv(path, {"epoch", "train_loss", "val_loss", "term1", "term2",
                   "term3", "lr", "seconds"},
            data);
}

}  // namespace nmtrack
