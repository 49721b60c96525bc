#pragma once
// Physics-informed training loss on standardized windows:
//   term 1: squared tracking error on all targets plus the reconstruction
//           error of the raw observation;
//   term 2: model error — the de-standardized prediction at t-1 pushed
//           through one step of the neural-mass map (with the transition
//           rebuilt each step from the predicted time constants) must land
//           on the prediction at t;
//   term 3: within-window variability of each gain estimate multiplied by
//           that gain's model error, weighted by k.
// Everything here runs in double regardless of the network scalar: term 2
// compares successive steps of a contractive map, and float rounding would
// bury the signal.
#include "nmtrack/dataset.hpp"
#include "nmtrack/model.hpp"

namespace nmtrack {

struct loss_numeric_error : std::runtime_error {
  int term;
  explicit loss_numeric_error(int t)
      : std::runtime_error("physics loss term " + std::to_string(t) +
                           " is non-finite"),
        term(t) {}
};

struct LossTerms {
  double term1 = 0, term2 = 0, term3 = 0;
  double total() const { return term1 + term2 + term3; }
};

struct LossConfig {
  double k = 0.1;  // term-3 weight
  double dt = 1.0 / 400.0;
  double v0 = 6.0;
  double sigma_s = 3.0;
  double tau_min = 0.005, tau_max = 0.1;  // clamp on predicted time constants
};

// Batched loss and gradient. Layout matches the network: feature-major
// matrices of shape 17 x (T*B) (column t*B+b), obs 1 x (T*B) standardized
// per recording, with rec_mu/rec_sd giving each window's own scaling.
// Returns the loss breakdown; when dpred is non-null it receives
// d(total)/d(pred) in the same layout.
inline LossTerms physics_loss_grad(
    const Mat& pred, const Mat& truth, const Mat& obs,
    const std::vector<double>& rec_mu, const std::vector<double>& rec_sd,
    const StandardStats& stats, const LossConfig& cfg, Mat* dpred) {
  const int B = static_cast<int>(rec_mu.size());
  if (B <= 0 || pred.rows() != n_targets || pred.cols() % B != 0 ||
      pred.rows() != truth.rows() || pred.cols() != truth.cols() ||
      obs.cols() != pred.cols() || int(rec_sd.size()) != B)
    throw config_error("loss: mismatched window shapes");
  const int T = static_cast<int>(pred.cols()) / B;
  const Vec& mu = stats.mean;
  const Vec& sd = stats.stdev;
  const double inv_sy2 = 1.0 / (stats.obs_std * stats.obs_std);

  if (dpred) dpred->setZero(n_targets, pred.cols());
  LossTerms L;

  // ----- term 1: tracking + observation reconstruction -------------------
  const double n1 = double(T) * B * (n_targets + 1);
  {
    Mat diff = truth - pred;
    L.term1 = diff.squaredNorm() / n1;
    if (dpred) *dpred = (-2.0 / n1) * diff;
    for (int b = 0; b < B; ++b)
      for (int t = 0; t < T; ++t) {
        const int col = t * B + b;
        double yhat_raw = 0.0;
        for (int i : obs_indices) yhat_raw += pred(i, col) * sd[i] + mu[i];
        const double y_raw = obs(0, col) * rec_sd[b] + rec_mu[b];
        const double e = yhat_raw - y_raw;
        L.term1 += e * e * inv_sy2 / n1;
        if (dpred)
          for (int i : obs_indices)
            (*dpred)(i, col) += 2.0 * e * inv_sy2 * sd[i] / n1;
      }
  }

  // ----- term 2: one-step model error -------------------------------------
  // raw-space map of the 15 augmented coordinates; J entries used for the
  // chain rule back to the standardized prediction at t-1
  const double dt = cfg.dt;
  const double n2 = T > 1 ? double(T - 1) * B * n_aug : 1.0;
  for (int b = 0; b < B && T > 1; ++b) {
    Vec raw_prev(n_targets), raw(n_targets);
    for (int t = 0; t < T; ++t) {
      const int col = t * B + b;
      for (int j = 0; j < n_targets; ++j)
        raw[j] = pred(j, col) * sd[j] + mu[j];
      if (t > 0) {
        const int pcol = (t - 1) * B + b;
        double te = std::clamp(raw_prev[15], cfg.tau_min, cfg.tau_max);
        double ti = std::clamp(raw_prev[16], cfg.tau_min, cfg.tau_max);
        const bool te_free = raw_prev[15] > cfg.tau_min &&
                             raw_prev[15] < cfg.tau_max;
        const bool ti_free = raw_prev[16] > cfg.tau_min &&
                             raw_prev[16] < cfg.tau_max;
        // map and residual, then scatter the gradient
        Vec w = Vec::Zero(n_aug);  // residual weights 2 e_i / (sd_i * n2)
        double gtau_e = 0.0, gtau_i = 0.0;  // raw-space tau gradients
        auto vsrc_sum = [&](const channel_def& ch) {
          double s = 0;
          for (int a = 0; a < ch.n_src; ++a) s += raw_prev[ch.src[a]];
          return s;
        };
        for (int c = 0; c < 5; ++c) {
          const channel_def& ch = channels[c];
          const double tau = ch.inhibitory_tau ? ti : te;
          const int iv = ch.iv, iz = ch.iv + 1;
          const double v = raw_prev[iv], z = raw_prev[iz];
          double drive, phi_v = 0, phid_v = 0, V = 0, gain = 0;
          if (ch.gain_idx >= 0) {
            V = vsrc_sum(ch);
            phi_v = sigmoid_raw(V, cfg.v0, cfg.sigma_s);
            phid_v = sigmoid_deriv(V, cfg.v0, cfg.sigma_s);
            gain = raw_prev[ch.gain_idx];
            drive = gain * phi_v / tau;
          } else {
            drive = raw_prev[idx::th_u] / tau;
          }
          const double mv = v + dt * z;
          const double mz =
              z + dt * (drive - 2.0 / tau * z - v / (tau * tau));
          const double ev = (mv - mu[iv]) / sd[iv] - pred(iv, col);
          const double ez = (mz - mu[iz]) / sd[iz] - pred(iz, col);
          L.term2 += (ev * ev + ez * ez) / n2;
          if (!dpred) continue;
          (*dpred)(iv, col) += -2.0 * ev / n2;
          (*dpred)(iz, col) += -2.0 * ez / n2;
          const double wv = 2.0 * ev / (sd[iv] * n2);
          const double wz = 2.0 * ez / (sd[iz] * n2);
          // v row: depends on v (1) and z (dt)
          w[iv] += wv;
          w[iz] += wv * dt;
          // z row
          w[iz] += wz * (1.0 - 2.0 * dt / tau);
          w[iv] += wz * (-dt / (tau * tau));
          if (ch.gain_idx >= 0) {
            for (int a = 0; a < ch.n_src; ++a)
              w[ch.src[a]] += wz * dt * gain * phid_v / tau;
            w[ch.gain_idx] += wz * dt * phi_v / tau;
          } else {
            w[idx::th_u] += wz * dt / tau;
          }
          const double dmz_dtau =
              dt * (-drive / tau + 2.0 * z / (tau * tau) +
                    2.0 * v / (tau * tau * tau));
          if (ch.inhibitory_tau)
            gtau_i += wz * dmz_dtau;
          else
            gtau_e += wz * dmz_dtau;
        }
        for (int j = n_state; j < n_aug; ++j) {  // parameter random walk
          const double ej =
              (raw_prev[j] - mu[j]) / sd[j] - pred(j, col);
          L.term2 += ej * ej / n2;
          if (dpred) {
            (*dpred)(j, col) += -2.0 * ej / n2;
            // identity map: restd(destd(x)) has unit sensitivity
            (*dpred)(j, pcol) += 2.0 * ej / n2;
          }
        }
        if (dpred) {
          for (int j = 0; j < n_aug; ++j)
            (*dpred)(j, pcol) += w[j] * sd[j];
          if (te_free) (*dpred)(15, pcol) += gtau_e * sd[15];
          if (ti_free) (*dpred)(16, pcol) += gtau_i * sd[16];
        }
      }
      raw_prev = raw;
    }
  }

  // ----- term 3: gain variability times gain model error ------------------
  const int gain_coords[4] = {idx::th_a_pe, idx::th_a_pi, idx::th_a_ip,
                              idx::th_a_ep};
  if (cfg.k != 0.0 && T > 1) {
    const double n3 = 4.0 * B;
    for (int b = 0; b < B; ++b)
      for (int gc : gain_coords) {
        double s = 0, s2 = 0, msd = 0;
        for (int t = 0; t < T; ++t) {
          const double a = pred(gc, t * B + b);
          s += a;
          s2 += a * a;
          if (t > 0) {
            const double d = a - pred(gc, (t - 1) * B + b);
            msd += d * d;
          }
        }
        const double mean = s / T;
        const double var = std::max(s2 / T - mean * mean, 0.0);
        const double A = std::sqrt(var);
        msd /= double(T - 1);
        L.term3 += cfg.k * A * msd / n3;
        if (!dpred) continue;
        const double dA_scale = A > 1e-12 ? 1.0 / (double(T) * A) : 0.0;
        for (int t = 0; t < T; ++t) {
          const int col = t * B + b;
          const double a = pred(gc, col);
          double dmsd = 0.0;
          if (t > 0) dmsd += 2.0 * (a - pred(gc, (t - 1) * B + b));
          if (t < T - 1) dmsd -= 2.0 * (pred(gc, (t + 1) * B + b) - a);
          dmsd /= double(T - 1);
          (*dpred)(gc, col) +=
              cfg.k * (msd * (a - mean) * dA_scale + A * dmsd) / n3;
        }
      }
  }

  if (!std::isfinite(L.term1)) throw loss_numeric_error(1);
  if (!std::isfinite(L.term2)) throw loss_numeric_error(2);
  if (!std::isfinite(L.term3)) throw loss_numeric_error(3);
  return L;
}

// Single-window convenience: pred/truth 17 x T, obs 1 x T.
inline LossTerms physics_loss(const Mat& pred, const Mat& truth,
                              const Mat& obs, double rec_mu, double rec_sd,
                              const StandardStats& stats,
                              const LossConfig& cfg = {},
                              Mat* dpred = nullptr) {
  return physics_loss_grad(pred, truth, obs, {rec_mu}, {rec_sd}, stats, cfg,
                           dpred);
}

}  // namespace nmtrack
