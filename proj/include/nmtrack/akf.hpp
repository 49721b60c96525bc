#pragma once
// Analytic nonlinear Kalman filter for joint state/parameter tracking.
// The mean prediction propagates exact Gaussian expectations of the erf
// firing-rate nonlinearity; the covariance uses the Jacobian at the mean.
#include <Eigen/Eigenvalues>

#include "nmtrack/model.hpp"
#include "nmtrack/track.hpp"

namespace nmtrack {

struct SigmoidMoments {
  double e_phi = 0;        // E[phi(V)], V ~ N(mu, var)
  double e_phi_deriv = 0;  // E[phi'(V)]
};

// Closed-form moments of the erf sigmoid under a Gaussian:
//   E[phi]  = 0.5 (1 + erf((mu - v0)/sqrt(s^2 + 2 var)))
//   E[phi'] = exp(-(mu - v0)^2/(s^2 + 2 var)) / (sqrt(pi) sqrt(s^2 + 2 var))
inline SigmoidMoments gaussian_sigmoid_moments(double mu, double var,
                                               double v0, double s) {
  if (var < 0.0) var = 0.0;
  const double seff = std::sqrt(s * s + 2.0 * var);
  const double w = (mu - v0) / seff;
  constexpr double sqrt_pi = 1.7724538509055160273;
  return {0.5 * (1.0 + std::erf(w)), std::exp(-w * w) / (sqrt_pi * seff)};
}

// E[a phi(V)] for jointly Gaussian (a, V): E[a]E[phi] + Cov(a,V) E[phi'].
inline double gaussian_product_mean(double mu_a, double mu_v, double var_v,
                                    double cov_av, double v0, double s) {
  const SigmoidMoments m = gaussian_sigmoid_moments(mu_v, var_v, v0, s);
  return mu_a * m.e_phi + cov_av * m.e_phi_deriv;
}

struct GaussianBelief {
  Vec mean = Vec::Zero(n_aug);
  Mat cov = Mat::Identity(n_aug, n_aug);
};

struct AkfConfig {
  double tau_e = 0.01;  // the filter's assumed synaptic time constants
  double tau_i = 0.02;
  double q_z = 1e-3;     // per-step process variance on velocity entries
  double q_theta = 1e-5; // per-step random-walk variance on parameters
  double r = 1.0;        // observation noise variance
  double v0 = 6.0;
  double sigma_s = 3.0;
  double dt = 1.0 / 400.0;
  // prior variances used by make_belief
  double p0_v = 1.0, p0_z = 100.0, p0_theta = 1e4;
};

// Belief centered on a model operating point: rest states, the model's
// parameter values, and diagonal prior covariance from the config.
inline GaussianBelief make_belief(const ModelParams& p, const AkfConfig& cfg) {
  GaussianBelief b;
  b.mean.head(n_state).setZero();
  b.mean.tail(n_theta) = p.theta();
  Vec d(n_aug);
  for (int c = 0; c < 5; ++c) {
    d[2 * c] = cfg.p0_v;
    d[2 * c + 1] = cfg.p0_z;
  }
  d.tail(n_theta).setConstant(cfg.p0_theta);
  b.cov = d.asDiagonal();
  return b;
}

// Eigenvalue repair: clip negative eigenvalues when the matrix has drifted
// away from positive semidefiniteness.
inline void nearest_psd(Mat& P) {
  P = 0.5 * (P + P.transpose()).eval();
  Eigen::SelfAdjointEigenSolver<Mat> es(P);
  const Vec& ev = es.eigenvalues();
  const double tol = -1e-8 * std::max(1.0, ev.cwiseAbs().maxCoeff());
  if (ev.minCoeff() >= tol) return;
  const double floor_ev =
      1e-9 * std::max(P.trace(), 1e-12) / double(P.rows());
  Vec clipped = ev.cwiseMax(floor_ev);
  P = es.eigenvectors() * clipped.asDiagonal() * es.eigenvectors().transpose();
  P = 0.5 * (P + P.transpose()).eval();
}

// One Euler prediction of the belief through the model dynamics.
inline void akf_predict(GaussianBelief& b, const AkfConfig& cfg) {
  const Vec m = b.mean;
  const Mat& P = b.cov;
  const double dt = cfg.dt;
  Vec mn = m;
  Mat F = Mat::Identity(n_aug, n_aug);

  for (int c = 0; c < 4; ++c) {  // gain channels: pe, pi, ep, ip
    const channel_def& ch = channels[c];
    const double tau = channel_tau(ch, cfg.tau_e, cfg.tau_i);
    const int iv = ch.iv, iz = ch.iv + 1;
    const int ai = ch.gain_idx;  // absolute index of this channel's gain
    double mu_v = 0.0, var_v = 0.0, cov_av = 0.0;
    for (int a = 0; a < ch.n_src; ++a) {
      mu_v += m[ch.src[a]];
      cov_av += P(ai, ch.src[a]);
      for (int bsrc = 0; bsrc < ch.n_src; ++bsrc)
        var_v += P(ch.src[a], ch.src[bsrc]);
    }
    const double drive =
        gaussian_product_mean(m[ai], mu_v, var_v, cov_av, cfg.v0, cfg.sigma_s) /
        tau;
    mn[iv] = m[iv] + dt * m[iz];
    mn[iz] = m[iz] + dt * (drive - 2.0 / tau * m[iz] - m[iv] / (tau * tau));
    F(iv, iz) = dt;
    F(iz, iv) = -dt / (tau * tau);
    F(iz, iz) = 1.0 - 2.0 * dt / tau;
    // linearization at the mean: plain sigmoid and derivative at mu_v
    const double phi_mu = sigmoid_raw(mu_v, cfg.v0, cfg.sigma_s);
    const double phid_mu = sigmoid_deriv(mu_v, cfg.v0, cfg.sigma_s);
    for (int a = 0; a < ch.n_src; ++a)
      F(iz, ch.src[a]) += dt * (m[ai] / tau) * phid_mu;
    F(iz, ai) = dt * phi_mu / tau;
  }
  {  // drive channel: linear in the input parameter
    const int iv = idx::v_pu, iz = idx::z_pu;
    const double tau = cfg.tau_e;
    mn[iv] = m[iv] + dt * m[iz];
    mn[iz] = m[iz] + dt * (m[idx::th_u] / tau - 2.0 / tau * m[iz] -
                           m[iv] / (tau * tau));
    F(iv, iz) = dt;
    F(iz, iv) = -dt / (tau * tau);
    F(iz, iz) = 1.0 - 2.0 * dt / tau;
    F(iz, idx::th_u) = dt / tau;
  }

  Vec q = Vec::Zero(n_aug);
  for (int c = 0; c < 5; ++c) q[2 * c + 1] = cfg.q_z;
  q.tail(n_theta).setConstant(cfg.q_theta);
  b.mean = mn;
  b.cov = F * P * F.transpose() + Mat(q.asDiagonal());
  b.cov = 0.5 * (b.cov + b.cov.transpose()).eval();
}

struct UpdateInfo {
  double innovation = 0;  // y - H * prior mean
  double s = 0;           // innovation variance
};

inline UpdateInfo akf_update(GaussianBelief& b, double y,
                             const AkfConfig& cfg) {
  Vec h = observation_row();
  const double s = h.dot(b.cov * h) + cfg.r;
  const Vec k = (b.cov * h) / s;
  const double innovation = y - h.dot(b.mean);
  b.mean += k * innovation;
  b.cov = ((Mat::Identity(n_aug, n_aug) - k * h.transpose()) * b.cov).eval();
  b.cov = 0.5 * (b.cov + b.cov.transpose()).eval();
  const Vec diag = b.cov.diagonal();
  if (diag.minCoeff() < -1e-8 * std::max(1.0, diag.maxCoeff()))
    nearest_psd(b.cov);
  return {innovation, s};
}

// Observation-noise variance from first differences of the signal: for a
// smooth latent plus white noise, Var(y_{t+1} - y_t) ~ 2 R.
inline double estimate_obs_variance(const std::vector<double>& y) {
  if (y.size() < 3) throw sample_size_error("need >= 3 samples");
  double mu = 0;
  for (size_t i = 1; i < y.size(); ++i) mu += y[i] - y[i - 1];
  mu /= double(y.size() - 1);
  double var = 0;
  for (size_t i = 1; i < y.size(); ++i) {
    double d = y[i] - y[i - 1] - mu;
    var += d * d;
  }
  var /= double(y.size() - 1);
  return 0.5 * var;
}

// Filters a whole observation sequence. Never throws on numerical breakdown:
// the returned track is truncated at the first non-finite step instead.
inline EstimateTrack run_akf(const std::vector<double>& y,
                             GaussianBelief belief, const AkfConfig& cfg) {
  const int n = static_cast<int>(y.size());
  EstimateTrack tr;
  tr.t.resize(n);
  tr.y.resize(n);
  tr.yhat.resize(n);
  tr.innovation.resize(n);
  tr.mean.resize(n, n_aug);
  tr.std_dev.resize(n, n_aug);
  Vec h = observation_row();
  for (int k = 0; k < n; ++k) {
    akf_predict(belief, cfg);
    UpdateInfo ui = akf_update(belief, y[k], cfg);
    const bool ok = belief.mean.allFinite() && belief.cov.allFinite() &&
                    belief.mean.cwiseAbs().maxCoeff() < 1e12;
    if (!ok) {
      tr.truncated = true;
      tr.fail_step = k;
      tr.t.conservativeResize(k);
      tr.y.conservativeResize(k);
      tr.yhat.conservativeResize(k);
      tr.innovation.conservativeResize(k);
      tr.mean.conservativeResize(k, n_aug);
      tr.std_dev.conservativeResize(k, n_aug);
      break;
    }
    tr.t[k] = (k + 1) * cfg.dt;
    tr.y[k] = y[k];
    tr.yhat[k] = h.dot(belief.mean);
    tr.innovation[k] = ui.innovation;
    tr.mean.row(k) = belief.mean.transpose();
    tr.std_dev.row(k) = belief.cov.diagonal().cwiseMax(0.0).cwiseSqrt().transpose();
  }
  return tr;
}

}  // namespace nmtrack
