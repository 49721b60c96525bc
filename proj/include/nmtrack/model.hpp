#pragma once
// The neural mass model: parameters, sigmoid, channel wiring, matrix form,
// and the discrete one-step map of the augmented state.
#include "nmtrack/common.hpp"

namespace nmtrack {

struct ModelParams {
  double tau_e = 0.01;   // excitatory synaptic time constant (s)
  double tau_i = 0.02;   // inhibitory synaptic time constant (s)
  double alpha_pe = 1755.0;     // gains (mV); inhibitory gain carries the sign
  double alpha_pi = -3712.5;
  double alpha_ip = 548.4;
  double alpha_ep = 2193.75;
  double u = 900.0;      // external input firing rate
  double v0 = 6.0;       // sigmoid threshold (mV)
  double sigma_s = 3.0;  // sigmoid slope (mV)
  double dt = 1.0 / 400.0;
  double q_process = 0.0;  // process-noise std on z rows (per sqrt(s))
  double r_obs = 1.0;      // observation-noise std (mV)

  void validate() const {
    if (!(tau_e > 0.0 && tau_i > 0.0) || tau_e < 0.005 || tau_e > 0.1 ||
        tau_i < 0.005 || tau_i > 0.1)
      throw config_error("time constants must lie in [0.005, 0.1] s");
    if (!(dt > 0.0)) throw config_error("dt must be positive");
    if (!(sigma_s > 0.0)) throw config_error("sigma_s must be positive");
    if (r_obs < 0.0 || q_process < 0.0)
      throw config_error("noise stds must be nonnegative");
  }
  Vec theta() const {
    Vec th(n_theta);
    th << u, alpha_pe, alpha_pi, alpha_ip, alpha_ep;
    return th;
  }
};

// Firing-rate sigmoid, erf flavor: 0.5*(erf((v - v0)/s) + 1).
template <class T>
inline T sigmoid_raw(T v, T v0, T s) {
  return T(0.5) * (std::erf((v - v0) / s) + T(1));
}
inline double sigmoid(double v, double v0, double sigma_s) {
  if (!std::isfinite(v)) throw std::invalid_argument("sigmoid: non-finite v");
  return sigmoid_raw(v, v0, sigma_s);
}
// d/dv of the sigmoid: a Gaussian bump.
template <class T>
inline T sigmoid_deriv(T v, T v0, T s) {
  T w = (v - v0) / s;
  return std::exp(-w * w) / (s * std::sqrt(T(M_PI)));
}

// One synaptic channel: (v, z) slot, its time constant selector, the gain
// driving it, and the membrane potential feeding its sigmoid.
struct channel_def {
  const char* name;
  int iv;             // v index (z at iv + 1)
  bool inhibitory_tau;  // true -> tau_i, else tau_e
  int gain_idx;       // theta index of the gain; -1 for the input channel
  int n_src;          // source potential = sum of xi[src[0..n_src)]
  std::array<int, 3> src;
};

inline constexpr std::array<channel_def, 5> channels{{
    {"pe", idx::v_pe, false, idx::th_a_pe, 1, {idx::v_ep, 0, 0}},
    {"pi", idx::v_pi, true, idx::th_a_pi, 1, {idx::v_ip, 0, 0}},
    {"ep", idx::v_ep, false, idx::th_a_ep, 3, {idx::v_pe, idx::v_pi, idx::v_pu}},
    {"ip", idx::v_ip, false, idx::th_a_ip, 3, {idx::v_pe, idx::v_pi, idx::v_pu}},
    {"pu", idx::v_pu, false, -1, 0, {0, 0, 0}},  // driven directly by u
}};

inline double channel_tau(const channel_def& c, double tau_e, double tau_i) {
  return c.inhibitory_tau ? tau_i : tau_e;
}

// Continuous-time matrix form: xdot = A x + B g(C x, u), with
// g = [phi(C1 x), ..., phi(C4 x), u]. A stacks per-channel blocks
// [[0, 1], [-1/tau^2, -2/tau]]; B carries gain/tau on z rows (1/tau for the
// input channel); C is the 0/1 adjacency selecting source potentials.
struct SystemMatrices {
  Mat A;  // n_state x n_state
  Mat B;  // n_state x 5
  Mat C;  // 5 x n_state
  Vec H;  // n_aug
};

inline SystemMatrices build_matrices(const ModelParams& p) {
  p.validate();
  SystemMatrices m;
  m.A = Mat::Zero(n_state, n_state);
  m.B = Mat::Zero(n_state, 5);
  m.C = Mat::Zero(5, n_state);
  const Vec th = p.theta();
  for (int c = 0; c < 5; ++c) {
    const channel_def& ch = channels[c];
    double tau = channel_tau(ch, p.tau_e, p.tau_i);
    int iv = ch.iv, iz = ch.iv + 1;
    m.A(iv, iz) = 1.0;
    m.A(iz, iv) = -1.0 / (tau * tau);
    m.A(iz, iz) = -2.0 / tau;
    if (ch.gain_idx >= 0) {
      m.B(iz, c) = th[ch.gain_idx - n_state] / tau;
      for (int k = 0; k < ch.n_src; ++k) m.C(c, ch.src[k]) = 1.0;
    } else {
      m.B(iz, c) = 1.0 / tau;  // u enters as the fifth rate entry
    }
  }
  m.H = observation_row();
  return m;
}

// One Euler step of the augmented state. Gains and u are read from xi's
// parameter block; only the time constants come from the frame. noise is the
// already-scaled increment W (z rows and theta rows; v rows ignored by
// convention). Phi is a test hook for the sigmoid.
template <class Phi>
inline Vec step_with(const Vec& xi, double tau_e, double tau_i, double dt,
                     const Vec* noise, Phi&& phi) {
  Vec out = xi;
  const double vp = pyramidal_potential(xi);
  for (int c = 0; c < 5; ++c) {
    const channel_def& ch = channels[c];
    const double tau = channel_tau(ch, tau_e, tau_i);
    const int iv = ch.iv, iz = ch.iv + 1;
    double drive;
    if (ch.gain_idx < 0) {
      drive = xi[idx::th_u] / tau;
    } else {
      double vsrc = 0.0;
      for (int k = 0; k < ch.n_src; ++k) vsrc += xi[ch.src[k]];
      drive = xi[ch.gain_idx] / tau * phi(vsrc);
    }
    out[iv] = xi[iv] + dt * xi[iz];
    out[iz] = xi[iz] + dt * (drive - 2.0 / tau * xi[iz] - xi[iv] / (tau * tau));
    if (noise) out[iz] += (*noise)[iz];
  }
  if (noise)
    for (int j = n_state; j < n_aug; ++j) out[j] += (*noise)[j];
  for (int c = 0; c < 5; ++c) {
    int iv = channels[c].iv;
    if (!std::isfinite(out[iv]) || !std::isfinite(out[iv + 1]))
      throw divergence_error(std::string("integration diverged in channel ") +
                                 channels[c].name,
                             c);
  }
  return out;
}

inline Vec step(const Vec& xi, const ModelParams& frame,
                const Vec* noise = nullptr) {
  const double v0 = frame.v0, s = frame.sigma_s;
  return step_with(xi, frame.tau_e, frame.tau_i, frame.dt, noise,
                   [v0, s](double v) { return sigmoid_raw(v, v0, s); });
}

}  // namespace nmtrack
