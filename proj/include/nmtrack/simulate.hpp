#pragma once
// Euler simulation of the model producing observation sequences plus the
// ground-truth augmented trajectory. Supports per-timestep parameter
// schedules for time-varying scenarios.
#include <functional>

#include "nmtrack/model.hpp"

namespace nmtrack {

struct Trajectory {
  Vec times;       // n, strictly increasing, spacing dt
  Mat states;      // n x n_aug, state recorded after each step
  Vec obs;         // n, y = H x + r_obs * eps
  Mat tau_track;   // n x 2, (tau_e, tau_i) in effect at each step
  ModelParams base;
  std::uint64_t seed = 0;

  int n() const { return static_cast<int>(times.size()); }
  // targets = augmented entries + (tau_e, tau_i), the full 17-track truth
  Mat targets() const {
    Mat t(states.rows(), n_targets);
    t.leftCols(n_aug) = states;
    t.rightCols(2) = tau_track;
    return t;
  }
};

// schedule(t) may adjust tau_e/tau_i/gains/u as functions of time (seconds
// from simulation start); constants (v0, sigma_s, dt, noise) come from base.
using ParamSchedule = std::function<void(double t, ModelParams& p)>;

inline Trajectory simulate_schedule(const ModelParams& base, double duration,
                                    std::uint64_t seed,
                                    const ParamSchedule& schedule,
                                    double discard = 1.0) {
  base.validate();
  if (duration < base.dt)
    throw config_error("simulate: duration shorter than one step");
  const double dt = base.dt;
  const int n_total = static_cast<int>(std::llround((discard + duration) / dt));
  const int n_skip = static_cast<int>(std::llround(discard / dt));
  const int n_keep = n_total - n_skip;

  rng r(seed);
  Trajectory tr;
  tr.base = base;
  tr.seed = seed;
  tr.times.resize(n_keep);
  tr.states.resize(n_keep, n_aug);
  tr.obs.resize(n_keep);
  tr.tau_track.resize(n_keep, 2);

  ModelParams p = base;
  Vec xi = Vec::Zero(n_aug);
  xi.tail(n_theta) = p.theta();
  Vec noise = Vec::Zero(n_aug);
  const double zscale = p.q_process * std::sqrt(dt);
  for (int k = 0; k < n_total; ++k) {
    if (schedule) {
      schedule(k * dt, p);
      xi.tail(n_theta) = p.theta();
    }
    if (p.q_process > 0.0)
      for (int c = 0; c < 5; ++c) noise[2 * c + 1] = zscale * r.normal();
    xi = step(xi, p, p.q_process > 0.0 ? &noise : nullptr);
    double y = pyramidal_potential(xi);
    if (p.r_obs > 0.0) y += p.r_obs * r.normal();
    if (k >= n_skip) {
      int j = k - n_skip;
      tr.times[j] = (k + 1) * dt;
      tr.states.row(j) = xi;
      tr.obs[j] = y;
      tr.tau_track(j, 0) = p.tau_e;
      tr.tau_track(j, 1) = p.tau_i;
    }
  }
  return tr;
}

inline Trajectory simulate(const ModelParams& p, double duration,
                           std::uint64_t seed, double discard = 1.0) {
  return simulate_schedule(p, duration, seed, nullptr, discard);
}

}  // namespace nmtrack
